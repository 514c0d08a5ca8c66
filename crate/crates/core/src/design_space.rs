//! The microarchitecture design space: named parameters with ordered
//! discrete value lists, grouped into four subsystems, plus the rank
//! encoding used everywhere downstream (a configuration is the vector of
//! per-parameter value indices).
//!
//! Text format, one parameter per line (`#` comments):
//!
//! ```text
//! name | subsystem | v1,v2,...
//! ```

use std::collections::HashMap;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::util::fnv1a64;

/// Subsystem a parameter belongs to. The four groups partition the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subsystem {
    /// Instruction-side memory: icache, instruction TLBs, fetch queue.
    Imem,
    /// Data-side memory: dcache, L2/L3, data TLBs, LSU queues.
    Dmem,
    /// Core width and buffering: fetch-to-retire widths, renames, ROB.
    Core,
    /// Branch prediction: direction/loop/indirect predictors, BTB, RAS.
    Branch,
}

pub const SUBSYSTEMS: [Subsystem; 4] =
    [Subsystem::Imem, Subsystem::Dmem, Subsystem::Core, Subsystem::Branch];

impl Subsystem {
    pub fn tag(self) -> &'static str {
        match self {
            Subsystem::Imem => "imem",
            Subsystem::Dmem => "dmem",
            Subsystem::Core => "core",
            Subsystem::Branch => "branch",
        }
    }

    pub fn parse(s: &str) -> Result<Subsystem> {
        match s {
            "imem" => Ok(Subsystem::Imem),
            "dmem" => Ok(Subsystem::Dmem),
            "core" => Ok(Subsystem::Core),
            "branch" => Ok(Subsystem::Branch),
            other => Err(Error::validation(format!("unknown subsystem '{other}'"))),
        }
    }
}

impl fmt::Display for Subsystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A parameter value: numeric (sizes, widths, counts) or symbolic
/// (replacement policies). Symbolic values are ordered by list position.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ParamValue {
    Num(u64),
    Sym(String),
}

impl ParamValue {
    /// Numeric view used by the area model: numbers map to themselves,
    /// symbols to their rank.
    pub fn numeric_or(&self, rank: usize) -> f64 {
        match self {
            ParamValue::Num(v) => *v as f64,
            ParamValue::Sym(_) => rank as f64,
        }
    }

    pub fn as_num(&self) -> Option<u64> {
        match self {
            ParamValue::Num(v) => Some(*v),
            ParamValue::Sym(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Num(v) => write!(f, "{v}"),
            ParamValue::Sym(s) => f.write_str(s),
        }
    }
}

fn parse_value(tok: &str) -> ParamValue {
    if let Some(hex) = tok.strip_prefix("0x") {
        if let Ok(v) = u64::from_str_radix(hex, 16) {
            return ParamValue::Num(v);
        }
    }
    match tok.parse::<u64>() {
        Ok(v) => ParamValue::Num(v),
        Err(_) => ParamValue::Sym(tok.to_string()),
    }
}

/// One named parameter with its ordered value list.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub subsystem: Subsystem,
    pub values: Vec<ParamValue>,
}

impl ParamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['|', ',', '\n']) {
            return Err(Error::validation(format!(
                "parameter name '{}' empty or contains reserved characters",
                self.name
            )));
        }
        if self.values.is_empty() {
            return Err(Error::validation(format!("parameter '{}' has no values", self.name)));
        }
        let numeric = self.values.iter().filter_map(ParamValue::as_num).count();
        if numeric != 0 && numeric != self.values.len() {
            return Err(Error::validation(format!(
                "parameter '{}' mixes numeric and symbolic values",
                self.name
            )));
        }
        if numeric == self.values.len() {
            for w in self.values.windows(2) {
                if w[0].as_num().unwrap() >= w[1].as_num().unwrap() {
                    return Err(Error::validation(format!(
                        "parameter '{}' values must be strictly increasing",
                        self.name
                    )));
                }
            }
        } else {
            for (i, v) in self.values.iter().enumerate() {
                if self.values[..i].contains(v) {
                    return Err(Error::validation(format!(
                        "parameter '{}' has duplicate value {v}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rank_count(&self) -> usize {
        self.values.len()
    }
}

/// A point in the design space: one rank (value index) per parameter, in
/// space order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub ranks: Vec<u16>,
}

impl Configuration {
    pub fn new(ranks: Vec<u16>) -> Configuration {
        Configuration { ranks }
    }
}

/// An ordered set of parameters. Rank vectors are always interpreted
/// against a specific space (or subset space) in its parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    params: Vec<ParamSpec>,
    by_name: HashMap<String, usize>,
}

impl DesignSpace {
    pub fn from_params(params: Vec<ParamSpec>) -> Result<DesignSpace> {
        let mut by_name = HashMap::new();
        for (i, p) in params.iter().enumerate() {
            p.validate()?;
            if by_name.insert(p.name.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate parameter '{}'", p.name)));
            }
        }
        Ok(DesignSpace { params, by_name })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.param_index(name).map(|i| &self.params[i])
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Value-list lengths, in space order.
    pub fn rank_counts(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.rank_count()).collect()
    }

    /// Number of distinct configurations; `None` on u128 overflow.
    pub fn total_configs(&self) -> Option<u128> {
        let mut total: u128 = 1;
        for p in &self.params {
            total = total.checked_mul(p.rank_count() as u128)?;
        }
        Some(total)
    }

    pub fn validate_config(&self, cfg: &Configuration) -> Result<()> {
        if cfg.ranks.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "configuration has {} ranks, space has {} parameters",
                cfg.ranks.len(),
                self.params.len()
            )));
        }
        for (p, &r) in self.params.iter().zip(&cfg.ranks) {
            if usize::from(r) >= p.rank_count() {
                return Err(Error::encoding(
                    &p.name,
                    format!("rank {r} out of range 0..{}", p.rank_count()),
                ));
            }
        }
        Ok(())
    }

    /// Encode concrete values (in space order) as ranks.
    pub fn rank_encode(&self, values: &[ParamValue]) -> Result<Configuration> {
        if values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} values given, space has {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        let mut ranks = Vec::with_capacity(values.len());
        for (p, v) in self.params.iter().zip(values) {
            let rank = p
                .values
                .iter()
                .position(|pv| pv == v)
                .ok_or_else(|| Error::encoding(&p.name, format!("value {v} not in value list")))?;
            ranks.push(rank as u16);
        }
        Ok(Configuration::new(ranks))
    }

    /// Decode ranks back to concrete values. Inverse of [`rank_encode`].
    ///
    /// [`rank_encode`]: DesignSpace::rank_encode
    pub fn rank_decode(&self, cfg: &Configuration) -> Result<Vec<ParamValue>> {
        self.validate_config(cfg)?;
        Ok(self
            .params
            .iter()
            .zip(&cfg.ranks)
            .map(|(p, &r)| p.values[usize::from(r)].clone())
            .collect())
    }

    /// Normalized ranks in [0, 1]: `rank / (count - 1)`; single-valued
    /// parameters map to 0.
    pub fn normalize(&self, cfg: &Configuration) -> Result<Vec<f64>> {
        self.validate_config(cfg)?;
        Ok(self
            .params
            .iter()
            .zip(&cfg.ranks)
            .map(|(p, &r)| {
                let n = p.rank_count();
                if n <= 1 {
                    0.0
                } else {
                    f64::from(r) / (n - 1) as f64
                }
            })
            .collect())
    }

    /// Uniform random configuration.
    pub fn sample_config(&self, rng: &mut impl Rng) -> Configuration {
        Configuration::new(
            self.params.iter().map(|p| rng.gen_range(0..p.rank_count()) as u16).collect(),
        )
    }

    /// All ranks 0 (smallest value of every parameter).
    pub fn min_config(&self) -> Configuration {
        Configuration::new(vec![0; self.params.len()])
    }

    /// Middle rank of every parameter.
    pub fn mid_config(&self) -> Configuration {
        Configuration::new(self.params.iter().map(|p| ((p.rank_count() - 1) / 2) as u16).collect())
    }

    /// The sub-space of parameters belonging to `sub`, in space order.
    pub fn subsystem_subset(&self, sub: Subsystem) -> DesignSpace {
        let params: Vec<_> = self.params.iter().filter(|p| p.subsystem == sub).cloned().collect();
        DesignSpace::from_params(params).expect("subset of a valid space")
    }

    /// Sub-space of the named parameters, in this space's order.
    pub fn subset_by_names(&self, names: &[String]) -> Result<DesignSpace> {
        for n in names {
            if self.param_index(n).is_none() {
                return Err(Error::validation(format!("unknown parameter '{n}'")));
            }
        }
        let params: Vec<_> =
            self.params.iter().filter(|p| names.contains(&p.name)).cloned().collect();
        if params.len() != names.len() {
            return Err(Error::validation("duplicate names in subset request".to_string()));
        }
        DesignSpace::from_params(params)
    }

    /// Copy `base`, replacing the ranks of every parameter present in
    /// `subset` with the corresponding rank from `sub_cfg`. Subset
    /// parameters must exist here with identical value lists.
    pub fn overlay(
        &self,
        base: &Configuration,
        subset: &DesignSpace,
        sub_cfg: &Configuration,
    ) -> Result<Configuration> {
        self.validate_config(base)?;
        subset.validate_config(sub_cfg)?;
        let mut out = base.clone();
        for (sp, &r) in subset.params.iter().zip(&sub_cfg.ranks) {
            let idx = self
                .param_index(&sp.name)
                .ok_or_else(|| Error::encoding(&sp.name, "not present in full space"))?;
            if self.params[idx].values != sp.values {
                return Err(Error::encoding(&sp.name, "value list differs from full space"));
            }
            out.ranks[idx] = r;
        }
        Ok(out)
    }

    /// Project a full-space configuration onto `subset`.
    pub fn extract(&self, full: &Configuration, subset: &DesignSpace) -> Result<Configuration> {
        self.validate_config(full)?;
        let mut ranks = Vec::with_capacity(subset.len());
        for sp in &subset.params {
            let idx = self
                .param_index(&sp.name)
                .ok_or_else(|| Error::encoding(&sp.name, "not present in full space"))?;
            if self.params[idx].values != sp.values {
                return Err(Error::encoding(&sp.name, "value list differs from full space"));
            }
            ranks.push(full.ranks[idx]);
        }
        Ok(Configuration::new(ranks))
    }

    /// Content fingerprint over the canonical text dump.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(dump_design_space(self).as_bytes())
    }
}

/// Parse a design space from text. Errors carry 1-based line numbers.
pub fn parse_design_space(text: &str) -> Result<DesignSpace> {
    let mut params = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 3 {
            return Err(Error::parse(line_no, "expected 'name | subsystem | v1,v2,...'"));
        }
        let name = fields[0].trim().to_string();
        let subsystem = Subsystem::parse(fields[1].trim())
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        let values: Vec<ParamValue> =
            fields[2].split(',').map(|v| parse_value(v.trim())).collect();
        let spec = ParamSpec { name, subsystem, values };
        spec.validate().map_err(|e| Error::parse(line_no, e.to_string()))?;
        params.push(spec);
    }
    DesignSpace::from_params(params)
}

/// Canonical text dump; `parse_design_space(dump_design_space(s)) == s`.
pub fn dump_design_space(space: &DesignSpace) -> String {
    let mut out = String::new();
    for p in space.params() {
        let values: Vec<String> = p.values.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{} | {} | {}\n", p.name, p.subsystem, values.join(",")));
    }
    out
}

macro_rules! num_values {
    ($($v:expr),+) => { vec![$(ParamValue::Num($v)),+] };
}

fn repl_policy_values() -> Vec<ParamValue> {
    vec![
        ParamValue::Sym("PLRU".to_string()),
        ParamValue::Sym("LRU".to_string()),
        ParamValue::Sym("RANDOM".to_string()),
    ]
}

/// The built-in 68-parameter catalog (7 imem, 30 dmem, 15 core, 16 branch).
pub fn default_catalog() -> DesignSpace {
    use Subsystem::{Branch, Core, Dmem, Imem};
    let p = |name: &str, subsystem: Subsystem, values: Vec<ParamValue>| ParamSpec {
        name: name.to_string(),
        subsystem,
        values,
    };
    let params = vec![
        // Instruction-side memory.
        p("immu/il2mmu tlb page size (kb)", Imem, num_values![4, 8, 16, 1024, 1_048_576]),
        p("immu/il2mmu tlb num entries", Imem, num_values![8, 16, 32, 64]),
        p("immu/il2mmu tlb associativity", Imem, num_values![1, 2, 4, 8]),
        p("icache line size", Imem, num_values![32, 64]),
        p("icache size (kb)", Imem, num_values![32, 64, 128, 256, 512, 1024]),
        p("icache associativity", Imem, num_values![2, 4, 8, 16]),
        p("fetch-icache queue size (bytes)", Imem, num_values![64, 128, 256, 512, 1024]),
        // Data-side memory and LSU.
        p("l2 cache line size", Dmem, num_values![32, 64, 128, 256, 512]),
        p("l2 cache size (kb)", Dmem, num_values![512, 1024, 2048, 4096, 8192]),
        p("l2 cache associativity", Dmem, num_values![1, 2, 4, 8, 16, 32]),
        p("l2 cache replacement policy", Dmem, repl_policy_values()),
        p("l2-icache request queue size", Dmem, num_values![8, 16, 32, 64]),
        p("l2-icache response queue size", Dmem, num_values![8, 16, 32, 64]),
        p("l3 cache line size", Dmem, num_values![32, 64, 128, 256, 512]),
        p("l3 cache size (kb)", Dmem, num_values![16_384, 32_768, 65_536, 131_072]),
        p("l3 cache associativity", Dmem, num_values![1, 2, 4, 8, 16, 32, 64]),
        p("l3 cache replacement policy", Dmem, repl_policy_values()),
        p("dcache line size", Dmem, num_values![16, 32, 64, 128, 256]),
        p("dcache size (kb)", Dmem, num_values![32, 64, 128, 256, 512, 1024]),
        p("dcache associativity", Dmem, num_values![2, 4, 8, 16]),
        p("dcache replacement policy", Dmem, repl_policy_values()),
        p("dmmu/dl2mmu tlb page size (kb)", Dmem, num_values![4, 8, 16, 1024, 1_048_576]),
        p("dmmu/dl2mmu tlb num entries", Dmem, num_values![8, 16, 32, 64]),
        p("dmmu/dl2mmu tlb associativity", Dmem, num_values![1, 2, 4, 8]),
        p("lsu data bank queue size", Dmem, num_values![4, 8, 16, 32, 64]),
        p("lsu load buffer queue size", Dmem, num_values![32, 64, 128]),
        p("lsu store buffer queue size", Dmem, num_values![32, 64, 128]),
        p("lsu tlb miss queue size", Dmem, num_values![2, 4, 8, 16, 32, 64, 128, 256]),
        p("lsu memory request queue size", Dmem, num_values![4, 8, 16, 32, 64, 128]),
        p("lsu data miss queue size", Dmem, num_values![4, 8, 16, 32, 64, 128]),
        p("lsu data eviction queue size", Dmem, num_values![2, 4, 8, 16]),
        p("l2-lsu read request queue size", Dmem, num_values![8, 16, 32, 64]),
        p("l2-lsu write request queue size", Dmem, num_values![8, 16, 32, 64]),
        p("l2-lsu read response queue size", Dmem, num_values![8, 16, 32, 64]),
        p("l2-l1 pipe read request queue size", Dmem, num_values![8, 16, 32, 64]),
        p("l2 no. of banks", Dmem, num_values![8, 16, 32, 64]),
        p("l2 no. of rows per bank", Dmem, num_values![1, 2, 4]),
        // Core widths and buffering.
        p("issue width", Core, num_values![4, 8, 12, 16]),
        p("dispatch width", Core, num_values![4, 8, 12, 16]),
        p("physical register file write ports", Core, num_values![8, 12, 16]),
        p("physical register file read ports", Core, num_values![16, 32, 64, 128]),
        p("no. to fetch", Core, num_values![8, 16, 32, 64]),
        p("no. to decode", Core, num_values![8, 16, 32, 64]),
        p("decode: scalar instruction queue size", Core, num_values![8, 16, 32, 64, 128]),
        p("no. to rename", Core, num_values![8, 16, 32, 64]),
        p("no. of integer renames", Core, num_values![128, 160, 192, 224, 256]),
        p("no. of float renames", Core, num_values![128, 160, 192, 224, 256]),
        p("no. to dispatch", Core, num_values![8, 16, 32, 64]),
        p("dispatch queue depth", Core, num_values![4, 8, 10, 16, 32]),
        p("bus interface unit request queue size", Core, num_values![4, 8, 16, 32, 64, 128]),
        p("reorder buffer no. to retire", Core, num_values![8, 16, 32, 64, 128]),
        p("reorder buffer retire queue depth", Core, num_values![128, 192, 256, 384, 512]),
        // Branch prediction.
        p("loop predictor (lpred) no. of entries", Branch, num_values![64, 128, 256, 512, 1024, 2048]),
        p("lpred associativity", Branch, num_values![2, 4]),
        p("lpred max age", Branch, num_values![15, 31, 63, 127]),
        p("lpred no. of loop iterations max", Branch, num_values![32, 64, 128, 256, 512, 1024]),
        p("tage instruction shift amount", Branch, num_values![0, 1, 2, 3, 4, 5, 6, 7]),
        p("tage history buffer size", Branch, num_values![128, 256, 512, 768, 1024, 2048]),
        p("tage initial reset timer value", Branch, num_values![0x1_0000, 0x10_0000, 0x100_0000]),
        p("tage path history bits", Branch, num_values![32, 48, 64]),
        p("tage table tag widths x16", Branch, num_values![9, 10, 11, 12, 13, 14, 15, 16, 17]),
        p("ittage path history bits", Branch, num_values![32, 48, 64]),
        p("ittage initial reset timer value", Branch, num_values![0x1_0000, 0x10_0000, 0x100_0000]),
        p("ittage table tag widths x16", Branch, num_values![8, 9, 10, 11, 12, 13, 14, 15]),
        p("branch target buffer (btb) granularity", Branch, num_values![2, 4]),
        p("btb total entries", Branch, num_values![4096, 8192, 16_384, 32_768]),
        p("btb associativity", Branch, num_values![2, 4, 8]),
        p("btb raas size", Branch, num_values![32, 64, 128, 256]),
    ];
    DesignSpace::from_params(params).expect("catalog is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn catalog_has_68_params_partitioned_7_30_15_16() {
        let space = default_catalog();
        assert_eq!(space.len(), 68);
        let count = |s: Subsystem| space.subsystem_subset(s).len();
        assert_eq!(count(Subsystem::Imem), 7);
        assert_eq!(count(Subsystem::Dmem), 30);
        assert_eq!(count(Subsystem::Core), 15);
        assert_eq!(count(Subsystem::Branch), 16);
        // Value-list sizes stay in the catalog's 2..=9 band.
        for p in space.params() {
            assert!(
                (2..=9).contains(&p.rank_count()),
                "{} has {} values",
                p.name,
                p.rank_count()
            );
        }
    }

    #[test]
    fn rank_encoding_maps_value_lists_to_indices() {
        // A four-value list encodes as ranks 0..=3 in list order.
        let space = DesignSpace::from_params(vec![ParamSpec {
            name: "entries".into(),
            subsystem: Subsystem::Core,
            values: num_values![4, 8, 32, 64],
        }])
        .unwrap();
        for (rank, v) in [4u64, 8, 32, 64].iter().enumerate() {
            let cfg = space.rank_encode(&[ParamValue::Num(*v)]).unwrap();
            assert_eq!(cfg.ranks, vec![rank as u16]);
        }
    }

    #[test]
    fn encode_decode_are_inverse_over_catalog() {
        let space = default_catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let cfg = space.sample_config(&mut rng);
            let values = space.rank_decode(&cfg).unwrap();
            let back = space.rank_encode(&values).unwrap();
            assert_eq!(cfg, back);
        }
    }

    #[test]
    fn normalize_is_in_unit_interval_with_single_value_zero() {
        let space = DesignSpace::from_params(vec![
            ParamSpec {
                name: "a".into(),
                subsystem: Subsystem::Core,
                values: num_values![1, 2, 3],
            },
            ParamSpec { name: "b".into(), subsystem: Subsystem::Core, values: num_values![7] },
        ])
        .unwrap();
        let norm = space.normalize(&Configuration::new(vec![2, 0])).unwrap();
        assert_eq!(norm, vec![1.0, 0.0]);
        let norm = space.normalize(&Configuration::new(vec![1, 0])).unwrap();
        assert_eq!(norm, vec![0.5, 0.0]);
    }

    #[test]
    fn file_round_trip_preserves_space_and_fingerprint() {
        let space = default_catalog();
        let text = dump_design_space(&space);
        let back = parse_design_space(&text).unwrap();
        assert_eq!(space, back);
        assert_eq!(space.fingerprint(), back.fingerprint());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "a | core | 1,2\nb | nowhere | 1,2\n";
        assert!(matches!(parse_design_space(text), Err(Error::Parse { line: 2, .. })));
        let text = "a | core | 2,1\n";
        assert!(matches!(parse_design_space(text), Err(Error::Parse { line: 1, .. })));
        let text = "a | core | 1,2\na | core | 1,2\n";
        assert!(parse_design_space(text).is_err());
    }

    #[test]
    fn validate_config_rejects_bad_shapes_and_ranks() {
        let space = default_catalog();
        assert!(space.validate_config(&Configuration::new(vec![0; 67])).is_err());
        let mut cfg = space.min_config();
        cfg.ranks[0] = 99;
        assert!(matches!(space.validate_config(&cfg), Err(Error::Encoding { .. })));
    }

    #[test]
    fn overlay_and_extract_round_trip_subsets() {
        let space = default_catalog();
        let imem = space.subsystem_subset(Subsystem::Imem);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = space.sample_config(&mut rng);
        let sub = imem.sample_config(&mut rng);
        let merged = space.overlay(&base, &imem, &sub).unwrap();
        assert_eq!(space.extract(&merged, &imem).unwrap(), sub);
        // Parameters outside the subset keep their base ranks.
        for (i, p) in space.params().iter().enumerate() {
            if p.subsystem != Subsystem::Imem {
                assert_eq!(merged.ranks[i], base.ranks[i]);
            }
        }
    }

    #[test]
    fn subsystem_subsets_reassemble_in_catalog_order() {
        let space = default_catalog();
        let mut names = Vec::new();
        for s in SUBSYSTEMS {
            names.extend(space.subsystem_subset(s).param_names());
        }
        // The four groups are contiguous in catalog order, so the
        // concatenation matches the catalog exactly.
        assert_eq!(names, space.param_names());
    }

    #[test]
    fn replacement_policies_are_symbolic_in_catalog_order() {
        let space = default_catalog();
        let p = space.param("dcache replacement policy").unwrap();
        let names: Vec<String> = p.values.iter().map(|v| v.to_string()).collect();
        assert_eq!(names, vec!["PLRU", "LRU", "RANDOM"]);
        assert_eq!(p.values[2].numeric_or(2), 2.0);
    }

    #[test]
    fn total_configs_counts_small_spaces() {
        let space = parse_design_space("a | core | 1,2,3\nb | imem | 4,8\n").unwrap();
        assert_eq!(space.total_configs(), Some(6));
        // The full catalog exceeds u128; subsystem subsets do not.
        let full = default_catalog();
        assert_eq!(full.total_configs(), None);
        for s in crate::design_space::SUBSYSTEMS {
            assert!(full.subsystem_subset(s).total_configs().is_some());
        }
    }
}
