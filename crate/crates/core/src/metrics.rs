//! Derived metrics: IPC, activity-weighted power, parameter-weighted area,
//! and the IPC-per-area objective.
//!
//! Power is an event-energy model: each simulator counter carries a weight
//! and the per-instruction weighted activity is reported as "power". Area is
//! a linear model over parameter values: each parameter contributes
//! `weight x value` (numeric) or `weight x rank` (symbolic) on top of a base
//! term. Neither is calibrated to a physical unit; both are monotone,
//! strictly positive scores that make the multi-objective trade-off real.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::design_space::{Configuration, DesignSpace, ParamValue};
use crate::error::{Error, Result};
use crate::simulator::SimStats;
use crate::util::fmt_f64;

/// Per-counter energy weights for the power model.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerWeights {
    pub instruction: f64,
    pub cycle: f64,
    pub icache_hit: f64,
    pub icache_miss: f64,
    pub dcache_hit: f64,
    pub dcache_miss: f64,
    pub l2_hit: f64,
    pub l2_miss: f64,
    pub l3_hit: f64,
    pub l3_miss: f64,
    pub tlb_hit: f64,
    pub tlb_miss: f64,
    pub br_correct: f64,
    pub br_mispredict: f64,
    pub stall: f64,
}

impl Default for PowerWeights {
    fn default() -> Self {
        PowerWeights {
            instruction: 1.0,
            cycle: 0.2,
            icache_hit: 0.3,
            icache_miss: 3.0,
            dcache_hit: 0.4,
            dcache_miss: 4.0,
            l2_hit: 1.0,
            l2_miss: 10.0,
            l3_hit: 2.0,
            l3_miss: 20.0,
            tlb_hit: 0.1,
            tlb_miss: 1.0,
            br_correct: 0.2,
            br_mispredict: 2.0,
            stall: 0.05,
        }
    }
}

impl PowerWeights {
    /// Total weighted event activity for one simulation.
    pub fn weighted_activity(&self, s: &SimStats) -> f64 {
        let mut acc = 0.0;
        acc += self.instruction * s.instructions as f64;
        acc += self.cycle * s.cycles as f64;
        acc += self.icache_hit * s.icache_hits as f64;
        acc += self.icache_miss * s.icache_misses as f64;
        acc += self.dcache_hit * s.dcache_hits as f64;
        acc += self.dcache_miss * s.dcache_misses as f64;
        acc += self.l2_hit * s.l2_hits as f64;
        acc += self.l2_miss * s.l2_misses as f64;
        acc += self.l3_hit * s.l3_hits as f64;
        acc += self.l3_miss * s.l3_misses as f64;
        acc += self.tlb_hit * (s.itlb_hits + s.dtlb_hits) as f64;
        acc += self.tlb_miss * (s.itlb_misses + s.dtlb_misses) as f64;
        acc += self.br_correct * s.br_correct as f64;
        acc += self.br_mispredict * s.br_mispredict as f64;
        acc += self.stall
            * (s.stall_cycles_frontend + s.stall_cycles_rob_full + s.stall_cycles_lsu_full) as f64;
        acc
    }
}

/// Per-instruction weighted activity; 0 for an empty run.
pub fn estimate_power(stats: &SimStats, w: &PowerWeights) -> f64 {
    if stats.instructions == 0 {
        return 0.0;
    }
    w.weighted_activity(stats) / stats.instructions as f64
}

/// Linear area model over parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaWeights {
    pub base: f64,
    /// Per-parameter weight, keyed by exact parameter name.
    pub per_param: HashMap<String, f64>,
}

/// Default weight for a parameter, classified by name. Storage-like
/// parameters scale with capacity values; width-like parameters are the
/// expensive ones per unit.
fn default_area_weight(name: &str) -> f64 {
    if name.contains("page size") || name.contains("timer") {
        0.0
    } else if name.contains("size (kb)") {
        0.004
    } else if name.contains("line size") {
        0.002
    } else if name.contains("tlb num entries") {
        0.02
    } else if name.contains("btb total entries") {
        0.002
    } else if name.contains("lpred) no. of entries") {
        0.01
    } else if name.contains("associativity") {
        0.05
    } else if name.contains("queue") || name.contains("buffer size") || name.contains("history buffer")
    {
        0.02
    } else if name.contains("width") && name.contains("ports") {
        0.5
    } else if name.contains("ports") {
        0.5
    } else if name.contains("tag widths") {
        0.5
    } else if name.contains("no. to") || name.contains("dispatch width") || name == "issue width" {
        1.0
    } else if name.contains("renames") {
        0.05
    } else if name.contains("retire queue depth") {
        0.05
    } else if name.contains("path history bits") {
        0.1
    } else if name.contains("raas") {
        0.05
    } else if name.contains("granularity") {
        0.5
    } else if name.contains("shift") {
        0.1
    } else if name.contains("rows per bank") || name.contains("no. of banks") {
        0.1
    } else if name.contains("loop iterations") || name.contains("max age") {
        0.01
    } else {
        // Symbolic parameters (replacement policies) and anything
        // unclassified: small per-rank cost.
        0.1
    }
}

impl AreaWeights {
    /// Default weights for every parameter of `space`.
    pub fn for_space(space: &DesignSpace) -> AreaWeights {
        let per_param = space
            .params()
            .iter()
            .map(|p| (p.name.clone(), default_area_weight(&p.name)))
            .collect();
        AreaWeights { base: 10.0, per_param }
    }
}

/// Area score for a configuration: base + sum of weight x value (numeric
/// parameters use their value; symbolic ones use their rank).
pub fn estimate_area(space: &DesignSpace, cfg: &Configuration, w: &AreaWeights) -> Result<f64> {
    space.validate_config(cfg)?;
    let mut area = w.base;
    for (spec, &rank) in space.params().iter().zip(cfg.ranks.iter()) {
        let weight = w.per_param.get(&spec.name).copied().unwrap_or(0.0);
        let v = match &spec.values[usize::from(rank)] {
            ParamValue::Num(x) => *x as f64,
            ParamValue::Sym(_) => f64::from(rank),
        };
        area += weight * v;
    }
    if area <= 0.0 {
        return Err(Error::validation("area model produced a non-positive score"));
    }
    Ok(area)
}

/// IPC from raw counters; zero-cycle runs are invalid.
pub fn compute_ipc(stats: &SimStats) -> Result<f64> {
    if stats.cycles == 0 {
        return Err(Error::validation("cannot compute IPC for a zero-cycle simulation"));
    }
    Ok(stats.instructions as f64 / stats.cycles as f64)
}

/// All derived metrics for one (chunk, configuration) simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricVector {
    pub ipc: f64,
    pub power: f64,
    pub area: f64,
    /// The IPC-per-area objective used for search.
    pub objective: f64,
}

/// Bundle of model weights used to derive metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricWeights {
    pub power: PowerWeights,
    pub area: AreaWeights,
}

impl MetricWeights {
    pub fn for_space(space: &DesignSpace) -> MetricWeights {
        MetricWeights { power: PowerWeights::default(), area: AreaWeights::for_space(space) }
    }
}

/// Compute the full metric vector from counters and a configuration.
pub fn compute_metrics(
    stats: &SimStats,
    space: &DesignSpace,
    cfg: &Configuration,
    w: &MetricWeights,
) -> Result<MetricVector> {
    let ipc = compute_ipc(stats)?;
    let power = estimate_power(stats, &w.power);
    let area = estimate_area(space, cfg, &w.area)?;
    Ok(MetricVector { ipc, power, area, objective: ipc / area })
}

/// Which scalar a predictor or search optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Ipc,
    Power,
    /// IPC per area.
    Objective,
}

impl MetricKind {
    pub fn parse(s: &str) -> Result<MetricKind> {
        match s {
            "ipc" => Ok(MetricKind::Ipc),
            "power" => Ok(MetricKind::Power),
            "objective" => Ok(MetricKind::Objective),
            other => Err(Error::invalid_argument(format!(
                "unknown metric '{other}' (expected ipc, power, or objective)"
            ))),
        }
    }

    pub fn select(&self, m: &MetricVector) -> f64 {
        match self {
            MetricKind::Ipc => m.ipc,
            MetricKind::Power => m.power,
            MetricKind::Objective => m.objective,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MetricKind::Ipc => "ipc",
            MetricKind::Power => "power",
            MetricKind::Objective => "objective",
        };
        f.write_str(s)
    }
}

// ---------------------------------------------------------------------------
// Weights file format
// ---------------------------------------------------------------------------

/// Parse a weights file. Lines are `key = value`; `#` starts a comment.
/// Keys are power counter names (`power.icache_miss`), `area.base`, or
/// `area.<parameter name>`.
pub fn parse_weights(text: &str, space: &DesignSpace) -> Result<MetricWeights> {
    let mut w = MetricWeights::for_space(space);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, "expected 'key = value'"))?;
        let key = key.trim();
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno, format!("invalid number '{}'", value.trim())))?;
        if !value.is_finite() {
            return Err(Error::parse(lineno, "weight must be finite"));
        }
        if let Some(counter) = key.strip_prefix("power.") {
            let slot = match counter {
                "instruction" => &mut w.power.instruction,
                "cycle" => &mut w.power.cycle,
                "icache_hit" => &mut w.power.icache_hit,
                "icache_miss" => &mut w.power.icache_miss,
                "dcache_hit" => &mut w.power.dcache_hit,
                "dcache_miss" => &mut w.power.dcache_miss,
                "l2_hit" => &mut w.power.l2_hit,
                "l2_miss" => &mut w.power.l2_miss,
                "l3_hit" => &mut w.power.l3_hit,
                "l3_miss" => &mut w.power.l3_miss,
                "tlb_hit" => &mut w.power.tlb_hit,
                "tlb_miss" => &mut w.power.tlb_miss,
                "br_correct" => &mut w.power.br_correct,
                "br_mispredict" => &mut w.power.br_mispredict,
                "stall" => &mut w.power.stall,
                other => {
                    return Err(Error::parse(lineno, format!("unknown power weight '{other}'")))
                }
            };
            *slot = value;
        } else if key == "area.base" {
            w.area.base = value;
        } else if let Some(param) = key.strip_prefix("area.") {
            if space.param_index(param).is_none() {
                return Err(Error::parse(
                    lineno,
                    format!("area weight names unknown parameter '{param}'"),
                ));
            }
            w.area.per_param.insert(param.to_string(), value);
        } else {
            return Err(Error::parse(
                lineno,
                format!("unknown weight key '{key}' (expected power.* or area.*)"),
            ));
        }
    }
    Ok(w)
}

pub fn load_weights(path: &Path, space: &DesignSpace) -> Result<MetricWeights> {
    let text = std::fs::read_to_string(path)?;
    parse_weights(&text, space)
}

/// Serialize weights in the `parse_weights` format.
pub fn dump_weights(w: &MetricWeights, space: &DesignSpace) -> String {
    let mut out = String::new();
    let p = &w.power;
    for (name, v) in [
        ("instruction", p.instruction),
        ("cycle", p.cycle),
        ("icache_hit", p.icache_hit),
        ("icache_miss", p.icache_miss),
        ("dcache_hit", p.dcache_hit),
        ("dcache_miss", p.dcache_miss),
        ("l2_hit", p.l2_hit),
        ("l2_miss", p.l2_miss),
        ("l3_hit", p.l3_hit),
        ("l3_miss", p.l3_miss),
        ("tlb_hit", p.tlb_hit),
        ("tlb_miss", p.tlb_miss),
        ("br_correct", p.br_correct),
        ("br_mispredict", p.br_mispredict),
        ("stall", p.stall),
    ] {
        out.push_str(&format!("power.{name} = {}\n", fmt_f64(v)));
    }
    out.push_str(&format!("area.base = {}\n", fmt_f64(w.area.base)));
    // Parameter order follows the space for reproducible files.
    for spec in space.params() {
        if let Some(v) = w.area.per_param.get(&spec.name) {
            out.push_str(&format!("area.{} = {}\n", spec.name, fmt_f64(*v)));
        }
    }
    out
}
