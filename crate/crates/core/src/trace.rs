//! Instruction traces: the record model, text parsing/formatting, synthetic
//! workload generation, chunking, and mnemonic tokenization.
//!
//! Trace text format, one instruction per line:
//!
//! ```text
//! <pc-hex> <mnemonic> <flagcsv|-> [tgt=<hex>] [rd=<n>] [rs1=<n>] [rs2=<n>] [addr=<hex>]
//! ```
//!
//! Flags are a comma list drawn from `C` (compressed), `LD` (load), `ST`
//! (store), `BR` (branch), `T` (branch taken); `-` means no flags. `#` starts
//! a comment. Branch records must carry `tgt=` (and `T` exactly when taken);
//! loads/stores must carry `addr=`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use crate::error::{Error, Result};
use crate::util::{fnv1a64, splitmix64};

/// Per-instruction attribute flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsnFlags {
    pub compressed: bool,
    pub load: bool,
    pub store: bool,
    pub branch: bool,
}

/// One dynamic instruction.
///
/// Invariants (checked by [`TraceRecord::validate`]): `target` and `taken`
/// are present iff `flags.branch`; `mem_addr` is present iff `flags.load ||
/// flags.store`; register indices are in `0..=31`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub pc: u64,
    pub mnemonic: String,
    pub flags: InsnFlags,
    pub target: Option<u64>,
    pub taken: Option<bool>,
    pub rd: Option<u8>,
    pub rs1: Option<u8>,
    pub rs2: Option<u8>,
    pub mem_addr: Option<u64>,
}

impl TraceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.mnemonic.is_empty() || self.mnemonic.chars().any(|c| c.is_whitespace()) {
            return Err(Error::validation("mnemonic must be non-empty and whitespace-free"));
        }
        if self.flags.branch != self.target.is_some() || self.flags.branch != self.taken.is_some() {
            return Err(Error::validation(format!(
                "pc {:x}: target/taken must be present exactly for branches",
                self.pc
            )));
        }
        if (self.flags.load || self.flags.store) != self.mem_addr.is_some() {
            return Err(Error::validation(format!(
                "pc {:x}: mem_addr must be present exactly for loads/stores",
                self.pc
            )));
        }
        for (name, reg) in [("rd", self.rd), ("rs1", self.rs1), ("rs2", self.rs2)] {
            if let Some(r) = reg {
                if r > 31 {
                    return Err(Error::validation(format!("pc {:x}: {name}={r} out of 0..=31", self.pc)));
                }
            }
        }
        Ok(())
    }

    /// Instruction size in bytes (2 if compressed, else 4).
    pub fn len_bytes(&self) -> u64 {
        if self.flags.compressed {
            2
        } else {
            4
        }
    }
}

/// A contiguous slice of a trace, the unit the simulator and the predictors
/// both consume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub id: u64,
    pub records: Vec<TraceRecord>,
}

// ---------------------------------------------------------------------------
// Text round trip
// ---------------------------------------------------------------------------

fn format_record(r: &TraceRecord, out: &mut String) {
    let mut flags = Vec::with_capacity(5);
    if r.flags.compressed {
        flags.push("C");
    }
    if r.flags.load {
        flags.push("LD");
    }
    if r.flags.store {
        flags.push("ST");
    }
    if r.flags.branch {
        flags.push("BR");
    }
    if r.taken == Some(true) {
        flags.push("T");
    }
    let flag_str = if flags.is_empty() { "-".to_string() } else { flags.join(",") };
    write!(out, "{:x} {} {}", r.pc, r.mnemonic, flag_str).unwrap();
    if let Some(t) = r.target {
        write!(out, " tgt={t:x}").unwrap();
    }
    if let Some(v) = r.rd {
        write!(out, " rd={v}").unwrap();
    }
    if let Some(v) = r.rs1 {
        write!(out, " rs1={v}").unwrap();
    }
    if let Some(v) = r.rs2 {
        write!(out, " rs2={v}").unwrap();
    }
    if let Some(a) = r.mem_addr {
        write!(out, " addr={a:x}").unwrap();
    }
    out.push('\n');
}

/// Serialize records to trace text. Inverse of [`parse_trace`].
pub fn write_trace(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 40);
    for r in records {
        format_record(r, &mut out);
    }
    out
}

fn parse_hex(tok: &str, line: usize, what: &str) -> Result<u64> {
    let t = tok.strip_prefix("0x").unwrap_or(tok);
    u64::from_str_radix(t, 16).map_err(|_| Error::parse(line, format!("bad hex {what} '{tok}'")))
}

fn parse_reg(tok: &str, line: usize, what: &str) -> Result<u8> {
    let v: u8 = tok.parse().map_err(|_| Error::parse(line, format!("bad {what} '{tok}'")))?;
    if v > 31 {
        return Err(Error::parse(line, format!("{what}={v} out of 0..=31")));
    }
    Ok(v)
}

/// Parse trace text. Errors carry 1-based line numbers. Each parsed record is
/// also validated against the record invariants.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let mut toks = line.split_whitespace();
        let Some(pc_tok) = toks.next() else { continue };
        let pc = parse_hex(pc_tok, line_no, "pc")?;
        let mnemonic = toks
            .next()
            .ok_or_else(|| Error::parse(line_no, "missing mnemonic"))?
            .to_string();
        let flag_tok = toks.next().ok_or_else(|| Error::parse(line_no, "missing flags field"))?;
        let mut flags = InsnFlags::default();
        let mut taken_flag = false;
        if flag_tok != "-" {
            for f in flag_tok.split(',') {
                match f {
                    "C" => flags.compressed = true,
                    "LD" => flags.load = true,
                    "ST" => flags.store = true,
                    "BR" => flags.branch = true,
                    "T" => taken_flag = true,
                    other => return Err(Error::parse(line_no, format!("unknown flag '{other}'"))),
                }
            }
        }
        let mut rec = TraceRecord {
            pc,
            mnemonic,
            flags,
            target: None,
            taken: if flags.branch { Some(taken_flag) } else { None },
            rd: None,
            rs1: None,
            rs2: None,
            mem_addr: None,
        };
        if taken_flag && !flags.branch {
            return Err(Error::parse(line_no, "flag T requires BR"));
        }
        for tok in toks {
            let (key, val) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, format!("expected key=value, got '{tok}'")))?;
            match key {
                "tgt" => rec.target = Some(parse_hex(val, line_no, "target")?),
                "rd" => rec.rd = Some(parse_reg(val, line_no, "rd")?),
                "rs1" => rec.rs1 = Some(parse_reg(val, line_no, "rs1")?),
                "rs2" => rec.rs2 = Some(parse_reg(val, line_no, "rs2")?),
                "addr" => rec.mem_addr = Some(parse_hex(val, line_no, "addr")?),
                other => return Err(Error::parse(line_no, format!("unknown field '{other}'"))),
            }
        }
        rec.validate().map_err(|e| Error::parse(line_no, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Split a trace into chunks of `chunk_len` instructions (the final chunk may
/// be shorter). Produces `ceil(n / chunk_len)` chunks with ids `0..`.
pub fn chunk_trace(records: Vec<TraceRecord>, chunk_len: usize) -> Result<Vec<Chunk>> {
    if chunk_len == 0 {
        return Err(Error::invalid_argument("chunk_len must be > 0"));
    }
    let mut chunks = Vec::with_capacity(records.len().div_ceil(chunk_len));
    let mut records = records;
    let mut id = 0u64;
    while !records.is_empty() {
        let rest = records.split_off(records.len().min(chunk_len));
        chunks.push(Chunk { id, records });
        records = rest;
        id += 1;
    }
    Ok(chunks)
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Mnemonic-to-token dictionary.
///
/// Ids are assigned in first-appearance order. The pad token id equals
/// [`TokenDict::size`] and is appended by the tokenizer, never stored. A
/// dictionary built with [`TokenDict::build_with_unknown`] reserves one extra
/// slot so unseen mnemonics map to `pad_id - 1`; dictionaries built with
/// [`TokenDict::build`] reject unseen mnemonics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDict {
    names: Vec<String>,
    index: HashMap<String, usize>,
    has_unk: bool,
}

impl TokenDict {
    fn build_inner<'a>(mnemonics: impl Iterator<Item = &'a str>, has_unk: bool) -> TokenDict {
        let mut names = Vec::new();
        let mut index = HashMap::new();
        for m in mnemonics {
            if !index.contains_key(m) {
                index.insert(m.to_string(), names.len());
                names.push(m.to_string());
            }
        }
        TokenDict { names, index, has_unk }
    }

    /// Strict dictionary over the mnemonics of `records`.
    pub fn build(records: &[TraceRecord]) -> TokenDict {
        Self::build_inner(records.iter().map(|r| r.mnemonic.as_str()), false)
    }

    /// Dictionary with a reserved unknown slot (lenient tokenization).
    pub fn build_with_unknown(records: &[TraceRecord]) -> TokenDict {
        Self::build_inner(records.iter().map(|r| r.mnemonic.as_str()), true)
    }

    /// Dictionary from an explicit mnemonic list (checkpoint restore).
    pub fn from_names(names: Vec<String>, has_unk: bool) -> Result<TokenDict> {
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate mnemonic '{n}' in dictionary")));
            }
        }
        Ok(TokenDict { names: names.clone(), index, has_unk })
    }

    /// Number of token ids excluding pad (real mnemonics plus the unknown
    /// slot if reserved).
    pub fn size(&self) -> usize {
        self.names.len() + usize::from(self.has_unk)
    }

    pub fn pad_id(&self) -> usize {
        self.size()
    }

    pub fn unk_id(&self) -> Option<usize> {
        self.has_unk.then(|| self.size() - 1)
    }

    pub fn has_unknown_slot(&self) -> bool {
        self.has_unk
    }

    /// Embedding rows needed to cover every id including pad.
    pub fn vocab_size(&self) -> usize {
        self.size() + 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn token_of(&self, mnemonic: &str) -> Result<usize> {
        match self.index.get(mnemonic) {
            Some(&id) => Ok(id),
            None => self
                .unk_id()
                .ok_or_else(|| Error::Tokenization(format!("unknown mnemonic '{mnemonic}'"))),
        }
    }

    pub fn name_of(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(|s| s.as_str())
    }

    pub fn fingerprint(&self) -> u64 {
        let mut text = self.names.join("\n");
        if self.has_unk {
            text.push_str("\n<unk>");
        }
        fnv1a64(text.as_bytes())
    }
}

/// Token ids for a chunk, padded with `dict.pad_id()` to exactly `seq_len`.
pub fn tokenize_chunk(chunk: &Chunk, dict: &TokenDict, seq_len: usize) -> Result<Vec<usize>> {
    if chunk.records.len() > seq_len {
        return Err(Error::Tokenization(format!(
            "chunk {} has {} records, exceeds sequence length {seq_len}",
            chunk.id,
            chunk.records.len()
        )));
    }
    let mut out = Vec::with_capacity(seq_len);
    for r in &chunk.records {
        out.push(dict.token_of(&r.mnemonic)?);
    }
    out.resize(seq_len, dict.pad_id());
    Ok(out)
}

/// Tokenize every chunk to fixed length `seq_len`.
pub fn tokenize_all(chunks: &[Chunk], dict: &TokenDict, seq_len: usize) -> Result<Vec<Vec<usize>>> {
    chunks.iter().map(|c| tokenize_chunk(c, dict, seq_len)).collect()
}

// ---------------------------------------------------------------------------
// Execution classes
// ---------------------------------------------------------------------------

/// Coarse execution class used by the simulator's latency and port model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecClass {
    Alu,
    Mul,
    Div,
    Fp,
    Load,
    Store,
    Branch,
}

/// Classify a record. Flags win over the mnemonic; unknown non-flagged
/// mnemonics fall back to `Alu`.
pub fn exec_class(r: &TraceRecord) -> ExecClass {
    if r.flags.branch {
        return ExecClass::Branch;
    }
    if r.flags.load {
        return ExecClass::Load;
    }
    if r.flags.store {
        return ExecClass::Store;
    }
    let m = r.mnemonic.as_str();
    if MUL_POOL.contains(&m) {
        ExecClass::Mul
    } else if DIV_POOL.contains(&m) {
        ExecClass::Div
    } else if FP_POOL.contains(&m) {
        ExecClass::Fp
    } else {
        ExecClass::Alu
    }
}

/// Whether the destination register lives in the floating-point file (used
/// for float vs integer rename accounting).
pub fn writes_float_reg(r: &TraceRecord) -> bool {
    let m = r.mnemonic.as_str();
    if r.flags.load {
        return matches!(m, "flw" | "fld" | "c.fld" | "c.fldsp");
    }
    // FP compares, classifies and moves-to-integer write integer registers.
    FP_POOL.contains(&m) && !matches!(m, "feq.d" | "flt.d" | "fcvt.w.d" | "fmv.x.d")
        || matches!(m, "fdiv.s" | "fdiv.d" | "fsqrt.d")
}

// ---------------------------------------------------------------------------
// Synthetic workload generation
// ---------------------------------------------------------------------------

/// Workload recipe for the synthetic generator. Class fractions must sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadProfile {
    pub alu_frac: f64,
    pub mul_frac: f64,
    pub div_frac: f64,
    pub load_frac: f64,
    pub store_frac: f64,
    pub branch_frac: f64,
    /// Mean probability that a conditional branch is taken.
    pub taken_prob: f64,
    /// Mean register dependency distance in instructions (>= 1).
    pub dep_chain_len: f64,
    /// Span of generated data addresses.
    pub working_set_bytes: u64,
    pub seed: u64,
}

impl Default for WorkloadProfile {
    fn default() -> Self {
        WorkloadProfile {
            alu_frac: 0.45,
            mul_frac: 0.05,
            div_frac: 0.02,
            load_frac: 0.25,
            store_frac: 0.13,
            branch_frac: 0.10,
            taken_prob: 0.6,
            dep_chain_len: 4.0,
            working_set_bytes: 64 * 1024,
            seed: 1,
        }
    }
}

impl WorkloadProfile {
    pub fn validate(&self) -> Result<()> {
        let fracs = [
            self.alu_frac,
            self.mul_frac,
            self.div_frac,
            self.load_frac,
            self.store_frac,
            self.branch_frac,
        ];
        for f in fracs {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::validation(format!("class fraction {f} out of [0, 1]")));
            }
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("class fractions sum to {sum}, expected 1")));
        }
        if !(0.0..=1.0).contains(&self.taken_prob) {
            return Err(Error::validation("taken_prob out of [0, 1]"));
        }
        if !self.dep_chain_len.is_finite() || self.dep_chain_len < 1.0 {
            return Err(Error::validation("dep_chain_len must be >= 1"));
        }
        if self.working_set_bytes == 0 {
            return Err(Error::validation("working_set_bytes must be > 0"));
        }
        Ok(())
    }
}

/// Parse a profile from `key = value` lines ('#' comments). Unset keys keep
/// their defaults. Keys: alu, mul, div, load, store, branch, taken_prob,
/// dep_chain_len, working_set_bytes, seed.
pub fn parse_profile(text: &str) -> Result<WorkloadProfile> {
    let mut p = WorkloadProfile::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(line_no, format!("expected key = value, got '{line}'")))?;
        let key = key.trim();
        let val = val.trim();
        let fval = || -> Result<f64> {
            val.parse().map_err(|_| Error::parse(line_no, format!("bad number '{val}'")))
        };
        let uval = || -> Result<u64> {
            val.parse().map_err(|_| Error::parse(line_no, format!("bad integer '{val}'")))
        };
        match key {
            "alu" => p.alu_frac = fval()?,
            "mul" => p.mul_frac = fval()?,
            "div" => p.div_frac = fval()?,
            "load" => p.load_frac = fval()?,
            "store" => p.store_frac = fval()?,
            "branch" => p.branch_frac = fval()?,
            "taken_prob" => p.taken_prob = fval()?,
            "dep_chain_len" => p.dep_chain_len = fval()?,
            "working_set_bytes" => p.working_set_bytes = uval()?,
            "seed" => p.seed = uval()?,
            other => return Err(Error::parse(line_no, format!("unknown profile key '{other}'"))),
        }
    }
    p.validate()?;
    Ok(p)
}

/// Named workload recipes spanning distinct microarchitectural stress
/// patterns: compute-bound, streaming, pointer-chasing, branch-heavy,
/// and a balanced mix.
pub fn builtin_profiles() -> Vec<(&'static str, WorkloadProfile)> {
    let base = WorkloadProfile::default();
    vec![
        (
            "alu",
            WorkloadProfile {
                alu_frac: 0.70,
                mul_frac: 0.10,
                div_frac: 0.04,
                load_frac: 0.08,
                store_frac: 0.04,
                branch_frac: 0.04,
                taken_prob: 0.5,
                dep_chain_len: 6.0,
                working_set_bytes: 16 * 1024,
                seed: 101,
            },
        ),
        (
            "stream",
            WorkloadProfile {
                alu_frac: 0.30,
                mul_frac: 0.02,
                div_frac: 0.0,
                load_frac: 0.38,
                store_frac: 0.22,
                branch_frac: 0.08,
                taken_prob: 0.85,
                dep_chain_len: 2.0,
                working_set_bytes: 8 * 1024 * 1024,
                seed: 102,
            },
        ),
        (
            "pointer",
            WorkloadProfile {
                alu_frac: 0.25,
                mul_frac: 0.01,
                div_frac: 0.01,
                load_frac: 0.45,
                store_frac: 0.08,
                branch_frac: 0.20,
                taken_prob: 0.55,
                dep_chain_len: 1.5,
                working_set_bytes: 2 * 1024 * 1024,
                seed: 103,
            },
        ),
        (
            "branchy",
            WorkloadProfile {
                alu_frac: 0.40,
                mul_frac: 0.03,
                div_frac: 0.01,
                load_frac: 0.18,
                store_frac: 0.08,
                branch_frac: 0.30,
                taken_prob: 0.5,
                dep_chain_len: 3.0,
                working_set_bytes: 64 * 1024,
                seed: 104,
            },
        ),
        ("mixed", WorkloadProfile { seed: 105, ..base }),
    ]
}

/// Look up a builtin profile by name.
pub fn profile_named(name: &str) -> Result<WorkloadProfile> {
    builtin_profiles()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, p)| p)
        .ok_or_else(|| {
            let names: Vec<&str> = builtin_profiles().iter().map(|(n, _)| *n).collect();
            Error::invalid_argument(format!(
                "unknown profile '{name}'; builtin profiles: {}",
                names.join(", ")
            ))
        })
}

pub fn dump_profile(p: &WorkloadProfile) -> String {
    format!(
        "alu = {}\nmul = {}\ndiv = {}\nload = {}\nstore = {}\nbranch = {}\n\
         taken_prob = {}\ndep_chain_len = {}\nworking_set_bytes = {}\nseed = {}\n",
        p.alu_frac,
        p.mul_frac,
        p.div_frac,
        p.load_frac,
        p.store_frac,
        p.branch_frac,
        p.taken_prob,
        p.dep_chain_len,
        p.working_set_bytes,
        p.seed
    )
}

// Static mnemonic pools; 150 distinct mnemonics total across all classes.
static INT_ALU_POOL: &[&str] = &[
    "add", "addw", "addi", "addiw", "sub", "subw", "and", "andi", "or", "ori", "xor", "xori",
    "sll", "sllw", "slli", "slliw", "srl", "srlw", "srli", "srliw", "sra", "sraw", "srai",
    "sraiw", "slt", "slti", "sltu", "sltiu", "lui", "auipc", "sh1add", "sh2add", "sh3add",
    "add.uw", "andn", "orn", "xnor", "clz", "ctz", "cpop", "max", "maxu", "min", "minu",
    "sext.b", "sext.h", "zext.h", "rol", "ror", "rori", "orc.b", "rev8", "c.add", "c.addw",
    "c.addi", "c.addiw", "c.addi16sp", "c.addi4spn", "c.sub", "c.subw", "c.and", "c.andi",
    "c.or", "c.xor", "c.mv", "c.li", "c.lui",
];

static FP_POOL: &[&str] = &[
    "fadd.s", "fadd.d", "fsub.s", "fsub.d", "fmul.s", "fmul.d", "fmadd.s", "fmadd.d", "fmsub.s",
    "fmsub.d", "fnmadd.d", "fnmsub.d", "fsgnj.d", "fsgnjn.d", "fmin.d", "fmax.d", "fcvt.d.w",
    "fcvt.w.d", "fcvt.d.s", "fcvt.s.d", "fmv.d.x", "fmv.x.d", "feq.d", "flt.d",
];

static MUL_POOL: &[&str] = &["mul", "mulh", "mulhsu", "mulhu", "mulw", "c.mul"];

static DIV_POOL: &[&str] = &[
    "div", "divu", "rem", "remu", "divw", "divuw", "remw", "remuw", "fdiv.s", "fdiv.d", "fsqrt.d",
];

static LOAD_POOL: &[&str] = &[
    "lb", "lbu", "lh", "lhu", "lw", "lwu", "ld", "flw", "fld", "c.lw", "c.ld", "c.lwsp",
    "c.ldsp", "c.fld", "c.fldsp", "lr.w",
];

static STORE_POOL: &[&str] = &[
    "sb", "sh", "sw", "sd", "fsw", "fsd", "c.sw", "c.sd", "c.swsp", "c.sdsp", "c.fsd", "sc.w",
];

static BRANCH_POOL: &[&str] = &[
    "beq", "bne", "blt", "bge", "bltu", "bgeu", "c.beqz", "c.bnez", "jal", "jalr", "c.j",
    "c.jr", "c.jalr", "ret",
];

/// All generator mnemonics (150 distinct names).
pub fn mnemonic_pool() -> Vec<&'static str> {
    let mut all = Vec::with_capacity(150);
    for pool in [INT_ALU_POOL, FP_POOL, MUL_POOL, DIV_POOL, LOAD_POOL, STORE_POOL, BRANCH_POOL] {
        all.extend_from_slice(pool);
    }
    all
}

/// Share of the ALU class fraction drawn from the floating-point pool.
const FP_WITHIN_ALU: f64 = 0.15;

struct GenState {
    rng: ChaCha8Rng,
    pc: u64,
    code_base: u64,
    code_bytes: u64,
    data_base: u64,
    ws: u64,
    seq_ptr: u64,
    /// Destination registers of recent instructions, indexed by instruction
    /// number mod 64; drives dependency-distance sampling.
    rd_ring: [u8; 64],
    call_stack: Vec<u64>,
    dep_dist: Geometric,
}

impl GenState {
    fn new(profile: &WorkloadProfile) -> GenState {
        let mut ring = [0u8; 64];
        for (i, slot) in ring.iter_mut().enumerate() {
            *slot = (i % 31 + 1) as u8;
        }
        let p = (1.0 / profile.dep_chain_len).clamp(f64::MIN_POSITIVE, 1.0);
        GenState {
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            pc: 0x1_0000,
            code_base: 0x1_0000,
            code_bytes: (profile.working_set_bytes / 4).clamp(8 * 1024, 256 * 1024) & !0xfff,
            data_base: 0x8000_0000,
            ws: profile.working_set_bytes.max(64),
            seq_ptr: 0,
            rd_ring: ring,
            call_stack: Vec::new(),
            dep_dist: Geometric::new(p).expect("validated dep_chain_len"),
        }
    }

    fn reg_written_ago(&self, i: usize, dist: usize) -> u8 {
        self.rd_ring[(i + 64 - dist) % 64]
    }

    fn dep_reg(&mut self, i: usize) -> u8 {
        let d = 1 + (self.dep_dist.sample(&mut self.rng) as usize).min(62);
        self.reg_written_ago(i, d)
    }

    fn fresh_rd(&mut self) -> u8 {
        self.rng.gen_range(1..=31)
    }

    fn data_addr(&mut self) -> u64 {
        let off = if self.rng.gen_bool(0.5) {
            self.seq_ptr = (self.seq_ptr + 8) % self.ws;
            self.seq_ptr
        } else {
            self.rng.gen_range(0..self.ws) & !7
        };
        self.data_base + off
    }

    fn wrap_code(&self, addr: u64) -> u64 {
        self.code_base + (addr.wrapping_sub(self.code_base) % self.code_bytes)
    }

    /// One of 32 fixed "function entry" points; keeps call/indirect targets
    /// reusing a small set so target predictors have something to learn.
    fn entry_point(&self, idx: u64) -> u64 {
        self.code_base + (idx % 32) * (self.code_bytes / 32)
    }
}

fn draw_class(rng: &mut ChaCha8Rng, p: &WorkloadProfile) -> ExecClass {
    let r: f64 = rng.gen();
    let mut acc = p.alu_frac;
    if r < acc {
        return if rng.gen_bool(FP_WITHIN_ALU) { ExecClass::Fp } else { ExecClass::Alu };
    }
    acc += p.mul_frac;
    if r < acc {
        return ExecClass::Mul;
    }
    acc += p.div_frac;
    if r < acc {
        return ExecClass::Div;
    }
    acc += p.load_frac;
    if r < acc {
        return ExecClass::Load;
    }
    acc += p.store_frac;
    if r < acc {
        return ExecClass::Store;
    }
    ExecClass::Branch
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn gen_branch(st: &mut GenState, i: usize, taken_prob: f64) -> TraceRecord {
    let mnemonic = pick(&mut st.rng, BRANCH_POOL).to_string();
    let pc = st.pc;
    let compressed = mnemonic.starts_with("c.");
    let len = if compressed { 2 } else { 4 };
    let mut rd = None;
    let mut rs1 = None;
    let mut rs2 = None;
    let conditional = matches!(mnemonic.as_str(), "beq" | "bne" | "blt" | "bge" | "bltu" | "bgeu" | "c.beqz" | "c.bnez");
    let (taken, target) = if conditional {
        rs1 = Some(st.dep_reg(i));
        if !mnemonic.starts_with("c.") {
            rs2 = Some(st.dep_reg(i));
        }
        // Per-site taken bias around the profile mean, so direction
        // predictors see stable per-pc behaviour rather than pure noise.
        let biased = if splitmix64(pc ^ 0xb5ad_4ece_da1c_e2a9) & 1 == 0 {
            (taken_prob * 1.5 + 0.05).min(0.98)
        } else {
            (taken_prob * 0.5).max(0.02)
        };
        let taken = st.rng.gen_bool(biased);
        let target = if st.rng.gen_bool(0.7) {
            // Backward branch: loop shapes.
            let off = 2 * (1 + st.rng.gen_range(0..256u64));
            st.wrap_code(pc.saturating_sub(off).max(st.code_base))
        } else {
            let off = 2 * (1 + st.rng.gen_range(0..64u64));
            st.wrap_code(pc + off)
        };
        (taken, target)
    } else {
        // Unconditional control transfer; always taken.
        let target = match mnemonic.as_str() {
            "jal" | "c.jalr" => {
                if st.call_stack.len() == 64 {
                    st.call_stack.remove(0);
                }
                st.call_stack.push(pc + len);
                rd = Some(1);
                if mnemonic == "c.jalr" {
                    rs1 = Some(st.dep_reg(i));
                }
                let idx = splitmix64(pc) ^ u64::from(st.rng.gen_range(0..4u8));
                st.entry_point(idx)
            }
            "jalr" => {
                rd = Some(1);
                rs1 = Some(st.dep_reg(i));
                let idx = (splitmix64(pc) >> 8) + u64::from(st.rng.gen_range(0..4u8));
                st.entry_point(idx)
            }
            "ret" => {
                rs1 = Some(1);
                match st.call_stack.pop() {
                    Some(ra) => ra,
                    None => st.entry_point(splitmix64(pc)),
                }
            }
            "c.jr" => {
                rs1 = Some(st.dep_reg(i));
                let salt = u64::from(st.rng.gen_range(0..4u8));
                st.entry_point((splitmix64(pc) >> 8) + salt)
            }
            // c.j: short local jump.
            _ => {
                let off = 2 * (1 + st.rng.gen_range(0..64u64));
                st.wrap_code(pc + off)
            }
        };
        (true, st.wrap_code(target) & !1)
    };
    st.pc = if taken { target } else { st.wrap_code(pc + len) };
    TraceRecord {
        pc,
        mnemonic,
        flags: InsnFlags { compressed, load: false, store: false, branch: true },
        target: Some(target),
        taken: Some(taken),
        rd,
        rs1,
        rs2,
        mem_addr: None,
    }
}

/// Generate `n` synthetic instructions for `profile`. Deterministic in
/// (`profile`, `n`); every draw comes from a ChaCha stream seeded with
/// `profile.seed`.
pub fn generate_synthetic_trace(profile: &WorkloadProfile, n: usize) -> Result<Vec<TraceRecord>> {
    profile.validate()?;
    let mut st = GenState::new(profile);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let class = draw_class(&mut st.rng, profile);
        let rec = match class {
            ExecClass::Branch => gen_branch(&mut st, i, profile.taken_prob),
            ExecClass::Load => {
                let mnemonic = pick(&mut st.rng, LOAD_POOL).to_string();
                let compressed = mnemonic.starts_with("c.");
                let rec = TraceRecord {
                    pc: st.pc,
                    mnemonic,
                    flags: InsnFlags { compressed, load: true, store: false, branch: false },
                    target: None,
                    taken: None,
                    rd: Some(st.fresh_rd()),
                    rs1: Some(st.dep_reg(i)),
                    rs2: None,
                    mem_addr: Some(st.data_addr()),
                };
                st.pc = st.wrap_code(st.pc + rec.len_bytes());
                rec
            }
            ExecClass::Store => {
                let mnemonic = pick(&mut st.rng, STORE_POOL).to_string();
                let compressed = mnemonic.starts_with("c.");
                let rec = TraceRecord {
                    pc: st.pc,
                    mnemonic,
                    flags: InsnFlags { compressed, load: false, store: true, branch: false },
                    target: None,
                    taken: None,
                    rd: None,
                    rs1: Some(st.dep_reg(i)),
                    rs2: Some(st.dep_reg(i)),
                    mem_addr: Some(st.data_addr()),
                };
                st.pc = st.wrap_code(st.pc + rec.len_bytes());
                rec
            }
            ExecClass::Alu | ExecClass::Fp | ExecClass::Mul | ExecClass::Div => {
                let pool = match class {
                    ExecClass::Alu => INT_ALU_POOL,
                    ExecClass::Fp => FP_POOL,
                    ExecClass::Mul => MUL_POOL,
                    _ => DIV_POOL,
                };
                let mnemonic = pick(&mut st.rng, pool).to_string();
                let compressed = mnemonic.starts_with("c.");
                let rs2 = if st.rng.gen_bool(0.6) { Some(st.dep_reg(i)) } else { None };
                let rec = TraceRecord {
                    pc: st.pc,
                    mnemonic,
                    flags: InsnFlags { compressed, load: false, store: false, branch: false },
                    target: None,
                    taken: None,
                    rd: Some(st.fresh_rd()),
                    rs1: Some(st.dep_reg(i)),
                    rs2,
                    mem_addr: None,
                };
                st.pc = st.wrap_code(st.pc + rec.len_bytes());
                rec
            }
        };
        if let Some(rd) = rec.rd {
            st.rd_ring[i % 64] = rd;
        }
        debug_assert!(rec.validate().is_ok());
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn pool_has_150_distinct_mnemonics() {
        let all = mnemonic_pool();
        assert_eq!(all.len(), 150);
        let set: HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 150, "pool contains duplicates");
    }

    #[test]
    fn generated_trace_round_trips_through_text() {
        let profile = WorkloadProfile::default();
        let records = generate_synthetic_trace(&profile, 500).unwrap();
        let text = write_trace(&records);
        let back = parse_trace(&text).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "10000 add -\n10004 add -\nzzzz add -\n";
        match parse_trace(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_target_on_non_branch() {
        let text = "10000 add - tgt=2000\n";
        assert!(matches!(parse_trace(text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn parse_skips_comments_and_blanks() {
        let text = "# header\n\n10000 add - rd=3 rs1=4 # trailing\n";
        let recs = parse_trace(text).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].rd, Some(3));
    }

    #[test]
    fn chunking_is_ceil_division_with_sequential_ids() {
        let profile = WorkloadProfile::default();
        let records = generate_synthetic_trace(&profile, 25).unwrap();
        let chunks = chunk_trace(records, 10).unwrap();
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks.iter().map(|c| c.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(chunks[0].records.len(), 10);
        assert_eq!(chunks[2].records.len(), 5);
        assert!(matches!(chunk_trace(Vec::new(), 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dictionary_uses_first_appearance_order() {
        let text = "10000 sub -\n10004 add -\n10008 sub -\n1000c xor -\n";
        let recs = parse_trace(text).unwrap();
        let dict = TokenDict::build(&recs);
        assert_eq!(dict.names(), &["sub".to_string(), "add".to_string(), "xor".to_string()]);
        assert_eq!(dict.size(), 3);
        assert_eq!(dict.pad_id(), 3);
        assert_eq!(dict.token_of("add").unwrap(), 1);
        assert!(matches!(dict.token_of("mul"), Err(Error::Tokenization(_))));
    }

    #[test]
    fn lenient_dictionary_reserves_unknown_slot() {
        let recs = parse_trace("10000 add -\n").unwrap();
        let dict = TokenDict::build_with_unknown(&recs);
        assert_eq!(dict.size(), 2);
        assert_eq!(dict.pad_id(), 2);
        assert_eq!(dict.unk_id(), Some(1));
        assert_eq!(dict.token_of("mystery").unwrap(), 1);
        assert_eq!(dict.token_of("add").unwrap(), 0);
    }

    #[test]
    fn tokenize_pads_to_sequence_length() {
        let profile = WorkloadProfile::default();
        let records = generate_synthetic_trace(&profile, 10).unwrap();
        let dict = TokenDict::build(&records);
        let chunks = chunk_trace(records, 10).unwrap();
        let toks = tokenize_chunk(&chunks[0], &dict, 16).unwrap();
        assert_eq!(toks.len(), 16);
        assert!(toks[10..].iter().all(|&t| t == dict.pad_id()));
        assert!(toks[..10].iter().all(|&t| t < dict.pad_id()));
        assert!(tokenize_chunk(&chunks[0], &dict, 5).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let profile = WorkloadProfile { seed: 42, ..Default::default() };
        let a = generate_synthetic_trace(&profile, 2000).unwrap();
        let b = generate_synthetic_trace(&profile, 2000).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_trace(&WorkloadProfile { seed: 43, ..profile }, 2000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generator_class_frequencies_converge() {
        let profile = WorkloadProfile {
            alu_frac: 0.40,
            mul_frac: 0.05,
            div_frac: 0.02,
            load_frac: 0.20,
            store_frac: 0.13,
            branch_frac: 0.20,
            ..Default::default()
        };
        let n = 100_000;
        let records = generate_synthetic_trace(&profile, n).unwrap();
        let branches = records.iter().filter(|r| r.flags.branch).count();
        assert!((19_000..=21_000).contains(&branches), "branches = {branches}");
        let loads = records.iter().filter(|r| r.flags.load).count();
        assert!((19_000..=21_000).contains(&loads), "loads = {loads}");
    }

    #[test]
    fn generated_records_satisfy_field_invariants() {
        let records = generate_synthetic_trace(&WorkloadProfile::default(), 5_000).unwrap();
        for r in &records {
            r.validate().unwrap();
            assert_eq!(r.flags.branch, r.target.is_some());
            assert_eq!(r.flags.load || r.flags.store, r.mem_addr.is_some());
            assert_eq!(r.flags.compressed, r.mnemonic.starts_with("c."), "{}", r.mnemonic);
        }
        // Unconditional transfers are always taken.
        for r in records.iter().filter(|r| r.mnemonic == "jal" || r.mnemonic == "ret") {
            assert_eq!(r.taken, Some(true));
        }
    }

    #[test]
    fn taken_prob_shifts_taken_rate() {
        let base = WorkloadProfile { branch_frac: 0.3, alu_frac: 0.25, ..Default::default() };
        let rate = |tp: f64| {
            let p = WorkloadProfile { taken_prob: tp, ..base.clone() };
            let recs = generate_synthetic_trace(&p, 30_000).unwrap();
            let br: Vec<_> = recs.iter().filter(|r| r.flags.branch).collect();
            br.iter().filter(|r| r.taken == Some(true)).count() as f64 / br.len() as f64
        };
        assert!(rate(0.8) > rate(0.2) + 0.2);
    }

    #[test]
    fn profile_round_trips_and_validates() {
        let p = WorkloadProfile { load_frac: 0.30, alu_frac: 0.40, ..Default::default() };
        let q = parse_profile(&dump_profile(&p)).unwrap();
        assert_eq!(p, q);
        assert!(parse_profile("alu = 0.9\n").is_err()); // fractions no longer sum to 1
        assert!(matches!(parse_profile("bogus = 1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn builtin_profiles_are_valid_and_distinct() {
        let profiles = builtin_profiles();
        assert!(profiles.len() >= 4);
        for (name, p) in &profiles {
            p.validate().unwrap_or_else(|e| panic!("profile '{name}' invalid: {e}"));
            assert_eq!(&profile_named(name).unwrap(), p);
        }
        for i in 0..profiles.len() {
            for j in i + 1..profiles.len() {
                assert_ne!(profiles[i].1, profiles[j].1, "{} == {}", profiles[i].0, profiles[j].0);
            }
        }
        assert!(profile_named("nope").is_err());
    }

    #[test]
    fn exec_class_covers_pools() {
        let mk = |m: &str| TraceRecord {
            pc: 0,
            mnemonic: m.to_string(),
            flags: InsnFlags::default(),
            target: None,
            taken: None,
            rd: None,
            rs1: None,
            rs2: None,
            mem_addr: None,
        };
        assert_eq!(exec_class(&mk("mul")), ExecClass::Mul);
        assert_eq!(exec_class(&mk("fdiv.d")), ExecClass::Div);
        assert_eq!(exec_class(&mk("fadd.d")), ExecClass::Fp);
        assert_eq!(exec_class(&mk("add")), ExecClass::Alu);
        assert_eq!(exec_class(&mk("somethingelse")), ExecClass::Alu);
        assert!(writes_float_reg(&mk("fadd.d")));
        assert!(!writes_float_reg(&mk("feq.d")));
    }
}
