//! Trace-driven out-of-order core model: the ground-truth oracle.
//!
//! One [`simulate`] call replays a chunk against a configuration and returns
//! event counters. The pipeline is staged (fetch, decode, rename, dispatch,
//! issue, retire) with per-stage width caps, bounded queues between stages, a
//! reorder buffer, rename-register pools, PRF port budgets, a full cache/TLB
//! hierarchy, and the branch prediction stack. Structural queue parameters
//! are modelled as occupancy trackers that delay requests when full, so every
//! catalog queue size has a (weakly monotone) latency effect.
//!
//! Determinism: given (chunk, configuration, seed) the result is exactly
//! reproducible; the only randomness is the RANDOM replacement policy, fed
//! from a ChaCha stream seeded by `seed`.
//!
//! Cache-state mutation order is program order: instruction-side probes
//! happen at fetch, data-side probes at rename. Issue-time effects (queue
//! occupancy, bank conflicts, port contention) only add latency and never
//! change hit/miss outcomes, which keeps per-level hit/miss counts a pure
//! function of (chunk, that level's geometry).

pub mod branch;
pub mod cache;

use std::collections::{BinaryHeap, BTreeMap, VecDeque};
use std::cmp::Reverse;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::design_space::{Configuration, DesignSpace, ParamValue};
use crate::error::{Error, Result};
use crate::trace::{exec_class, writes_float_reg, Chunk, ExecClass, TraceRecord};
use branch::{BranchPredictor, PredictorConfig};
use cache::{Cache, Replacement};

/// Event counters produced by one simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub instructions: u64,
    pub cycles: u64,
    pub icache_hits: u64,
    pub icache_misses: u64,
    pub dcache_hits: u64,
    pub dcache_misses: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub l3_hits: u64,
    pub l3_misses: u64,
    pub itlb_hits: u64,
    pub itlb_misses: u64,
    pub dtlb_hits: u64,
    pub dtlb_misses: u64,
    pub br_correct: u64,
    pub br_mispredict: u64,
    pub stall_cycles_frontend: u64,
    pub stall_cycles_rob_full: u64,
    pub stall_cycles_lsu_full: u64,
}

/// Counter names in canonical (CSV column) order.
pub const COUNTER_NAMES: [&str; 19] = [
    "instructions",
    "cycles",
    "icache_hits",
    "icache_misses",
    "dcache_hits",
    "dcache_misses",
    "l2_hits",
    "l2_misses",
    "l3_hits",
    "l3_misses",
    "itlb_hits",
    "itlb_misses",
    "dtlb_hits",
    "dtlb_misses",
    "br_correct",
    "br_mispredict",
    "stall_cycles_frontend",
    "stall_cycles_rob_full",
    "stall_cycles_lsu_full",
];

impl SimStats {
    /// (name, value) pairs in [`COUNTER_NAMES`] order.
    pub fn counters(&self) -> [(&'static str, u64); 19] {
        [
            ("instructions", self.instructions),
            ("cycles", self.cycles),
            ("icache_hits", self.icache_hits),
            ("icache_misses", self.icache_misses),
            ("dcache_hits", self.dcache_hits),
            ("dcache_misses", self.dcache_misses),
            ("l2_hits", self.l2_hits),
            ("l2_misses", self.l2_misses),
            ("l3_hits", self.l3_hits),
            ("l3_misses", self.l3_misses),
            ("itlb_hits", self.itlb_hits),
            ("itlb_misses", self.itlb_misses),
            ("dtlb_hits", self.dtlb_hits),
            ("dtlb_misses", self.dtlb_misses),
            ("br_correct", self.br_correct),
            ("br_mispredict", self.br_mispredict),
            ("stall_cycles_frontend", self.stall_cycles_frontend),
            ("stall_cycles_rob_full", self.stall_cycles_rob_full),
            ("stall_cycles_lsu_full", self.stall_cycles_lsu_full),
        ]
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.counters().iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Fixed operation and hierarchy latencies, in cycles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyTable {
    pub alu: u64,
    pub mul: u64,
    pub div: u64,
    pub fp: u64,
    pub store: u64,
    /// Load hit in the dcache (address generation + array access).
    pub dcache_hit: u64,
    pub l2_hit: u64,
    pub l3_hit: u64,
    pub memory: u64,
    pub tlb_walk: u64,
    /// Extra front-end cycles after a mispredicted branch resolves.
    pub mispredict_flush: u64,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            alu: 1,
            mul: 3,
            div: 12,
            fp: 4,
            store: 1,
            dcache_hit: 2,
            l2_hit: 12,
            l3_hit: 40,
            memory: 200,
            tlb_walk: 30,
            mispredict_flush: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Run the chunk twice and report the second pass, so caches and
    /// predictors are warm and counters reflect steady-state behaviour.
    pub warmup: bool,
    pub latencies: LatencyTable,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { warmup: true, latencies: LatencyTable::default() }
    }
}

/// Out-of-order scheduler window: how deep into the ROB issue looks per
/// cycle.
const SCHED_WINDOW: usize = 64;

/// Cap on modelled cache lines (sets x ways) per level. Desk-scale chunks
/// touch far fewer lines, so larger arrays behave identically while keeping
/// per-simulation allocation bounded.
const MAX_CACHE_LINES: usize = 65_536;

// ---------------------------------------------------------------------------
// Decoded parameters
// ---------------------------------------------------------------------------

struct ParamReader<'a> {
    space: &'a DesignSpace,
    cfg: &'a Configuration,
}

impl<'a> ParamReader<'a> {
    fn value(&self, name: &str) -> Result<&'a ParamValue> {
        let idx = self.space.param_index(name).ok_or_else(|| {
            Error::validation(format!("design space is missing required parameter '{name}'"))
        })?;
        let rank = usize::from(self.cfg.ranks[idx]);
        Ok(&self.space.params()[idx].values[rank])
    }

    fn num(&self, name: &str) -> Result<u64> {
        self.value(name)?
            .as_num()
            .ok_or_else(|| Error::validation(format!("parameter '{name}' must be numeric")))
    }

    fn usize(&self, name: &str) -> Result<usize> {
        Ok(self.num(name)? as usize)
    }

    fn policy(&self, name: &str) -> Result<Replacement> {
        Replacement::from_value(self.value(name)?)
    }
}

struct SimParams {
    // Instruction side.
    itlb_page: u64,
    itlb_entries: usize,
    itlb_ways: usize,
    icache_size: u64,
    icache_line: u64,
    icache_ways: u32,
    fetchq_cap: usize,
    // Data side.
    dtlb_page: u64,
    dtlb_entries: usize,
    dtlb_ways: usize,
    dcache_size: u64,
    dcache_line: u64,
    dcache_ways: u32,
    dcache_policy: Replacement,
    l2_size: u64,
    l2_line: u64,
    l2_ways: u32,
    l2_policy: Replacement,
    l2_banks: usize,
    l2_rows_per_bank: u64,
    l3_size: u64,
    l3_line: u64,
    l3_ways: u32,
    l3_policy: Replacement,
    // LSU and interconnect queues.
    q_data_bank: usize,
    q_load_buf: usize,
    q_store_buf: usize,
    q_tlb_miss: usize,
    q_mem_req: usize,
    q_data_miss: usize,
    q_evict: usize,
    q_l2_lsu_rd_req: usize,
    q_l2_lsu_wr_req: usize,
    q_l2_lsu_rd_resp: usize,
    q_l2_l1_pipe: usize,
    q_l2_icache_req: usize,
    q_l2_icache_resp: usize,
    q_biu: usize,
    // Core widths and buffering.
    fetch_w: usize,
    decode_w: usize,
    decode_siq: usize,
    rename_w: usize,
    int_renames: usize,
    float_renames: usize,
    dispatch_w: usize,
    dispq_cap: usize,
    issue_w: usize,
    prf_read_ports: usize,
    prf_write_ports: usize,
    retire_w: usize,
    rob_cap: usize,
    // Prediction.
    predictor: PredictorConfig,
}

impl SimParams {
    fn decode(space: &DesignSpace, cfg: &Configuration) -> Result<SimParams> {
        space.validate_config(cfg)?;
        let r = ParamReader { space, cfg };
        Ok(SimParams {
            itlb_page: r.num("immu/il2mmu tlb page size (kb)")? * 1024,
            itlb_entries: r.usize("immu/il2mmu tlb num entries")?,
            itlb_ways: r.usize("immu/il2mmu tlb associativity")?,
            icache_size: r.num("icache size (kb)")? * 1024,
            icache_line: r.num("icache line size")?,
            icache_ways: r.num("icache associativity")? as u32,
            fetchq_cap: (r.usize("fetch-icache queue size (bytes)")? / 4).max(1),
            dtlb_page: r.num("dmmu/dl2mmu tlb page size (kb)")? * 1024,
            dtlb_entries: r.usize("dmmu/dl2mmu tlb num entries")?,
            dtlb_ways: r.usize("dmmu/dl2mmu tlb associativity")?,
            dcache_size: r.num("dcache size (kb)")? * 1024,
            dcache_line: r.num("dcache line size")?,
            dcache_ways: r.num("dcache associativity")? as u32,
            dcache_policy: r.policy("dcache replacement policy")?,
            l2_size: r.num("l2 cache size (kb)")? * 1024,
            l2_line: r.num("l2 cache line size")?,
            l2_ways: r.num("l2 cache associativity")? as u32,
            l2_policy: r.policy("l2 cache replacement policy")?,
            l2_banks: r.usize("l2 no. of banks")?,
            l2_rows_per_bank: r.num("l2 no. of rows per bank")?,
            l3_size: r.num("l3 cache size (kb)")? * 1024,
            l3_line: r.num("l3 cache line size")?,
            l3_ways: r.num("l3 cache associativity")? as u32,
            l3_policy: r.policy("l3 cache replacement policy")?,
            q_data_bank: r.usize("lsu data bank queue size")?,
            q_load_buf: r.usize("lsu load buffer queue size")?,
            q_store_buf: r.usize("lsu store buffer queue size")?,
            q_tlb_miss: r.usize("lsu tlb miss queue size")?,
            q_mem_req: r.usize("lsu memory request queue size")?,
            q_data_miss: r.usize("lsu data miss queue size")?,
            q_evict: r.usize("lsu data eviction queue size")?,
            q_l2_lsu_rd_req: r.usize("l2-lsu read request queue size")?,
            q_l2_lsu_wr_req: r.usize("l2-lsu write request queue size")?,
            q_l2_lsu_rd_resp: r.usize("l2-lsu read response queue size")?,
            q_l2_l1_pipe: r.usize("l2-l1 pipe read request queue size")?,
            q_l2_icache_req: r.usize("l2-icache request queue size")?,
            q_l2_icache_resp: r.usize("l2-icache response queue size")?,
            q_biu: r.usize("bus interface unit request queue size")?,
            fetch_w: r.usize("no. to fetch")?,
            decode_w: r.usize("no. to decode")?,
            decode_siq: r.usize("decode: scalar instruction queue size")?,
            rename_w: r.usize("no. to rename")?,
            int_renames: r.usize("no. of integer renames")?,
            float_renames: r.usize("no. of float renames")?,
            dispatch_w: r.usize("dispatch width")?.min(r.usize("no. to dispatch")?),
            dispq_cap: r.usize("dispatch queue depth")?,
            issue_w: r.usize("issue width")?,
            prf_read_ports: r.usize("physical register file read ports")?,
            prf_write_ports: r.usize("physical register file write ports")?,
            retire_w: r.usize("reorder buffer no. to retire")?,
            rob_cap: r.usize("reorder buffer retire queue depth")?,
            predictor: PredictorConfig {
                tage_history_size: r.num("tage history buffer size")?,
                tage_shift: r.num("tage instruction shift amount")? as u32,
                tage_tag_bits: r.num("tage table tag widths x16")? as u32,
                tage_path_bits: r.num("tage path history bits")? as u32,
                tage_reset_period: r.num("tage initial reset timer value")?,
                lpred_entries: r.usize("loop predictor (lpred) no. of entries")?,
                lpred_ways: r.usize("lpred associativity")?,
                lpred_max_age: r.num("lpred max age")? as u32,
                lpred_max_iterations: r.num("lpred no. of loop iterations max")? as u32,
                btb_entries: r.usize("btb total entries")?,
                btb_ways: r.usize("btb associativity")?,
                btb_granularity: r.num("branch target buffer (btb) granularity")?,
                ras_size: r.usize("btb raas size")?,
                ittage_tag_bits: r.num("ittage table tag widths x16")? as u32,
                ittage_path_bits: r.num("ittage path history bits")? as u32,
                ittage_reset_period: r.num("ittage initial reset timer value")?,
            },
        })
    }
}

fn build_cache(size: u64, line: u64, ways: u32, policy: Replacement) -> Result<Cache> {
    let geo = cache::CacheGeometry {
        size_bytes: size,
        line_bytes: line,
        associativity: ways,
        replacement: policy,
        hit_latency: 0,
        miss_penalty: 0,
    };
    geo.validate()?;
    let mut sets = (size / (line * u64::from(ways))) as usize;
    let cap = (MAX_CACHE_LINES / ways as usize).max(1);
    sets = sets.min(cap).max(1);
    Ok(Cache::from_parts(sets, ways as usize, line, policy))
}

// ---------------------------------------------------------------------------
// Occupancy tracking for sized queues
// ---------------------------------------------------------------------------

/// Tracks in-flight holders of a bounded queue by their release times.
struct Occupancy {
    cap: usize,
    releases: BinaryHeap<Reverse<u64>>,
}

impl Occupancy {
    fn new(cap: usize) -> Occupancy {
        Occupancy { cap: cap.max(1), releases: BinaryHeap::new() }
    }

    fn drain(&mut self, now: u64) {
        while let Some(&Reverse(t)) = self.releases.peek() {
            if t <= now {
                self.releases.pop();
            } else {
                break;
            }
        }
    }

    fn has_space(&mut self, now: u64) -> bool {
        self.drain(now);
        self.releases.len() < self.cap
    }

    fn occupy(&mut self, release_at: u64) {
        self.releases.push(Reverse(release_at));
    }

    /// Wait for the earliest slot if full; occupy it for `hold` cycles and
    /// return the queueing delay incurred.
    fn acquire_delayed(&mut self, now: u64, hold: u64) -> u64 {
        self.drain(now);
        let start = if self.releases.len() < self.cap {
            now
        } else {
            let Reverse(t) = self.releases.pop().expect("cap >= 1");
            t.max(now)
        };
        self.releases.push(Reverse(start + hold.max(1)));
        start - now
    }

    fn clear(&mut self) {
        self.releases.clear();
    }
}

// ---------------------------------------------------------------------------
// Machine
// ---------------------------------------------------------------------------

/// Data-side hierarchy outcome for one load/store, fixed at rename time.
#[derive(Debug, Clone, Copy, Default)]
struct MemPath {
    addr: u64,
    tlb_miss: bool,
    dcache_miss: bool,
    l2_miss: bool,
    l3_miss: bool,
    writeback: bool,
    base_lat: u64,
}

#[derive(Debug, Clone, Copy)]
struct Decoded {
    class: ExecClass,
    float_dest: bool,
    has_rd: bool,
    reads: u8,
}

const NOT_DONE: u64 = u64::MAX;

struct Machine<'a> {
    p: SimParams,
    opts: SimOptions,
    records: &'a [TraceRecord],
    decoded: Vec<Decoded>,
    rng: ChaCha8Rng,

    itlb: Cache,
    icache: Cache,
    dtlb: Cache,
    dcache: Cache,
    l2: Cache,
    l3: Cache,
    predictor: BranchPredictor,

    l2_bank_busy: Vec<u64>,
    l3_busy: u64,

    q_data_bank: Occupancy,
    q_load_buf: Occupancy,
    q_store_buf: Occupancy,
    q_tlb_miss: Occupancy,
    q_mem_req: Occupancy,
    q_data_miss: Occupancy,
    q_evict: Occupancy,
    q_l2_lsu_rd_req: Occupancy,
    q_l2_lsu_wr_req: Occupancy,
    q_l2_lsu_rd_resp: Occupancy,
    q_l2_l1_pipe: Occupancy,
    q_l2_icache_req: Occupancy,
    q_l2_icache_resp: Occupancy,
    q_biu: Occupancy,

    // Per-instruction flow state.
    exec_done_at: Vec<u64>,
    issued: Vec<bool>,
    producers: Vec<[u32; 2]>,
    mem: Vec<MemPath>,

    fetchq: VecDeque<u32>,
    decq: VecDeque<u32>,
    dispq: VecDeque<u32>,
    rob: VecDeque<u32>,
    int_free: usize,
    float_free: usize,
    /// Most recent in-flight writer of each architectural register.
    last_writer: [u32; 32],
    /// Completion slots already claimed per cycle (PRF write ports).
    writebacks: BTreeMap<u64, u32>,

    cursor: usize,
    retired: usize,
    fetch_pending: Option<(usize, u64)>,
    blocking_branch: Option<u32>,
    lsu_blocked: bool,

    stats: SimStats,
}

const NO_WRITER: u32 = u32::MAX;

impl<'a> Machine<'a> {
    fn new(
        p: SimParams,
        opts: SimOptions,
        records: &'a [TraceRecord],
        seed: u64,
    ) -> Result<Machine<'a>> {
        let decoded = records
            .iter()
            .map(|r| Decoded {
                class: exec_class(r),
                float_dest: writes_float_reg(r),
                has_rd: r.rd.is_some(),
                reads: u8::from(r.rs1.is_some()) + u8::from(r.rs2.is_some()),
            })
            .collect();
        let n = records.len();
        let itlb = Cache::tlb(p.itlb_entries, p.itlb_ways, p.itlb_page);
        let icache = build_cache(p.icache_size, p.icache_line, p.icache_ways, Replacement::Lru)?;
        let dtlb = Cache::tlb(p.dtlb_entries, p.dtlb_ways, p.dtlb_page);
        let dcache = build_cache(p.dcache_size, p.dcache_line, p.dcache_ways, p.dcache_policy)?;
        let l2 = build_cache(p.l2_size, p.l2_line, p.l2_ways, p.l2_policy)?;
        let l3 = build_cache(p.l3_size, p.l3_line, p.l3_ways, p.l3_policy)?;
        let predictor = BranchPredictor::new(&p.predictor);
        Ok(Machine {
            opts,
            records,
            decoded,
            rng: ChaCha8Rng::seed_from_u64(seed),
            itlb,
            icache,
            dtlb,
            dcache,
            l2,
            l3,
            predictor,
            l2_bank_busy: vec![0; p.l2_banks],
            l3_busy: 0,
            q_data_bank: Occupancy::new(p.q_data_bank),
            q_load_buf: Occupancy::new(p.q_load_buf),
            q_store_buf: Occupancy::new(p.q_store_buf),
            q_tlb_miss: Occupancy::new(p.q_tlb_miss),
            q_mem_req: Occupancy::new(p.q_mem_req),
            q_data_miss: Occupancy::new(p.q_data_miss),
            q_evict: Occupancy::new(p.q_evict),
            q_l2_lsu_rd_req: Occupancy::new(p.q_l2_lsu_rd_req),
            q_l2_lsu_wr_req: Occupancy::new(p.q_l2_lsu_wr_req),
            q_l2_lsu_rd_resp: Occupancy::new(p.q_l2_lsu_rd_resp),
            q_l2_l1_pipe: Occupancy::new(p.q_l2_l1_pipe),
            q_l2_icache_req: Occupancy::new(p.q_l2_icache_req),
            q_l2_icache_resp: Occupancy::new(p.q_l2_icache_resp),
            q_biu: Occupancy::new(p.q_biu),
            exec_done_at: vec![NOT_DONE; n],
            issued: vec![false; n],
            producers: vec![[NO_WRITER, NO_WRITER]; n],
            mem: vec![MemPath::default(); n],
            fetchq: VecDeque::new(),
            decq: VecDeque::new(),
            dispq: VecDeque::new(),
            rob: VecDeque::new(),
            int_free: p.int_renames,
            float_free: p.float_renames,
            last_writer: [NO_WRITER; 32],
            writebacks: BTreeMap::new(),
            cursor: 0,
            retired: 0,
            fetch_pending: None,
            blocking_branch: None,
            lsu_blocked: false,
            stats: SimStats::default(),
            p,
        })
    }

    /// Reset flow state and counters, keeping cache and predictor contents.
    fn reset_for_next_pass(&mut self) {
        let n = self.records.len();
        self.l2_bank_busy.fill(0);
        self.l3_busy = 0;
        for q in [
            &mut self.q_data_bank,
            &mut self.q_load_buf,
            &mut self.q_store_buf,
            &mut self.q_tlb_miss,
            &mut self.q_mem_req,
            &mut self.q_data_miss,
            &mut self.q_evict,
            &mut self.q_l2_lsu_rd_req,
            &mut self.q_l2_lsu_wr_req,
            &mut self.q_l2_lsu_rd_resp,
            &mut self.q_l2_l1_pipe,
            &mut self.q_l2_icache_req,
            &mut self.q_l2_icache_resp,
            &mut self.q_biu,
        ] {
            q.clear();
        }
        self.exec_done_at = vec![NOT_DONE; n];
        self.issued = vec![false; n];
        self.producers = vec![[NO_WRITER, NO_WRITER]; n];
        self.mem = vec![MemPath::default(); n];
        self.fetchq.clear();
        self.decq.clear();
        self.dispq.clear();
        self.rob.clear();
        self.int_free = self.p.int_renames;
        self.float_free = self.p.float_renames;
        self.last_writer = [NO_WRITER; 32];
        self.writebacks.clear();
        self.cursor = 0;
        self.retired = 0;
        self.fetch_pending = None;
        self.blocking_branch = None;
        self.lsu_blocked = false;
        self.stats = SimStats::default();
    }

    fn l2_bank_delay(&mut self, addr: u64, t: u64) -> u64 {
        let service = (4 / self.p.l2_rows_per_bank).max(1);
        let bank = ((addr / self.p.l2_line) % self.l2_bank_busy.len() as u64) as usize;
        let start = t.max(self.l2_bank_busy[bank]);
        self.l2_bank_busy[bank] = start + service;
        start - t
    }

    fn l3_delay(&mut self, t: u64) -> u64 {
        let start = t.max(self.l3_busy);
        self.l3_busy = start + 2;
        start - t
    }

    /// Instruction-side probe for `pc` at fetch time. Returns extra cycles
    /// before the instruction can enter the fetch queue (0 on a warm hit).
    fn probe_fetch(&mut self, pc: u64, now: u64) -> u64 {
        let lat = self.opts.latencies;
        let mut extra = 0;
        if self.itlb.access(pc, false, &mut self.rng).hit {
            self.stats.itlb_hits += 1;
        } else {
            self.stats.itlb_misses += 1;
            extra += lat.tlb_walk;
        }
        if self.icache.access(pc, false, &mut self.rng).hit {
            self.stats.icache_hits += 1;
        } else {
            self.stats.icache_misses += 1;
            let mut t = now + extra;
            t += self.q_l2_icache_req.acquire_delayed(t, 2);
            t += self.l2_bank_delay(pc, t);
            if self.l2.access(pc, false, &mut self.rng).hit {
                self.stats.l2_hits += 1;
                t += lat.l2_hit;
            } else {
                self.stats.l2_misses += 1;
                t += self.l3_delay(t);
                if self.l3.access(pc, false, &mut self.rng).hit {
                    self.stats.l3_hits += 1;
                    t += lat.l2_hit + lat.l3_hit;
                } else {
                    self.stats.l3_misses += 1;
                    t += self.q_biu.acquire_delayed(t, 8);
                    t += lat.l2_hit + lat.l3_hit + lat.memory;
                }
            }
            t += self.q_l2_icache_resp.acquire_delayed(t, 2);
            extra = t - now;
        }
        extra
    }

    /// Data-side probe in program order (called at rename). Fixes hit/miss
    /// outcomes and the hierarchy base latency; queue delays are applied
    /// later at issue time.
    fn probe_data(&mut self, idx: usize) {
        let r = &self.records[idx];
        let Some(addr) = r.mem_addr else { return };
        let is_write = r.flags.store;
        let lat = self.opts.latencies;
        let mut mp = MemPath { addr, ..MemPath::default() };
        if self.dtlb.access(addr, false, &mut self.rng).hit {
            self.stats.dtlb_hits += 1;
        } else {
            self.stats.dtlb_misses += 1;
            mp.tlb_miss = true;
            mp.base_lat += lat.tlb_walk;
        }
        let out = self.dcache.access(addr, is_write, &mut self.rng);
        if out.hit {
            self.stats.dcache_hits += 1;
            mp.base_lat += lat.dcache_hit;
        } else {
            self.stats.dcache_misses += 1;
            mp.dcache_miss = true;
            mp.writeback = out.victim_dirty;
            mp.base_lat += lat.l2_hit;
            if self.l2.access(addr, false, &mut self.rng).hit {
                self.stats.l2_hits += 1;
            } else {
                self.stats.l2_misses += 1;
                mp.l2_miss = true;
                mp.base_lat += lat.l3_hit;
                if self.l3.access(addr, false, &mut self.rng).hit {
                    self.stats.l3_hits += 1;
                } else {
                    self.stats.l3_misses += 1;
                    mp.l3_miss = true;
                    mp.base_lat += lat.memory;
                }
            }
        }
        self.mem[idx] = mp;
    }

    /// Issue-time structural delays for a load/store whose hierarchy
    /// outcome is `mp`.
    fn data_queue_delay(&mut self, mp: MemPath, now: u64) -> u64 {
        let lat = self.opts.latencies;
        let mut t = now;
        t += self.q_data_bank.acquire_delayed(t, 1);
        if mp.tlb_miss {
            t += self.q_tlb_miss.acquire_delayed(t, lat.tlb_walk.min(8));
        }
        if mp.dcache_miss {
            t += self.q_data_miss.acquire_delayed(t, 4);
            t += self.q_mem_req.acquire_delayed(t, 4);
            t += self.q_l2_l1_pipe.acquire_delayed(t, 2);
            t += self.q_l2_lsu_rd_req.acquire_delayed(t, 2);
            t += self.l2_bank_delay(mp.addr, t);
            if mp.l2_miss {
                t += self.l3_delay(t);
            }
            if mp.l3_miss {
                t += self.q_biu.acquire_delayed(t, 8);
            }
            t += self.q_l2_lsu_rd_resp.acquire_delayed(t, 2);
        }
        if mp.writeback {
            // Writebacks occupy the eviction path but are off the load's
            // critical path.
            let wb = t + 1;
            let _ = self.q_evict.acquire_delayed(wb, 4);
            let _ = self.q_l2_lsu_wr_req.acquire_delayed(wb, 2);
        }
        t - now
    }

    fn class_latency(&self, class: ExecClass) -> u64 {
        let lat = self.opts.latencies;
        match class {
            ExecClass::Alu => lat.alu,
            ExecClass::Mul => lat.mul,
            ExecClass::Div => lat.div,
            ExecClass::Fp => lat.fp,
            ExecClass::Store => lat.store,
            ExecClass::Branch => lat.alu,
            ExecClass::Load => lat.dcache_hit, // replaced by the memory path
        }
    }

    /// Claim a PRF write port at or after `want`; returns the granted cycle.
    fn claim_write_port(&mut self, want: u64) -> u64 {
        let mut c = want;
        loop {
            let used = self.writebacks.entry(c).or_insert(0);
            if (*used as usize) < self.p.prf_write_ports {
                *used += 1;
                return c;
            }
            c += 1;
        }
    }

    fn producer_ready(&self, producer: u32, now: u64) -> bool {
        producer == NO_WRITER || self.exec_done_at[producer as usize] <= now
    }

    // ---- stages -----------------------------------------------------------

    fn stage_retire(&mut self, now: u64) {
        let mut budget = self.p.retire_w;
        while budget > 0 {
            let Some(&head) = self.rob.front() else { break };
            let hi = head as usize;
            if !self.issued[hi] || self.exec_done_at[hi] > now {
                break;
            }
            self.rob.pop_front();
            let d = self.decoded[hi];
            if d.has_rd {
                if d.float_dest {
                    self.float_free += 1;
                } else {
                    self.int_free += 1;
                }
            }
            self.retired += 1;
            self.stats.instructions += 1;
            budget -= 1;
        }
    }

    fn stage_issue(&mut self, now: u64) {
        let mut budget = self.p.issue_w;
        let mut read_budget = self.p.prf_read_ports;
        let mut examined = 0;
        let rob_snapshot: Vec<u32> = self.rob.iter().copied().collect();
        for &idx in &rob_snapshot {
            if budget == 0 || examined >= SCHED_WINDOW {
                break;
            }
            examined += 1;
            let i = idx as usize;
            if self.issued[i] {
                continue;
            }
            let d = self.decoded[i];
            let [p1, p2] = self.producers[i];
            if !self.producer_ready(p1, now) || !self.producer_ready(p2, now) {
                continue;
            }
            if usize::from(d.reads) > read_budget {
                continue;
            }
            // LSU structural checks.
            match d.class {
                ExecClass::Load => {
                    if !self.q_load_buf.has_space(now) {
                        self.lsu_blocked = true;
                        continue;
                    }
                }
                ExecClass::Store => {
                    if !self.q_store_buf.has_space(now) {
                        self.lsu_blocked = true;
                        continue;
                    }
                }
                _ => {}
            }
            // Compute completion time.
            let mp = self.mem[i];
            let done = match d.class {
                ExecClass::Load => {
                    let delay = self.data_queue_delay(mp, now);
                    let done = now + mp.base_lat + delay;
                    self.q_load_buf.occupy(done);
                    done
                }
                ExecClass::Store => {
                    let delay = self.data_queue_delay(mp, now);
                    // The store itself completes quickly; the buffer entry
                    // persists until the write drains.
                    self.q_store_buf.occupy(now + mp.base_lat + delay);
                    now + self.class_latency(ExecClass::Store)
                }
                c => now + self.class_latency(c),
            };
            let done = if d.has_rd { self.claim_write_port(done.max(now + 1)) } else { done.max(now + 1) };
            self.exec_done_at[i] = done;
            self.issued[i] = true;
            read_budget -= usize::from(d.reads);
            budget -= 1;
        }
    }

    fn stage_dispatch(&mut self, now: u64) {
        let mut moved = 0;
        while moved < self.p.dispatch_w && !self.dispq.is_empty() && self.rob.len() < self.p.rob_cap
        {
            let idx = self.dispq.pop_front().expect("nonempty");
            self.rob.push_back(idx);
            moved += 1;
        }
        if moved == 0 && !self.dispq.is_empty() && self.rob.len() >= self.p.rob_cap {
            self.stats.stall_cycles_rob_full += 1;
        }
        let _ = now;
    }

    fn stage_rename(&mut self) {
        let mut moved = 0;
        while moved < self.p.rename_w && !self.decq.is_empty() && self.dispq.len() < self.p.dispq_cap
        {
            let idx = *self.decq.front().expect("nonempty");
            let i = idx as usize;
            let d = self.decoded[i];
            if d.has_rd {
                let pool = if d.float_dest { &mut self.float_free } else { &mut self.int_free };
                if *pool == 0 {
                    break; // rename registers exhausted; in-order stall
                }
                *pool -= 1;
            }
            self.decq.pop_front();
            // Program-order bookkeeping: source producers and the data-side
            // hierarchy probe happen exactly once, here.
            let r = &self.records[i];
            let mut prods = [NO_WRITER, NO_WRITER];
            if let Some(rs1) = r.rs1 {
                prods[0] = self.last_writer[rs1 as usize];
            }
            if let Some(rs2) = r.rs2 {
                prods[1] = self.last_writer[rs2 as usize];
            }
            self.producers[i] = prods;
            if let Some(rd) = r.rd {
                self.last_writer[rd as usize] = idx;
            }
            if r.mem_addr.is_some() {
                self.probe_data(i);
            }
            self.dispq.push_back(idx);
            moved += 1;
        }
    }

    fn stage_decode(&mut self) {
        let mut moved = 0;
        while moved < self.p.decode_w && !self.fetchq.is_empty() && self.decq.len() < self.p.decode_siq
        {
            let idx = self.fetchq.pop_front().expect("nonempty");
            self.decq.push_back(idx);
            moved += 1;
        }
    }

    fn stage_fetch(&mut self, now: u64) {
        let n = self.records.len();
        let before = self.cursor;
        // A mispredicted branch blocks fetch until it resolves plus the
        // flush penalty.
        if let Some(b) = self.blocking_branch {
            let done = self.exec_done_at[b as usize];
            if done == NOT_DONE || now < done + self.opts.latencies.mispredict_flush {
                if self.cursor < n {
                    self.stats.stall_cycles_frontend += 1;
                }
                return;
            }
            self.blocking_branch = None;
        }
        let mut budget = self.p.fetch_w;
        while budget > 0 && self.cursor < n && self.fetchq.len() < self.p.fetchq_cap {
            let idx = self.cursor;
            // Pending instruction-side miss latency.
            match self.fetch_pending {
                Some((pidx, resume)) => {
                    debug_assert_eq!(pidx, idx);
                    if now < resume {
                        break;
                    }
                    self.fetch_pending = None;
                }
                None => {
                    let extra = self.probe_fetch(self.records[idx].pc, now);
                    if extra > 0 {
                        self.fetch_pending = Some((idx, now + extra));
                        break;
                    }
                }
            }
            self.fetchq.push_back(idx as u32);
            self.cursor += 1;
            budget -= 1;
            let r = &self.records[idx];
            if r.flags.branch {
                let outcome = self.predictor.predict_and_train(r);
                if outcome.correct {
                    self.stats.br_correct += 1;
                    if r.taken == Some(true) {
                        break; // taken branch ends the fetch group
                    }
                } else {
                    self.stats.br_mispredict += 1;
                    self.blocking_branch = Some(idx as u32);
                    break;
                }
            }
        }
        if self.cursor == before && before < n {
            self.stats.stall_cycles_frontend += 1;
        }
    }

    fn run_pass(&mut self) -> Result<()> {
        let n = self.records.len();
        if n == 0 {
            self.stats.cycles = 0;
            return Ok(());
        }
        let max_cycles: u64 = 100_000 + (n as u64) * 4_000;
        let mut now: u64 = 0;
        loop {
            self.lsu_blocked = false;
            self.stage_retire(now);
            self.stage_issue(now);
            self.stage_dispatch(now);
            self.stage_rename();
            self.stage_decode();
            self.stage_fetch(now);
            if self.lsu_blocked {
                self.stats.stall_cycles_lsu_full += 1;
            }
            // Bounded history: drop write-port slots in the past.
            if now % 64 == 0 {
                self.writebacks = self.writebacks.split_off(&now);
            }
            if self.retired == n {
                self.stats.cycles = now + 1;
                return Ok(());
            }
            now += 1;
            if now > max_cycles {
                return Err(Error::validation(format!(
                    "simulation exceeded {max_cycles} cycles without retiring {n} instructions"
                )));
            }
        }
    }
}

/// Simulate `chunk` on the configuration with default options (warm-up on).
pub fn simulate(
    chunk: &Chunk,
    cfg: &Configuration,
    space: &DesignSpace,
    seed: u64,
) -> Result<SimStats> {
    simulate_with_options(chunk, cfg, space, seed, &SimOptions::default())
}

/// Simulate with explicit options.
pub fn simulate_with_options(
    chunk: &Chunk,
    cfg: &Configuration,
    space: &DesignSpace,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimStats> {
    for r in &chunk.records {
        r.validate()?;
    }
    let params = SimParams::decode(space, cfg)?;
    let mut m = Machine::new(params, *opts, &chunk.records, seed)?;
    if opts.warmup {
        m.run_pass()?;
        m.reset_for_next_pass();
    }
    m.run_pass()?;
    Ok(m.stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::default_catalog;
    use crate::trace::{generate_synthetic_trace, InsnFlags, WorkloadProfile};

    fn chunk_of(records: Vec<TraceRecord>) -> Chunk {
        Chunk { id: 0, records }
    }

    fn alu_record(pc: u64, rd: u8, rs1: u8, rs2: u8) -> TraceRecord {
        TraceRecord {
            pc,
            mnemonic: "add".to_string(),
            flags: InsnFlags::default(),
            target: None,
            taken: None,
            rd: Some(rd),
            rs1: Some(rs1),
            rs2: Some(rs2),
            mem_addr: None,
        }
    }

    /// Catalog config sized so that issue width (8) is the unique
    /// bottleneck: every other stage and resource is comfortably wider.
    fn wide_issue8_config(space: &DesignSpace) -> Configuration {
        let mut by_name = std::collections::HashMap::new();
        by_name.insert("issue width", 1u16); // 8
        by_name.insert("dispatch width", 3); // 16
        by_name.insert("no. to dispatch", 1); // 16
        by_name.insert("dispatch queue depth", 3); // 16
        by_name.insert("no. to fetch", 1); // 16
        by_name.insert("no. to decode", 1); // 16
        by_name.insert("decode: scalar instruction queue size", 3); // 64
        by_name.insert("no. to rename", 1); // 16
        by_name.insert("physical register file read ports", 2); // 64
        by_name.insert("physical register file write ports", 2); // 16
        by_name.insert("reorder buffer no. to retire", 1); // 16
        by_name.insert("reorder buffer retire queue depth", 4); // 512
        let mut cfg = space.mid_config();
        for (name, rank) in by_name {
            let idx = space.param_index(name).unwrap();
            cfg.ranks[idx] = rank;
        }
        cfg
    }

    #[test]
    fn independent_alu_ops_hit_the_issue_width_bound() {
        let space = default_catalog();
        let cfg = wide_issue8_config(&space);
        // 64 independent ALU ops: distinct destination registers, sources
        // read registers no in-flight instruction writes.
        for n in [64usize, 128] {
            let records: Vec<_> = (0..n)
                .map(|i| alu_record(0x1000 + 4 * i as u64, (i % 8) as u8 + 8, 1, 2))
                .collect();
            // rd cycles through 8..=15; rs 1,2 never written: no hazards
            // within the scheduler window? rd reuse creates output deps only
            // for the writer mapping; sources 1,2 are never written so all
            // ops are ready immediately.
            let stats = simulate(&chunk_of(records), &cfg, &space, 7).unwrap();
            // Steady issue of 8 per cycle plus the constant pipeline fill
            // (decode, rename, dispatch, issue, execute = 5 stages).
            assert_eq!(stats.cycles, (n as u64) / 8 + 5, "n = {n}");
            assert_eq!(stats.instructions, n as u64);
        }
    }

    #[test]
    fn serial_dependency_chain_bounds_cycles_below() {
        let space = default_catalog();
        let cfg = wide_issue8_config(&space);
        // 100 chained ALU ops: each reads the previous destination.
        let records: Vec<_> = (0..100)
            .map(|i| alu_record(0x1000 + 4 * i as u64, 5, 5, 5))
            .collect();
        let stats = simulate(&chunk_of(records), &cfg, &space, 7).unwrap();
        assert!(stats.cycles >= 100, "chain of 100 unit-latency ops needs >= 100 cycles");
        // IPC can never exceed 1 on a serial chain.
        assert!(stats.instructions as f64 / stats.cycles as f64 <= 1.0);
    }

    #[test]
    fn ipc_never_exceeds_minimum_width() {
        let space = default_catalog();
        let profile = WorkloadProfile::default();
        let records = generate_synthetic_trace(&profile, 3_000).unwrap();
        let mut rng = rand::SeedableRng::seed_from_u64(11u64);
        let rng: &mut rand_chacha::ChaCha8Rng = &mut rng;
        for trial in 0..5 {
            let cfg = space.sample_config(rng);
            let stats =
                simulate(&chunk_of(records.clone()), &cfg, &space, trial as u64).unwrap();
            let r = ParamReader { space: &space, cfg: &cfg };
            let min_width = [
                "issue width",
                "dispatch width",
                "no. to fetch",
                "no. to decode",
                "no. to rename",
                "no. to dispatch",
                "reorder buffer no. to retire",
            ]
            .iter()
            .map(|n| r.num(n).unwrap())
            .min()
            .unwrap();
            let ipc = stats.instructions as f64 / stats.cycles as f64;
            assert!(
                ipc <= min_width as f64 + 1e-12,
                "trial {trial}: ipc {ipc} exceeds min width {min_width}"
            );
            assert_eq!(stats.instructions, 3_000);
        }
    }

    #[test]
    fn simulation_is_bit_deterministic() {
        let space = default_catalog();
        let profile = WorkloadProfile { seed: 3, ..Default::default() };
        let records = generate_synthetic_trace(&profile, 2_000).unwrap();
        let cfg = space.mid_config();
        let a = simulate(&chunk_of(records.clone()), &cfg, &space, 99).unwrap();
        let b = simulate(&chunk_of(records.clone()), &cfg, &space, 99).unwrap();
        assert_eq!(a, b);
        // A RANDOM-policy config is deterministic per seed too.
        let mut cfg2 = cfg.clone();
        let idx = space.param_index("dcache replacement policy").unwrap();
        cfg2.ranks[idx] = 2; // RANDOM
        let c = simulate(&chunk_of(records.clone()), &cfg2, &space, 5).unwrap();
        let d = simulate(&chunk_of(records), &cfg2, &space, 5).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn branch_counters_partition_branch_count() {
        let space = default_catalog();
        let profile = WorkloadProfile { branch_frac: 0.25, alu_frac: 0.30, ..Default::default() };
        let records = generate_synthetic_trace(&profile, 4_000).unwrap();
        let n_branches = records.iter().filter(|r| r.flags.branch).count() as u64;
        let stats = simulate(&chunk_of(records), &space.mid_config(), &space, 1).unwrap();
        assert_eq!(stats.br_correct + stats.br_mispredict, n_branches);
        assert!(stats.br_correct > 0);
    }

    #[test]
    fn cache_counters_account_every_access() {
        let space = default_catalog();
        let records = generate_synthetic_trace(&WorkloadProfile::default(), 4_000).unwrap();
        let n = records.len() as u64;
        let n_mem = records.iter().filter(|r| r.mem_addr.is_some()).count() as u64;
        let stats = simulate(&chunk_of(records), &space.min_config(), &space, 1).unwrap();
        // One instruction-side probe per instruction, one data-side probe
        // per load/store, per pass.
        assert_eq!(stats.icache_hits + stats.icache_misses, n);
        assert_eq!(stats.itlb_hits + stats.itlb_misses, n);
        assert_eq!(stats.dcache_hits + stats.dcache_misses, n_mem);
        assert_eq!(stats.dtlb_hits + stats.dtlb_misses, n_mem);
        // L2 demand accesses come from L1 misses only.
        assert_eq!(stats.l2_hits + stats.l2_misses, stats.icache_misses + stats.dcache_misses);
        assert_eq!(stats.l3_hits + stats.l3_misses, stats.l2_misses);
    }

    #[test]
    fn warmup_pass_reduces_cold_misses() {
        let space = default_catalog();
        let records = generate_synthetic_trace(&WorkloadProfile::default(), 3_000).unwrap();
        let cfg = space.mid_config();
        let warm = simulate_with_options(
            &chunk_of(records.clone()),
            &cfg,
            &space,
            1,
            &SimOptions { warmup: true, ..Default::default() },
        )
        .unwrap();
        let cold = simulate_with_options(
            &chunk_of(records),
            &cfg,
            &space,
            1,
            &SimOptions { warmup: false, ..Default::default() },
        )
        .unwrap();
        assert!(warm.icache_misses <= cold.icache_misses);
        assert!(warm.cycles <= cold.cycles);
        assert!(warm.br_mispredict <= cold.br_mispredict);
    }

    #[test]
    fn load_latency_slows_dependent_chains() {
        // Loads feeding a dependency chain: a config whose dcache the
        // working set fits should beat one where every load walks to L2.
        let space = default_catalog();
        let profile = WorkloadProfile {
            load_frac: 0.5,
            alu_frac: 0.35,
            store_frac: 0.05,
            branch_frac: 0.05,
            mul_frac: 0.03,
            div_frac: 0.02,
            dep_chain_len: 1.5,
            working_set_bytes: 256 * 1024,
            ..Default::default()
        };
        let records = generate_synthetic_trace(&profile, 4_000).unwrap();
        let small = space.min_config(); // 32 KiB dcache
        let mut large = space.min_config();
        large.ranks[space.param_index("dcache size (kb)").unwrap()] = 5; // 1 MiB
        let s_small = simulate(&chunk_of(records.clone()), &small, &space, 1).unwrap();
        let s_large = simulate(&chunk_of(records), &large, &space, 1).unwrap();
        assert!(s_large.dcache_misses < s_small.dcache_misses);
        assert!(s_large.cycles < s_small.cycles);
    }

    #[test]
    fn empty_chunk_simulates_to_zero() {
        let space = default_catalog();
        let stats = simulate(&chunk_of(Vec::new()), &space.min_config(), &space, 1).unwrap();
        assert_eq!(stats, SimStats::default());
    }

    #[test]
    fn subset_space_is_rejected() {
        let space = default_catalog();
        let imem = space.subsystem_subset(crate::design_space::Subsystem::Imem);
        let cfg = imem.min_config();
        let records = generate_synthetic_trace(&WorkloadProfile::default(), 100).unwrap();
        assert!(matches!(
            simulate(&chunk_of(records), &cfg, &imem, 1),
            Err(Error::Validation(_))
        ));
    }
}
