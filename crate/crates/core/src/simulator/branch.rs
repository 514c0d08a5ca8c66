//! Branch prediction state: a tagged 2-bit direction table with folded path
//! history, a loop predictor, a set-associative BTB, a return address stack,
//! and an indirect target table.

use crate::trace::TraceRecord;

/// Recent slice of the path history register mixed into table indices. The
/// window scales with the configured path length but stays short
/// (`path_bits / 4`, at most 16 outcomes): with desk-scale traces a full
/// 32-64 bit path would essentially never repeat, deadening the knob.
fn path_slice(path: u64, path_bits: u32) -> u64 {
    let w = (path_bits / 4).clamp(4, 16);
    path & ((1u64 << w) - 1)
}

/// Tagged table of 2-bit saturating counters. The entry count is the
/// smallest power of two at or above the configured history buffer size;
/// narrow tags cause aliasing, which is the intended modelled effect.
#[derive(Debug)]
pub struct DirectionPredictor {
    counters: Vec<u8>,
    tags: Vec<u32>,
    valid: Vec<bool>,
    index_mask: u64,
    pc_shift: u32,
    tag_mask: u32,
    path_bits: u32,
    /// Counter decay interval in updates (0 disables).
    reset_period: u64,
    updates: u64,
}

impl DirectionPredictor {
    pub fn new(
        history_size: u64,
        pc_shift: u32,
        tag_bits: u32,
        path_bits: u32,
        reset_period: u64,
    ) -> DirectionPredictor {
        let entries = history_size.next_power_of_two().max(2) as usize;
        DirectionPredictor {
            counters: vec![1; entries], // weakly not-taken
            tags: vec![0; entries],
            valid: vec![false; entries],
            index_mask: entries as u64 - 1,
            pc_shift,
            tag_mask: ((1u64 << tag_bits.min(31)) - 1) as u32,
            path_bits,
            reset_period,
            updates: 0,
        }
    }

    pub fn entries(&self) -> usize {
        self.counters.len()
    }

    fn index(&self, pc: u64, path: u64) -> usize {
        (((pc >> self.pc_shift) ^ path_slice(path, self.path_bits)) & self.index_mask) as usize
    }

    fn tag(&self, pc: u64) -> u32 {
        (((pc >> self.pc_shift) >> self.index_mask.count_ones()) as u32) & self.tag_mask
    }

    pub fn predict(&self, pc: u64, path: u64) -> bool {
        let i = self.index(pc, path);
        if self.valid[i] && self.tags[i] == self.tag(pc) {
            self.counters[i] >= 2
        } else {
            false // cold or aliased entries default to not-taken
        }
    }

    pub fn update(&mut self, pc: u64, path: u64, taken: bool) {
        let i = self.index(pc, path);
        let tag = self.tag(pc);
        if self.valid[i] && self.tags[i] == tag {
            let c = &mut self.counters[i];
            if taken {
                *c = (*c + 1).min(3);
            } else {
                *c = c.saturating_sub(1);
            }
        } else {
            self.valid[i] = true;
            self.tags[i] = tag;
            self.counters[i] = if taken { 2 } else { 1 };
        }
        self.updates += 1;
        if self.reset_period > 0 && self.updates % self.reset_period == 0 {
            // Periodic confidence decay: drag every counter to its weak state.
            for c in &mut self.counters {
                *c = if *c >= 2 { 2 } else { 1 };
            }
        }
    }
}

/// Small set-associative tagged table with LRU replacement; the building
/// block for BTB, loop and indirect tables.
#[derive(Debug)]
pub struct TaggedTable<T> {
    sets: usize,
    ways: usize,
    keys: Vec<u64>,
    valid: Vec<bool>,
    stamp: Vec<u64>,
    data: Vec<T>,
    key_mask: u64,
    tick: u64,
}

impl<T: Default + Clone> TaggedTable<T> {
    /// `key_bits` narrows the stored key (tag aliasing); 64 keeps full keys.
    pub fn new(entries: usize, ways: usize, key_bits: u32) -> TaggedTable<T> {
        let ways = ways.clamp(1, entries.max(1));
        let sets = (entries / ways).max(1);
        let n = sets * ways;
        TaggedTable {
            sets,
            ways,
            keys: vec![0; n],
            valid: vec![false; n],
            stamp: vec![0; n],
            data: vec![T::default(); n],
            key_mask: if key_bits >= 64 { u64::MAX } else { (1u64 << key_bits) - 1 },
            tick: 0,
        }
    }

    fn slot(&self, key: u64) -> (usize, u64) {
        let masked = key & self.key_mask;
        ((masked % self.sets as u64) as usize * self.ways, masked)
    }

    pub fn get(&mut self, key: u64) -> Option<&T> {
        let (base, masked) = self.slot(key);
        self.tick += 1;
        for w in 0..self.ways {
            let i = base + w;
            if self.valid[i] && self.keys[i] == masked {
                self.stamp[i] = self.tick;
                return Some(&self.data[i]);
            }
        }
        None
    }

    /// Fetch-or-insert; returns the entry, freshly defaulted if new or evicted.
    pub fn entry(&mut self, key: u64) -> &mut T {
        let (base, masked) = self.slot(key);
        self.tick += 1;
        let mut victim = base;
        let mut oldest = u64::MAX;
        for w in 0..self.ways {
            let i = base + w;
            if self.valid[i] && self.keys[i] == masked {
                self.stamp[i] = self.tick;
                return &mut self.data[i];
            }
            let age = if self.valid[i] { self.stamp[i] } else { 0 };
            if age < oldest {
                oldest = age;
                victim = i;
            }
        }
        self.valid[victim] = true;
        self.keys[victim] = masked;
        self.stamp[victim] = self.tick;
        self.data[victim] = T::default();
        &mut self.data[victim]
    }

    pub fn clear_stamps(&mut self) {
        self.stamp.fill(0);
    }
}

#[derive(Debug, Clone, Default)]
struct LoopEntry {
    trip: u32,
    count: u32,
    confidence: u32,
}

/// Loop predictor: learns per-branch trip counts and predicts the exit
/// (not-taken) iteration once confident.
#[derive(Debug)]
pub struct LoopPredictor {
    table: TaggedTable<LoopEntry>,
    max_age: u32,
    max_iterations: u32,
}

impl LoopPredictor {
    pub fn new(entries: usize, ways: usize, max_age: u32, max_iterations: u32) -> LoopPredictor {
        LoopPredictor { table: TaggedTable::new(entries, ways, 64), max_age, max_iterations }
    }

    /// Some(taken) when the entry is confident, None to defer.
    pub fn predict(&mut self, pc: u64) -> Option<bool> {
        let max_iters = self.max_iterations;
        let e = self.table.get(pc)?;
        if e.confidence >= 2 && e.trip > 0 && e.trip <= max_iters {
            Some(e.count + 1 != e.trip)
        } else {
            None
        }
    }

    pub fn update(&mut self, pc: u64, taken: bool) {
        let max_age = self.max_age;
        let max_iters = self.max_iterations;
        let e = self.table.entry(pc);
        if taken {
            e.count += 1;
            if e.count > max_iters {
                // Too long to track; give up on this branch.
                *e = LoopEntry::default();
            }
        } else {
            let observed = e.count + 1; // iterations including the exit
            if observed == e.trip {
                e.confidence = (e.confidence + 1).min(max_age);
            } else {
                e.trip = observed;
                e.confidence = 0;
            }
            e.count = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Target(u64);

/// Branch target buffer: pc (at `granularity`-byte granularity) to target.
#[derive(Debug)]
pub struct Btb {
    table: TaggedTable<Target>,
    gran_shift: u32,
}

impl Btb {
    pub fn new(entries: usize, ways: usize, granularity: u64) -> Btb {
        Btb {
            table: TaggedTable::new(entries, ways, 64),
            gran_shift: granularity.max(1).trailing_zeros(),
        }
    }

    pub fn lookup(&mut self, pc: u64) -> Option<u64> {
        self.table.get(pc >> self.gran_shift).map(|t| t.0)
    }

    pub fn insert(&mut self, pc: u64, target: u64) {
        self.table.entry(pc >> self.gran_shift).0 = target;
    }
}

/// Return address stack; pushes drop the oldest entry when full.
#[derive(Debug)]
pub struct Ras {
    stack: Vec<u64>,
    cap: usize,
}

impl Ras {
    pub fn new(cap: usize) -> Ras {
        Ras { stack: Vec::new(), cap: cap.max(1) }
    }

    pub fn push(&mut self, addr: u64) {
        if self.stack.len() == self.cap {
            self.stack.remove(0);
        }
        self.stack.push(addr);
    }

    pub fn pop(&mut self) -> Option<u64> {
        self.stack.pop()
    }
}

/// Indirect target predictor indexed by pc xor folded path history.
#[derive(Debug)]
pub struct IndirectPredictor {
    table: TaggedTable<Target>,
    path_bits: u32,
    reset_period: u64,
    updates: u64,
}

impl IndirectPredictor {
    pub fn new(entries: usize, tag_bits: u32, path_bits: u32, reset_period: u64) -> IndirectPredictor {
        IndirectPredictor {
            table: TaggedTable::new(entries, 2, tag_bits.max(8)),
            path_bits,
            reset_period,
            updates: 0,
        }
    }

    fn key(&self, pc: u64, path: u64) -> u64 {
        pc ^ (path_slice(path, self.path_bits) << 3)
    }

    pub fn predict(&mut self, pc: u64, path: u64) -> Option<u64> {
        let k = self.key(pc, path);
        self.table.get(k).map(|t| t.0)
    }

    pub fn update(&mut self, pc: u64, path: u64, target: u64) {
        let k = self.key(pc, path);
        self.table.entry(k).0 = target;
        self.updates += 1;
        if self.reset_period > 0 && self.updates % self.reset_period == 0 {
            self.table.clear_stamps();
        }
    }
}

/// Kinds the predictor treats differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BranchKind {
    Conditional,
    DirectJump,
    Call,
    IndirectJump,
    Return,
}

fn classify(r: &TraceRecord) -> BranchKind {
    match r.mnemonic.as_str() {
        "ret" => BranchKind::Return,
        "jal" | "c.jalr" => BranchKind::Call,
        "jalr" if r.rd == Some(1) => BranchKind::Call,
        "jalr" | "c.jr" => BranchKind::IndirectJump,
        "c.j" | "c.jal" => BranchKind::DirectJump,
        m if m.starts_with('b') || m.starts_with("c.b") => BranchKind::Conditional,
        _ => BranchKind::DirectJump,
    }
}

/// Per-predictor shape parameters decoded from a configuration.
#[derive(Debug, Clone)]
pub struct PredictorConfig {
    pub tage_history_size: u64,
    pub tage_shift: u32,
    pub tage_tag_bits: u32,
    pub tage_path_bits: u32,
    pub tage_reset_period: u64,
    pub lpred_entries: usize,
    pub lpred_ways: usize,
    pub lpred_max_age: u32,
    pub lpred_max_iterations: u32,
    pub btb_entries: usize,
    pub btb_ways: usize,
    pub btb_granularity: u64,
    pub ras_size: usize,
    pub ittage_tag_bits: u32,
    pub ittage_path_bits: u32,
    pub ittage_reset_period: u64,
}

/// The full front-end prediction stack.
#[derive(Debug)]
pub struct BranchPredictor {
    direction: DirectionPredictor,
    looppred: LoopPredictor,
    btb: Btb,
    ras: Ras,
    indirect: IndirectPredictor,
    /// Global taken/not-taken path history.
    path: u64,
}

/// Outcome of predicting one branch record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictOutcome {
    pub correct: bool,
}

impl BranchPredictor {
    pub fn new(cfg: &PredictorConfig) -> BranchPredictor {
        // Hardware reset timers count fetch blocks; scale the configured
        // values down to desk-scale trace lengths so the knob stays live.
        let scale = |v: u64| v >> 6;
        BranchPredictor {
            direction: DirectionPredictor::new(
                cfg.tage_history_size,
                cfg.tage_shift,
                cfg.tage_tag_bits,
                cfg.tage_path_bits,
                scale(cfg.tage_reset_period),
            ),
            looppred: LoopPredictor::new(
                cfg.lpred_entries,
                cfg.lpred_ways,
                cfg.lpred_max_age,
                cfg.lpred_max_iterations,
            ),
            btb: Btb::new(cfg.btb_entries, cfg.btb_ways, cfg.btb_granularity),
            ras: Ras::new(cfg.ras_size),
            indirect: IndirectPredictor::new(
                1024,
                cfg.ittage_tag_bits,
                cfg.ittage_path_bits,
                scale(cfg.ittage_reset_period),
            ),
            path: 0,
        }
    }

    /// Predict the record's branch, train on the actual outcome, and report
    /// whether direction and target were both right.
    pub fn predict_and_train(&mut self, r: &TraceRecord) -> PredictOutcome {
        let taken = r.taken.expect("branch record");
        let target = r.target.expect("branch record");
        let kind = classify(r);
        let pc = r.pc;

        let (pred_taken, pred_target) = match kind {
            BranchKind::Conditional => {
                let dir = match self.looppred.predict(pc) {
                    Some(t) => t,
                    None => self.direction.predict(pc, self.path),
                };
                (dir, self.btb.lookup(pc))
            }
            BranchKind::DirectJump | BranchKind::Call => (true, self.btb.lookup(pc)),
            BranchKind::IndirectJump => (true, self.indirect.predict(pc, self.path)),
            BranchKind::Return => (true, self.ras.pop()),
        };
        let correct = pred_taken == taken && (!taken || pred_target == Some(target));

        // Train.
        if kind == BranchKind::Conditional {
            self.direction.update(pc, self.path, taken);
            self.looppred.update(pc, taken);
        }
        if taken {
            match kind {
                BranchKind::IndirectJump => self.indirect.update(pc, self.path, target),
                BranchKind::Return => {}
                _ => self.btb.insert(pc, target),
            }
        }
        if kind == BranchKind::Call {
            self.ras.push(pc + r.len_bytes());
        }
        self.path = (self.path << 1) | u64::from(taken);

        PredictOutcome { correct }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::InsnFlags;

    fn default_cfg() -> PredictorConfig {
        PredictorConfig {
            tage_history_size: 768,
            tage_shift: 1,
            tage_tag_bits: 12,
            tage_path_bits: 48,
            tage_reset_period: 0x10_0000,
            lpred_entries: 256,
            lpred_ways: 2,
            lpred_max_age: 31,
            lpred_max_iterations: 256,
            btb_entries: 8192,
            btb_ways: 4,
            btb_granularity: 2,
            ras_size: 64,
            ittage_tag_bits: 12,
            ittage_path_bits: 48,
            ittage_reset_period: 0x10_0000,
        }
    }

    fn branch(pc: u64, mnemonic: &str, taken: bool, target: u64) -> TraceRecord {
        TraceRecord {
            pc,
            mnemonic: mnemonic.to_string(),
            flags: InsnFlags {
                compressed: mnemonic.starts_with("c."),
                load: false,
                store: false,
                branch: true,
            },
            target: Some(target),
            taken: Some(taken),
            rd: if mnemonic == "jal" { Some(1) } else { None },
            rs1: None,
            rs2: None,
            mem_addr: None,
        }
    }

    #[test]
    fn direction_table_is_pow2_of_history_size() {
        let d = DirectionPredictor::new(768, 0, 12, 32, 0);
        assert_eq!(d.entries(), 1024);
        let d = DirectionPredictor::new(1024, 0, 12, 32, 0);
        assert_eq!(d.entries(), 1024);
    }

    #[test]
    fn two_bit_counter_follows_saturating_automaton() {
        let mut d = DirectionPredictor::new(16, 0, 8, 0, 0);
        let pc = 0x40;
        // Install on first update; starts weak in the observed direction.
        d.update(pc, 0, true);
        assert!(d.predict(pc, 0));
        d.update(pc, 0, true); // strongly taken
        d.update(pc, 0, false); // weakly taken
        assert!(d.predict(pc, 0));
        d.update(pc, 0, false); // weakly not-taken
        assert!(!d.predict(pc, 0));
        d.update(pc, 0, false);
        d.update(pc, 0, false); // saturates at 0
        d.update(pc, 0, true);
        assert!(!d.predict(pc, 0)); // needs two takens from strong not-taken
        d.update(pc, 0, true);
        assert!(d.predict(pc, 0));
    }

    #[test]
    fn steady_branch_becomes_predictable() {
        // The first ~path-window occurrences walk fresh indices; after the
        // path register saturates the branch must predict near-perfectly.
        let mut bp = BranchPredictor::new(&default_cfg());
        let mut correct = 0;
        for i in 0..200 {
            let out = bp.predict_and_train(&branch(0x1000, "beq", true, 0x800));
            if i >= 30 && out.correct {
                correct += 1;
            }
        }
        assert!(correct >= 165, "warm always-taken branch should be near-perfect: {correct}");
    }

    #[test]
    fn loop_predictor_learns_trip_count() {
        let mut lp = LoopPredictor::new(64, 2, 31, 64);
        let pc = 0x2000;
        // Loop body taken 7 times then exits; repeat until confident.
        for _ in 0..4 {
            for _ in 0..7 {
                lp.update(pc, true);
            }
            lp.update(pc, false);
        }
        // Confident now: iterations 1..=7 predict taken, the 8th predicts exit.
        for i in 0..7 {
            assert_eq!(lp.predict(pc), Some(true), "iteration {i}");
            lp.update(pc, true);
        }
        assert_eq!(lp.predict(pc), Some(false));
    }

    #[test]
    fn ras_predicts_matched_call_return() {
        let mut bp = BranchPredictor::new(&default_cfg());
        // call from 0x100 -> 0x800; ret from 0x804 -> 0x104.
        bp.predict_and_train(&branch(0x100, "jal", true, 0x800));
        let out = bp.predict_and_train(&branch(0x804, "ret", true, 0x104));
        assert!(out.correct, "return address should come from the RAS");
    }

    #[test]
    fn ras_capacity_bounds_depth() {
        let mut cfg = default_cfg();
        cfg.ras_size = 2;
        let mut bp = BranchPredictor::new(&cfg);
        // Three nested calls overflow a 2-entry RAS; the deepest two returns
        // still predict, the outermost has lost its entry.
        for (pc, tgt) in [(0x100u64, 0x1000u64), (0x1000, 0x2000), (0x2000, 0x3000)] {
            bp.predict_and_train(&branch(pc, "jal", true, tgt));
        }
        assert!(bp.predict_and_train(&branch(0x3000, "ret", true, 0x2004)).correct);
        assert!(bp.predict_and_train(&branch(0x2004, "ret", true, 0x1004)).correct);
        assert!(!bp.predict_and_train(&branch(0x1004, "ret", true, 0x104)).correct);
    }

    #[test]
    fn btb_learns_direct_targets() {
        let mut bp = BranchPredictor::new(&default_cfg());
        assert!(!bp.predict_and_train(&branch(0x500, "c.j", true, 0x700)).correct);
        assert!(bp.predict_and_train(&branch(0x500, "c.j", true, 0x700)).correct);
    }

    #[test]
    fn indirect_predictor_tracks_stable_target() {
        // rd=None jalr is an indirect jump, not a call. Once the path
        // register saturates its index window, the target table hits.
        let mut bp = BranchPredictor::new(&default_cfg());
        let mut tail_correct = 0;
        for i in 0..40 {
            let out = bp.predict_and_train(&branch(0x600, "jalr", true, 0x9000));
            if i >= 30 && out.correct {
                tail_correct += 1;
            }
        }
        assert_eq!(tail_correct, 10);
    }
}
