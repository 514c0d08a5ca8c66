//! Set-associative cache and TLB state with PLRU / LRU / RANDOM replacement.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::design_space::ParamValue;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replacement {
    Plru,
    Lru,
    Random,
}

impl Replacement {
    pub fn from_value(v: &ParamValue) -> Result<Replacement> {
        match v {
            ParamValue::Sym(s) => match s.as_str() {
                "PLRU" => Ok(Replacement::Plru),
                "LRU" => Ok(Replacement::Lru),
                "RANDOM" => Ok(Replacement::Random),
                other => Err(Error::validation(format!("unknown replacement policy '{other}'"))),
            },
            ParamValue::Num(n) => {
                Err(Error::validation(format!("replacement policy must be symbolic, got {n}")))
            }
        }
    }
}

/// Static shape of one cache level.
#[derive(Debug, Clone, Copy)]
pub struct CacheGeometry {
    pub size_bytes: u64,
    pub line_bytes: u64,
    pub associativity: u32,
    pub replacement: Replacement,
    /// Cycles added on a hit.
    pub hit_latency: u64,
    /// Cycles added when the request must go to the next level.
    pub miss_penalty: u64,
}

impl CacheGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.size_bytes == 0 || self.line_bytes == 0 || self.associativity == 0 {
            return Err(Error::validation("cache geometry fields must be positive"));
        }
        if !self.line_bytes.is_power_of_two() {
            return Err(Error::validation("cache line size must be a power of two"));
        }
        if self.size_bytes % (self.line_bytes * u64::from(self.associativity)) != 0 {
            return Err(Error::validation(format!(
                "cache size {} not divisible by line {} x ways {}",
                self.size_bytes, self.line_bytes, self.associativity
            )));
        }
        if self.replacement == Replacement::Plru && !self.associativity.is_power_of_two() {
            return Err(Error::validation("PLRU requires power-of-two associativity"));
        }
        Ok(())
    }
}

/// Result of one access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub hit: bool,
    /// Line address of an evicted valid line, if the fill displaced one.
    pub victim: Option<u64>,
    /// The victim held modified data (needs a writeback).
    pub victim_dirty: bool,
}

const OUTCOME_HIT: AccessOutcome = AccessOutcome { hit: true, victim: None, victim_dirty: false };

/// One cache or TLB array. Tags store whole line (or page) numbers, so any
/// set count works; sets are selected by modulo.
#[derive(Debug, Clone)]
pub struct Cache {
    sets: usize,
    ways: usize,
    line_shift: u32,
    replacement: Replacement,
    tags: Vec<u64>,
    valid: Vec<bool>,
    dirty: Vec<bool>,
    /// LRU timestamps (LRU/RANDOM bookkeeping is shared; RANDOM ignores it).
    stamp: Vec<u64>,
    /// One PLRU decision tree per set, packed as heap-order bits.
    plru: Vec<u64>,
    tick: u64,
}

impl Cache {
    pub fn new(geo: &CacheGeometry) -> Result<Cache> {
        geo.validate()?;
        let sets = (geo.size_bytes / (geo.line_bytes * u64::from(geo.associativity))) as usize;
        Ok(Self::from_parts(sets, geo.associativity as usize, geo.line_bytes, geo.replacement))
    }

    /// Build from an explicit shape. TLBs use `line_bytes = page_bytes`.
    pub fn from_parts(sets: usize, ways: usize, line_bytes: u64, replacement: Replacement) -> Cache {
        assert!(sets > 0 && ways > 0 && line_bytes.is_power_of_two());
        let n = sets * ways;
        Cache {
            sets,
            ways,
            line_shift: line_bytes.trailing_zeros(),
            replacement,
            tags: vec![0; n],
            valid: vec![false; n],
            dirty: vec![false; n],
            stamp: vec![0; n],
            plru: vec![0; sets],
            tick: 0,
        }
    }

    /// TLB shape: `entries` total, `ways` associativity, one "line" per page.
    pub fn tlb(entries: usize, ways: usize, page_bytes: u64) -> Cache {
        let ways = ways.min(entries).max(1);
        let sets = (entries / ways).max(1);
        Self::from_parts(sets, ways, page_bytes, Replacement::Lru)
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    fn set_of(&self, line: u64) -> usize {
        (line % self.sets as u64) as usize
    }

    /// Mark `way` most recently used in the PLRU tree (flip node bits to
    /// point away from it).
    fn plru_touch(&mut self, set: usize, way: usize) {
        if self.ways == 1 {
            return;
        }
        let levels = self.ways.trailing_zeros();
        let mut node = 1usize;
        for level in (0..levels).rev() {
            let right = (way >> level) & 1;
            let bits = &mut self.plru[set];
            // Bit points toward the side to replace next, i.e. away from
            // the accessed side.
            if right == 1 {
                *bits &= !(1u64 << node);
            } else {
                *bits |= 1u64 << node;
            }
            node = node * 2 + right;
        }
    }

    fn plru_victim(&self, set: usize) -> usize {
        if self.ways == 1 {
            return 0;
        }
        let levels = self.ways.trailing_zeros();
        let bits = self.plru[set];
        let mut node = 1usize;
        let mut way = 0usize;
        for _ in 0..levels {
            let dir = ((bits >> node) & 1) as usize;
            way = way * 2 + dir;
            node = node * 2 + dir;
        }
        way
    }

    fn victim_way(&self, set: usize, rng: &mut ChaCha8Rng) -> usize {
        let base = set * self.ways;
        // Invalid ways fill first under every policy.
        if let Some(w) = (0..self.ways).find(|w| !self.valid[base + w]) {
            return w;
        }
        match self.replacement {
            Replacement::Plru => self.plru_victim(set),
            Replacement::Lru => {
                (0..self.ways).min_by_key(|w| self.stamp[base + w]).expect("ways > 0")
            }
            Replacement::Random => rng.gen_range(0..self.ways),
        }
    }

    /// Probe and update for the line containing `addr`. Misses allocate;
    /// writes mark the line dirty.
    pub fn access(&mut self, addr: u64, is_write: bool, rng: &mut ChaCha8Rng) -> AccessOutcome {
        let line = addr >> self.line_shift;
        let set = self.set_of(line);
        let base = set * self.ways;
        self.tick += 1;
        for w in 0..self.ways {
            let i = base + w;
            if self.valid[i] && self.tags[i] == line {
                self.stamp[i] = self.tick;
                self.plru_touch(set, w);
                if is_write {
                    self.dirty[i] = true;
                }
                return OUTCOME_HIT;
            }
        }
        let w = self.victim_way(set, rng);
        let i = base + w;
        let victim = self.valid[i].then(|| self.tags[i] << self.line_shift);
        let victim_dirty = self.valid[i] && self.dirty[i];
        self.tags[i] = line;
        self.valid[i] = true;
        self.dirty[i] = is_write;
        self.stamp[i] = self.tick;
        self.plru_touch(set, w);
        AccessOutcome { hit: false, victim, victim_dirty }
    }

    /// Probe without updating any state.
    pub fn peek(&self, addr: u64) -> bool {
        let line = addr >> self.line_shift;
        let base = self.set_of(line) * self.ways;
        (0..self.ways).any(|w| self.valid[base + w] && self.tags[base + w] == line)
    }
}
