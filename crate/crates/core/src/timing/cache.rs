use serde::{Deserialize, Serialize};

/// Geometry and hit latency of one cache level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub size_bytes: usize,
    pub assoc: usize,
    pub line_bytes: usize,
    pub latency: u32,
}

impl CacheConfig {
    pub fn sets(&self) -> usize {
        (self.size_bytes / (self.assoc * self.line_bytes)).max(1)
    }
}

/// Set-associative, write-allocate cache with LRU replacement. Only tags
/// are modeled.
#[derive(Debug, Clone)]
pub struct Cache {
    cfg: CacheConfig,
    /// Per set: `(tag, last use)`, at most `assoc` entries.
    sets: Vec<Vec<(u64, u64)>>,
    clock: u64,
}

impl Cache {
    pub fn new(cfg: CacheConfig) -> Self {
        Cache { cfg, sets: vec![Vec::with_capacity(cfg.assoc); cfg.sets()], clock: 0 }
    }

    pub fn config(&self) -> CacheConfig {
        self.cfg
    }

    /// Touches the line holding `addr`; returns whether it was present.
    /// A miss allocates the line, evicting the least recently used one.
    pub fn access(&mut self, addr: u64) -> bool {
        self.clock += 1;
        let line = addr / self.cfg.line_bytes as u64;
        let nsets = self.sets.len() as u64;
        let (set, tag) = ((line % nsets) as usize, line / nsets);
        let ways = &mut self.sets[set];
        if let Some(w) = ways.iter_mut().find(|w| w.0 == tag) {
            w.1 = self.clock;
            return true;
        }
        if ways.len() < self.cfg.assoc {
            ways.push((tag, self.clock));
        } else {
            let victim = ways.iter_mut().min_by_key(|w| w.1).expect("associativity is nonzero");
            *victim = (tag, self.clock);
        }
        false
    }
}
