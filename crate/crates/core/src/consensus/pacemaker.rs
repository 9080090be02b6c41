//! View timeouts with exponential backoff.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pacemaker {
    base: u64,
    failures: u32,
}

/// Backoff stops doubling after this many consecutive failures.
const MAX_DOUBLINGS: u32 = 16;

impl Pacemaker {
    pub fn new(base: u64) -> Self {
        assert!(base > 0, "view timeout must be positive");
        Self { base, failures: 0 }
    }

    pub fn timeout(&self) -> u64 {
        self.base << self.failures.min(MAX_DOUBLINGS)
    }

    pub fn failures(&self) -> u32 {
        self.failures
    }

    pub fn on_failure(&mut self) {
        self.failures = self.failures.saturating_add(1);
    }

    pub fn on_commit(&mut self) {
        self.failures = 0;
    }
}
