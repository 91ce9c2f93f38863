//! Hard caps on exhaustive searches.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("search budget of {0} steps exhausted")]
pub struct BudgetExceeded(pub u64);

/// Counts search steps; running past the limit is an error, never a silent cut.
#[derive(Clone, Debug)]
pub struct Budget {
    limit: u64,
    used: u64,
}

impl Budget {
    pub const DEFAULT: u64 = 1_000_000;

    pub fn new(limit: u64) -> Self {
        Budget { limit, used: 0 }
    }

    pub fn tick(&mut self) -> Result<(), BudgetExceeded> {
        self.used += 1;
        if self.used > self.limit {
            Err(BudgetExceeded(self.limit))
        } else {
            Ok(())
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::new(Self::DEFAULT)
    }
}
