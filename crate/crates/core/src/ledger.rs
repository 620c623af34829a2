//! Budget accounting shared by a run's conversations and searches.

use std::ops::AddAssign;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Monotone counters; increments are atomic so one ledger may be shared.
#[derive(Debug, Default)]
pub struct BudgetLedger {
    coder_trials_used: AtomicU64,
    automl_trials_used: AtomicU64,
    llm_calls: AtomicU64,
    llm_tokens_in: AtomicU64,
    llm_tokens_out: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub coder_trials_used: u64,
    pub automl_trials_used: u64,
    pub llm_calls: u64,
    pub llm_tokens_in: u64,
    pub llm_tokens_out: u64,
}

impl BudgetLedger {
    pub fn record_coder_trial(&self) {
        self.coder_trials_used.fetch_add(1, Ordering::SeqCst);
    }

    pub fn record_automl_trials(&self, n: u64) {
        self.automl_trials_used.fetch_add(n, Ordering::SeqCst);
    }

    pub fn record_llm_call(&self, tokens_in: u64, tokens_out: u64) {
        self.llm_calls.fetch_add(1, Ordering::SeqCst);
        self.llm_tokens_in.fetch_add(tokens_in, Ordering::SeqCst);
        self.llm_tokens_out.fetch_add(tokens_out, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            coder_trials_used: self.coder_trials_used.load(Ordering::SeqCst),
            automl_trials_used: self.automl_trials_used.load(Ordering::SeqCst),
            llm_calls: self.llm_calls.load(Ordering::SeqCst),
            llm_tokens_in: self.llm_tokens_in.load(Ordering::SeqCst),
            llm_tokens_out: self.llm_tokens_out.load(Ordering::SeqCst),
        }
    }
}

impl AddAssign for LedgerSnapshot {
    fn add_assign(&mut self, rhs: Self) {
        self.coder_trials_used += rhs.coder_trials_used;
        self.automl_trials_used += rhs.automl_trials_used;
        self.llm_calls += rhs.llm_calls;
        self.llm_tokens_in += rhs.llm_tokens_in;
        self.llm_tokens_out += rhs.llm_tokens_out;
    }
}
