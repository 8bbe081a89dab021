//! Limited-MLP core proxy: non-memory instructions retire at a fixed CPI,
//! at most `limit` memory operations are in flight, and they retire in
//! program order.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct CoreModel {
    cpi_milli: u64,
    limit: usize,
    /// Dispatch clock in thousandths of a cycle.
    milli: u64,
    /// Retire times of in-flight memory operations, oldest first.
    window: VecDeque<u64>,
    last_retire: u64,
    pub instructions: u64,
}

impl CoreModel {
    pub fn new(cpi_milli: u64, limit: usize) -> Self {
        CoreModel {
            cpi_milli,
            limit: limit.max(1),
            milli: 0,
            window: VecDeque::with_capacity(limit),
            last_retire: 0,
            instructions: 0,
        }
    }

    /// Current dispatch cycle.
    pub fn now(&self) -> u64 {
        self.milli / 1000
    }

    /// Dispatches `n` instructions.
    pub fn advance(&mut self, n: u64) {
        self.instructions += n;
        self.milli += n * self.cpi_milli;
    }

    /// Waits for a window slot and returns the issue cycle of the next
    /// memory operation.
    pub fn issue(&mut self) -> u64 {
        while self.window.front().is_some_and(|&r| r * 1000 <= self.milli) {
            self.window.pop_front();
        }
        if self.window.len() >= self.limit {
            let oldest = self.window.pop_front().expect("window is full");
            self.milli = self.milli.max(oldest * 1000);
        }
        self.now()
    }

    /// Records the data-ready cycle of the operation issued last.
    pub fn complete(&mut self, done: u64) {
        let retire = done.max(self.last_retire);
        self.last_retire = retire;
        self.window.push_back(retire);
    }

    /// Drains the window and stalls dispatch for `penalty` cycles.
    pub fn serialize(&mut self, penalty: u64) {
        self.milli = self.milli.max(self.last_retire * 1000) + penalty * 1000;
        self.window.clear();
    }

    /// Cycles until every dispatched instruction has retired.
    pub fn cycles(&self) -> u64 {
        self.milli.div_ceil(1000).max(self.last_retire)
    }
}
