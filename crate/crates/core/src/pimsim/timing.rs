//! DRAM command timing.
//!
//! One command may issue per tCCD on the shared bus. Activation is all-bank
//! (MAC power delivery covers it, so no tRRD/tFAW pacing between ACTs), a
//! column read waits tRCD after its activation, the next activation waits
//! tRC from the previous one and tRTP+tRP from the last column read, and
//! result reads start tRTP after the last column's data and serialize at
//! tCCD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdds::Command;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshConfig {
    /// Cycles between refresh windows.
    pub interval: u64,
    /// Idle cycles charged at the next row activation.
    pub penalty: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub t_ras: u64,
    pub t_rcd: u64,
    pub t_rrd: u64,
    pub t_rc: u64,
    pub t_rp: u64,
    pub t_ccd: u64,
    pub t_rtp: u64,
    pub t_wtr: u64,
    pub refresh: Option<RefreshConfig>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            t_ras: 24,
            t_rcd: 10,
            t_rrd: 4,
            t_rc: 34,
            t_rp: 10,
            t_ccd: 4,
            t_rtp: 5,
            t_wtr: 5,
            refresh: None,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t_ras, self.t_rcd, self.t_rrd, self.t_rc, self.t_rp, self.t_ccd, self.t_rtp,
            self.t_wtr,
        ];
        if all.iter().any(|&x| x < 1) {
            return Err(Error::invalid("all timing parameters must be at least 1"));
        }
        if self.t_rc < self.t_ras + self.t_rp {
            return Err(Error::invalid("tRC must cover tRAS + tRP"));
        }
        if let Some(r) = &self.refresh {
            if r.interval == 0 {
                return Err(Error::invalid("refresh interval must be positive"));
            }
        }
        Ok(())
    }
}

/// Issue-cycle bookkeeping for one command bus.
#[derive(Debug, Clone)]
pub struct TimingState {
    t: TimingConfig,
    clock: u64,
    last_act: Option<u64>,
    last_col: Option<u64>,
    last_issue: Option<u64>,
    refresh_next: u64,
}

impl TimingState {
    pub fn new(t: &TimingConfig) -> Self {
        TimingState {
            t: *t,
            clock: 0,
            last_act: None,
            last_col: None,
            last_issue: None,
            refresh_next: t.refresh.map_or(u64::MAX, |r| r.interval),
        }
    }

    fn bump(&mut self, at: u64) -> u64 {
        self.clock = at + self.t.t_ccd;
        self.last_issue = Some(at);
        at
    }

    pub fn issue_lgb(&mut self) -> u64 {
        let at = self.clock;
        self.bump(at)
    }

    pub fn issue_act(&mut self) -> u64 {
        let mut at = self.clock;
        if let Some(a) = self.last_act {
            at = at.max(a + self.t.t_rc);
        }
        if let Some(c) = self.last_col {
            at = at.max(c + self.t.t_rtp + self.t.t_rp);
        }
        if let Some(r) = self.t.refresh {
            if at >= self.refresh_next {
                at += r.penalty;
                self.refresh_next = at + r.interval;
            }
        }
        self.last_act = Some(at);
        self.bump(at)
    }

    pub fn issue_col(&mut self) -> u64 {
        let mut at = self.clock;
        if let Some(a) = self.last_act {
            at = at.max(a + self.t.t_rcd);
        }
        self.last_col = Some(at);
        self.bump(at)
    }

    pub fn issue_rd(&mut self) -> u64 {
        let mut at = self.clock;
        if let Some(c) = self.last_col {
            // result usable tCCD after the column's issue, then tRTP
            at = at.max(c + self.t.t_ccd + self.t.t_rtp);
        }
        self.bump(at)
    }

    /// Issue cycle of the last command; 0 for an empty stream.
    pub fn total_cycles(&self) -> u64 {
        self.last_issue.unwrap_or(0)
    }
}

/// Cycle count of a command sequence with no datapath attached. The ideal
/// machine models share command overheads with the simulator through this.
pub fn stream_cycles(commands: &[Command], t: &TimingConfig) -> u64 {
    let mut ts = TimingState::new(t);
    for c in commands {
        match c {
            Command::Lgb(_) => ts.issue_lgb(),
            Command::Act => ts.issue_act(),
            Command::Lidx(_) | Command::Cnb(_) | Command::Cbr(_) => ts.issue_col(),
            Command::Rd(_) => ts.issue_rd(),
        };
    }
    ts.total_cycles()
}
