//! Output-buffered ATM switch port with per-VC accounting.
//!
//! Each port is a single FIFO of at most `K` cells feeding one link. Drop
//! decisions are made at the first cell of every frame and bind the rest of
//! the frame; cells only ever leave the buffer by being transmitted.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::Serialize;

use crate::engine::{SimTime, TxClock};
use crate::framing::{Cell, CELL_BITS};
use crate::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropPolicy {
    /// Plain UBR: cells are dropped only when the buffer is full.
    TailDrop,
    /// Early Packet Discard: new frames are refused once X > R * K.
    Epd { r: Rational },
    SelectiveDrop { r: Rational, z: Rational },
    /// Fair Buffer Allocation.
    Fba { r: Rational, z: Rational },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("R must lie strictly between 0 and 1, got {0}")]
    BadR(Rational),
    #[error("Z must lie in (0, 1], got {0}")]
    BadZ(Rational),
    #[error("unknown drop policy '{0}'")]
    UnknownName(String),
}

impl DropPolicy {
    pub const NAMES: [&'static str; 4] = ["tail_drop", "epd", "selective_drop", "fba"];

    pub fn default_r() -> Rational {
        Ratio::new(9, 10)
    }

    pub fn default_z() -> Rational {
        Ratio::new(4, 5)
    }

    /// Builds a policy from its name with the given thresholds.
    pub fn from_name(name: &str, r: Rational, z: Rational) -> Result<Self, PolicyError> {
        let p = match name.to_ascii_lowercase().as_str() {
            "tail_drop" | "taildrop" | "ubr" => DropPolicy::TailDrop,
            "epd" => DropPolicy::Epd { r },
            "selective_drop" | "sd" | "seldrop" => DropPolicy::SelectiveDrop { r, z },
            "fba" => DropPolicy::Fba { r, z },
            other => return Err(PolicyError::UnknownName(other.to_string())),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn name(&self) -> &'static str {
        match self {
            DropPolicy::TailDrop => "tail_drop",
            DropPolicy::Epd { .. } => "epd",
            DropPolicy::SelectiveDrop { .. } => "selective_drop",
            DropPolicy::Fba { .. } => "fba",
        }
    }

    pub fn r(&self) -> Option<Rational> {
        match *self {
            DropPolicy::TailDrop => None,
            DropPolicy::Epd { r } | DropPolicy::SelectiveDrop { r, .. } | DropPolicy::Fba { r, .. } => Some(r),
        }
    }

    pub fn z(&self) -> Option<Rational> {
        match *self {
            DropPolicy::SelectiveDrop { z, .. } | DropPolicy::Fba { z, .. } => Some(z),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if let Some(r) = self.r() {
            if *r.numer() == 0 || r >= Ratio::from_integer(1) {
                return Err(PolicyError::BadR(r));
            }
        }
        if let Some(z) = self.z() {
            if *z.numer() == 0 || z > Ratio::from_integer(1) {
                return Err(PolicyError::BadZ(z));
            }
        }
        Ok(())
    }

    /// The occupancy threshold in cells, `round(R * K)` (halves round up).
    pub fn r_cells(&self, k: u64) -> Option<u64> {
        self.r().map(|r| {
            let num = u128::from(*r.numer()) * u128::from(k);
            let den = u128::from(*r.denom());
            ((2 * num + den) / (2 * den)) as u64
        })
    }
}

impl fmt::Display for DropPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DropPolicy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DropPolicy::from_name(s, DropPolicy::default_r(), DropPolicy::default_z())
    }
}

/// `X > R` and `Yi * Na / X > Z`, by integer cross-multiplication.
pub fn selective_drop_test(x: u64, r_cells: u64, yi: u64, na: u64, z: Rational) -> bool {
    if x <= r_cells {
        return false;
    }
    let lhs = u128::from(yi) * u128::from(na) * u128::from(*z.denom());
    let rhs = u128::from(*z.numer()) * u128::from(x);
    lhs > rhs
}

/// `X > R` and `Yi * Na / X > Z * (K - R) / (X - R)`.
pub fn fba_test(x: u64, k: u64, r_cells: u64, yi: u64, na: u64, z: Rational) -> bool {
    if x <= r_cells {
        return false;
    }
    let lhs = u128::from(yi) * u128::from(na) * u128::from(x - r_cells) * u128::from(*z.denom());
    let rhs = u128::from(*z.numer()) * u128::from(k.saturating_sub(r_cells)) * u128::from(x);
    lhs > rhs
}

/// Buffer occupancy: total `X`, per-VC `Y[i]` and the active count `Na`.
#[derive(Clone, Debug)]
pub struct VcLedger {
    k: u64,
    x: u64,
    y: Vec<u64>,
    na: u64,
}

impl VcLedger {
    pub fn new(k: u64) -> Self {
        VcLedger { k, x: 0, y: Vec::new(), na: 0 }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn x(&self) -> u64 {
        self.x
    }

    pub fn na(&self) -> u64 {
        self.na
    }

    pub fn y(&self, vc: u32) -> u64 {
        self.y.get(vc as usize).copied().unwrap_or(0)
    }

    pub fn is_full(&self) -> bool {
        self.x >= self.k
    }

    fn enqueue(&mut self, vc: u32) {
        let i = vc as usize;
        if i >= self.y.len() {
            self.y.resize(i + 1, 0);
        }
        if self.y[i] == 0 {
            self.na += 1;
        }
        self.y[i] += 1;
        self.x += 1;
    }

    fn dequeue(&mut self, vc: u32) {
        let y = &mut self.y[vc as usize];
        assert!(*y > 0, "dequeue from empty vc {vc}");
        *y -= 1;
        if *y == 0 {
            self.na -= 1;
        }
        self.x -= 1;
    }

    pub fn check(&self) -> Result<(), String> {
        let sum: u64 = self.y.iter().sum();
        let active = self.y.iter().filter(|&&y| y > 0).count() as u64;
        if sum != self.x {
            return Err(format!("X = {} but sum of Y = {sum}", self.x));
        }
        if self.x > self.k {
            return Err(format!("X = {} exceeds K = {}", self.x, self.k));
        }
        if active != self.na {
            return Err(format!("Na = {} but {active} VCs are active", self.na));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DropDecision {
    Accept,
    DropCellOnly,
    DropWholeFrame,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum DropReason {
    /// Arrival at a full buffer.
    Overflow,
    Epd,
    SelectiveDrop,
    Fba,
    /// Injected by a test loss script.
    Scripted,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            DropReason::Overflow => "overflow",
            DropReason::Epd => "epd",
            DropReason::SelectiveDrop => "selective_drop",
            DropReason::Fba => "fba",
            DropReason::Scripted => "scripted",
        }
    }
}

/// One drop event. A frame-level decision produces a single row for the
/// whole frame; overflow of an individual cell produces one row per cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DropRecord {
    pub time: SimTime,
    pub vc: u32,
    pub frame_id: u64,
    pub reason: DropReason,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
enum FrameState {
    #[default]
    Idle,
    Accepting(u64),
    Discarding(u64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VcCounters {
    pub cells_in: u64,
    pub cells_out: u64,
    pub cells_dropped: u64,
}

/// Result of offering one cell to a port.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arrival {
    pub decision: DropDecision,
    /// When the cell finishes transmission on the outgoing link.
    pub departs: Option<SimTime>,
}

/// One switch output port: FIFO buffer, drop policy and outgoing link.
///
/// Departures are applied lazily: the buffer is brought up to date with
/// [`OutputPort::drain`] before each arrival or observation, which is exact
/// because a FIFO's departure instants are fixed at enqueue time.
#[derive(Clone, Debug)]
pub struct OutputPort {
    policy: DropPolicy,
    r_cells: u64,
    ledger: VcLedger,
    frames: Vec<FrameState>,
    fifo: VecDeque<(SimTime, u32)>,
    tx: TxClock,
    counters: Vec<VcCounters>,
    drop_log: Option<Vec<DropRecord>>,
    frames_discarded: u64,
    peak_x: u64,
}

impl OutputPort {
    pub fn new(policy: DropPolicy, k: u64, rate_bps: u64) -> Self {
        OutputPort {
            policy,
            r_cells: policy.r_cells(k).unwrap_or(k),
            ledger: VcLedger::new(k),
            frames: Vec::new(),
            fifo: VecDeque::new(),
            tx: TxClock::new(rate_bps),
            counters: Vec::new(),
            drop_log: None,
            frames_discarded: 0,
            peak_x: 0,
        }
    }

    /// A port that never drops.
    pub fn unbounded(rate_bps: u64) -> Self {
        Self::new(DropPolicy::TailDrop, u64::MAX, rate_bps)
    }

    pub fn enable_drop_log(&mut self) {
        self.drop_log.get_or_insert_with(Vec::new);
    }

    pub fn drop_log(&self) -> &[DropRecord] {
        self.drop_log.as_deref().unwrap_or(&[])
    }

    pub fn policy(&self) -> DropPolicy {
        self.policy
    }

    pub fn r_cells(&self) -> u64 {
        self.r_cells
    }

    pub fn ledger(&self) -> &VcLedger {
        &self.ledger
    }

    pub fn peak_occupancy(&self) -> u64 {
        self.peak_x
    }

    pub fn frames_discarded(&self) -> u64 {
        self.frames_discarded
    }

    pub fn counters(&self, vc: u32) -> VcCounters {
        self.counters.get(vc as usize).copied().unwrap_or_default()
    }

    pub fn total_counters(&self) -> VcCounters {
        self.counters.iter().fold(VcCounters::default(), |a, c| VcCounters {
            cells_in: a.cells_in + c.cells_in,
            cells_out: a.cells_out + c.cells_out,
            cells_dropped: a.cells_dropped + c.cells_dropped,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    /// Removes every cell whose transmission has completed by `now`.
    pub fn drain(&mut self, now: SimTime) {
        while let Some(&(t, vc)) = self.fifo.front() {
            if t > now {
                break;
            }
            self.fifo.pop_front();
            self.ledger.dequeue(vc);
            self.counters[vc as usize].cells_out += 1;
        }
    }

    fn grow(&mut self, vc: u32) {
        let n = vc as usize + 1;
        if self.frames.len() < n {
            self.frames.resize(n, FrameState::Idle);
            self.counters.resize(n, VcCounters::default());
        }
    }

    fn log(&mut self, time: SimTime, cell: &Cell, reason: DropReason) {
        if let Some(log) = self.drop_log.as_mut() {
            log.push(DropRecord { time, vc: cell.vc, frame_id: cell.frame_id, reason });
        }
    }

    // Policy verdict for the first cell of a new frame.
    fn frame_test(&self, vc: u32) -> Option<DropReason> {
        let x = self.ledger.x();
        match self.policy {
            DropPolicy::TailDrop => None,
            DropPolicy::Epd { .. } => (x > self.r_cells).then_some(DropReason::Epd),
            DropPolicy::SelectiveDrop { z, .. } => {
                selective_drop_test(x, self.r_cells, self.ledger.y(vc), self.ledger.na(), z)
                    .then_some(DropReason::SelectiveDrop)
            }
            DropPolicy::Fba { z, .. } => {
                fba_test(x, self.ledger.k(), self.r_cells, self.ledger.y(vc), self.ledger.na(), z)
                    .then_some(DropReason::Fba)
            }
        }
    }

    /// Offers one cell at `now`. `forced` condemns the cell's frame
    /// regardless of occupancy (scripted losses); it only has an effect on
    /// the first cell of a frame.
    pub fn arrive(&mut self, now: SimTime, cell: Cell, forced: bool) -> Arrival {
        self.drain(now);
        let vc = cell.vc;
        self.grow(vc);
        self.counters[vc as usize].cells_in += 1;

        let state = self.frames[vc as usize];
        let decision = match state {
            FrameState::Discarding(f) if f == cell.frame_id => DropDecision::DropWholeFrame,
            FrameState::Accepting(f) if f == cell.frame_id => {
                if self.ledger.is_full() {
                    self.log(now, &cell, DropReason::Overflow);
                    DropDecision::DropCellOnly
                } else {
                    DropDecision::Accept
                }
            }
            _ => {
                let frame_aware = self.policy != DropPolicy::TailDrop;
                let reason = if forced {
                    Some(DropReason::Scripted)
                } else if self.ledger.is_full() {
                    Some(DropReason::Overflow)
                } else {
                    self.frame_test(vc)
                };
                match reason {
                    None => {
                        self.frames[vc as usize] = FrameState::Accepting(cell.frame_id);
                        DropDecision::Accept
                    }
                    Some(r) => {
                        self.log(now, &cell, r);
                        if frame_aware || r == DropReason::Scripted {
                            self.frames[vc as usize] = FrameState::Discarding(cell.frame_id);
                            self.frames_discarded += 1;
                            DropDecision::DropWholeFrame
                        } else {
                            self.frames[vc as usize] = FrameState::Accepting(cell.frame_id);
                            DropDecision::DropCellOnly
                        }
                    }
                }
            }
        };
        if cell.eom {
            self.frames[vc as usize] = FrameState::Idle;
        }

        if decision != DropDecision::Accept {
            self.counters[vc as usize].cells_dropped += 1;
            return Arrival { decision, departs: None };
        }
        self.ledger.enqueue(vc);
        self.peak_x = self.peak_x.max(self.ledger.x());
        let departs = self.tx.transmit(now, CELL_BITS);
        self.fifo.push_back((departs, vc));
        Arrival { decision, departs: Some(departs) }
    }

    pub fn check(&self) -> Result<(), String> {
        self.ledger.check()?;
        if self.fifo.len() as u64 != self.ledger.x() {
            return Err(format!("fifo holds {} cells but X = {}", self.fifo.len(), self.ledger.x()));
        }
        for (vc, c) in self.counters.iter().enumerate() {
            let queued = self.ledger.y(vc as u32);
            if c.cells_in != c.cells_out + c.cells_dropped + queued {
                return Err(format!(
                    "vc {vc}: {} in != {} out + {} dropped + {queued} queued",
                    c.cells_in, c.cells_out, c.cells_dropped
                ));
            }
        }
        Ok(())
    }
}
