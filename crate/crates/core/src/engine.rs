//! Deterministic discrete-event core.
//!
//! The queue is a min-heap keyed by `(fire_at, seq)`. `seq` is a monotone
//! insertion counter, so events scheduled for the same instant fire in the
//! order they were scheduled. Nothing here depends on wall-clock time or on
//! hash iteration order, which makes every run reproducible.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in integer nanoseconds since the start of the run.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}s", self.as_secs_f64())
    }
}

/// Exact serialization clock for a link of fixed bit rate.
///
/// Transmission times are accumulated in units of `1 / rate_bps` nanoseconds,
/// so a long train of 424-bit cells at 155.52 Mbps never drifts from the
/// exact rational schedule. Only the reported completion instants are
/// rounded (up) to whole nanoseconds.
#[derive(Clone, Debug)]
pub struct TxClock {
    rate_bps: u64,
    busy_until_scaled: u128,
}

impl TxClock {
    pub fn new(rate_bps: u64) -> Self {
        assert!(rate_bps > 0, "link rate must be positive");
        TxClock { rate_bps, busy_until_scaled: 0 }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    /// Serializes `bits` starting no earlier than `now`; returns the instant
    /// the last bit leaves the transmitter.
    pub fn transmit(&mut self, now: SimTime, bits: u64) -> SimTime {
        let rate = u128::from(self.rate_bps);
        let start = self.busy_until_scaled.max(u128::from(now.0) * rate);
        self.busy_until_scaled = start + u128::from(bits) * 1_000_000_000;
        SimTime(self.busy_until_scaled.div_ceil(rate) as u64)
    }

    /// Instant the transmitter becomes idle.
    pub fn busy_until(&self) -> SimTime {
        SimTime(self.busy_until_scaled.div_ceil(u128::from(self.rate_bps)) as u64)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled in the past: fire_at={fire_at} < clock={now}")]
    InPast { fire_at: SimTime, now: SimTime },
    #[error("run_until target {target} precedes clock {now}")]
    RunBackwards { target: SimTime, now: SimTime },
}

/// Handle to a scheduled event, usable with [`EventQueue::cancel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<E> {
    fire_at: SimTime,
    seq: u64,
    tracked: bool,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed so that `BinaryHeap` pops the earliest (fire_at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Priority event queue with a virtual clock.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: SimTime,
    next_seq: u64,
    // Tracked events that have neither fired nor been cancelled.
    live: HashSet<u64>,
    fired: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            live: HashSet::new(),
            fired: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Total number of events fired so far.
    pub fn fired(&self) -> u64 {
        self.fired
    }

    /// Entries still in the heap, including cancelled ones not yet skipped.
    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    fn push(&mut self, fire_at: SimTime, payload: E, tracked: bool) -> Result<u64, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::InPast { fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { fire_at, seq, tracked, payload });
        Ok(seq)
    }

    /// Schedules a cancellable event.
    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<EventHandle, EngineError> {
        let seq = self.push(fire_at, payload, true)?;
        self.live.insert(seq);
        Ok(EventHandle(seq))
    }

    /// Schedules a fire-and-forget event. Cheaper than [`schedule`] because
    /// no cancellation state is kept; used for the per-cell traffic.
    ///
    /// [`schedule`]: EventQueue::schedule
    pub fn post(&mut self, fire_at: SimTime, payload: E) -> Result<(), EngineError> {
        self.push(fire_at, payload, false).map(|_| ())
    }

    /// Returns true iff the event had not fired yet and now never will.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0)
    }

    /// Pops the next live event with `fire_at <= t_end`, advancing the clock
    /// to its firing time.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        loop {
            let head = self.heap.peek()?;
            if head.fire_at > t_end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked entry");
            if entry.tracked && !self.live.remove(&entry.seq) {
                continue;
            }
            debug_assert!(entry.fire_at >= self.now, "clock would run backwards");
            self.now = entry.fire_at;
            self.fired += 1;
            return Some((entry.fire_at, entry.payload));
        }
    }

    /// Fires every event with `fire_at <= t_end` in `(fire_at, seq)` order,
    /// then sets the clock to `t_end`. Returns the number of events fired.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<u64, EngineError>
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        if t_end < self.now {
            return Err(EngineError::RunBackwards { target: t_end, now: self.now });
        }
        let before = self.fired;
        while let Some((t, ev)) = self.pop_until(t_end) {
            handler(self, t, ev);
        }
        self.now = t_end;
        Ok(self.fired - before)
    }

    /// Advances the clock without firing anything. Used after a
    /// `pop_until` loop driven by the caller.
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), EngineError> {
        if t < self.now {
            return Err(EngineError::RunBackwards { target: t, now: self.now });
        }
        if let Some(head) = self.heap.peek() {
            debug_assert!(
                head.fire_at > t || (head.tracked && !self.live.contains(&head.seq)),
                "advancing past a pending event"
            );
        }
        self.now = t;
        Ok(())
    }

    /// Drops every pending event.
    pub fn clear(&mut self) {
        self.heap.clear();
        self.live.clear();
    }

    /// Iterates over payloads still pending (live events only), in no
    /// particular order.
    pub fn pending_payloads(&self) -> impl Iterator<Item = &E> {
        self.heap
            .iter()
            .filter(|e| !e.tracked || self.live.contains(&e.seq))
            .map(|e| &e.payload)
    }
}
