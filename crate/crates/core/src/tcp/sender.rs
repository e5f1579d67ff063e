use serde::Serialize;

use super::{RtoTimer, TcpConfig, TcpFlavor};
use crate::engine::SimTime;
use crate::framing::{SeqRange, TcpSegment};
use crate::scoreboard::SendTable;

const DUP_ACK_THRESHOLD: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CongestionState {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

impl CongestionState {
    pub fn code(self) -> u8 {
        match self {
            CongestionState::SlowStart => 0,
            CongestionState::CongestionAvoidance => 1,
            CongestionState::FastRecovery => 2,
        }
    }
}

/// Notable transitions, recorded when event logging is enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SenderEvent {
    FastRetransmit { seq: u64, cwnd: u64, ssthresh: u64 },
    Retransmit { seq: u64 },
    PartialAck { ack: u64 },
    RecoveryExit { ack: u64, cwnd: u64 },
    Timeout { snd_una: u64, cwnd: u64, ssthresh: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SenderStats {
    pub segments_sent: u64,
    pub retransmissions: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
    pub acks_received: u64,
    pub dup_acks_received: u64,
}

/// Sending endpoint of a persistent source: it always has a full MSS of
/// data ready whenever the window allows.
#[derive(Clone, Debug)]
pub struct TcpSender {
    cfg: TcpConfig,
    vc: u32,
    mss: u64,
    cwnd: u64,
    ssthresh: u64,
    snd_una: u64,
    snd_nxt: u64,
    snd_max: u64,
    dup_acks: u32,
    in_recovery: bool,
    recover: u64,
    pipe: u64,
    ca_acks: u64,
    table: SendTable,
    rto: RtoTimer,
    rto_deadline: Option<SimTime>,
    // (end of timed segment, send time); cleared by any retransmission
    // covering it so that ambiguous samples are never taken.
    rtt_probe: Option<(u64, SimTime)>,
    stats: SenderStats,
    log: Option<Vec<(SimTime, SenderEvent)>>,
}

impl TcpSender {
    pub fn new(vc: u32, cfg: TcpConfig) -> Self {
        assert!(cfg.mss > 0, "mss must be positive");
        assert!(cfg.rcvwnd >= u64::from(cfg.mss), "receive window smaller than one segment");
        let mss = u64::from(cfg.mss);
        let ssthresh = cfg.initial_ssthresh.unwrap_or(cfg.rcvwnd).max(2 * mss);
        TcpSender {
            vc,
            mss,
            cwnd: mss,
            ssthresh,
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            dup_acks: 0,
            in_recovery: false,
            recover: 0,
            pipe: 0,
            ca_acks: 0,
            table: SendTable::new(),
            rto: RtoTimer::new(cfg.rto),
            rto_deadline: None,
            rtt_probe: None,
            stats: SenderStats::default(),
            log: None,
            cfg,
        }
    }

    pub fn enable_event_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn events(&self) -> &[(SimTime, SenderEvent)] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn flavor(&self) -> TcpFlavor {
        self.cfg.flavor
    }

    pub fn config(&self) -> &TcpConfig {
        &self.cfg
    }

    pub fn mss(&self) -> u64 {
        self.mss
    }

    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }

    pub fn snd_max(&self) -> u64 {
        self.snd_max
    }

    pub fn pipe(&self) -> u64 {
        self.pipe
    }

    pub fn recover(&self) -> u64 {
        self.recover
    }

    pub fn dup_acks(&self) -> u32 {
        self.dup_acks
    }

    pub fn in_recovery(&self) -> bool {
        self.in_recovery
    }

    pub fn table(&self) -> &SendTable {
        &self.table
    }

    pub fn rto_timer(&self) -> &RtoTimer {
        &self.rto
    }

    /// When the retransmission timer is due, if armed.
    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    pub fn stats(&self) -> &SenderStats {
        &self.stats
    }

    pub fn state(&self) -> CongestionState {
        if self.in_recovery {
            CongestionState::FastRecovery
        } else if self.cwnd < self.ssthresh {
            CongestionState::SlowStart
        } else {
            CongestionState::CongestionAvoidance
        }
    }

    /// Forces the congestion state; test scaffolding for scripted
    /// scenarios.
    pub fn set_window(&mut self, cwnd: u64, ssthresh: u64) {
        self.cwnd = cwnd.clamp(self.mss, self.cfg.rcvwnd);
        self.ssthresh = ssthresh.max(2 * self.mss);
    }

    fn record(&mut self, now: SimTime, ev: SenderEvent) {
        if let Some(log) = &mut self.log {
            log.push((now, ev));
        }
    }

    fn outstanding(&self) -> bool {
        self.snd_max > self.snd_una
    }

    fn cap_cwnd(&mut self) {
        self.cwnd = self.cwnd.clamp(self.mss, self.cfg.rcvwnd);
    }

    fn halve_window(&self) -> u64 {
        (self.cwnd / 2).max(2 * self.mss)
    }

    fn arm_rto(&mut self, now: SimTime) {
        self.rto_deadline = Some(now + self.rto.current());
    }

    fn emit(&mut self, now: SimTime, seq: u64, out: &mut Vec<TcpSegment>) {
        let retransmission = seq < self.snd_max;
        let end = seq + self.mss;
        if self.cfg.flavor == TcpFlavor::Sack {
            self.table.on_send(SeqRange::new(seq, end), retransmission);
        }
        if retransmission {
            self.stats.retransmissions += 1;
            self.record(now, SenderEvent::Retransmit { seq });
            if self.rtt_probe.is_some_and(|(probe_end, _)| probe_end > seq) {
                self.rtt_probe = None;
            }
        } else if self.rtt_probe.is_none() {
            self.rtt_probe = Some((end, now));
        }
        self.snd_max = self.snd_max.max(end);
        self.stats.segments_sent += 1;
        if self.rto_deadline.is_none() {
            self.arm_rto(now);
        }
        out.push(TcpSegment::data(self.vc, seq, self.cfg.mss));
    }

    // Next segment in sequence order at or after snd_nxt. SACK senders skip
    // segments the receiver already reported.
    fn next_sequential(&mut self) -> u64 {
        if self.cfg.flavor == TcpFlavor::Sack {
            while self.snd_nxt < self.snd_max && self.table.get(self.snd_nxt).is_some_and(|r| r.sacked) {
                self.snd_nxt += self.mss;
            }
        }
        self.snd_nxt
    }

    fn window_allows(&self, seq: u64, wnd: u64) -> bool {
        seq + self.mss <= self.snd_una + wnd
    }

    /// Emits as many segments as the current window (or, for SACK in
    /// recovery, `pipe`) permits.
    pub fn try_send(&mut self, now: SimTime, out: &mut Vec<TcpSegment>) {
        if self.cfg.flavor == TcpFlavor::Sack && self.in_recovery {
            while self.pipe < self.cwnd {
                if let Some(hole) = self.table.next_hole() {
                    self.emit(now, hole.start, out);
                } else {
                    let seq = self.next_sequential();
                    if !self.window_allows(seq, self.cfg.rcvwnd) {
                        break;
                    }
                    self.emit(now, seq, out);
                    self.snd_nxt = seq + self.mss;
                }
                self.pipe += self.mss;
            }
            return;
        }
        let wnd = self.cwnd.min(self.cfg.rcvwnd);
        loop {
            let seq = self.next_sequential();
            if !self.window_allows(seq, wnd) {
                break;
            }
            self.emit(now, seq, out);
            self.snd_nxt = seq + self.mss;
        }
    }

    /// Congestion-avoidance increment for one new ACK, in bytes.
    ///
    /// Without ACK counting this is the integer `MSS * MSS / cwnd`, which is
    /// zero once cwnd exceeds MSS squared. With ACK counting, ACKs are
    /// accumulated until `N * MSS * MSS > cwnd` and `N * MSS * MSS / cwnd`
    /// is added at once.
    pub fn ca_increment(&mut self) -> u64 {
        let mss2 = self.mss * self.mss;
        if !self.cfg.ack_counting {
            return mss2 / self.cwnd;
        }
        self.ca_acks += 1;
        let credit = self.ca_acks * mss2;
        if credit > self.cwnd {
            self.ca_acks = 0;
            credit / self.cwnd
        } else {
            0
        }
    }

    /// Processes an ACK from the receiver.
    pub fn on_ack(&mut self, now: SimTime, ack: &TcpSegment, out: &mut Vec<TcpSegment>) {
        self.stats.acks_received += 1;
        assert!(
            ack.ack <= self.snd_max,
            "vc {}: ACK {} beyond highest sequence sent {}",
            self.vc,
            ack.ack,
            self.snd_max
        );
        if self.cfg.flavor == TcpFlavor::Sack && !ack.sack_blocks.is_empty() {
            self.table.apply_sack(&ack.sack_blocks);
        }
        if ack.ack > self.snd_una {
            self.on_new_ack(now, ack.ack, out);
        } else if ack.ack == self.snd_una && ack.payload_len == 0 && self.outstanding() {
            self.on_dup_ack(now, out);
        }
    }

    pub fn on_new_ack(&mut self, now: SimTime, ack: u64, out: &mut Vec<TcpSegment>) {
        debug_assert!(ack > self.snd_una);
        let acked = ack - self.snd_una;
        self.snd_una = ack;
        self.snd_nxt = self.snd_nxt.max(ack);
        self.table.on_cumulative_ack(ack);
        if let Some((probe_end, sent)) = self.rtt_probe {
            if ack >= probe_end {
                self.rto.sample(now - sent);
                self.rtt_probe = None;
            }
        }
        self.dup_acks = 0;

        if self.in_recovery {
            match self.cfg.flavor {
                TcpFlavor::NewReno => self.on_partial_or_full_ack(now, ack, acked, out),
                TcpFlavor::Sack if self.cfg.sack_uses_recover => {
                    self.on_partial_or_full_ack(now, ack, acked, out)
                }
                _ => self.exit_recovery(now, ack),
            }
        } else {
            let inc = if self.cwnd < self.ssthresh { self.mss } else { self.ca_increment() };
            self.cwnd += inc;
            self.cap_cwnd();
        }

        self.rto_deadline = None;
        if self.outstanding() {
            self.arm_rto(now);
        }
        self.try_send(now, out);
    }

    fn exit_recovery(&mut self, now: SimTime, ack: u64) {
        self.in_recovery = false;
        self.cwnd = self.ssthresh;
        self.cap_cwnd();
        self.pipe = 0;
        self.ca_acks = 0;
        let cwnd = self.cwnd;
        self.record(now, SenderEvent::RecoveryExit { ack, cwnd });
    }

    /// In-recovery new ACK for NewReno and SACK: a full ACK (at or beyond
    /// `recover`) ends recovery, a partial ACK keeps it going.
    pub fn on_partial_or_full_ack(&mut self, now: SimTime, ack: u64, acked: u64, out: &mut Vec<TcpSegment>) {
        debug_assert!(self.in_recovery);
        if ack >= self.recover {
            self.exit_recovery(now, ack);
            return;
        }
        self.record(now, SenderEvent::PartialAck { ack });
        match self.cfg.flavor {
            TcpFlavor::NewReno => {
                let seq = self.snd_una;
                self.emit(now, seq, out);
                // Deflate by the amount acknowledged, then add back the
                // segment just retransmitted.
                self.cwnd = self.cwnd.saturating_sub(acked) + self.mss;
                self.cap_cwnd();
            }
            TcpFlavor::Sack => {
                // The retransmission left the pipe and the original it
                // replaced is now known lost.
                self.pipe = self.pipe.saturating_sub(2 * self.mss);
            }
            _ => unreachable!("partial ACKs only apply to NewReno and SACK"),
        }
    }

    pub fn on_dup_ack(&mut self, now: SimTime, out: &mut Vec<TcpSegment>) {
        self.dup_acks += 1;
        self.stats.dup_acks_received += 1;
        match self.cfg.flavor {
            TcpFlavor::Vanilla => {}
            TcpFlavor::Reno | TcpFlavor::NewReno => {
                if self.in_recovery {
                    self.cwnd += self.mss;
                    self.cap_cwnd();
                    self.try_send(now, out);
                } else if self.dup_acks == DUP_ACK_THRESHOLD {
                    self.ssthresh = self.halve_window();
                    let seq = self.snd_una;
                    self.record(now, SenderEvent::FastRetransmit { seq, cwnd: self.cwnd, ssthresh: self.ssthresh });
                    self.stats.fast_retransmits += 1;
                    self.emit(now, seq, out);
                    self.cwnd = self.ssthresh + 3 * self.mss;
                    self.cap_cwnd();
                    self.in_recovery = true;
                    self.recover = self.snd_max;
                    self.ca_acks = 0;
                    self.try_send(now, out);
                }
            }
            TcpFlavor::Sack => {
                if self.in_recovery {
                    self.pipe = self.pipe.saturating_sub(self.mss);
                    self.try_send(now, out);
                } else if self.dup_acks == DUP_ACK_THRESHOLD {
                    self.ssthresh = self.halve_window();
                    let seq = self.snd_una;
                    self.record(now, SenderEvent::FastRetransmit { seq, cwnd: self.cwnd, ssthresh: self.ssthresh });
                    self.stats.fast_retransmits += 1;
                    self.emit(now, seq, out);
                    self.pipe = self.cwnd.saturating_sub(3 * self.mss);
                    self.cwnd = self.ssthresh;
                    self.in_recovery = true;
                    self.recover = self.snd_max;
                    self.ca_acks = 0;
                    self.try_send(now, out);
                }
            }
        }
    }

    /// Retransmission timeout: collapse to one segment and go back to
    /// `snd_una`.
    pub fn on_rto(&mut self, now: SimTime, out: &mut Vec<TcpSegment>) {
        self.rto_deadline = None;
        if !self.outstanding() {
            return;
        }
        self.ssthresh = self.halve_window();
        self.record(now, SenderEvent::Timeout { snd_una: self.snd_una, cwnd: self.cwnd, ssthresh: self.ssthresh });
        self.cwnd = self.mss;
        self.in_recovery = false;
        self.dup_acks = 0;
        self.pipe = 0;
        self.ca_acks = 0;
        self.table.reset();
        self.snd_nxt = self.snd_una;
        self.rtt_probe = None;
        self.rto.back_off();
        self.stats.timeouts += 1;
        self.try_send(now, out);
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let v = self.vc;
        if !(self.snd_una <= self.snd_nxt && self.snd_nxt <= self.snd_max) {
            return Err(format!(
                "vc {v}: sequence order violated una={} nxt={} max={}",
                self.snd_una, self.snd_nxt, self.snd_max
            ));
        }
        if self.cwnd < self.mss || self.cwnd > self.cfg.rcvwnd {
            return Err(format!("vc {v}: cwnd {} outside [mss, rcvwnd]", self.cwnd));
        }
        if self.ssthresh < 2 * self.mss {
            return Err(format!("vc {v}: ssthresh {} below 2 MSS", self.ssthresh));
        }
        if self.snd_max - self.snd_una > self.cfg.rcvwnd {
            return Err(format!("vc {v}: {} bytes outstanding exceeds rcvwnd", self.snd_max - self.snd_una));
        }
        if self.cfg.flavor == TcpFlavor::Sack {
            if let Some(first) = self.table.records().next() {
                if first.range.start != self.snd_una {
                    return Err(format!("vc {v}: table starts at {} not snd_una {}", first.range.start, self.snd_una));
                }
            }
        }
        Ok(())
    }
}
