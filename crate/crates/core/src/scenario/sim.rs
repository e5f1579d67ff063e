use std::collections::HashSet;

use crate::engine::{EngineError, EventQueue, SimTime, TxClock};
use crate::framing::{max_goodput, Cell, Channel, Direction, TcpSegment, CELL_BITS};
use crate::metrics::{efficiency, fairness, RunResult, Trace};
use crate::switch::{DropRecord, OutputPort};
use crate::tcp::{CongestionState, TcpConfig, TcpReceiver, TcpSender};
use crate::Real;

use super::{ScenarioConfig, ScenarioError};

const PROBE_FRAME: u64 = u64::MAX;
const DEFAULT_SAMPLE: SimTime = SimTime::from_millis(10);

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ScenarioError),
    #[error("invariant violated at {time}: {message}")]
    Invariant { time: SimTime, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Node {
    SwitchA,
    SwitchB,
    DestHost,
    SrcHost,
}

#[derive(Clone, Copy, Debug)]
enum Ev {
    Cell(Node, Cell),
    Start(u32),
    Rto(u32),
    Sample,
}

struct Tracing {
    trace: Trace,
    // Congestion state, retransmission and timeout counts at the last row.
    last: Vec<(CongestionState, u64, u64)>,
}

fn marker(s: &TcpSender) -> (CongestionState, u64, u64) {
    (s.state(), s.stats().retransmissions, s.stats().timeouts)
}

/// The N-source configuration: every source has its own access link into
/// switch A, all data shares the A-to-B backbone, and switch B fans out to
/// one destination per source. ACKs take the reverse path.
pub struct Simulation {
    cfg: ScenarioConfig,
    q: EventQueue<Ev>,
    senders: Vec<TcpSender>,
    receivers: Vec<TcpReceiver>,
    data_ch: Vec<Channel>,
    ack_ch: Vec<Channel>,
    src_nic: Vec<TxClock>,
    dst_nic: Vec<TxClock>,
    a_data: OutputPort,
    a_ack: Vec<OutputPort>,
    b_data: Vec<OutputPort>,
    b_ack: OutputPort,
    // Time of the live RTO event per source; older events are stale.
    rto_pending: Vec<Option<SimTime>>,
    scripted: HashSet<(u32, u64)>,
    injected: Vec<u64>,
    arrived: Vec<u64>,
    first_send: Vec<Option<SimTime>>,
    partial_frames: u64,
    sample_period: SimTime,
    tracing: Option<Tracing>,
    paranoid: bool,
    draining: bool,
    probe_rtt: Option<SimTime>,
    out: Vec<TcpSegment>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let policy = cfg.policy().expect("validated");
        let n = cfg.n_sources as usize;
        let rate = cfg.effective_rate_bps();
        let k = cfg.buffer_cells;
        let mut tcp = TcpConfig::new(cfg.flavor, cfg.mss, cfg.rcvwnd());
        tcp.ack_counting = cfg.ack_counting;
        tcp.rto.granularity = cfg.rto_granularity;
        tcp.initial_ssthresh = cfg.initial_ssthresh;
        let sack = cfg.flavor == crate::tcp::TcpFlavor::Sack;
        let mut q = EventQueue::new();
        for (i, t) in cfg.start_times.iter().enumerate() {
            q.post(*t, Ev::Start(i as u32))?;
        }
        q.post(SimTime::ZERO, Ev::Sample)?;
        Ok(Simulation {
            q,
            senders: (0..n as u32).map(|i| TcpSender::new(i, tcp.clone())).collect(),
            receivers: (0..n as u32).map(|i| TcpReceiver::new(i, sack)).collect(),
            data_ch: (0..n as u32).map(|i| Channel::new(i, Direction::Data)).collect(),
            ack_ch: (0..n as u32).map(|i| Channel::new(i, Direction::Ack)).collect(),
            src_nic: vec![TxClock::new(rate); n],
            dst_nic: vec![TxClock::new(rate); n],
            a_data: OutputPort::new(policy, k, rate),
            a_ack: vec![OutputPort::new(policy, k, rate); n],
            b_data: vec![OutputPort::new(policy, k, rate); n],
            b_ack: OutputPort::new(policy, k, rate),
            rto_pending: vec![None; n],
            scripted: HashSet::new(),
            injected: vec![0; n],
            arrived: vec![0; n],
            first_send: vec![None; n],
            partial_frames: 0,
            sample_period: DEFAULT_SAMPLE,
            tracing: None,
            paranoid: false,
            draining: false,
            probe_rtt: None,
            out: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.q.now()
    }

    pub fn events_fired(&self) -> u64 {
        self.q.fired()
    }

    pub fn sender(&self, i: u32) -> &TcpSender {
        &self.senders[i as usize]
    }

    pub fn receiver(&self, i: u32) -> &TcpReceiver {
        &self.receivers[i as usize]
    }

    /// Switch A's port onto the shared backbone link.
    pub fn bottleneck(&self) -> &OutputPort {
        &self.a_data
    }

    /// Frames that reached a host with some, but not all, of their cells.
    pub fn partial_frames(&self) -> u64 {
        self.partial_frames
    }

    pub fn first_send_time(&self, i: u32) -> Option<SimTime> {
        self.first_send[i as usize]
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.tracing.as_ref().map(|t| &t.trace)
    }

    pub fn drop_log(&self) -> &[DropRecord] {
        self.a_data.drop_log()
    }

    /// Checks every switch port after every cell event, not just at samples.
    pub fn set_paranoid(&mut self, on: bool) {
        self.paranoid = on;
    }

    pub fn enable_drop_log(&mut self) {
        self.a_data.enable_drop_log();
    }

    pub fn enable_event_log(&mut self) {
        for s in &mut self.senders {
            s.enable_event_log();
        }
    }

    /// Records `time_ns,series,value` rows every `period`, at each
    /// congestion-state change and at each retransmission.
    pub fn enable_trace(&mut self, period: SimTime) {
        assert!(period > SimTime::ZERO, "trace period must be positive");
        self.sample_period = period;
        self.tracing = Some(Tracing {
            trace: Trace::new(),
            last: self.senders.iter().map(marker).collect(),
        });
    }

    /// Drops the next transmission of the segment starting at `seq` on
    /// `vc`, at the bottleneck port.
    pub fn script_loss(&mut self, vc: u32, seq: u64) {
        self.scripted.insert((vc, seq));
    }

    fn all_ports(&self) -> impl Iterator<Item = &OutputPort> {
        std::iter::once(&self.a_data)
            .chain(std::iter::once(&self.b_ack))
            .chain(self.a_ack.iter())
            .chain(self.b_data.iter())
    }

    fn send(&mut self, now: SimTime, dir: Direction, i: usize, seg: TcpSegment) -> Result<(), SimError> {
        let (ch, nic, next) = match dir {
            Direction::Data => (&mut self.data_ch[i], &mut self.src_nic[i], Node::SwitchA),
            Direction::Ack => (&mut self.ack_ch[i], &mut self.dst_nic[i], Node::SwitchB),
        };
        let burst = ch.encapsulate(seg);
        for cell in burst.cells() {
            let t = nic.transmit(now, CELL_BITS);
            self.q.post(t + self.cfg.access_delay, Ev::Cell(next, cell))?;
        }
        self.injected[i] += u64::from(burst.n_cells);
        Ok(())
    }

    fn flush(&mut self, now: SimTime, i: usize) -> Result<(), SimError> {
        let mut segs = std::mem::take(&mut self.out);
        if !segs.is_empty() && self.first_send[i].is_none() {
            self.first_send[i] = Some(now);
        }
        for seg in segs.drain(..) {
            self.send(now, Direction::Data, i, seg)?;
        }
        self.out = segs;
        self.sync_rto(i)?;
        self.note_state(now, i);
        Ok(())
    }

    fn sync_rto(&mut self, i: usize) -> Result<(), SimError> {
        if let Some(d) = self.senders[i].rto_deadline() {
            if self.rto_pending[i].is_none_or(|p| p > d) {
                self.q.post(d, Ev::Rto(i as u32))?;
                self.rto_pending[i] = Some(d);
            }
        }
        Ok(())
    }

    fn note_state(&mut self, now: SimTime, i: usize) {
        if let Some(tr) = self.tracing.as_mut() {
            let m = marker(&self.senders[i]);
            if tr.last[i] != m {
                tr.last[i] = m;
                push_sender_rows(&mut tr.trace, now, i, &self.senders[i]);
            }
        }
    }

    fn forward(&mut self, now: SimTime, node: Node, cell: Cell) -> Result<(), SimError> {
        let vc = cell.vc as usize;
        let (port, next, delay) = match (node, cell.dir) {
            (Node::SwitchA, Direction::Data) => (&mut self.a_data, Node::SwitchB, self.cfg.backbone_delay),
            (Node::SwitchB, Direction::Data) => (&mut self.b_data[vc], Node::DestHost, self.cfg.access_delay),
            (Node::SwitchB, Direction::Ack) => (&mut self.b_ack, Node::SwitchA, self.cfg.backbone_delay),
            (Node::SwitchA, Direction::Ack) => (&mut self.a_ack[vc], Node::SrcHost, self.cfg.access_delay),
            (Node::DestHost, _) | (Node::SrcHost, _) => return self.host_receive(now, node, cell),
        };
        let forced = node == Node::SwitchA
            && cell.dir == Direction::Data
            && cell.index_in_frame == 0
            && !self.scripted.is_empty()
            && self.data_ch[vc]
                .lookup(cell.frame_id)
                .is_some_and(|seg| self.scripted.remove(&(cell.vc, seg.seq)));
        let arrival = port.arrive(now, cell, forced);
        if self.paranoid {
            port.check().map_err(|message| SimError::Invariant { time: now, message })?;
        }
        if let Some(t) = arrival.departs {
            self.q.post(t + delay, Ev::Cell(next, cell))?;
        }
        Ok(())
    }

    fn host_receive(&mut self, now: SimTime, node: Node, cell: Cell) -> Result<(), SimError> {
        let i = cell.vc as usize;
        if cell.frame_id == PROBE_FRAME {
            if node == Node::DestHost {
                let back = Cell { dir: Direction::Ack, ..cell };
                let t = self.dst_nic[i].transmit(now, CELL_BITS);
                self.q.post(t + self.cfg.access_delay, Ev::Cell(Node::SwitchB, back))?;
            } else {
                self.probe_rtt = Some(now);
            }
            return Ok(());
        }
        self.arrived[i] += 1;
        match node {
            Node::DestHost => {
                match self.data_ch[i].reassemble(cell) {
                    Some(Ok(seg)) => {
                        let ack = self.receivers[i].on_segment(&seg);
                        if !self.draining {
                            self.send(now, Direction::Ack, i, ack)?;
                        }
                    }
                    Some(Err(_)) => self.partial_frames += 1,
                    None => {}
                }
            }
            _ => {
                match self.ack_ch[i].reassemble(cell) {
                    Some(Ok(ack)) if !self.draining => {
                        let mut out = std::mem::take(&mut self.out);
                        self.senders[i].on_ack(now, &ack, &mut out);
                        self.out = out;
                        self.flush(now, i)?;
                    }
                    Some(Err(_)) => self.partial_frames += 1,
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn handle(&mut self, now: SimTime, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Cell(node, cell) => self.forward(now, node, cell)?,
            Ev::Start(i) if !self.draining => {
                let mut out = std::mem::take(&mut self.out);
                self.senders[i as usize].try_send(now, &mut out);
                self.out = out;
                self.flush(now, i as usize)?;
            }
            Ev::Rto(i) => {
                let i = i as usize;
                if self.draining || self.rto_pending[i] != Some(now) {
                    return Ok(());
                }
                self.rto_pending[i] = None;
                match self.senders[i].rto_deadline() {
                    Some(d) if d <= now => {
                        let mut out = std::mem::take(&mut self.out);
                        self.senders[i].on_rto(now, &mut out);
                        self.out = out;
                        self.flush(now, i)?;
                    }
                    _ => self.sync_rto(i)?,
                }
            }
            Ev::Sample if !self.draining => {
                self.check_now(now)?;
                if let Some(tr) = self.tracing.as_mut() {
                    for (i, s) in self.senders.iter().enumerate() {
                        push_sender_rows(&mut tr.trace, now, i, s);
                    }
                    let t = now.as_nanos();
                    tr.trace.push(t, "queue", self.a_data.ledger().x() as f64);
                    tr.trace.push(t, "drops", self.a_data.total_counters().cells_dropped as f64);
                }
                self.q.post(now + self.sample_period, Ev::Sample)?;
            }
            Ev::Start(_) | Ev::Sample => {}
        }
        Ok(())
    }

    fn check_now(&mut self, now: SimTime) -> Result<(), SimError> {
        let fail = |message: String| SimError::Invariant { time: now, message };
        let mut ports = vec![&mut self.a_data, &mut self.b_ack];
        ports.extend(self.a_ack.iter_mut());
        ports.extend(self.b_data.iter_mut());
        for p in ports {
            p.drain(now);
            p.check().map_err(fail)?;
        }
        for (i, (s, r)) in self.senders.iter().zip(&self.receivers).enumerate() {
            s.check_invariants().map_err(fail)?;
            r.check_invariants().map_err(fail)?;
            if s.snd_una() > r.rcv_nxt() || r.rcv_nxt() > s.snd_max() {
                return Err(fail(format!(
                    "vc {i}: snd_una {} <= rcv_nxt {} <= snd_max {} violated",
                    s.snd_una(),
                    r.rcv_nxt(),
                    s.snd_max()
                )));
            }
            for rec in s.table().records().filter(|rec| rec.sacked) {
                if !r.holds(rec.range) {
                    return Err(fail(format!("vc {i}: SACKed range {:?} not held by the receiver", rec.range)));
                }
            }
        }
        Ok(())
    }

    /// Runs every event up to and including `t`.
    pub fn run_until(&mut self, t: SimTime) -> Result<(), SimError> {
        while let Some((now, ev)) = self.q.pop_until(t) {
            self.handle(now, ev)?;
        }
        self.q.advance_to(t)?;
        Ok(())
    }

    /// Throughput figures for the data delivered so far over `duration`.
    pub fn result(&self, duration: SimTime) -> RunResult {
        let secs = duration.as_secs_f64();
        let rate = self.cfg.effective_rate_bps() as Real;
        let max = max_goodput(rate, self.cfg.mss);
        let delivered: Vec<u64> = self.receivers.iter().map(|r| r.delivered()).collect();
        let thr: Vec<Real> = delivered.iter().map(|b| *b as Real * 8.0 / secs).collect();
        let share = max / thr.len() as Real;
        let x: Vec<Real> = thr.iter().map(|t| t / share).collect();
        let stat = |f: fn(&crate::tcp::SenderStats) -> u64| self.senders.iter().map(|s| f(s.stats())).sum();
        RunResult {
            preset: self.cfg.preset.name().to_string(),
            n_sources: self.cfg.n_sources,
            buffer_cells: self.cfg.buffer_cells,
            flavor: self.cfg.flavor.name().to_string(),
            policy: self.cfg.policy_name.clone(),
            mss: self.cfg.mss,
            duration_s: secs,
            link_rate_bps: rate,
            max_goodput_bps: max,
            delivered_bytes: delivered,
            efficiency: efficiency(&thr, max),
            fairness: fairness(&x),
            throughput_bps: thr,
            cells_dropped: self.all_ports().map(|p| p.total_counters().cells_dropped).sum(),
            frames_discarded: self.all_ports().map(|p| p.frames_discarded()).sum(),
            retransmissions: stat(|s| s.retransmissions),
            fast_retransmits: stat(|s| s.fast_retransmits),
            timeouts: stat(|s| s.timeouts),
            events: self.q.fired(),
        }
    }

    /// Runs to the configured duration, measures, then lets the network
    /// empty out and audits cell conservation and stream integrity.
    pub fn finish(mut self) -> Result<RunResult, SimError> {
        let end = self.cfg.duration;
        self.run_until(end)?;
        self.check_now(end)?;
        let result = self.result(end);
        self.draining = true;
        while let Some((now, ev)) = self.q.pop_until(SimTime::MAX) {
            self.handle(now, ev)?;
        }
        self.audit()?;
        Ok(result)
    }

    /// Conservation audit once the network is empty: every injected cell
    /// was delivered or dropped, and every port balances.
    pub fn audit(&mut self) -> Result<(), SimError> {
        let now = self.q.now();
        self.check_now(now)?;
        let fail = |message: String| SimError::Invariant { time: now, message };
        if self.all_ports().any(|p| !p.is_empty()) {
            return Err(fail("cells still queued after drain".into()));
        }
        for i in 0..self.senders.len() {
            let vc = i as u32;
            let dropped: u64 = self.all_ports().map(|p| p.counters(vc).cells_dropped).sum();
            if self.injected[i] != self.arrived[i] + dropped {
                return Err(fail(format!(
                    "vc {i}: {} cells injected != {} delivered + {dropped} dropped",
                    self.injected[i], self.arrived[i]
                )));
            }
        }
        Ok(())
    }

    /// Cells injected and delivered per VC (both directions).
    pub fn cell_counts(&self, vc: u32) -> (u64, u64) {
        (self.injected[vc as usize], self.arrived[vc as usize])
    }

    /// Round trip of a single cell on an otherwise idle network, including
    /// one cell serialization at each of the six transmitters on the path.
    pub fn probe_rtt(cfg: &ScenarioConfig) -> Result<SimTime, SimError> {
        let mut c = cfg.clone();
        c.start_times = vec![SimTime::MAX; c.n_sources as usize];
        let mut sim = Simulation::new(c)?;
        let cell = Cell { vc: 0, dir: Direction::Data, frame_id: PROBE_FRAME, index_in_frame: 0, eom: true };
        let t = sim.src_nic[0].transmit(SimTime::ZERO, CELL_BITS);
        sim.q.post(t + sim.cfg.access_delay, Ev::Cell(Node::SwitchA, cell))?;
        while sim.probe_rtt.is_none() {
            let Some((now, ev)) = sim.q.pop_until(SimTime::from_secs(10)) else {
                break;
            };
            sim.handle(now, ev)?;
        }
        Ok(sim.probe_rtt.expect("probe returns on an idle network"))
    }
}

fn push_sender_rows(trace: &mut Trace, now: SimTime, i: usize, s: &TcpSender) {
    let t = now.as_nanos();
    trace.push(t, format!("cwnd.{i}"), s.cwnd() as f64);
    trace.push(t, format!("ssthresh.{i}"), s.ssthresh() as f64);
    trace.push(t, format!("state.{i}"), f64::from(s.state().code()));
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation").field("config", &self.cfg.label()).field("now", &self.q.now()).finish()
    }
}
