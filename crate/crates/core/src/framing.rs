//! TCP/IP/LLC/AAL5 encapsulation and cell-level segmentation.
//!
//! Cells carry only structural metadata (VC, frame id, index, end-of-message
//! flag). The segment header travels out of band in the [`Channel`] that
//! segmented it, and is released to the receiver only when every cell of the
//! frame arrives. A missing cell anywhere in the frame stands in for an AAL5
//! CRC failure.

use std::collections::VecDeque;

use arrayvec::ArrayVec;
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TCP_HEADER: u32 = 20;
pub const IP_HEADER: u32 = 20;
pub const LLC_HEADER: u32 = 8;
pub const AAL5_TRAILER: u32 = 8;
pub const CELL_PAYLOAD: u32 = 48;
pub const CELL_SIZE: u32 = 53;
pub const CELL_BITS: u64 = CELL_SIZE as u64 * 8;

/// Per-frame overhead added to the TCP payload before segmentation.
pub const FRAME_OVERHEAD: u32 = TCP_HEADER + IP_HEADER + LLC_HEADER + AAL5_TRAILER;

pub const MAX_SACK_BLOCKS: usize = 3;

/// Half-open byte range `[start, end)` in the TCP sequence space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeqRange {
    pub start: u64,
    pub end: u64,
}

impl SeqRange {
    pub fn new(start: u64, end: u64) -> Self {
        debug_assert!(start < end, "empty or inverted range {start}..{end}");
        SeqRange { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn contains_range(&self, other: &SeqRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

pub type SackBlocks = ArrayVec<SeqRange, MAX_SACK_BLOCKS>;

/// Direction of travel through the N-source topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Source to destination.
    Data,
    /// Destination back to source.
    Ack,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TcpSegment {
    pub vc: u32,
    pub seq: u64,
    pub payload_len: u32,
    pub ack: u64,
    pub sack_blocks: SackBlocks,
    pub syn: bool,
    pub has_ack: bool,
}

impl TcpSegment {
    pub fn data(vc: u32, seq: u64, payload_len: u32) -> Self {
        TcpSegment {
            vc,
            seq,
            payload_len,
            ack: 0,
            sack_blocks: SackBlocks::new(),
            syn: false,
            has_ack: false,
        }
    }

    pub fn pure_ack(vc: u32, ack: u64, sack_blocks: SackBlocks) -> Self {
        TcpSegment { vc, seq: 0, payload_len: 0, ack, sack_blocks, syn: false, has_ack: true }
    }

    pub fn end_seq(&self) -> u64 {
        self.seq + u64::from(self.payload_len)
    }

    pub fn is_valid(&self, mss: u32) -> bool {
        self.payload_len <= mss && self.sack_blocks.iter().all(|b| b.start < b.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub vc: u32,
    pub dir: Direction,
    pub frame_id: u64,
    pub index_in_frame: u32,
    pub eom: bool,
}

/// The cells of one AAL5 frame, generated on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellBurst {
    pub vc: u32,
    pub dir: Direction,
    pub frame_id: u64,
    pub n_cells: u32,
}

impl CellBurst {
    pub fn len(&self) -> u32 {
        self.n_cells
    }

    pub fn is_empty(&self) -> bool {
        self.n_cells == 0
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_cells).map(move |i| Cell {
            vc: self.vc,
            dir: self.dir,
            frame_id: self.frame_id,
            index_in_frame: i,
            eom: i + 1 == self.n_cells,
        })
    }
}

/// Number of 48-byte cell payloads needed for a segment carrying
/// `payload_len` bytes of TCP data.
pub fn cells_per_segment(payload_len: u32) -> u32 {
    (payload_len + FRAME_OVERHEAD).div_ceil(CELL_PAYLOAD)
}

/// Maximum TCP goodput on a link of `link_rate` bits/s with segments of
/// `mss` payload bytes: the 48/53 cell tax times the payload share of the
/// padded frame.
pub fn max_goodput<T: Float + FromPrimitive>(link_rate: T, mss: u32) -> T {
    let f = |v: u32| T::from_u32(v).expect("u32 fits any float");
    let cells = cells_per_segment(mss);
    link_rate * (f(CELL_PAYLOAD) / f(CELL_SIZE)) * (f(mss) / (f(CELL_PAYLOAD) * f(cells)))
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("frame {frame_id} on vc {vc} lost {missing} of its cells")]
pub struct IncompleteFrame {
    pub vc: u32,
    pub frame_id: u64,
    pub missing: u32,
}

#[derive(Clone, Copy, Debug)]
struct RxFrame {
    frame_id: u64,
    next_index: u32,
    intact: bool,
    seen: u32,
}

/// One direction of one VC: segmentation at the sending host and
/// reassembly at the receiving host.
#[derive(Debug)]
pub struct Channel {
    vc: u32,
    dir: Direction,
    next_frame: u64,
    in_flight: VecDeque<(u64, u32, TcpSegment)>,
    rx: Option<RxFrame>,
    frames_delivered: u64,
    frames_lost: u64,
}

impl Channel {
    pub fn new(vc: u32, dir: Direction) -> Self {
        Channel {
            vc,
            dir,
            next_frame: 0,
            in_flight: VecDeque::new(),
            rx: None,
            frames_delivered: 0,
            frames_lost: 0,
        }
    }

    pub fn frames_delivered(&self) -> u64 {
        self.frames_delivered
    }

    pub fn frames_lost(&self) -> u64 {
        self.frames_lost
    }

    /// Segment metadata for a frame still in transit, if any.
    pub fn lookup(&self, frame_id: u64) -> Option<&TcpSegment> {
        let front = self.in_flight.front()?.0;
        let idx = frame_id.checked_sub(front)? as usize;
        self.in_flight.get(idx).filter(|(id, _, _)| *id == frame_id).map(|(_, _, s)| s)
    }

    pub fn encapsulate(&mut self, seg: TcpSegment) -> CellBurst {
        debug_assert_eq!(seg.vc, self.vc);
        let frame_id = self.next_frame;
        self.next_frame += 1;
        let n_cells = cells_per_segment(seg.payload_len);
        self.in_flight.push_back((frame_id, n_cells, seg));
        CellBurst { vc: self.vc, dir: self.dir, frame_id, n_cells }
    }

    fn n_cells_of(&self, frame_id: u64) -> u32 {
        self.in_flight
            .iter()
            .find(|(id, _, _)| *id == frame_id)
            .map(|(_, n, _)| *n)
            .unwrap_or(0)
    }

    // Forget metadata for frames before `frame_id`; on a FIFO path they can
    // no longer complete. Each one counts as a frame-level loss.
    fn retire_before(&mut self, frame_id: u64) {
        while let Some((id, _, _)) = self.in_flight.front() {
            if *id >= frame_id {
                break;
            }
            self.frames_lost += 1;
            self.in_flight.pop_front();
        }
    }

    /// Feeds one arriving cell. Returns `Some` when a frame closes: either the
    /// frame of this cell (EOM seen) or an earlier frame whose EOM never came.
    pub fn reassemble(&mut self, cell: Cell) -> Option<Result<TcpSegment, IncompleteFrame>> {
        assert_eq!(cell.vc, self.vc, "cell delivered to the wrong VC");
        let mut abandoned = None;
        let mut frame = match self.rx.take() {
            Some(f) if f.frame_id == cell.frame_id => f,
            prev => {
                if let Some(p) = prev {
                    assert!(
                        cell.frame_id > p.frame_id,
                        "interleaved frames on one VC: {} after {}",
                        cell.frame_id,
                        p.frame_id
                    );
                    let total = self.n_cells_of(p.frame_id);
                    abandoned = Some(IncompleteFrame {
                        vc: self.vc,
                        frame_id: p.frame_id,
                        missing: total.saturating_sub(p.seen).max(1),
                    });
                }
                self.retire_before(cell.frame_id);
                RxFrame { frame_id: cell.frame_id, next_index: 0, intact: true, seen: 0 }
            }
        };

        if cell.index_in_frame != frame.next_index {
            frame.intact = false;
        }
        frame.next_index = cell.index_in_frame + 1;
        frame.seen += 1;

        if !cell.eom {
            self.rx = Some(frame);
            return abandoned.map(Err);
        }

        let (_, n_cells, seg) = self
            .in_flight
            .pop_front()
            .filter(|(id, _, _)| *id == cell.frame_id)
            .expect("EOM cell for a frame with no metadata");
        if frame.intact && frame.seen == n_cells {
            self.frames_delivered += 1;
            Some(Ok(seg))
        } else {
            self.frames_lost += 1;
            Some(Err(IncompleteFrame {
                vc: self.vc,
                frame_id: cell.frame_id,
                missing: n_cells - frame.seen.min(n_cells),
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: lay the frame out byte by byte and count how many
    // 48-byte cell payloads it occupies.
    fn brute_force_cells(payload_len: u32) -> u32 {
        let mut bytes = TCP_HEADER + IP_HEADER + LLC_HEADER + payload_len;
        let mut cells = 0;
        loop {
            cells += 1;
            // The trailer must fit in the last cell with the tail of the data.
            if bytes + AAL5_TRAILER <= CELL_PAYLOAD {
                return cells;
            }
            bytes = bytes.saturating_sub(CELL_PAYLOAD);
            if bytes == 0 {
                // Data ended exactly on a boundary; the trailer needs a cell.
                return cells + 1;
            }
        }
    }

    #[test]
    fn cell_counts() {
        assert_eq!(cells_per_segment(512), 12);
        assert_eq!(cells_per_segment(0), 2);
        assert_eq!(cells_per_segment(9180), 193);
        assert_eq!(cells_per_segment(520), 12);
    }

    #[test]
    fn cell_formula_matches_layout_oracle() {
        for len in 0..=20_000 {
            assert_eq!(cells_per_segment(len), brute_force_cells(len), "payload {len}");
        }
    }

    #[test]
    fn goodput_ceiling() {
        let g: f64 = max_goodput(155.52e6, 512);
        assert!((g / 1e6 - 125.2).abs() < 0.05, "{g}");
        assert!((g / 155.52e6 - 0.805).abs() < 0.001);
        let sat: f64 = max_goodput(155.52e6, 9180);
        assert!((sat / 1e6 - 139.57).abs() < 0.01, "{sat}");
        let single: f32 = max_goodput(155.52e6f32, 512);
        assert!((single / 1e6 - 125.2).abs() < 0.05);
    }

    #[test]
    fn goodput_for_exactly_filled_frame() {
        // 520 + 56 = 576 = 12 * 48 bytes: no padding in the frame.
        let g: f64 = max_goodput(155.52e6, 520);
        let by_layout = 155.52e6 * 520.0 / (53.0 * brute_force_cells(520) as f64);
        assert!((g - by_layout).abs() < 1e-3);
    }

    #[test]
    fn burst_shape() {
        let mut ch = Channel::new(3, Direction::Data);
        let burst = ch.encapsulate(TcpSegment::data(3, 0, 512));
        let cells: Vec<Cell> = burst.cells().collect();
        assert_eq!(cells.len(), 12);
        assert!(cells[11].eom);
        assert!(cells[..11].iter().all(|c| !c.eom));
        assert!(cells.iter().enumerate().all(|(i, c)| c.index_in_frame == i as u32));

        let ack = ch.encapsulate(TcpSegment::pure_ack(3, 512, SackBlocks::new()));
        assert_eq!(ack.len(), 2);
        assert_eq!(ack.frame_id, burst.frame_id + 1);
    }

    #[test]
    fn round_trip() {
        let mut ch = Channel::new(1, Direction::Data);
        let seg = TcpSegment::data(1, 1024, 512);
        let burst = ch.encapsulate(seg.clone());
        let mut out = None;
        for c in burst.cells() {
            if let Some(r) = ch.reassemble(c) {
                out = Some(r);
            }
        }
        assert_eq!(out, Some(Ok(seg)));
        assert_eq!(ch.frames_delivered(), 1);
    }

    #[test]
    fn missing_middle_cell_discards_frame() {
        let mut ch = Channel::new(1, Direction::Data);
        let burst = ch.encapsulate(TcpSegment::data(1, 0, 512));
        let mut out = None;
        for c in burst.cells().filter(|c| c.index_in_frame != 5) {
            if let Some(r) = ch.reassemble(c) {
                out = Some(r);
            }
        }
        assert!(matches!(out, Some(Err(IncompleteFrame { missing: 1, .. }))));
        assert_eq!(ch.frames_lost(), 1);
    }

    #[test]
    fn missing_eom_detected_by_next_frame() {
        let mut ch = Channel::new(1, Direction::Data);
        let a = ch.encapsulate(TcpSegment::data(1, 0, 512));
        let b = ch.encapsulate(TcpSegment::data(1, 512, 512));
        let mut results = Vec::new();
        for c in a.cells().filter(|c| !c.eom).chain(b.cells()) {
            if let Some(r) = ch.reassemble(c) {
                results.push(r);
            }
        }
        assert_eq!(results.len(), 2);
        assert!(results[0].is_err());
        assert_eq!(results[1].as_ref().unwrap().seq, 512);
        assert_eq!(ch.frames_lost(), 1);
        assert_eq!(ch.frames_delivered(), 1);
    }

    #[test]
    fn wholly_dropped_frame_is_retired() {
        let mut ch = Channel::new(1, Direction::Data);
        let _lost = ch.encapsulate(TcpSegment::data(1, 0, 512));
        let b = ch.encapsulate(TcpSegment::data(1, 512, 512));
        let mut delivered = Vec::new();
        for c in b.cells() {
            if let Some(Ok(s)) = ch.reassemble(c) {
                delivered.push(s.seq);
            }
        }
        assert_eq!(delivered, vec![512]);
        assert_eq!(ch.frames_lost(), 1);
        assert!(ch.lookup(0).is_none());
    }

    #[test]
    #[should_panic(expected = "interleaved frames")]
    fn interleaving_is_an_assertion() {
        let mut ch = Channel::new(1, Direction::Data);
        let a = ch.encapsulate(TcpSegment::data(1, 0, 512));
        let b = ch.encapsulate(TcpSegment::data(1, 512, 512));
        let a_cells: Vec<Cell> = a.cells().collect();
        let b_cells: Vec<Cell> = b.cells().collect();
        ch.reassemble(a_cells[0]);
        ch.reassemble(b_cells[0]);
        ch.reassemble(a_cells[1]);
    }

    proptest::proptest! {
        #[test]
        fn encapsulate_reassemble_identity(
            seq in 0u64..1 << 40,
            len in 0u32..=9180,
            ack in 0u64..1 << 40,
            nblocks in 0usize..=3,
        ) {
            let mut blocks = SackBlocks::new();
            for i in 0..nblocks as u64 {
                blocks.push(SeqRange::new(ack + 1000 * i + 1, ack + 1000 * i + 500));
            }
            let seg = TcpSegment { vc: 9, seq, payload_len: len, ack, sack_blocks: blocks, syn: false, has_ack: true };
            let mut ch = Channel::new(9, Direction::Ack);
            let burst = ch.encapsulate(seg.clone());
            proptest::prop_assert_eq!(burst.len(), cells_per_segment(len));
            let last = burst.cells().filter_map(|c| ch.reassemble(c)).last();
            proptest::prop_assert_eq!(last, Some(Ok(seg)));
        }
    }
}
