use crate::framing::{SackBlocks, SeqRange, TcpSegment};
use crate::scoreboard::RecvBlocks;

/// Receiving endpoint. ACKs every data segment immediately (no delayed-ACK
/// timer) and hands in-order bytes straight to the application.
#[derive(Clone, Debug)]
pub struct TcpReceiver {
    vc: u32,
    sack: bool,
    rcv_nxt: u64,
    blocks: RecvBlocks,
    delivered: u64,
    duplicate_segments: u64,
}

impl TcpReceiver {
    pub fn new(vc: u32, sack: bool) -> Self {
        TcpReceiver { vc, sack, rcv_nxt: 0, blocks: RecvBlocks::new(), delivered: 0, duplicate_segments: 0 }
    }

    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    /// Bytes delivered to the application: always exactly `0..rcv_nxt`.
    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn duplicate_segments(&self) -> u64 {
        self.duplicate_segments
    }

    pub fn blocks(&self) -> &RecvBlocks {
        &self.blocks
    }

    /// Whether the receiver holds every byte of `range` (in order or not).
    pub fn holds(&self, range: SeqRange) -> bool {
        range.end <= self.rcv_nxt || self.blocks.holds(range)
    }

    pub fn on_segment(&mut self, seg: &TcpSegment) -> TcpSegment {
        debug_assert_eq!(seg.vc, self.vc);
        if seg.payload_len > 0 {
            let end = seg.end_seq();
            if end <= self.rcv_nxt {
                self.duplicate_segments += 1;
            } else if seg.seq <= self.rcv_nxt {
                self.rcv_nxt = end;
                while let Some(b) = self.blocks.take_contiguous(self.rcv_nxt) {
                    self.rcv_nxt = b.end;
                }
            } else {
                self.blocks.record_arrival(SeqRange::new(seg.seq, end));
            }
            self.delivered = self.rcv_nxt;
        }
        let sack_blocks = if self.sack && !self.blocks.is_empty() {
            self.blocks.make_sack_option()
        } else {
            SackBlocks::new()
        };
        TcpSegment::pure_ack(self.vc, self.rcv_nxt, sack_blocks)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.delivered != self.rcv_nxt {
            return Err(format!("vc {}: delivered {} != rcv_nxt {}", self.vc, self.delivered, self.rcv_nxt));
        }
        self.blocks.check(self.rcv_nxt).map_err(|e| format!("vc {}: {e}", self.vc))
    }
}
