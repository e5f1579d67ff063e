//! SACK bookkeeping on both ends of a connection.
//!
//! [`RecvBlocks`] is the receiver's record of out-of-order data above
//! `rcv_nxt` and produces the (at most three) SACK blocks for each ACK.
//! [`SendTable`] is the sender's per-segment ledger of everything sent but
//! not yet cumulatively acknowledged.

use std::collections::{BTreeMap, VecDeque};

use crate::framing::{SackBlocks, SeqRange, MAX_SACK_BLOCKS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct BlockInfo {
    end: u64,
    // Arrival counter of the most recent segment that touched this block.
    touched: u64,
}

/// Disjoint out-of-order byte ranges held by the receiver.
#[derive(Clone, Debug, Default)]
pub struct RecvBlocks {
    blocks: BTreeMap<u64, BlockInfo>,
    most_recent: Option<u64>,
    arrivals: u64,
}

impl RecvBlocks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = SeqRange> + '_ {
        self.blocks.iter().map(|(s, b)| SeqRange::new(*s, b.end))
    }

    /// The block containing the latest out-of-order arrival, if it is still
    /// held above `rcv_nxt`.
    pub fn most_recent(&self) -> Option<SeqRange> {
        let start = self.most_recent?;
        self.blocks.get(&start).map(|b| SeqRange::new(start, b.end))
    }

    /// Whether every byte of `range` is held.
    pub fn holds(&self, range: SeqRange) -> bool {
        self.blocks
            .range(..=range.start)
            .next_back()
            .is_some_and(|(s, b)| SeqRange::new(*s, b.end).contains_range(&range))
    }

    /// Merges an out-of-order arrival into the block set.
    pub fn record_arrival(&mut self, range: SeqRange) {
        self.arrivals += 1;
        let mut start = range.start;
        let mut end = range.end;
        // Absorb a block that starts before and reaches into (or abuts) us.
        if let Some((&s, b)) = self.blocks.range(..=start).next_back() {
            if b.end >= start {
                start = s;
                end = end.max(b.end);
                self.blocks.remove(&s);
            }
        }
        // Absorb blocks that start inside (or abut) our right edge.
        while let Some((&s, b)) = self.blocks.range(start..=end).next() {
            end = end.max(b.end);
            self.blocks.remove(&s);
        }
        self.blocks.insert(start, BlockInfo { end, touched: self.arrivals });
        self.most_recent = Some(start);
    }

    /// Removes and returns the block starting exactly at `rcv_nxt`, which
    /// the caller then delivers in order. Blocks wholly below `rcv_nxt` are
    /// dropped; a block straddling it is trimmed.
    pub fn take_contiguous(&mut self, rcv_nxt: u64) -> Option<SeqRange> {
        while let Some((&s, b)) = self.blocks.iter().next() {
            if s > rcv_nxt {
                return None;
            }
            let b = *b;
            self.blocks.remove(&s);
            if self.most_recent == Some(s) {
                self.most_recent = None;
            }
            if b.end > rcv_nxt {
                return Some(SeqRange::new(rcv_nxt, b.end));
            }
        }
        None
    }

    /// SACK option for the next ACK: the most recently touched block
    /// first, then the others by recency of update.
    pub fn make_sack_option(&self) -> SackBlocks {
        let mut by_recency: Vec<(u64, u64, u64)> =
            self.blocks.iter().map(|(s, b)| (b.touched, *s, b.end)).collect();
        by_recency.sort_unstable_by(|a, b| b.cmp(a));
        let mut out = SackBlocks::new();
        if let Some(first) = self.most_recent() {
            out.push(first);
        }
        for (_, s, e) in by_recency {
            if out.len() == MAX_SACK_BLOCKS {
                break;
            }
            if Some(s) != out.first().map(|r| r.start) {
                out.push(SeqRange::new(s, e));
            }
        }
        out
    }

    /// Structural invariants relative to the receiver's cumulative point.
    pub fn check(&self, rcv_nxt: u64) -> Result<(), String> {
        let mut prev_end = rcv_nxt;
        for (s, b) in &self.blocks {
            if *s <= prev_end {
                return Err(format!("block {s}..{} touches or overlaps {prev_end}", b.end));
            }
            if b.end <= *s {
                return Err(format!("empty block at {s}"));
            }
            prev_end = b.end;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegRecord {
    pub range: SeqRange,
    pub sacked: bool,
    pub retransmitted: bool,
}

/// Sender-side table of segments sent but not cumulatively acknowledged.
#[derive(Clone, Debug, Default)]
pub struct SendTable {
    records: VecDeque<SegRecord>,
}

impl SendTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &SegRecord> {
        self.records.iter()
    }

    fn index_of(&self, seq: u64) -> Option<usize> {
        self.records.binary_search_by(|r| r.range.start.cmp(&seq)).ok()
    }

    pub fn get(&self, seq: u64) -> Option<&SegRecord> {
        self.index_of(seq).map(|i| &self.records[i])
    }

    /// Records a transmission. First transmissions append; a resend of a
    /// segment already in the table only updates its marks.
    pub fn on_send(&mut self, range: SeqRange, retransmission: bool) {
        match self.index_of(range.start) {
            Some(i) => {
                if retransmission {
                    self.records[i].retransmitted = true;
                }
            }
            None => {
                debug_assert!(
                    self.records.back().is_none_or(|r| r.range.end <= range.start),
                    "out-of-order insert at {}",
                    range.start
                );
                self.records.push_back(SegRecord { range, sacked: false, retransmitted: retransmission });
            }
        }
    }

    /// Drops every record wholly below the cumulative ACK point.
    pub fn on_cumulative_ack(&mut self, snd_una: u64) {
        while let Some(r) = self.records.front() {
            if r.range.end > snd_una {
                break;
            }
            self.records.pop_front();
        }
    }

    /// Marks every segment fully covered by one of `blocks` as SACKed.
    /// Blocks outside the table (stale or beyond what was sent) are ignored.
    /// Returns the number of newly marked segments.
    pub fn apply_sack(&mut self, blocks: &[SeqRange]) -> usize {
        let Some(lo) = self.records.front().map(|r| r.range.start) else {
            return 0;
        };
        let hi = self.records.back().map(|r| r.range.end).unwrap_or(lo);
        let mut newly = 0;
        for b in blocks {
            if b.end <= lo || b.start >= hi {
                continue;
            }
            let first = self.records.partition_point(|r| r.range.start < b.start);
            for r in self.records.iter_mut().skip(first) {
                if r.range.start >= b.end {
                    break;
                }
                if b.contains_range(&r.range) && !r.sacked {
                    r.sacked = true;
                    newly += 1;
                }
            }
        }
        newly
    }

    /// Highest byte covered by a SACKed record, if any.
    pub fn highest_sacked(&self) -> Option<u64> {
        self.records.iter().rev().find(|r| r.sacked).map(|r| r.range.end)
    }

    /// Lowest-sequence segment that is neither SACKed nor already
    /// retransmitted and lies below the highest SACKed byte (i.e. in a gap
    /// between SACK blocks).
    pub fn next_hole(&self) -> Option<SeqRange> {
        let fence = self.highest_sacked()?;
        self.records
            .iter()
            .take_while(|r| r.range.end <= fence)
            .find(|r| !r.sacked && !r.retransmitted)
            .map(|r| r.range)
    }

    /// Clears every SACKed and retransmitted mark (retransmission timeout).
    pub fn reset(&mut self) {
        for r in &mut self.records {
            r.sacked = false;
            r.retransmitted = false;
        }
    }

    pub fn sacked_bytes(&self) -> u64 {
        self.records.iter().filter(|r| r.sacked).map(|r| r.range.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: u64, e: u64) -> SeqRange {
        SeqRange::new(s, e)
    }

    #[test]
    fn first_arrival_makes_one_block() {
        let mut rb = RecvBlocks::new();
        rb.record_arrival(r(1000, 1512));
        assert_eq!(rb.iter().collect::<Vec<_>>(), vec![r(1000, 1512)]);
        assert_eq!(rb.make_sack_option().as_slice(), &[r(1000, 1512)]);
    }

    #[test]
    fn filling_a_gap_merges_blocks() {
        let mut rb = RecvBlocks::new();
        rb.record_arrival(r(1000, 1512));
        rb.record_arrival(r(2048, 2560));
        rb.record_arrival(r(1512, 2048));
        assert_eq!(rb.iter().collect::<Vec<_>>(), vec![r(1000, 2560)]);
        assert_eq!(rb.most_recent(), Some(r(1000, 2560)));
    }

    #[test]
    fn duplicate_arrival_is_idempotent() {
        let mut rb = RecvBlocks::new();
        rb.record_arrival(r(1000, 1512));
        rb.record_arrival(r(1000, 1512));
        rb.record_arrival(r(1100, 1200));
        assert_eq!(rb.iter().collect::<Vec<_>>(), vec![r(1000, 1512)]);
    }

    #[test]
    fn sack_option_orders_by_recency() {
        let mut rb = RecvBlocks::new();
        rb.record_arrival(r(1000, 1100)); // B0
        rb.record_arrival(r(2000, 2100)); // B1
        rb.record_arrival(r(3000, 3100)); // B2
        rb.record_arrival(r(4000, 4100)); // B3, newest
        assert_eq!(rb.make_sack_option().as_slice(), &[r(4000, 4100), r(3000, 3100), r(2000, 2100)]);
        // Extending B1 moves it to the front.
        rb.record_arrival(r(2100, 2200));
        assert_eq!(rb.make_sack_option().as_slice(), &[r(2000, 2200), r(4000, 4100), r(3000, 3100)]);
    }

    #[test]
    fn take_contiguous_releases_the_front_block() {
        let mut rb = RecvBlocks::new();
        rb.record_arrival(r(512, 1024));
        rb.record_arrival(r(2048, 2560));
        assert_eq!(rb.take_contiguous(0), None);
        assert_eq!(rb.take_contiguous(512), Some(r(512, 1024)));
        assert_eq!(rb.iter().collect::<Vec<_>>(), vec![r(2048, 2560)]);
        assert!(rb.check(1024).is_ok());
    }

    fn table_with(n: u64, mss: u64) -> SendTable {
        let mut st = SendTable::new();
        for i in 0..n {
            st.on_send(r(i * mss, (i + 1) * mss), false);
        }
        st
    }

    #[test]
    fn apply_sack_marks_covered_segments() {
        let mut st = table_with(10, 100);
        assert_eq!(st.apply_sack(&[r(500, 800)]), 3);
        let marked: Vec<u64> = st.records().filter(|x| x.sacked).map(|x| x.range.start / 100).collect();
        assert_eq!(marked, vec![5, 6, 7]);
        // Same SACK again changes nothing.
        assert_eq!(st.apply_sack(&[r(500, 800)]), 0);
    }

    #[test]
    fn stale_sack_is_ignored() {
        let mut st = table_with(10, 100);
        st.on_cumulative_ack(300);
        assert_eq!(st.apply_sack(&[r(100, 300)]), 0);
        assert_eq!(st.apply_sack(&[r(1000, 1200)]), 0);
        assert_eq!(st.len(), 7);
    }

    #[test]
    fn next_hole_walks_gaps() {
        let mut st = table_with(4, 100);
        // segs [lost, ok, lost, ok]
        st.apply_sack(&[r(100, 200), r(300, 400)]);
        assert_eq!(st.next_hole(), Some(r(0, 100)));
        assert_eq!(st.next_hole(), Some(r(0, 100)), "pure query");
        st.on_send(r(0, 100), true);
        assert_eq!(st.next_hole(), Some(r(200, 300)));
        st.on_send(r(200, 300), true);
        assert_eq!(st.next_hole(), None);
    }

    #[test]
    fn segments_above_highest_sack_are_not_holes() {
        let mut st = table_with(6, 100);
        st.apply_sack(&[r(100, 200)]);
        assert_eq!(st.next_hole(), Some(r(0, 100)));
        st.on_send(r(0, 100), true);
        assert_eq!(st.next_hole(), None);
    }

    #[test]
    fn reset_forgets_marks() {
        let mut st = table_with(4, 100);
        st.apply_sack(&[r(100, 400)]);
        st.on_send(r(0, 100), true);
        st.reset();
        assert!(st.records().all(|x| !x.sacked && !x.retransmitted));
        assert_eq!(st.next_hole(), None);
        assert_eq!(st.records().next().map(|x| x.range), Some(r(0, 100)));
    }

    #[test]
    fn cumulative_ack_drops_marks_below() {
        let mut st = table_with(6, 100);
        st.apply_sack(&[r(100, 300)]);
        st.on_cumulative_ack(300);
        assert!(st.records().all(|x| x.range.start >= 300));
        assert_eq!(st.sacked_bytes(), 0);
    }

    proptest::proptest! {
        #[test]
        fn recv_blocks_stay_disjoint(arrivals in proptest::collection::vec((1u64..60, 1u64..4), 1..60)) {
            let mut rb = RecvBlocks::new();
            let mut held = std::collections::BTreeSet::new();
            for (seg, len) in arrivals {
                let range = r(seg * 100, (seg + len) * 100);
                rb.record_arrival(range);
                for b in seg..seg + len {
                    held.insert(b);
                }
                proptest::prop_assert!(rb.check(0).is_ok());
                let opt = rb.make_sack_option();
                proptest::prop_assert!(opt.len() <= 3);
                proptest::prop_assert_eq!(opt[0], rb.most_recent().unwrap());
            }
            let from_blocks: std::collections::BTreeSet<u64> =
                rb.iter().flat_map(|b| b.start / 100..b.end / 100).collect();
            proptest::prop_assert_eq!(from_blocks, held);
        }

        #[test]
        fn next_hole_never_sacked(sacked in proptest::collection::vec(proptest::bool::ANY, 1..40)) {
            let mut st = table_with(sacked.len() as u64, 100);
            let blocks: Vec<SeqRange> = sacked.iter().enumerate().filter(|(_, s)| **s)
                .map(|(i, _)| r(i as u64 * 100, i as u64 * 100 + 100)).collect();
            st.apply_sack(&blocks);
            while let Some(h) = st.next_hole() {
                proptest::prop_assert!(!st.get(h.start).unwrap().sacked);
                st.on_send(h, true);
            }
        }
    }
}
