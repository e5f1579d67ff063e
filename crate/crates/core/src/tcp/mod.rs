//! TCP endpoints with selectable congestion control.
//!
//! Four flavors share one sender state machine:
//!
//! * `Vanilla`: slow start and congestion avoidance only. Losses are
//!   recovered by the retransmission timer.
//! * `Reno`: adds fast retransmit on the third duplicate ACK and fast
//!   recovery (window inflation); any new ACK ends recovery.
//! * `NewReno`: Reno plus a `recover` point. ACKs below it are partial and
//!   trigger an immediate retransmission of the next hole.
//! * `Sack`: the receiver reports out-of-order blocks; during recovery the
//!   sender gates on a `pipe` estimate and fills holes before new data.
//!
//! Sequence numbers are 64-bit byte offsets from the start of the stream and
//! never wrap within a run.

mod receiver;
mod rto;
mod sender;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use receiver::TcpReceiver;
pub use rto::{RtoConfig, RtoTimer};
pub use sender::{CongestionState, SenderEvent, SenderStats, TcpSender};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TcpFlavor {
    Vanilla,
    Reno,
    NewReno,
    Sack,
}

impl TcpFlavor {
    pub const ALL: [TcpFlavor; 4] = [TcpFlavor::Vanilla, TcpFlavor::Reno, TcpFlavor::NewReno, TcpFlavor::Sack];

    pub fn name(self) -> &'static str {
        match self {
            TcpFlavor::Vanilla => "vanilla",
            TcpFlavor::Reno => "reno",
            TcpFlavor::NewReno => "newreno",
            TcpFlavor::Sack => "sack",
        }
    }
}

impl fmt::Display for TcpFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TcpFlavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" | "tahoe" => Ok(TcpFlavor::Vanilla),
            "reno" => Ok(TcpFlavor::Reno),
            "newreno" | "new_reno" | "new-reno" => Ok(TcpFlavor::NewReno),
            "sack" => Ok(TcpFlavor::Sack),
            other => Err(format!("unknown tcp flavor '{other}'")),
        }
    }
}

/// Per-connection sender parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TcpConfig {
    pub flavor: TcpFlavor,
    pub mss: u32,
    /// Receiver-advertised window in bytes, already scaled.
    pub rcvwnd: u64,
    pub ack_counting: bool,
    pub rto: RtoConfig,
    /// Classify in-recovery ACKs against `recover` in SACK mode.
    pub sack_uses_recover: bool,
    /// Defaults to `rcvwnd` when unset.
    pub initial_ssthresh: Option<u64>,
}

impl TcpConfig {
    pub fn new(flavor: TcpFlavor, mss: u32, rcvwnd: u64) -> Self {
        TcpConfig {
            flavor,
            mss,
            rcvwnd,
            ack_counting: true,
            rto: RtoConfig::default(),
            sack_uses_recover: true,
            initial_ssthresh: None,
        }
    }
}
