use serde::{Deserialize, Serialize};

use super::store::MessageKind;
use crate::params::Strategy;

/// Receiver-side view of one neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborState {
    pub ber: f64,
    /// Last slot of the connected phase; the neighbor is replaced after it.
    pub connected_until: u64,
    /// Received the most recent full dump.
    pub has_full_dump_base: bool,
    pub relevant: bool,
    pub joined_at: u64,
}

impl NeighborState {
    /// A neighbor that has not yet received anything.
    pub fn fresh(ber: f64, joined_at: u64, connected_until: u64) -> Self {
        NeighborState { ber, connected_until, has_full_dump_base: false, relevant: false, joined_at }
    }
}

/// Applies one slot's reception outcome.
pub fn receive(neighbor: NeighborState, kind: MessageKind, success: bool, strategy: Strategy) -> NeighborState {
    let mut n = neighbor;
    match kind {
        MessageKind::FullDump => {
            n.has_full_dump_base = success;
            n.relevant = success;
        }
        MessageKind::Differential => match strategy {
            Strategy::Cumulative => n.relevant = success && n.has_full_dump_base,
            Strategy::Incremental | Strategy::FullDumpOnly => n.relevant = success && n.relevant,
        },
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use MessageKind::*;
    use Strategy::*;

    fn state(base: bool, relevant: bool) -> NeighborState {
        NeighborState { has_full_dump_base: base, relevant, ..NeighborState::fresh(0.0, 0, 10) }
    }

    #[test]
    fn incremental_loss_sticks_until_next_dump() {
        let mut n = receive(state(true, true), Differential, false, Incremental);
        assert!(!n.relevant);
        for _ in 0..3 {
            n = receive(n, Differential, true, Incremental);
            assert!(!n.relevant);
        }
        n = receive(n, FullDump, true, Incremental);
        assert!(n.relevant && n.has_full_dump_base);
    }

    #[test]
    fn cumulative_recovers_with_base() {
        assert!(receive(state(true, false), Differential, true, Cumulative).relevant);
        assert!(!receive(state(false, false), Differential, true, Cumulative).relevant);
        assert!(!receive(state(true, true), Differential, false, Cumulative).relevant);
    }

    #[test]
    fn lost_dump_clears_base() {
        for s in Strategy::ALL {
            let n = receive(state(true, true), FullDump, false, s);
            assert!(!n.relevant && !n.has_full_dump_base);
        }
    }
}
