//! Live element set with the change bookkeeping the message composer needs.

use serde::{Deserialize, Serialize};

use crate::params::{ProtocolParams, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: u64,
    /// Slot in which the element was admitted.
    pub born: u64,
}

/// At most `R` live elements plus per-slot and since-last-dump change
/// counters.
#[derive(Debug, Clone)]
pub struct ElementStore {
    capacity: usize,
    live: Vec<Element>,
    next_id: u64,
    last_dump: Option<u64>,
    slot_adds: u64,
    slot_dels: u64,
    // Since the last full dump.
    fresh_live: u64,
    dump_deleted: u64,
    adds_since: u64,
    dels_since: u64,
}

impl ElementStore {
    pub fn new(capacity: usize) -> Self {
        ElementStore {
            capacity,
            live: Vec::with_capacity(capacity),
            next_id: 0,
            last_dump: None,
            slot_adds: 0,
            slot_dels: 0,
            fresh_live: 0,
            dump_deleted: 0,
            adds_since: 0,
            dels_since: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn room(&self) -> usize {
        self.capacity - self.live.len()
    }

    pub fn live(&self) -> &[Element] {
        &self.live
    }

    pub fn last_dump(&self) -> Option<u64> {
        self.last_dump
    }

    /// Clears the per-slot change counters.
    pub fn begin_slot(&mut self) {
        self.slot_adds = 0;
        self.slot_dels = 0;
    }

    /// Admits a new element born in `slot`; `None` when full.
    pub fn insert(&mut self, slot: u64) -> Option<u64> {
        if self.live.len() >= self.capacity {
            return None;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.live.push(Element { id, born: slot });
        self.slot_adds += 1;
        self.fresh_live += 1;
        self.adds_since += 1;
        Some(id)
    }

    /// Removes the element with the given identity.
    pub fn remove(&mut self, id: u64) -> Option<Element> {
        let index = self.live.iter().position(|e| e.id == id)?;
        Some(self.remove_at(index))
    }

    /// Removes the element at `index` of [`live`](Self::live); the last
    /// element takes its place.
    pub fn remove_at(&mut self, index: usize) -> Element {
        let e = self.live.swap_remove(index);
        self.slot_dels += 1;
        self.dels_since += 1;
        if self.in_last_dump(e.born) {
            self.dump_deleted += 1;
        } else {
            self.fresh_live -= 1;
        }
        e
    }

    fn in_last_dump(&self, born: u64) -> bool {
        self.last_dump.map_or(false, |t| born <= t)
    }

    /// Records that the current content went out as a full dump in `slot`.
    pub fn mark_full_dump(&mut self, slot: u64) {
        self.last_dump = Some(slot);
        self.fresh_live = 0;
        self.dump_deleted = 0;
        self.adds_since = 0;
        self.dels_since = 0;
    }

    /// Additions and deletions of the current slot.
    pub fn slot_changes(&self) -> (u64, u64) {
        (self.slot_adds, self.slot_dels)
    }

    /// Elements a cumulative differential must carry. With cancellation an
    /// element both added and deleted since the dump is left out.
    pub fn cumulative_size(&self, cancel_transients: bool) -> u64 {
        if cancel_transients {
            self.fresh_live + self.dump_deleted
        } else {
            self.adds_since + self.dels_since
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    FullDump,
    Differential,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::FullDump => "full",
            MessageKind::Differential => "diff",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    /// Size in elements.
    pub size: u64,
}

impl Message {
    pub fn copies(&self, protocol: &ProtocolParams) -> u32 {
        match self.kind {
            MessageKind::FullDump => protocol.retries_full,
            MessageKind::Differential => protocol.retries_diff,
        }
    }
}

/// Message sent at the end of slot `slot`, after that slot's changes.
pub fn message_for_slot(store: &ElementStore, protocol: &ProtocolParams, slot: u64, cancel_transients: bool) -> Message {
    if protocol.is_full_dump_slot(slot) {
        return Message { kind: MessageKind::FullDump, size: store.len() as u64 };
    }
    let size = match protocol.strategy {
        Strategy::Cumulative => store.cumulative_size(cancel_transients),
        Strategy::Incremental | Strategy::FullDumpOnly => {
            let (a, d) = store.slot_changes();
            a + d
        }
    };
    Message { kind: MessageKind::Differential, size }
}
