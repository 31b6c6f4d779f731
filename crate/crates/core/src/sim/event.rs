//! Deterministic event queue: total order on (time, insertion sequence).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Queue-level event kinds. Aggregations and evaluations happen inline when
/// their trigger fires and are recorded on the trace rather than queued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// A client finished one local round.
    TrainDone { node: u32 },
    /// A client's upload reached the server.
    UploadArrive { node: u32 },
    /// A partially filled aggregation window timed out.
    WindowClose { generation: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want earliest first,
        // ties broken by insertion order.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue::default()
    }

    pub fn push(&mut self, time: f64, kind: EventKind) {
        debug_assert!(time.is_finite() && time >= 0.0);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { time, seq, kind });
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_then_insertion() {
        let mut q = EventQueue::new();
        q.push(2.0, EventKind::TrainDone { node: 1 });
        q.push(1.0, EventKind::TrainDone { node: 2 });
        q.push(1.0, EventKind::TrainDone { node: 3 });
        let order: Vec<u32> = std::iter::from_fn(|| q.pop())
            .map(|e| match e.kind {
                EventKind::TrainDone { node } => node,
                _ => unreachable!(),
            })
            .collect();
        // node 2 was inserted before node 3 at the same time
        assert_eq!(order, vec![2, 3, 1]);
    }

    #[test]
    fn equal_times_preserve_insertion_order_many() {
        let mut q = EventQueue::new();
        for node in 0..50 {
            q.push(5.0, EventKind::UploadArrive { node });
        }
        let mut prev = None;
        while let Some(e) = q.pop() {
            if let EventKind::UploadArrive { node } = e.kind {
                if let Some(p) = prev {
                    assert!(node > p);
                }
                prev = Some(node);
            }
        }
    }
}
