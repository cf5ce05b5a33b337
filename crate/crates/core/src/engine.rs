//! Deterministic discrete-event core.
//!
//! Events are kept in a min-heap keyed by `(time, seq)` where `seq` is a
//! monotone insertion counter, so events sharing a timestamp pop in the order
//! they were scheduled. The queue owns the clock: scheduling anything earlier
//! than the current clock is rejected.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("event `{kind}` scheduled at {at} ms but clock is already at {now} ms")]
    ScheduledInPast {
        kind: &'static str,
        at: SimTime,
        now: SimTime,
    },
    #[error("handler failed at {at} ms: {message}")]
    Handler { at: SimTime, message: String },
    #[error("trace write failed: {0}")]
    Trace(#[from] std::io::Error),
}

/// Implemented by event payloads so the engine can name them in diagnostics
/// and in the optional trace dump.
pub trait TraceEvent {
    fn kind(&self) -> &'static str;
    fn payload(&self) -> String;
}

/// A scheduled occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<E> {
    pub time: SimTime,
    pub seq: u64,
    pub data: E,
}

struct Entry<E>(Event<E>);

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.seq == other.0.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first.
        other
            .0
            .time
            .cmp(&self.0.time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Time-ordered event queue that also carries the simulation clock.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: SimTime,
    next_seq: u64,
    processed: u64,
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
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Total events ever scheduled on this queue.
    pub fn scheduled(&self) -> u64 {
        self.next_seq
    }

    /// Total events popped from this queue.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.0.time)
    }

    /// Pops the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Event<E>> {
        let Entry(ev) = self.heap.pop()?;
        debug_assert!(ev.time >= self.now, "event queue went backwards");
        self.now = ev.time;
        self.processed += 1;
        Some(ev)
    }
}

impl<E: TraceEvent> EventQueue<E> {
    /// Schedules `data` at absolute time `at`; returns the assigned sequence number.
    pub fn schedule(&mut self, at: SimTime, data: E) -> Result<u64, EngineError> {
        if at < self.now {
            return Err(EngineError::ScheduledInPast {
                kind: data.kind(),
                at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event { time: at, seq, data }));
        Ok(seq)
    }

    pub fn schedule_after(&mut self, delay: SimTime, data: E) -> Result<u64, EngineError> {
        let at = self.now + delay;
        self.schedule(at, data)
    }
}

/// Receives each event as it is popped. Handlers may schedule follow-ups.
pub trait Handler<E> {
    fn handle(&mut self, event: &Event<E>, queue: &mut EventQueue<E>) -> Result<(), EngineError>;
}

impl<E, F> Handler<E> for F
where
    F: FnMut(&Event<E>, &mut EventQueue<E>) -> Result<(), EngineError>,
{
    fn handle(&mut self, event: &Event<E>, queue: &mut EventQueue<E>) -> Result<(), EngineError> {
        self(event, queue)
    }
}

/// Counters returned from [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunStats {
    pub clock: SimTime,
    pub processed: u64,
    pub remaining: usize,
}

/// Processes every event with `time <= until` (all events when `until` is
/// `None`). With a bound, the clock finishes at `until` when the queue still
/// holds later events or ran dry earlier; unbounded runs end on the last event.
pub fn run<E, H>(
    queue: &mut EventQueue<E>,
    handler: &mut H,
    until: Option<SimTime>,
    mut trace: Option<&mut dyn Write>,
) -> Result<RunStats, EngineError>
where
    E: TraceEvent,
    H: Handler<E> + ?Sized,
{
    let start_processed = queue.processed;
    while let Some(t) = queue.peek_time() {
        if until.is_some_and(|u| t > u) {
            break;
        }
        let ev = queue.pop().expect("peeked");
        if let Some(w) = trace.as_deref_mut() {
            writeln!(w, "{}\t{}\t{}", ev.time, ev.data.kind(), ev.data.payload())?;
        }
        handler.handle(&ev, queue)?;
    }
    if let Some(u) = until {
        if queue.now < u {
            queue.now = u;
        }
    }
    Ok(RunStats {
        clock: queue.now,
        processed: queue.processed - start_processed,
        remaining: queue.len(),
    })
}
