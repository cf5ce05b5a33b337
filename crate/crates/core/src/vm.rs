//! Task execution on a single VM.
//!
//! Two schedulers implement [`TaskScheduler`]:
//!
//! * [`ProcessorSharing`] (time-shared, preemptive): every active task gets
//!   `mips / n` of the VM. Implemented with a shared virtual-work clock and
//!   per-task finish tags, so admission and completion cost `O(log n)`.
//! * [`Fcfs`] (space-shared, non-preemptive): one task runs to completion,
//!   the rest wait in arrival order.
//!
//! Work is tracked in micro-MI: a VM rated at `mips` MI/s delivers exactly
//! `mips` micro-MI per simulated microsecond.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::VmSpec;
use crate::time::SimTime;
use crate::workload::{Request, RequestId};

pub const MICRO_MI_PER_MI: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchedulingMode {
    #[default]
    #[serde(rename = "ts")]
    TimeSharedPreemptive,
    #[serde(rename = "ss")]
    SpaceSharedNonPreemptive,
}

impl SchedulingMode {
    pub fn name(self) -> &'static str {
        match self {
            SchedulingMode::TimeSharedPreemptive => "ts",
            SchedulingMode::SpaceSharedNonPreemptive => "ss",
        }
    }
}

impl fmt::Display for SchedulingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ts" | "time-shared" | "timeshared" => Ok(SchedulingMode::TimeSharedPreemptive),
            "ss" | "space-shared" | "spaceshared" => Ok(SchedulingMode::SpaceSharedNonPreemptive),
            other => Err(format!("unknown scheduling mode `{other}` (expected ts or ss)")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VmError {
    #[error("request {0} is already on this VM")]
    DuplicateAdmit(RequestId),
    #[error("request {0} has zero length")]
    EmptyTask(RequestId),
    #[error("request {id} is not due to complete at {now} ms")]
    NotDue { id: RequestId, now: SimTime },
    #[error("request {0} is missing a service timestamp")]
    MissingTimestamp(RequestId),
}

/// Scheduling discipline of one VM.
pub trait TaskScheduler: Send {
    fn mode(&self) -> SchedulingMode;

    /// Adds a task of `length_mi` MI. Returns `true` when it starts executing
    /// immediately, `false` when it was queued.
    fn admit(&mut self, id: RequestId, length_mi: u64, now: SimTime) -> Result<bool, VmError>;

    /// Removes `id`, which must be the task due at `now`. Returns the task
    /// that starts executing as a consequence, if any.
    fn complete(&mut self, id: RequestId, now: SimTime) -> Result<Option<RequestId>, VmError>;

    /// Earliest scheduled completion under the current task set.
    fn next_completion(&self) -> Option<(SimTime, RequestId)>;

    /// Tasks currently receiving CPU.
    fn running(&self) -> usize;

    /// Tasks waiting to start (always zero when time-shared).
    fn waiting(&self) -> usize;
}

fn ceil_div(a: u128, b: u128) -> u128 {
    a.div_ceil(b)
}

/// Egalitarian processor sharing.
pub struct ProcessorSharing {
    mips: u128,
    /// Work delivered to every task present since the VM started.
    virtual_work: u128,
    last_update: SimTime,
    seq: u64,
    tasks: BinaryHeap<Reverse<(u128, u64, RequestId)>>,
    members: HashSet<RequestId>,
}

impl ProcessorSharing {
    pub fn new(mips: u64) -> Self {
        assert!(mips > 0);
        ProcessorSharing {
            mips: mips as u128,
            virtual_work: 0,
            last_update: SimTime::ZERO,
            seq: 0,
            tasks: BinaryHeap::new(),
            members: HashSet::new(),
        }
    }

    fn advance(&mut self, now: SimTime) {
        let dt = (now - self.last_update).as_micros() as u128;
        if let Some(share) = (self.mips * dt).checked_div(self.tasks.len() as u128) {
            self.virtual_work += share;
        }
        self.last_update = now;
    }

    /// Remaining work of `id` in micro-MI.
    pub fn remaining(&self, id: RequestId) -> Option<u128> {
        self.tasks
            .iter()
            .find(|Reverse((_, _, t))| *t == id)
            .map(|Reverse((tag, _, _))| tag.saturating_sub(self.virtual_work))
    }
}

impl TaskScheduler for ProcessorSharing {
    fn mode(&self) -> SchedulingMode {
        SchedulingMode::TimeSharedPreemptive
    }

    fn admit(&mut self, id: RequestId, length_mi: u64, now: SimTime) -> Result<bool, VmError> {
        if length_mi == 0 {
            return Err(VmError::EmptyTask(id));
        }
        if !self.members.insert(id) {
            return Err(VmError::DuplicateAdmit(id));
        }
        self.advance(now);
        let tag = self.virtual_work + length_mi as u128 * MICRO_MI_PER_MI;
        self.tasks.push(Reverse((tag, self.seq, id)));
        self.seq += 1;
        Ok(true)
    }

    fn complete(&mut self, id: RequestId, now: SimTime) -> Result<Option<RequestId>, VmError> {
        let due = self.next_completion();
        if due != Some((now, id)) {
            return Err(VmError::NotDue { id, now });
        }
        self.advance(now);
        let Reverse((tag, _, _)) = self.tasks.pop().expect("due task present");
        debug_assert!(self.virtual_work >= tag);
        self.members.remove(&id);
        if self.tasks.is_empty() {
            self.virtual_work = 0;
            self.seq = 0;
        }
        Ok(None)
    }

    fn next_completion(&self) -> Option<(SimTime, RequestId)> {
        let Reverse((tag, _, id)) = *self.tasks.peek()?;
        let n = self.tasks.len() as u128;
        let rem = tag.saturating_sub(self.virtual_work);
        let dt = ceil_div(rem * n, self.mips);
        Some((self.last_update + SimTime::from_micros(dt as u64), id))
    }

    fn running(&self) -> usize {
        self.tasks.len()
    }

    fn waiting(&self) -> usize {
        0
    }
}

/// First-come first-served, one task at a time.
pub struct Fcfs {
    mips: u128,
    current: Option<(RequestId, SimTime)>,
    queue: VecDeque<(RequestId, u64)>,
    members: HashSet<RequestId>,
}

impl Fcfs {
    pub fn new(mips: u64) -> Self {
        assert!(mips > 0);
        Fcfs {
            mips: mips as u128,
            current: None,
            queue: VecDeque::new(),
            members: HashSet::new(),
        }
    }

    fn run_time(&self, length_mi: u64) -> SimTime {
        SimTime::from_micros(ceil_div(length_mi as u128 * MICRO_MI_PER_MI, self.mips) as u64)
    }
}

impl TaskScheduler for Fcfs {
    fn mode(&self) -> SchedulingMode {
        SchedulingMode::SpaceSharedNonPreemptive
    }

    fn admit(&mut self, id: RequestId, length_mi: u64, now: SimTime) -> Result<bool, VmError> {
        if length_mi == 0 {
            return Err(VmError::EmptyTask(id));
        }
        if !self.members.insert(id) {
            return Err(VmError::DuplicateAdmit(id));
        }
        if self.current.is_none() {
            self.current = Some((id, now + self.run_time(length_mi)));
            Ok(true)
        } else {
            self.queue.push_back((id, length_mi));
            Ok(false)
        }
    }

    fn complete(&mut self, id: RequestId, now: SimTime) -> Result<Option<RequestId>, VmError> {
        if self.current != Some((id, now)) {
            return Err(VmError::NotDue { id, now });
        }
        self.members.remove(&id);
        self.current = None;
        let next = self.queue.pop_front();
        if let Some((next_id, len)) = next {
            self.current = Some((next_id, now + self.run_time(len)));
        }
        Ok(next.map(|(n, _)| n))
    }

    fn next_completion(&self) -> Option<(SimTime, RequestId)> {
        self.current.map(|(id, at)| (at, id))
    }

    fn running(&self) -> usize {
        usize::from(self.current.is_some())
    }

    fn waiting(&self) -> usize {
        self.queue.len()
    }
}

pub type SchedulerFactory = fn(mips: u64) -> Box<dyn TaskScheduler>;

/// Name-keyed table of scheduler constructors (`ts`, `ss`).
#[derive(Clone)]
pub struct SchedulerRegistry {
    factories: BTreeMap<&'static str, SchedulerFactory>,
}

impl Default for SchedulerRegistry {
    fn default() -> Self {
        let mut r = SchedulerRegistry {
            factories: BTreeMap::new(),
        };
        r.register(SchedulingMode::TimeSharedPreemptive.name(), |m| {
            Box::new(ProcessorSharing::new(m))
        });
        r.register(SchedulingMode::SpaceSharedNonPreemptive.name(), |m| Box::new(Fcfs::new(m)));
        r
    }
}

impl SchedulerRegistry {
    pub fn register(&mut self, name: &'static str, factory: SchedulerFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, name: &str, mips: u64) -> Option<Box<dyn TaskScheduler>> {
        self.factories.get(name).map(|f| f(mips))
    }
}

/// A completion the event loop should schedule. Tickets from an older
/// `generation` are stale and must be ignored when they fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompletionTicket {
    pub at: SimTime,
    pub request: RequestId,
    pub generation: u64,
}

/// A VM with its scheduler and the completion currently on the event queue.
pub struct VmRuntime {
    pub spec: VmSpec,
    scheduler: Box<dyn TaskScheduler>,
    pending: Option<(SimTime, RequestId)>,
    generation: u64,
}

impl VmRuntime {
    pub fn new(spec: VmSpec, scheduler: Box<dyn TaskScheduler>) -> Self {
        VmRuntime {
            spec,
            scheduler,
            pending: None,
            generation: 0,
        }
    }

    pub fn with_mode(spec: VmSpec, mode: SchedulingMode) -> Self {
        let sched = SchedulerRegistry::default()
            .create(mode.name(), spec.mips)
            .expect("built-in mode");
        VmRuntime::new(spec, sched)
    }

    pub fn mode(&self) -> SchedulingMode {
        self.scheduler.mode()
    }

    pub fn is_idle(&self) -> bool {
        self.scheduler.running() == 0 && self.scheduler.waiting() == 0
    }

    pub fn running(&self) -> usize {
        self.scheduler.running()
    }

    pub fn waiting(&self) -> usize {
        self.scheduler.waiting()
    }

    pub fn is_current(&self, generation: u64) -> bool {
        generation == self.generation
    }

    fn refresh(&mut self) -> Option<CompletionTicket> {
        let next = self.scheduler.next_completion();
        if next == self.pending {
            return None;
        }
        self.pending = next;
        self.generation += 1;
        next.map(|(at, request)| CompletionTicket {
            at,
            request,
            generation: self.generation,
        })
    }

    /// Admits `req` at `now`. Returns whether service started immediately and
    /// a new completion ticket when the VM's next completion changed.
    pub fn admit(
        &mut self,
        req: &Request,
        now: SimTime,
    ) -> Result<(bool, Option<CompletionTicket>), VmError> {
        let started = self.scheduler.admit(req.id, req.length, now)?;
        Ok((started, self.refresh()))
    }

    /// Completes `id` at `now`. Returns the request that started service as a
    /// result (space-shared queue head) and the next completion ticket.
    pub fn complete(
        &mut self,
        id: RequestId,
        now: SimTime,
    ) -> Result<(Option<RequestId>, Option<CompletionTicket>), VmError> {
        let started = self.scheduler.complete(id, now)?;
        self.pending = None;
        Ok((started, self.refresh()))
    }
}

/// Execution time of a finished request, excluding any queueing.
pub fn service_time(req: &Request) -> Result<SimTime, VmError> {
    match (req.service_start, req.service_end) {
        (Some(s), Some(e)) if e >= s => Ok(e - s),
        _ => Err(VmError::MissingTimestamp(req.id)),
    }
}
