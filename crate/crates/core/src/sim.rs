//! End-to-end simulation of one scenario.
//!
//! Request path: user base --(network)--> broker-preferred data center -->
//! VM load balancer --> VM scheduler --(network)--> user base. A throttled
//! data center that has no VM below its threshold forwards the request to the
//! next data center in the user base's preference list, paying the
//! inter-region delay. Once every data center has refused it, the request
//! returns to its preferred data center and waits there in FIFO order for
//! the next VM release.

use std::collections::VecDeque;
use std::io::Write;

use thiserror::Error;

use crate::availability::{is_available, AvailabilityParams};
use crate::balancer::{broker_select, BalancerParams, BalancerRegistry, BrokerTable, PolicyKind, VmLoadBalancer};
use crate::config::{validate_config, SimulationConfig, Violation};
use crate::engine::{run, EngineError, Event, EventQueue, Handler, TraceEvent};
use crate::metrics::{MetricsStore, ResponseSample, ServiceSample};
use crate::time::SimTime;
use crate::vm::{CompletionTicket, SchedulerRegistry, VmRuntime};
use crate::workload::{generate_arrivals, user_base_stream, Request, RequestId, RngStream};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<Violation>),
    #[error("no {what} registered under `{name}`")]
    UnknownStrategy { what: &'static str, name: String },
    #[error("runtime invariant violated: {0}")]
    Invariant(String),
    #[error("output failed: {0}")]
    Io(#[from] std::io::Error),
}

impl From<EngineError> for SimError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Trace(io) => SimError::Io(io),
            other => SimError::Invariant(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEvent {
    HourBoundary { hour: u32 },
    /// Next request of user base `ub` is created.
    Arrival { ub: usize },
    DispatchToDc { request: RequestId, dc: usize },
    MigrateRequest { request: RequestId, from: usize, to: usize },
    AssignToVm { request: RequestId, dc: usize, vm: usize },
    TaskComplete { request: RequestId, dc: usize, vm: usize, generation: u64 },
    ResponseReturn { request: RequestId },
}

impl TraceEvent for SimEvent {
    fn kind(&self) -> &'static str {
        match self {
            SimEvent::HourBoundary { .. } => "HourBoundary",
            SimEvent::Arrival { .. } => "Arrival",
            SimEvent::DispatchToDc { .. } => "DispatchToDc",
            SimEvent::MigrateRequest { .. } => "MigrateRequest",
            SimEvent::AssignToVm { .. } => "AssignToVm",
            SimEvent::TaskComplete { .. } => "TaskComplete",
            SimEvent::ResponseReturn { .. } => "ResponseReturn",
        }
    }

    fn payload(&self) -> String {
        match *self {
            SimEvent::HourBoundary { hour } => format!("hour={hour}"),
            SimEvent::Arrival { ub } => format!("ub={ub}"),
            SimEvent::ResponseReturn { request } => format!("req={request}"),
            SimEvent::DispatchToDc { request, dc } => format!("req={request} dc={dc}"),
            SimEvent::MigrateRequest { request, from, to } => {
                format!("req={request} from={from} to={to}")
            }
            SimEvent::AssignToVm { request, dc, vm } => format!("req={request} dc={dc} vm={vm}"),
            SimEvent::TaskComplete {
                request,
                dc,
                vm,
                generation,
            } => format!("req={request} dc={dc} vm={vm} gen={generation}"),
        }
    }
}

/// Knobs that do not change simulated behaviour.
#[derive(Clone, Default)]
pub struct SimOptions {
    /// Keep every sample for CSV export.
    pub retain_samples: bool,
    /// Check every VM's allocation count against the throttle threshold after
    /// every event (otherwise only at allocation).
    pub strict_checks: bool,
    pub balancers: BalancerRegistry,
    pub schedulers: SchedulerRegistry,
}

/// Optional line-oriented outputs written while the run progresses.
#[derive(Default)]
pub struct Sinks<'a> {
    /// `time<TAB>kind<TAB>payload` per event.
    pub trace: Option<&'a mut dyn Write>,
    /// `request_id,dc,vm,migrations` per VM assignment.
    pub assignments: Option<&'a mut dyn Write>,
    /// `request_id,ub,created_ms` per generated request.
    pub arrivals: Option<&'a mut dyn Write>,
}

/// Counts of instrumented invariant checks that ran (all passed, or the run
/// would have failed).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckCounts {
    pub esce_argmin: u64,
    pub throttle_cap: u64,
    pub decomposition: u64,
}

pub struct RunOutcome {
    pub metrics: MetricsStore,
    pub generated: u64,
    pub returned: u64,
    pub dropped: u64,
    pub events_scheduled: u64,
    pub events_processed: u64,
    pub final_clock: SimTime,
    /// Highest number of requests simultaneously allocated to VMs, per DC.
    pub peak_in_flight: Vec<u32>,
    pub checks: CheckCounts,
}

struct RequestTable {
    base: RequestId,
    slots: VecDeque<Option<Request>>,
}

impl RequestTable {
    fn new() -> Self {
        RequestTable {
            base: 0,
            slots: VecDeque::new(),
        }
    }

    fn insert(&mut self, r: Request) {
        debug_assert_eq!(r.id, self.base + self.slots.len() as u64);
        self.slots.push_back(Some(r));
    }

    fn get_mut(&mut self, id: RequestId) -> Result<&mut Request, EngineError> {
        id.checked_sub(self.base)
            .and_then(|i| self.slots.get_mut(i as usize))
            .and_then(Option::as_mut)
            .ok_or_else(|| EngineError::Handler {
                at: SimTime::ZERO,
                message: format!("unknown request {id}"),
            })
    }

    fn remove(&mut self, id: RequestId) -> Option<Request> {
        let i = id.checked_sub(self.base)? as usize;
        let r = self.slots.get_mut(i)?.take();
        while matches!(self.slots.front(), Some(None)) {
            self.slots.pop_front();
            self.base += 1;
        }
        r
    }

    fn live(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

struct Network {
    delay_us: Vec<Vec<u64>>,
    jitter_us: i64,
    rng: RngStream,
}

impl Network {
    fn leg(&mut self, from: usize, to: usize) -> SimTime {
        let base = self.delay_us[from][to] as i64;
        let jitter = if self.jitter_us > 0 {
            rand::Rng::random_range(self.rng.rng(), -self.jitter_us..=self.jitter_us)
        } else {
            0
        };
        SimTime::from_micros((base + jitter).max(0) as u64)
    }
}

struct DcRuntime {
    region: usize,
    balancer: Box<dyn VmLoadBalancer>,
    vms: Vec<VmRuntime>,
    wait_queue: VecDeque<RequestId>,
    eligible: Option<Vec<bool>>,
    in_flight: u32,
    peak_in_flight: u32,
}

struct World<'c, 's> {
    cfg: &'c SimulationConfig,
    broker: BrokerTable,
    dcs: Vec<DcRuntime>,
    requests: RequestTable,
    network: Network,
    ub_rngs: Vec<RngStream>,
    /// Remaining arrival instants of the current hour, per user base.
    pending: Vec<VecDeque<SimTime>>,
    next_id: RequestId,
    generated: u64,
    metrics: MetricsStore,
    strict: bool,
    checks: CheckCounts,
    assignments: Option<&'s mut dyn Write>,
    arrivals: Option<&'s mut dyn Write>,
}

fn invariant(at: SimTime, message: String) -> EngineError {
    EngineError::Handler { at, message }
}

impl World<'_, '_> {
    fn refresh_availability(&mut self) {
        let av = &self.cfg.availability;
        if !av.enabled {
            return;
        }
        for (dc, spec) in self.dcs.iter_mut().zip(&self.cfg.data_centers) {
            let mask = spec
                .vms
                .iter()
                .map(|vm| {
                    let p = AvailabilityParams {
                        mp: av.measurement_period_min,
                        r_l: vm.loss_rate,
                        d_e: vm.downtime_min,
                    };
                    is_available(&p, av.threshold).unwrap_or(false)
                })
                .collect();
            dc.eligible = Some(mask);
        }
    }

    fn on_hour(&mut self, hour: u32, q: &mut EventQueue<SimEvent>) -> Result<(), EngineError> {
        self.refresh_availability();
        let window = (SimTime::from_hours(hour as u64), SimTime::from_hours(hour as u64 + 1));
        for (i, ub) in self.cfg.user_bases.iter().enumerate() {
            // ids are handed out at creation time, so the counter here is scratch
            let arrivals = generate_arrivals(ub, i, window, &mut self.ub_rngs[i], &mut 0);
            let pending = &mut self.pending[i];
            debug_assert!(pending.is_empty());
            pending.extend(arrivals.iter().map(|a| a.time));
            if let Some(&first) = pending.front() {
                q.schedule(first, SimEvent::Arrival { ub: i })?;
            }
        }
        if hour + 1 < self.cfg.duration_hours {
            q.schedule(
                SimTime::from_hours(hour as u64 + 1),
                SimEvent::HourBoundary { hour: hour + 1 },
            )?;
        }
        Ok(())
    }

    fn on_arrival(&mut self, ub: usize, q: &mut EventQueue<SimEvent>) -> Result<(), EngineError> {
        let now = q.now();
        let pending = &mut self.pending[ub];
        pending.pop_front();
        if let Some(&next) = pending.front() {
            q.schedule(next, SimEvent::Arrival { ub })?;
        }

        let spec = &self.cfg.user_bases[ub];
        let id = self.next_id;
        self.next_id += 1;
        self.generated += 1;
        self.requests
            .insert(Request::new(id, ub, now, spec.request_length, spec.request_size));
        if let Some(w) = self.arrivals.as_deref_mut() {
            writeln!(w, "{},{},{}", id, spec.id, now)?;
        }

        let dc = broker_select(ub, &self.broker);
        let leg = self.network.leg(spec.region, self.dcs[dc].region);
        self.requests.get_mut(id)?.network += leg;
        q.schedule_after(leg, SimEvent::DispatchToDc { request: id, dc })?;
        Ok(())
    }

    /// Request `id` reaches data center `dc` (fresh or migrated).
    fn on_dc_arrival(
        &mut self,
        id: RequestId,
        dc: usize,
        q: &mut EventQueue<SimEvent>,
    ) -> Result<(), EngineError> {
        let now = q.now();
        let req = self.requests.get_mut(id)?;
        req.dc_arrival.get_or_insert(now);
        let (ub, parked, chain_pos) = (req.source_ub, req.parked, req.chain_pos as usize);

        let d = &mut self.dcs[dc];
        if parked && !d.wait_queue.is_empty() {
            d.wait_queue.push_back(id);
            return Ok(());
        }
        if let Some(vm) = self.select_vm(dc, now)? {
            self.allocate(dc, vm, now)?;
            return self.admit(id, dc, vm, q);
        }

        // saturated: only throttled balancers refuse
        let prefs = self.broker.preferences(ub);
        if parked {
            self.dcs[dc].wait_queue.push_back(id);
        } else if chain_pos + 1 < prefs.len() {
            let next = prefs[chain_pos + 1];
            self.migrate(id, dc, next, q, |r| r.chain_pos += 1)?;
        } else if prefs[0] == dc {
            let req = self.requests.get_mut(id)?;
            req.parked = true;
            self.dcs[dc].wait_queue.push_back(id);
        } else {
            let home = prefs[0];
            self.migrate(id, dc, home, q, |r| r.parked = true)?;
        }
        Ok(())
    }

    fn migrate(
        &mut self,
        id: RequestId,
        from: usize,
        to: usize,
        q: &mut EventQueue<SimEvent>,
        update: impl FnOnce(&mut Request),
    ) -> Result<(), EngineError> {
        let leg = self.network.leg(self.dcs[from].region, self.dcs[to].region);
        let req = self.requests.get_mut(id)?;
        update(req);
        req.migrations += 1;
        req.network += leg;
        req.migration_transit += leg;
        q.schedule_after(leg, SimEvent::MigrateRequest { request: id, from, to })?;
        Ok(())
    }

    fn select_vm(&mut self, dc: usize, now: SimTime) -> Result<Option<usize>, EngineError> {
        let d = &mut self.dcs[dc];
        let vm = d.balancer.select(d.eligible.as_deref());
        if let (Some(vm), PolicyKind::Esce) = (vm, d.balancer.kind()) {
            let counts = d.balancer.active_counts();
            let min = counts
                .iter()
                .enumerate()
                .filter(|(i, _)| d.eligible.as_ref().is_none_or(|m| m[*i] || !m.iter().any(|&x| x)))
                .map(|(_, &c)| c)
                .min()
                .unwrap_or(0);
            if counts[vm] != min {
                return Err(invariant(
                    now,
                    format!("ESCE chose vm {vm} with {} allocations, minimum is {min}", counts[vm]),
                ));
            }
            self.checks.esce_argmin += 1;
        }
        Ok(vm)
    }

    fn allocate(&mut self, dc: usize, vm: usize, now: SimTime) -> Result<(), EngineError> {
        let d = &mut self.dcs[dc];
        if let Some(t) = d.balancer.threshold() {
            if d.balancer.active_counts()[vm] >= t {
                return Err(invariant(now, format!("dc {dc} vm {vm} allocated beyond threshold {t}")));
            }
            self.checks.throttle_cap += 1;
        }
        d.balancer.on_allocate(vm);
        d.in_flight += 1;
        d.peak_in_flight = d.peak_in_flight.max(d.in_flight);
        Ok(())
    }

    fn admit(
        &mut self,
        id: RequestId,
        dc: usize,
        vm: usize,
        q: &mut EventQueue<SimEvent>,
    ) -> Result<(), EngineError> {
        let now = q.now();
        let req = self.requests.get_mut(id)?;
        req.assigned_dc = Some(dc);
        req.assigned_vm = Some(vm);
        if let Some(w) = self.assignments.as_deref_mut() {
            writeln!(w, "{},{},{},{}", id, dc, vm, req.migrations)?;
        }
        let (started, ticket) = self.dcs[dc].vms[vm]
            .admit(req, now)
            .map_err(|e| invariant(now, e.to_string()))?;
        if started {
            req.service_start = Some(now);
        }
        self.schedule_completion(dc, vm, ticket, q)
    }

    fn schedule_completion(
        &self,
        dc: usize,
        vm: usize,
        ticket: Option<CompletionTicket>,
        q: &mut EventQueue<SimEvent>,
    ) -> Result<(), EngineError> {
        if let Some(t) = ticket {
            q.schedule(
                t.at,
                SimEvent::TaskComplete {
                    request: t.request,
                    dc,
                    vm,
                    generation: t.generation,
                },
            )?;
        }
        Ok(())
    }

    fn on_complete(
        &mut self,
        id: RequestId,
        dc: usize,
        vm: usize,
        generation: u64,
        q: &mut EventQueue<SimEvent>,
    ) -> Result<(), EngineError> {
        if !self.dcs[dc].vms[vm].is_current(generation) {
            return Ok(());
        }
        let now = q.now();
        let (started, ticket) = self.dcs[dc].vms[vm]
            .complete(id, now)
            .map_err(|e| invariant(now, e.to_string()))?;
        if let Some(next) = started {
            self.requests.get_mut(next)?.service_start = Some(now);
        }
        self.schedule_completion(dc, vm, ticket, q)?;

        let d = &mut self.dcs[dc];
        d.balancer.on_release(vm);
        d.in_flight -= 1;

        let req = self.requests.get_mut(id)?;
        req.service_end = Some(now);
        let dc_arrival = req.dc_arrival.expect("serviced request reached a data center");
        let service_start = req.service_start.expect("completed request started");
        let queue_wait = req
            .queue_wait()
            .ok_or_else(|| invariant(now, format!("request {id} waited negative time")))?;
        let sample = ServiceSample {
            dc,
            vm,
            request: id,
            dc_arrival,
            service_start,
            service_end: now,
            queue_wait,
            migration_transit: req.migration_transit,
        };
        let ub_region = self.cfg.user_bases[req.source_ub].region;
        let leg = self.network.leg(self.dcs[dc].region, ub_region);
        req.network += leg;
        self.metrics
            .record_service(sample)
            .map_err(|e| invariant(now, e.to_string()))?;
        q.schedule_after(leg, SimEvent::ResponseReturn { request: id })?;

        // hand the freed capacity to the longest-waiting request
        if !self.dcs[dc].wait_queue.is_empty() {
            if let Some(vm) = self.select_vm(dc, now)? {
                let next = self.dcs[dc].wait_queue.pop_front().expect("non-empty");
                self.allocate(dc, vm, now)?;
                q.schedule(now, SimEvent::AssignToVm { request: next, dc, vm })?;
            }
        }
        Ok(())
    }

    fn on_return(&mut self, id: RequestId, now: SimTime) -> Result<(), EngineError> {
        let mut req = self
            .requests
            .remove(id)
            .ok_or_else(|| invariant(now, format!("unknown request {id}")))?;
        req.returned = Some(now);
        let service = req.service_end.unwrap() - req.service_start.unwrap();
        let wait = req.queue_wait().unwrap();
        if req.network + wait + service != now - req.created {
            return Err(invariant(
                now,
                format!("request {id}: response does not decompose into legs + wait + service"),
            ));
        }
        self.checks.decomposition += 1;
        self.metrics
            .record_response(ResponseSample {
                ub: req.source_ub,
                request: id,
                created: req.created,
                returned: now,
                dc: req.assigned_dc.unwrap(),
                migrations: req.migrations,
                network: req.network,
            })
            .map_err(|e| invariant(now, e.to_string()))
    }

    fn check_caps(&self, now: SimTime) -> Result<(), EngineError> {
        for (i, d) in self.dcs.iter().enumerate() {
            if let Some(t) = d.balancer.threshold() {
                if let Some(vm) = d.balancer.active_counts().iter().position(|&c| c > t) {
                    return Err(invariant(now, format!("dc {i} vm {vm} above threshold {t}")));
                }
            }
        }
        Ok(())
    }
}

impl Handler<SimEvent> for World<'_, '_> {
    fn handle(&mut self, ev: &Event<SimEvent>, q: &mut EventQueue<SimEvent>) -> Result<(), EngineError> {
        match ev.data {
            SimEvent::HourBoundary { hour } => self.on_hour(hour, q)?,
            SimEvent::Arrival { ub } => self.on_arrival(ub, q)?,
            SimEvent::DispatchToDc { request, dc } => self.on_dc_arrival(request, dc, q)?,
            SimEvent::MigrateRequest { request, to, .. } => self.on_dc_arrival(request, to, q)?,
            SimEvent::AssignToVm { request, dc, vm } => self.admit(request, dc, vm, q)?,
            SimEvent::TaskComplete {
                request,
                dc,
                vm,
                generation,
            } => self.on_complete(request, dc, vm, generation, q)?,
            SimEvent::ResponseReturn { request } => self.on_return(request, ev.time)?,
        }
        if self.strict {
            self.check_caps(ev.time)?;
        }
        Ok(())
    }
}

/// Runs `cfg` to completion: arrivals are generated for `duration_hours`,
/// then the system drains until every request has returned.
pub fn simulate(cfg: &SimulationConfig, opts: &SimOptions) -> Result<RunOutcome, SimError> {
    simulate_with_sinks(cfg, opts, Sinks::default())
}

pub fn simulate_with_sinks(
    cfg: &SimulationConfig,
    opts: &SimOptions,
    sinks: Sinks<'_>,
) -> Result<RunOutcome, SimError> {
    let violations = validate_config(cfg);
    if !violations.is_empty() {
        return Err(SimError::Config(violations));
    }

    let mut dcs = Vec::with_capacity(cfg.data_centers.len());
    for spec in &cfg.data_centers {
        let params = BalancerParams {
            vm_count: spec.vms.len(),
            throttle_threshold: cfg.throttle_threshold,
        };
        let balancer = opts
            .balancers
            .create(cfg.policy.name(), &params)
            .ok_or_else(|| SimError::UnknownStrategy {
                what: "load balancer",
                name: cfg.policy.name().into(),
            })?;
        let mut vms = Vec::with_capacity(spec.vms.len());
        for vm in &spec.vms {
            let sched = opts
                .schedulers
                .create(cfg.scheduling_mode.name(), vm.mips)
                .ok_or_else(|| SimError::UnknownStrategy {
                    what: "scheduler",
                    name: cfg.scheduling_mode.name().into(),
                })?;
            vms.push(VmRuntime::new(vm.clone(), sched));
        }
        dcs.push(DcRuntime {
            region: spec.region,
            balancer,
            vms,
            wait_queue: VecDeque::new(),
            eligible: None,
            in_flight: 0,
            peak_in_flight: 0,
        });
    }

    let delay_us = cfg
        .latency
        .delay_ms
        .iter()
        .map(|row| row.iter().map(|&ms| SimTime::from_millis_f64(ms).as_micros()).collect())
        .collect();
    let network = Network {
        delay_us,
        jitter_us: SimTime::from_millis_f64(cfg.latency.jitter_ms).as_micros() as i64,
        rng: RngStream::new(cfg.seed, 0),
    };

    let Sinks {
        trace,
        assignments,
        arrivals,
    } = sinks;
    let mut world = World {
        cfg,
        broker: BrokerTable::build(cfg),
        dcs,
        requests: RequestTable::new(),
        network,
        ub_rngs: (0..cfg.user_bases.len())
            .map(|i| RngStream::new(cfg.seed, user_base_stream(i)))
            .collect(),
        pending: vec![VecDeque::new(); cfg.user_bases.len()],
        next_id: 0,
        generated: 0,
        metrics: MetricsStore::new(
            cfg.user_bases.iter().map(|u| u.id.clone()).collect(),
            cfg.data_centers.iter().map(|d| d.id.clone()).collect(),
            cfg.duration_hours as usize,
            opts.retain_samples,
        ),
        strict: opts.strict_checks,
        checks: CheckCounts::default(),
        assignments,
        arrivals,
    };

    let mut queue = EventQueue::new();
    queue.schedule(SimTime::ZERO, SimEvent::HourBoundary { hour: 0 })?;
    let stats = run(&mut queue, &mut world, None, trace)?;

    let returned = world.metrics.total_returned();
    let live = world.requests.live() as u64;
    if world.generated != returned + live || live != 0 {
        return Err(SimError::Invariant(format!(
            "request conservation: generated {} returned {} still in system {}",
            world.generated, returned, live
        )));
    }
    if let Some((i, _)) = world
        .dcs
        .iter()
        .enumerate()
        .find(|(_, d)| !d.wait_queue.is_empty() || d.in_flight != 0 || d.vms.iter().any(|v| !v.is_idle()))
    {
        return Err(SimError::Invariant(format!("data center {i} not drained")));
    }

    Ok(RunOutcome {
        generated: world.generated,
        returned,
        dropped: 0,
        events_scheduled: queue.scheduled(),
        events_processed: stats.processed,
        final_clock: stats.clock,
        peak_in_flight: world.dcs.iter().map(|d| d.peak_in_flight).collect(),
        checks: world.checks,
        metrics: world.metrics,
    })
}
