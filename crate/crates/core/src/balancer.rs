//! Two-level request routing.
//!
//! The service broker sends each request to the nearest data center. Inside a
//! data center a [`VmLoadBalancer`] picks the VM. Three balancers ship in the
//! [`BalancerRegistry`]: round robin, equally spread current execution (ESCE)
//! and throttled. A throttled data center can refuse a request when every VM
//! is at its threshold; the simulator then migrates the request.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[default]
    #[serde(rename = "rr")]
    RoundRobin,
    #[serde(rename = "esce")]
    Esce,
    #[serde(rename = "throttled")]
    Throttled,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::RoundRobin, PolicyKind::Esce, PolicyKind::Throttled];

    /// Registry key.
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::RoundRobin => "rr",
            PolicyKind::Esce => "esce",
            PolicyKind::Throttled => "throttled",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rr" | "roundrobin" | "round_robin" => Ok(PolicyKind::RoundRobin),
            "esce" => Ok(PolicyKind::Esce),
            "throttled" => Ok(PolicyKind::Throttled),
            other => Err(format!("unknown policy `{other}` (expected rr, esce or throttled)")),
        }
    }
}

// ---- policy state and selection rules ----

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundRobinState {
    pub next_index: usize,
}

/// Returns the cursor, then advances it modulo `vm_count`.
pub fn rr_next(state: &mut RoundRobinState, vm_count: usize) -> usize {
    assert!(vm_count >= 1, "round robin over an empty fleet");
    let vm = state.next_index % vm_count;
    state.next_index = (vm + 1) % vm_count;
    vm
}

/// Current allocations (dispatched, not yet completed) per VM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EsceState {
    pub active_count: Vec<u32>,
}

impl EsceState {
    pub fn new(vm_count: usize) -> Self {
        EsceState {
            active_count: vec![0; vm_count],
        }
    }
}

/// VM with the fewest active allocations; lowest id wins ties.
pub fn esce_next(state: &EsceState) -> usize {
    assert!(!state.active_count.is_empty(), "ESCE over an empty fleet");
    let mut best = 0;
    for (vm, &c) in state.active_count.iter().enumerate().skip(1) {
        if c < state.active_count[best] {
            best = vm;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThrottledState {
    pub availability_index: Vec<u32>,
    pub threshold: u32,
}

impl ThrottledState {
    pub fn new(vm_count: usize, threshold: u32) -> Self {
        ThrottledState {
            availability_index: vec![0; vm_count],
            threshold,
        }
    }
}

/// Lowest-id VM below the threshold, or `None` when the fleet is saturated.
pub fn throttled_next(state: &ThrottledState) -> Option<usize> {
    assert!(!state.availability_index.is_empty(), "throttled over an empty fleet");
    state
        .availability_index
        .iter()
        .position(|&c| c < state.threshold)
}

/// Allocation bookkeeping shared by the ESCE and throttled states.
pub trait AllocationCounts {
    fn counts_mut(&mut self) -> &mut Vec<u32>;
}

impl AllocationCounts for EsceState {
    fn counts_mut(&mut self) -> &mut Vec<u32> {
        &mut self.active_count
    }
}

impl AllocationCounts for ThrottledState {
    fn counts_mut(&mut self) -> &mut Vec<u32> {
        &mut self.availability_index
    }
}

pub fn notify_allocate<S: AllocationCounts + ?Sized>(state: &mut S, vm: usize) {
    state.counts_mut()[vm] += 1;
}

/// Panics when releasing a VM with no allocation outstanding.
pub fn notify_release<S: AllocationCounts + ?Sized>(state: &mut S, vm: usize) {
    let c = &mut state.counts_mut()[vm];
    assert!(*c > 0, "release without matching allocate on vm {vm}");
    *c -= 1;
}

// ---- strategy trait ----

/// Per-data-center VM selection strategy.
pub trait VmLoadBalancer: Send {
    fn kind(&self) -> PolicyKind;

    /// Picks a VM for a new request. `eligible`, when given, masks out VMs
    /// that may not receive work. `None` means the data center refuses the
    /// request (only throttled balancers do this).
    fn select(&mut self, eligible: Option<&[bool]>) -> Option<usize>;

    fn on_allocate(&mut self, vm: usize);
    fn on_release(&mut self, vm: usize);

    /// Outstanding allocations per VM.
    fn active_counts(&self) -> &[u32];

    /// Concurrency cap per VM, if the policy has one.
    fn threshold(&self) -> Option<u32> {
        None
    }
}

pub struct RoundRobin {
    state: RoundRobinState,
    active: Vec<u32>,
}

impl RoundRobin {
    pub fn new(vm_count: usize) -> Self {
        RoundRobin {
            state: RoundRobinState::default(),
            active: vec![0; vm_count],
        }
    }
}

impl VmLoadBalancer for RoundRobin {
    fn kind(&self) -> PolicyKind {
        PolicyKind::RoundRobin
    }

    fn select(&mut self, eligible: Option<&[bool]>) -> Option<usize> {
        let n = self.active.len();
        match eligible {
            None => Some(rr_next(&mut self.state, n)),
            Some(mask) if !mask.iter().any(|&ok| ok) => Some(rr_next(&mut self.state, n)),
            Some(mask) => loop {
                let vm = rr_next(&mut self.state, n);
                if mask[vm] {
                    break Some(vm);
                }
            },
        }
    }

    fn on_allocate(&mut self, vm: usize) {
        self.active[vm] += 1;
    }

    fn on_release(&mut self, vm: usize) {
        assert!(self.active[vm] > 0, "release without matching allocate on vm {vm}");
        self.active[vm] -= 1;
    }

    fn active_counts(&self) -> &[u32] {
        &self.active
    }
}

pub struct EqualSpread {
    state: EsceState,
}

impl EqualSpread {
    pub fn new(vm_count: usize) -> Self {
        EqualSpread {
            state: EsceState::new(vm_count),
        }
    }
}

impl VmLoadBalancer for EqualSpread {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Esce
    }

    fn select(&mut self, eligible: Option<&[bool]>) -> Option<usize> {
        match eligible {
            Some(mask) if mask.iter().any(|&ok| ok) => {
                let counts = &self.state.active_count;
                (0..counts.len())
                    .filter(|&vm| mask[vm])
                    .min_by_key(|&vm| (counts[vm], vm))
            }
            _ => Some(esce_next(&self.state)),
        }
    }

    fn on_allocate(&mut self, vm: usize) {
        notify_allocate(&mut self.state, vm);
    }

    fn on_release(&mut self, vm: usize) {
        notify_release(&mut self.state, vm);
    }

    fn active_counts(&self) -> &[u32] {
        &self.state.active_count
    }
}

pub struct Throttled {
    state: ThrottledState,
}

impl Throttled {
    pub fn new(vm_count: usize, threshold: u32) -> Self {
        Throttled {
            state: ThrottledState::new(vm_count, threshold),
        }
    }
}

impl VmLoadBalancer for Throttled {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Throttled
    }

    fn select(&mut self, eligible: Option<&[bool]>) -> Option<usize> {
        match eligible {
            Some(mask) if mask.iter().any(|&ok| ok) => {
                let s = &self.state;
                (0..s.availability_index.len())
                    .find(|&vm| mask[vm] && s.availability_index[vm] < s.threshold)
            }
            _ => throttled_next(&self.state),
        }
    }

    fn on_allocate(&mut self, vm: usize) {
        notify_allocate(&mut self.state, vm);
        assert!(
            self.state.availability_index[vm] <= self.state.threshold,
            "throttled vm {vm} allocated past its threshold"
        );
    }

    fn on_release(&mut self, vm: usize) {
        notify_release(&mut self.state, vm);
    }

    fn active_counts(&self) -> &[u32] {
        &self.state.availability_index
    }

    fn threshold(&self) -> Option<u32> {
        Some(self.state.threshold)
    }
}

// ---- registry ----

/// Construction parameters handed to balancer factories.
#[derive(Debug, Clone, Copy)]
pub struct BalancerParams {
    pub vm_count: usize,
    pub throttle_threshold: u32,
}

pub type BalancerFactory = fn(&BalancerParams) -> Box<dyn VmLoadBalancer>;

/// Name-keyed table of balancer constructors.
#[derive(Clone)]
pub struct BalancerRegistry {
    factories: BTreeMap<&'static str, BalancerFactory>,
}

impl Default for BalancerRegistry {
    fn default() -> Self {
        let mut r = BalancerRegistry::empty();
        r.register(PolicyKind::RoundRobin.name(), |p| Box::new(RoundRobin::new(p.vm_count)));
        r.register(PolicyKind::Esce.name(), |p| Box::new(EqualSpread::new(p.vm_count)));
        r.register(PolicyKind::Throttled.name(), |p| {
            Box::new(Throttled::new(p.vm_count, p.throttle_threshold))
        });
        r
    }
}

impl BalancerRegistry {
    pub fn empty() -> Self {
        BalancerRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Adds or replaces the factory registered under `name`.
    pub fn register(&mut self, name: &'static str, factory: BalancerFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, name: &str, params: &BalancerParams) -> Option<Box<dyn VmLoadBalancer>> {
        self.factories.get(name).map(|f| f(params))
    }
}

// ---- service broker ----

/// Per-user-base data center preference lists, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokerTable {
    preferences: Vec<Vec<usize>>,
}

impl BrokerTable {
    /// Orders data centers by one-way delay from each user base's region;
    /// equal delays fall back to data center index.
    pub fn build(cfg: &SimulationConfig) -> Self {
        let preferences = cfg
            .user_bases
            .iter()
            .map(|ub| {
                let mut dcs: Vec<usize> = (0..cfg.data_centers.len()).collect();
                dcs.sort_by(|&a, &b| {
                    let da = cfg.latency.delay(ub.region, cfg.data_centers[a].region);
                    let db = cfg.latency.delay(ub.region, cfg.data_centers[b].region);
                    da.total_cmp(&db).then(a.cmp(&b))
                });
                dcs
            })
            .collect();
        BrokerTable { preferences }
    }

    pub fn preferences(&self, ub: usize) -> &[usize] {
        &self.preferences[ub]
    }
}

/// Closest data center for `ub`.
pub fn broker_select(ub: usize, table: &BrokerTable) -> usize {
    table.preferences[ub][0]
}
