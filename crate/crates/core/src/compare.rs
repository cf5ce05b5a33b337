//! Cross-policy comparison over replicated seeds.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::balancer::PolicyKind;
use crate::config::SimulationConfig;
use crate::sim::{simulate, SimError, SimOptions};
use crate::vm::SchedulingMode;

/// Policy and scheduling mode run together in a comparison.
pub type Pairing = (PolicyKind, SchedulingMode);

/// RR with time-shared VMs, ESCE and Throttled with space-shared VMs.
pub const NARRATIVE_PAIRING: [Pairing; 3] = [
    (PolicyKind::RoundRobin, SchedulingMode::TimeSharedPreemptive),
    (PolicyKind::Esce, SchedulingMode::SpaceSharedNonPreemptive),
    (PolicyKind::Throttled, SchedulingMode::SpaceSharedNonPreemptive),
];

/// Overall figures of one (policy, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub policy: String,
    pub mode: String,
    pub seed: u64,
    pub generated: u64,
    pub response_avg_ms: Option<f64>,
    pub response_min_ms: Option<f64>,
    pub response_max_ms: Option<f64>,
    pub processing_avg_ms: Option<f64>,
    pub processing_min_ms: Option<f64>,
    pub processing_max_ms: Option<f64>,
    pub service_avg_ms: Option<f64>,
    pub queue_wait_avg_ms: Option<f64>,
    pub migrations: u64,
    pub peak_in_flight: u32,
}

/// Seed-averaged figures for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: String,
    pub mode: String,
    pub seeds: usize,
    pub response_avg_ms: Option<f64>,
    pub response_min_ms: Option<f64>,
    pub response_max_ms: Option<f64>,
    pub processing_avg_ms: Option<f64>,
    pub processing_min_ms: Option<f64>,
    pub processing_max_ms: Option<f64>,
    pub service_avg_ms: Option<f64>,
    pub queue_wait_avg_ms: Option<f64>,
    pub migrations_avg: f64,
}

/// Orderings between the three standard policies. Fields are `None` when a
/// policy is missing from the comparison or produced no samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub lowest_response: Option<String>,
    pub esce_response_le_rr: Option<bool>,
    pub rr_response_le_throttled: Option<bool>,
    pub throttled_processing_over_rr: Option<f64>,
    pub throttled_processing_gt_rr: Option<bool>,
    pub throttled_processing_gt_esce: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyAggregate>,
    pub verdicts: Verdicts,
    pub rows: Vec<SeedRow>,
}

impl CompareReport {
    pub fn policy(&self, p: PolicyKind) -> Option<&PolicyAggregate> {
        self.policies.iter().find(|a| a.policy == p.name())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn run_one(cfg: &SimulationConfig, (policy, mode): Pairing, seed: u64) -> Result<SeedRow, SimError> {
    let mut c = cfg.clone();
    c.policy = policy;
    c.scheduling_mode = mode;
    c.seed = seed;
    let out = simulate(&c, &SimOptions::default())?;
    let s = out.metrics.summarize();
    let r = s.response_time.overall();
    let p = s.dc_processing_time.overall();
    Ok(SeedRow {
        policy: policy.name().into(),
        mode: mode.name().into(),
        seed,
        generated: out.generated,
        response_avg_ms: r.avg_ms,
        response_min_ms: r.min_ms,
        response_max_ms: r.max_ms,
        processing_avg_ms: p.avg_ms,
        processing_min_ms: p.min_ms,
        processing_max_ms: p.max_ms,
        service_avg_ms: s.dc_service_time.overall().avg_ms,
        queue_wait_avg_ms: s.dc_queue_wait.overall().avg_ms,
        migrations: out.metrics.migrations(),
        peak_in_flight: out.peak_in_flight.iter().copied().max().unwrap_or(0),
    })
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate(pair: Pairing, rows: &[&SeedRow]) -> PolicyAggregate {
    let m = |f: fn(&SeedRow) -> Option<f64>| mean(rows.iter().map(|r| f(r)));
    PolicyAggregate {
        policy: pair.0.name().into(),
        mode: pair.1.name().into(),
        seeds: rows.len(),
        response_avg_ms: m(|r| r.response_avg_ms),
        response_min_ms: m(|r| r.response_min_ms),
        response_max_ms: m(|r| r.response_max_ms),
        processing_avg_ms: m(|r| r.processing_avg_ms),
        processing_min_ms: m(|r| r.processing_min_ms),
        processing_max_ms: m(|r| r.processing_max_ms),
        service_avg_ms: m(|r| r.service_avg_ms),
        queue_wait_avg_ms: m(|r| r.queue_wait_avg_ms),
        migrations_avg: rows.iter().map(|r| r.migrations as f64).sum::<f64>() / rows.len().max(1) as f64,
    }
}

fn verdicts(policies: &[PolicyAggregate]) -> Verdicts {
    let get = |p: PolicyKind| policies.iter().find(|a| a.policy == p.name());
    let resp = |p| get(p).and_then(|a| a.response_avg_ms);
    let proc_ = |p| get(p).and_then(|a| a.processing_avg_ms);
    let (rr, es, th) = (PolicyKind::RoundRobin, PolicyKind::Esce, PolicyKind::Throttled);
    let both = |a: Option<f64>, b: Option<f64>| a.zip(b);
    Verdicts {
        lowest_response: policies
            .iter()
            .filter_map(|a| a.response_avg_ms.map(|v| (v, &a.policy)))
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, p)| p.clone()),
        esce_response_le_rr: both(resp(es), resp(rr)).map(|(e, r)| e <= r),
        rr_response_le_throttled: both(resp(rr), resp(th)).map(|(r, t)| r <= t),
        throttled_processing_over_rr: both(proc_(th), proc_(rr)).map(|(t, r)| t / r),
        throttled_processing_gt_rr: both(proc_(th), proc_(rr)).map(|(t, r)| t > r),
        throttled_processing_gt_esce: both(proc_(th), proc_(es)).map(|(t, e)| t > e),
    }
}

/// Runs every pairing on every seed (in parallel across `threads` workers)
/// and aggregates by seed-averaging each policy's overall figures.
pub fn compare_policies(
    cfg: &SimulationConfig,
    seeds: &[u64],
    pairing: &[Pairing],
    threads: usize,
) -> Result<CompareReport, SimError> {
    let jobs: Vec<(usize, Pairing, u64)> = pairing
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .enumerate()
        .map(|(i, (p, s))| (i, p, s))
        .collect();
    let results: Mutex<Vec<Option<Result<SeedRow, SimError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&(idx, pair, seed)) = jobs.get(i) else { break };
                let r = run_one(cfg, pair, seed);
                results.lock().unwrap()[idx] = Some(r);
            });
        }
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for r in results.into_inner().unwrap() {
        rows.push(r.expect("every job ran")?);
    }
    let policies: Vec<_> = pairing
        .iter()
        .map(|&p| {
            let mine: Vec<_> = rows
                .iter()
                .filter(|r| r.policy == p.0.name() && r.mode == p.1.name())
                .collect();
            aggregate(p, &mine)
        })
        .collect();
    Ok(CompareReport {
        seeds: seeds.to_vec(),
        verdicts: verdicts(&policies),
        policies,
        rows,
    })
}
