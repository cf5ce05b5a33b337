#![allow(dead_code)]

use cloudlb_core::config::{
    AvailabilityConfig, DataCenter, HourRange, LatencyMatrix, SimulationConfig, UserBase, VmSpec,
};
use cloudlb_core::{PolicyKind, SchedulingMode};
use rand::seq::IndexedRandom;
use rand::Rng;

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// A small valid scenario with random topology, load and policy.
pub fn random_config(rng: &mut impl Rng) -> SimulationConfig {
    let regions = rng.random_range(1..=4);
    let mut delay_ms = vec![vec![0.0; regions]; regions];
    #[allow(clippy::needless_range_loop)]
    for i in 0..regions {
        delay_ms[i][i] = round3(rng.random_range(1.0..50.0));
        for j in 0..i {
            let d = round3(rng.random_range(20.0..200.0));
            delay_ms[i][j] = d;
            delay_ms[j][i] = d;
        }
    }
    let user_bases = (0..rng.random_range(1..=4))
        .map(|i| {
            let users_peak = rng.random_range(0..=300);
            let start = rng.random_range(0..=24);
            UserBase {
                id: format!("U{i}"),
                region: rng.random_range(0..regions),
                users_peak,
                users_offpeak: rng.random_range(0..=users_peak),
                peak_hours: HourRange {
                    start,
                    end: rng.random_range(start..=24),
                },
                requests_per_user_per_hour: round3(rng.random_range(1.0..30.0)),
                request_size: rng.random_range(1..=10_000),
                request_length: rng.random_range(50..=5_000),
            }
        })
        .collect();
    let data_centers = (0..rng.random_range(1..=3))
        .map(|i| DataCenter {
            id: format!("D{i}"),
            region: rng.random_range(0..regions),
            vms: (0..rng.random_range(1..=4))
                .map(|id| VmSpec {
                    id,
                    mips: rng.random_range(10_000..=300_000),
                    memory: 1 << 30,
                    bandwidth: 1_000_000,
                    loss_rate: *[0.0, 0.5, 2.0].choose(rng).unwrap(),
                    downtime_min: *[0.0, 1.0, 10.0].choose(rng).unwrap(),
                })
                .collect(),
        })
        .collect();
    SimulationConfig {
        regions,
        user_bases,
        data_centers,
        latency: LatencyMatrix {
            jitter_ms: round3(rng.random_range(0.0..10.0)),
            delay_ms,
        },
        policy: *PolicyKind::ALL.choose(rng).unwrap(),
        scheduling_mode: *[SchedulingMode::TimeSharedPreemptive, SchedulingMode::SpaceSharedNonPreemptive]
            .choose(rng)
            .unwrap(),
        throttle_threshold: rng.random_range(1..=3),
        duration_hours: rng.random_range(1..=3),
        seed: rng.random_range(0..=i64::MAX as u64),
        availability: AvailabilityConfig {
            enabled: rng.random_bool(0.3),
            threshold: 0.9,
            measurement_period_min: 60.0,
        },
    }
}
