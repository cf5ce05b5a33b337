//! Request arrivals.
//!
//! Each user base emits an inhomogeneous Poisson stream whose rate is
//! piecewise constant per hour of day (peak or off-peak population). Streams
//! are produced by thinning a homogeneous process at the window's maximum
//! rate, one independent seeded generator per user base.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::config::UserBase;
use crate::time::{SimTime, MICROS_PER_HOUR, MICROS_PER_MS};

pub type RequestId = u64;

/// One unit of user-base traffic and its lifecycle timestamps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: RequestId,
    pub source_ub: usize,
    pub created: SimTime,
    /// MI.
    pub length: u64,
    /// Bytes.
    pub size: u64,
    pub assigned_dc: Option<usize>,
    pub assigned_vm: Option<usize>,
    /// First arrival at any data center.
    pub dc_arrival: Option<SimTime>,
    pub service_start: Option<SimTime>,
    pub service_end: Option<SimTime>,
    pub returned: Option<SimTime>,
    pub migrations: u32,
    /// Sum of every network leg taken so far.
    pub network: SimTime,
    /// Share of `network` spent moving between data centers.
    pub migration_transit: SimTime,
    /// Position in the user base's data center preference list.
    pub chain_pos: u32,
    /// Set once every data center refused the request and it is heading back
    /// to (or waiting at) its preferred data center.
    pub parked: bool,
}

impl Request {
    pub fn new(id: RequestId, source_ub: usize, created: SimTime, length: u64, size: u64) -> Self {
        Request {
            id,
            source_ub,
            created,
            length,
            size,
            assigned_dc: None,
            assigned_vm: None,
            dc_arrival: None,
            service_start: None,
            service_end: None,
            returned: None,
            migrations: 0,
            network: SimTime::ZERO,
            migration_transit: SimTime::ZERO,
            chain_pos: 0,
            parked: false,
        }
    }

    /// Time spent waiting at data centers for a VM, excluding transit.
    pub fn queue_wait(&self) -> Option<SimTime> {
        let start = self.service_start?;
        let arrival = self.dc_arrival?;
        (start - arrival).checked_sub(self.migration_transit)
    }
}

/// Deterministic pseudo-random stream. Streams sharing a seed but with
/// different ids are independent.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream(rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }
}

/// Stream id used for user base `ub`.
pub fn user_base_stream(ub: usize) -> u64 {
    ub as u64 + 1
}

/// Users active during `hour` (hour of day, wrapped modulo 24).
pub fn active_users(ub: &UserBase, hour: u32) -> u64 {
    if ub.peak_hours.contains(hour % 24) {
        ub.users_peak
    } else {
        ub.users_offpeak
    }
}

/// Requests per millisecond during `hour`.
pub fn arrival_rate(ub: &UserBase, hour: u32) -> f64 {
    active_users(ub, hour) as f64 * ub.requests_per_user_per_hour / 3_600_000.0
}

/// A generated arrival: request `request_id` from user base `ub` at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub request_id: RequestId,
    pub ub: usize,
    pub time: SimTime,
}

/// Arrivals of `ub` (index `ub_index`) within `[t0, t1)`, sorted by time.
/// Ids are taken from `next_id`, which is advanced past the ids used.
pub fn generate_arrivals(
    ub: &UserBase,
    ub_index: usize,
    window: (SimTime, SimTime),
    rng: &mut RngStream,
    next_id: &mut RequestId,
) -> Vec<Arrival> {
    let (t0, t1) = window;
    assert!(t0 < t1, "empty arrival window");
    let first_hour = t0.hour_index();
    let last_hour = (t1.as_micros() - 1) / MICROS_PER_HOUR;
    // rates per microsecond
    let rate_us = |h: u64| arrival_rate(ub, h as u32) / MICROS_PER_MS as f64;
    let lambda_max = (first_hour..=last_hour).map(rate_us).fold(0.0, f64::max);
    if lambda_max <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(lambda_max).expect("positive rate");
    let rng = rng.rng();
    let mut out = Vec::new();
    let mut t = t0.as_micros() as f64;
    let end = t1.as_micros() as f64;
    loop {
        t += exp.sample(rng);
        if t >= end {
            break;
        }
        let at = SimTime::from_micros(t as u64);
        let rate = rate_us(at.hour_index());
        if rate >= lambda_max || rng.random::<f64>() * lambda_max < rate {
            out.push(Arrival {
                request_id: *next_id,
                ub: ub_index,
                time: at,
            });
            *next_id += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_paper_config, HourRange};

    fn ub() -> UserBase {
        default_paper_config().user_bases[0].clone()
    }

    #[test]
    fn peak_rate_arithmetic() {
        let u = ub();
        assert_eq!(arrival_rate(&u, 4), 12_000.0 / 3_600_000.0);
        assert!((arrival_rate(&u, 4) - 1.0 / 300.0).abs() < 1e-15);
    }

    #[test]
    fn offpeak_zero_users_gives_zero_rate() {
        let mut u = ub();
        u.users_offpeak = 0;
        assert_eq!(arrival_rate(&u, 12), 0.0);
    }

    #[test]
    fn peak_end_hour_is_offpeak() {
        let u = ub();
        assert_eq!(u.peak_hours, HourRange { start: 3, end: 9 });
        assert_eq!(arrival_rate(&u, 9), 100.0 * 12.0 / 3_600_000.0);
        assert_eq!(arrival_rate(&u, 8), 1000.0 * 12.0 / 3_600_000.0);
        // hours wrap daily
        assert_eq!(arrival_rate(&u, 24 + 3), arrival_rate(&u, 3));
    }

    #[test]
    fn zero_rate_generates_nothing() {
        let mut u = ub();
        u.users_peak = 0;
        u.users_offpeak = 0;
        let mut id = 0;
        let v = generate_arrivals(
            &u,
            0,
            (SimTime::ZERO, SimTime::from_hours(24)),
            &mut RngStream::new(1, 1),
            &mut id,
        );
        assert!(v.is_empty());
        assert_eq!(id, 0);
    }

    #[test]
    fn same_seed_same_stream() {
        let u = ub();
        let w = (SimTime::ZERO, SimTime::from_hours(5));
        let (mut a, mut b) = (0, 0);
        let x = generate_arrivals(&u, 0, w, &mut RngStream::new(9, 1), &mut a);
        let y = generate_arrivals(&u, 0, w, &mut RngStream::new(9, 1), &mut b);
        assert_eq!(x, y);
        assert!(!x.is_empty());
        let z = generate_arrivals(&u, 0, w, &mut RngStream::new(9, 2), &mut 0);
        assert_ne!(x, z);
    }

    #[test]
    fn arrivals_sorted_and_inside_window() {
        let u = ub();
        let w = (SimTime::from_micros(1_234_567), SimTime::from_hours(7));
        let v = generate_arrivals(&u, 3, w, &mut RngStream::new(3, 4), &mut 100);
        assert!(v.windows(2).all(|p| p[0].time <= p[1].time));
        assert!(v.iter().all(|a| a.time >= w.0 && a.time < w.1 && a.ub == 3));
        let ids: Vec<_> = v.iter().map(|a| a.request_id).collect();
        assert_eq!(ids, (100..100 + v.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn consecutive_windows_concatenate() {
        let u = ub();
        let mut rng = RngStream::new(5, 1);
        let mut id = 0;
        let mut all = Vec::new();
        for h in 0..6 {
            let w = (SimTime::from_hours(h), SimTime::from_hours(h + 1));
            let part = generate_arrivals(&u, 0, w, &mut rng, &mut id);
            assert!(part.iter().all(|a| a.time.hour_index() == h));
            all.extend(part);
        }
        assert!(all.windows(2).all(|p| p[0].time <= p[1].time));
        assert!(all.windows(2).all(|p| p[0].request_id + 1 == p[1].request_id));
    }

    #[test]
    fn thinning_respects_rate_change_inside_window() {
        // one window spanning off-peak hour 2 and peak hour 3
        let u = ub();
        let mut counts = [0usize; 2];
        for seed in 0..50 {
            let v = generate_arrivals(
                &u,
                0,
                (SimTime::from_hours(2), SimTime::from_hours(4)),
                &mut RngStream::new(seed, 1),
                &mut 0,
            );
            for a in v {
                counts[(a.time.hour_index() - 2) as usize] += 1;
            }
        }
        // expected 1200/h and 12000/h per seed
        let off = counts[0] as f64 / 50.0;
        let peak = counts[1] as f64 / 50.0;
        assert!((off - 1200.0).abs() < 5.0 * (1200.0f64 / 50.0).sqrt(), "{off}");
        assert!((peak - 12000.0).abs() < 5.0 * (12000.0f64 / 50.0).sqrt(), "{peak}");
    }

    #[test]
    fn queue_wait_excludes_transit() {
        let mut r = Request::new(0, 0, SimTime::ZERO, 1, 1);
        r.dc_arrival = Some(SimTime::from_micros(1_000));
        r.migration_transit = SimTime::from_micros(300);
        r.service_start = Some(SimTime::from_micros(1_500));
        assert_eq!(r.queue_wait(), Some(SimTime::from_micros(200)));
    }
}
