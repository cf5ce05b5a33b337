//! Expected resource availability.
//!
//! `a = (mp - r * d) / mp` where `mp` is the measurement period, `r` the
//! expected number of loss events in that period and `d` the expected
//! downtime per event. The raw value can drop below zero when expected
//! downtime exceeds the period; it is clamped to `[0, 1]` and flagged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AvailabilityError {
    #[error("measurement period must be positive and finite, got {0}")]
    Period(f64),
    #[error("{name} must be non-negative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("threshold must lie in [0, 1], got {0}")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityParams {
    /// Measurement period, minutes.
    pub mp: f64,
    /// Expected loss events per measurement period.
    pub r_l: f64,
    /// Expected downtime per loss event, minutes.
    pub d_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityRating {
    pub a_e: f64,
    /// Value before clamping to `[0, 1]`.
    pub raw: f64,
    pub clamped: bool,
}

impl AvailabilityParams {
    pub fn validate(&self) -> Result<(), AvailabilityError> {
        if !(self.mp.is_finite() && self.mp > 0.0) {
            return Err(AvailabilityError::Period(self.mp));
        }
        for (name, value) in [("r_l", self.r_l), ("d_e", self.d_e)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(AvailabilityError::Negative { name, value });
            }
        }
        Ok(())
    }
}

pub fn expected_availability(p: &AvailabilityParams) -> Result<AvailabilityRating, AvailabilityError> {
    p.validate()?;
    let raw = (p.mp - p.r_l * p.d_e) / p.mp;
    let a_e = raw.clamp(0.0, 1.0);
    Ok(AvailabilityRating {
        a_e,
        raw,
        clamped: a_e != raw,
    })
}

pub fn is_available(p: &AvailabilityParams, threshold: f64) -> Result<bool, AvailabilityError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AvailabilityError::Threshold(threshold));
    }
    Ok(expected_availability(p)?.a_e >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(mp: f64, r_l: f64, d_e: f64) -> AvailabilityParams {
        AvailabilityParams { mp, r_l, d_e }
    }

    #[test]
    fn one_minute_lost_per_hour() {
        let r = expected_availability(&p(60.0, 1.0, 1.0)).unwrap();
        assert!((r.a_e - 59.0 / 60.0).abs() < 1e-12);
        assert!(!r.clamped);
        assert_eq!(format!("{:.2}", r.a_e * 100.0), "98.33");
    }

    #[test]
    fn no_loss_is_full_availability() {
        assert_eq!(expected_availability(&p(10.0, 0.0, 50.0)).unwrap().a_e, 1.0);
    }

    #[test]
    fn negative_raw_value_clamps_and_flags() {
        let r = expected_availability(&p(10.0, 2.0, 10.0)).unwrap();
        assert_eq!(r.raw, -1.0);
        assert_eq!(r.a_e, 0.0);
        assert!(r.clamped);
    }

    #[test]
    fn zero_period_is_domain_error() {
        assert_eq!(
            expected_availability(&p(0.0, 1.0, 1.0)),
            Err(AvailabilityError::Period(0.0))
        );
        assert!(expected_availability(&p(5.0, -1.0, 1.0)).is_err());
    }

    #[test]
    fn admission_thresholds() {
        assert!(is_available(&p(60.0, 1.0, 1.0), 0.95).unwrap());
        assert!(!is_available(&p(60.0, 0.5, 0.1), 1.0).unwrap());
        assert!(is_available(&p(1.0, 100.0, 100.0), 0.0).unwrap());
        assert!(is_available(&p(1.0, 1.0, 1.0), 1.5).is_err());
    }

    proptest! {
        #[test]
        fn always_in_unit_interval(mp in 1e-3f64..1e4, r in 0f64..100.0, d in 0f64..1e3) {
            let a = expected_availability(&p(mp, r, d)).unwrap().a_e;
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn monotone_in_each_argument(mp in 1.0f64..1e3, r in 0f64..10.0, d in 0f64..10.0,
                                     dr in 0f64..5.0, dd in 0f64..5.0, dm in 0f64..100.0) {
            let base = expected_availability(&p(mp, r, d)).unwrap().a_e;
            prop_assert!(expected_availability(&p(mp, r + dr, d)).unwrap().a_e <= base);
            prop_assert!(expected_availability(&p(mp, r, d + dd)).unwrap().a_e <= base);
            prop_assert!(expected_availability(&p(mp + dm, r, d)).unwrap().a_e >= base);
        }

        #[test]
        fn scale_invariant_in_period_and_downtime(mp in 1.0f64..1e3, r in 0f64..10.0,
                                                  d in 0f64..10.0, k in 0.01f64..100.0) {
            let a = expected_availability(&p(mp, r, d)).unwrap().a_e;
            let b = expected_availability(&p(mp * k, r, d * k)).unwrap().a_e;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
