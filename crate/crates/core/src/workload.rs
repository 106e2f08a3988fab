//! Required transaction rates and arrival schedules.

use std::fmt;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// An exact rate: `basis_count / horizon_seconds`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadDerivation {
    pub basis_count: u128,
    pub horizon_seconds: u64,
    pub tps: Ratio<u128>,
}

impl LoadDerivation {
    pub fn as_f64(&self) -> f64 {
        *self.tps.numer() as f64 / *self.tps.denom() as f64
    }

    /// Display form: two significant figures, marked with `≈` when that
    /// differs from plain integer rounding.
    pub fn display(&self) -> String {
        let v = self.as_f64();
        let sig2 = round_sig(v, 2);
        if sig2 == v.round() {
            format!("{sig2}")
        } else {
            format!("≈{sig2}")
        }
    }
}

impl fmt::Display for LoadDerivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

fn round_sig(v: f64, digits: i32) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let mag = v.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - mag);
    (v * scale).round() / scale
}

fn derive(basis: u128, horizon: u64) -> Result<LoadDerivation, WorkloadError> {
    if horizon == 0 {
        return Err(WorkloadError::InvalidArgument("horizon must be positive".into()));
    }
    if basis == 0 {
        return Err(WorkloadError::InvalidArgument("count must be positive".into()));
    }
    Ok(LoadDerivation {
        basis_count: basis,
        horizon_seconds: horizon,
        tps: Ratio::new(basis, horizon as u128),
    })
}

pub fn required_registration_tps(
    population: u64,
    doses_per_person: u64,
    horizon_seconds: u64,
) -> Result<LoadDerivation, WorkloadError> {
    if doses_per_person == 0 {
        return Err(WorkloadError::InvalidArgument("doses must be positive".into()));
    }
    derive(population as u128 * doses_per_person as u128, horizon_seconds)
}

pub fn required_verification_tps(annual_passengers: u64, horizon_seconds: u64) -> Result<LoadDerivation, WorkloadError> {
    derive(annual_passengers as u128, horizon_seconds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalMode {
    #[default]
    Uniform,
    Poisson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalSchedule {
    pub mode: ArrivalMode,
    pub tps: f64,
    pub duration_seconds: f64,
    pub seed: u64,
    pub arrivals: Vec<SimTime>,
}

pub fn generate_arrivals(
    tps: f64,
    duration_seconds: f64,
    mode: ArrivalMode,
    seed: u64,
) -> Result<ArrivalSchedule, WorkloadError> {
    if !(tps > 0.0 && tps.is_finite()) {
        return Err(WorkloadError::InvalidArgument("tps must be positive".into()));
    }
    if !(duration_seconds > 0.0 && duration_seconds.is_finite()) {
        return Err(WorkloadError::InvalidArgument("duration must be positive".into()));
    }
    let arrivals = match mode {
        ArrivalMode::Uniform => {
            // Tolerance keeps exact products such as 28 x 60 from losing an arrival to rounding.
            let n = (tps * duration_seconds + 1e-9).floor() as u64;
            (1..=n)
                .map(|k| SimTime((k as f64 * 1e6 / tps).round() as u64))
                .collect()
        }
        ArrivalMode::Poisson => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let exp = Exp::new(tps).expect("positive rate");
            let mut t = 0.0f64;
            let mut out = Vec::new();
            loop {
                t += exp.sample(&mut rng);
                if t > duration_seconds {
                    break;
                }
                out.push(SimTime::from_secs_f64(t));
            }
            out
        }
    };
    Ok(ArrivalSchedule {
        mode,
        tps,
        duration_seconds,
        seed,
        arrivals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_rate_for_eu27() {
        let d = required_registration_tps(447_500_000, 2, 31_536_000).unwrap();
        assert!((d.as_f64() - 28.38).abs() < 0.005);
        assert_eq!(d.display(), "28");
        assert_eq!(d.tps, Ratio::new(895_000_000u128, 31_536_000));
    }

    #[test]
    fn verification_rate_for_passengers() {
        let d = required_verification_tps(3_200_000_000, 31_536_000).unwrap();
        assert!((d.as_f64() - 101.47).abs() < 0.005);
        assert_eq!(d.display(), "≈100");
    }

    #[test]
    fn unit_rates() {
        assert_eq!(required_registration_tps(1, 1, 1).unwrap().as_f64(), 1.0);
        assert_eq!(required_verification_tps(31_536_000, 31_536_000).unwrap().display(), "1");
    }

    #[test]
    fn linearity_is_exact() {
        let a = required_registration_tps(1_000_003, 2, 7_777).unwrap().tps;
        let b = required_registration_tps(2_000_006, 2, 7_777).unwrap().tps;
        assert_eq!(b, a * 2);
        let p = required_verification_tps(3_200_000_000, 31_536_000).unwrap().tps;
        let h = required_verification_tps(1_600_000_000, 31_536_000).unwrap().tps;
        assert_eq!(p, h * 2);
    }

    #[test]
    fn zero_horizon_rejected() {
        assert!(required_registration_tps(1, 2, 0).is_err());
        assert!(required_verification_tps(1, 0).is_err());
    }

    #[test]
    fn uniform_arrivals() {
        let s = generate_arrivals(2.0, 3.0, ArrivalMode::Uniform, 0).unwrap();
        let secs: Vec<f64> = s.arrivals.iter().map(|t| t.as_secs_f64()).collect();
        assert_eq!(secs, vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(generate_arrivals(28.0, 60.0, ArrivalMode::Uniform, 0).unwrap().arrivals.len(), 1680);
    }

    #[test]
    fn poisson_is_seeded() {
        let a = generate_arrivals(10.0, 100.0, ArrivalMode::Poisson, 9).unwrap();
        let b = generate_arrivals(10.0, 100.0, ArrivalMode::Poisson, 9).unwrap();
        let c = generate_arrivals(10.0, 100.0, ArrivalMode::Poisson, 10).unwrap();
        assert_eq!(a.arrivals, b.arrivals);
        assert_ne!(a.arrivals, c.arrivals);
        assert!(a.arrivals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bad_arguments() {
        assert!(generate_arrivals(0.0, 1.0, ArrivalMode::Uniform, 0).is_err());
        assert!(generate_arrivals(1.0, -1.0, ArrivalMode::Poisson, 0).is_err());
        assert!(generate_arrivals(f64::NAN, 1.0, ArrivalMode::Uniform, 0).is_err());
    }
}
