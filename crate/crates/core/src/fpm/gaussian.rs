//! Moment test for "looks standard Gaussian".
//!
//! The batch is first standardized with one scalar mean and standard
//! deviation taken over every entry, then each coordinate's mean, variance,
//! skewness and excess kurtosis are checked against fixed bounds.

use serde::Serialize;

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 100;
pub const MEAN_BOUND: f64 = 0.2;
pub const VARIANCE_RANGE: (f64, f64) = (0.5, 2.0);
pub const SKEW_BOUND: f64 = 0.5;
pub const EXCESS_KURTOSIS_BOUND: f64 = 1.0;
/// Fraction of coordinates that must pass for the batch to pass.
pub const PASS_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skew: f64,
    pub excess_kurtosis: f64,
}

impl Moments {
    fn of(xs: impl Iterator<Item = f64> + Clone) -> Moments {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for x in xs {
            let d = x - mean;
            m2 += d * d;
            m3 += d * d * d;
            m4 += d * d * d * d;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        let (skew, excess_kurtosis) = if m2 > 0.0 {
            (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
        } else {
            (f64::NAN, f64::NAN)
        };
        Moments {
            mean,
            variance: m2,
            skew,
            excess_kurtosis,
        }
    }

    fn mean_ok(&self) -> bool {
        self.mean.abs() <= MEAN_BOUND
    }

    fn variance_ok(&self) -> bool {
        self.variance >= VARIANCE_RANGE.0 && self.variance <= VARIANCE_RANGE.1
    }

    fn skew_ok(&self) -> bool {
        self.skew.abs() <= SKEW_BOUND
    }

    fn kurtosis_ok(&self) -> bool {
        self.excess_kurtosis.abs() <= EXCESS_KURTOSIS_BOUND
    }

    /// NaN moments (zero variance) never pass.
    pub fn within_bounds(&self) -> bool {
        self.mean_ok() && self.variance_ok() && self.skew_ok() && self.kurtosis_ok()
    }
}

/// Number of coordinates failing each bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FailureCounts {
    pub mean: usize,
    pub variance: usize,
    pub skew: usize,
    pub kurtosis: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianityReport {
    pub samples: usize,
    /// Scalar mean and standard deviation removed before the per-coordinate
    /// tests.
    pub batch_mean: f64,
    pub batch_std: f64,
    pub pooled: Moments,
    pub coordinate_pass: Vec<bool>,
    pub pass_fraction: f64,
    pub failures: FailureCounts,
    pub worst_mean: f64,
    pub worst_variance_ratio: f64,
    pub worst_skew: f64,
    pub worst_excess_kurtosis: f64,
    pub passed: bool,
}

pub fn gaussianity_check<V: AsRef<[f32]>>(vs: &[V]) -> Result<GaussianityReport> {
    if vs.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            got: vs.len(),
            min: MIN_SAMPLES,
        });
    }
    let dim = vs[0].as_ref().len();
    if dim == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(v) = vs.iter().find(|v| v.as_ref().len() != dim) {
        return Err(Error::LengthMismatch {
            left: dim,
            right: v.as_ref().len(),
        });
    }
    let all = || vs.iter().flat_map(|v| v.as_ref().iter().map(|&x| x as f64));
    let raw = Moments::of(all());
    let batch_std = raw.variance.sqrt();
    let standardize = |x: f64| if batch_std > 0.0 { (x - raw.mean) / batch_std } else { 0.0 };
    let pooled = Moments::of(all().map(standardize));

    let per: Vec<Moments> = (0..dim)
        .map(|j| Moments::of(vs.iter().map(|v| standardize(v.as_ref()[j] as f64))))
        .collect();
    let failures = FailureCounts {
        mean: per.iter().filter(|m| !m.mean_ok()).count(),
        variance: per.iter().filter(|m| !m.variance_ok()).count(),
        skew: per.iter().filter(|m| !m.skew_ok()).count(),
        kurtosis: per.iter().filter(|m| !m.kurtosis_ok()).count(),
    };
    let coordinate_pass: Vec<bool> = per.iter().map(Moments::within_bounds).collect();
    let pass_fraction = coordinate_pass.iter().filter(|&&p| p).count() as f64 / dim as f64;
    let worst = |f: fn(&Moments) -> f64| per.iter().map(f).fold(0.0f64, |a, b| if b.is_nan() { b } else { a.max(b) });
    Ok(GaussianityReport {
        samples: vs.len(),
        batch_mean: raw.mean,
        batch_std,
        pooled,
        pass_fraction,
        failures,
        worst_mean: worst(|m| m.mean.abs()),
        worst_variance_ratio: worst(|m| m.variance.max(1.0 / m.variance)),
        worst_skew: worst(|m| m.skew.abs()),
        worst_excess_kurtosis: worst(|m| m.excess_kurtosis.abs()),
        passed: batch_std > 0.0 && pooled.within_bounds() && pass_fraction >= PASS_FRACTION,
        coordinate_pass,
    })
}
