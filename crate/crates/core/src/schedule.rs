//! Time-varying matrix schedules.
//!
//! A `MatrixSchedule` is one of three reproducible-from-file forms: a constant
//! matrix, linear interpolation between time-stamped samples, or a named
//! scalar profile multiplying a fixed base matrix. Arbitrary code-valued
//! functions are deliberately excluded from the config surface.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named scalar function of time used by the `ScalarProfile` schedule kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ScalarProfile {
    /// Constant 1.
    One,
    /// cos(2*pi*t / period).
    Cosine { period: f64 },
    /// exp(rate * t).
    ExpRate { rate: f64 },
    /// a + b*t.
    Affine { a: f64, b: f64 },
}

impl ScalarProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ScalarProfile::One => 1.0,
            ScalarProfile::Cosine { period } => (2.0 * std::f64::consts::PI * t / period).cos(),
            ScalarProfile::ExpRate { rate } => (rate * t).exp(),
            ScalarProfile::Affine { a, b } => a + b * t,
        }
    }

    fn validate(&self) -> Result<()> {
        if let ScalarProfile::Cosine { period } = self {
            if !(*period > 0.0) {
                return Err(Error::Config(format!(
                    "cosine profile needs a positive period, got {period}"
                )));
            }
        }
        Ok(())
    }
}

/// A real matrix-valued function of time M(t) on a finite interval.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSchedule {
    Constant {
        base: DMatrix<f64>,
    },
    /// Piecewise-linear interpolation of samples with strictly increasing times.
    SampledLinear {
        samples: Vec<(f64, DMatrix<f64>)>,
    },
    /// M(t) = profile(t) * base.
    ScalarProfile {
        profile: ScalarProfile,
        base: DMatrix<f64>,
    },
}

impl MatrixSchedule {
    pub fn constant(base: DMatrix<f64>) -> Self {
        MatrixSchedule::Constant { base }
    }

    pub fn scalar_profile(profile: ScalarProfile, base: DMatrix<f64>) -> Result<Self> {
        profile.validate()?;
        Ok(MatrixSchedule::ScalarProfile { profile, base })
    }

    pub fn sampled_linear(samples: Vec<(f64, DMatrix<f64>)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Config(
                "sampled schedule needs at least two samples".into(),
            ));
        }
        let dims = samples[0].1.shape();
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config(format!(
                    "sample times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for (t, m) in &samples {
            if m.shape() != dims {
                return Err(Error::Config(format!(
                    "sample at t = {t} has shape {:?}, expected {:?}",
                    m.shape(),
                    dims
                )));
            }
        }
        Ok(MatrixSchedule::SampledLinear { samples })
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            MatrixSchedule::Constant { base } | MatrixSchedule::ScalarProfile { base, .. } => {
                base.shape()
            }
            MatrixSchedule::SampledLinear { samples } => samples[0].1.shape(),
        }
    }

    /// Time span intrinsically stored by the schedule, if any.
    pub fn sample_span(&self) -> Option<(f64, f64)> {
        match self {
            MatrixSchedule::SampledLinear { samples } => {
                Some((samples[0].0, samples[samples.len() - 1].0))
            }
            _ => None,
        }
    }

    /// Evaluate at time `t`.
    ///
    /// Sampled schedules return the stored matrix bit-for-bit at sample times
    /// and interpolate linearly in between; `t` outside the sampled span by
    /// more than 1e-9 of the span is a domain error.
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        match self {
            MatrixSchedule::Constant { base } => Ok(base.clone()),
            MatrixSchedule::ScalarProfile { profile, base } => Ok(base * profile.eval(t)),
            MatrixSchedule::SampledLinear { samples } => {
                let t0 = samples[0].0;
                let t1 = samples[samples.len() - 1].0;
                let tol = 1e-9 * (t1 - t0);
                if t < t0 - tol || t > t1 + tol {
                    return Err(Error::Domain(format!(
                        "t = {t} outside sampled span [{t0}, {t1}]"
                    )));
                }
                let t = t.clamp(t0, t1);
                // Index of the last sample with time <= t.
                let idx = match samples.binary_search_by(|(s, _)| s.partial_cmp(&t).unwrap()) {
                    Ok(exact) => return Ok(samples[exact].1.clone()),
                    Err(ins) => ins - 1,
                };
                if idx + 1 == samples.len() {
                    return Ok(samples[idx].1.clone());
                }
                let (ta, ma) = &samples[idx];
                let (tb, mb) = &samples[idx + 1];
                let w = (t - ta) / (tb - ta);
                Ok(ma * (1.0 - w) + mb * w)
            }
        }
    }

    /// Pointwise negation, preserving the schedule kind.
    pub fn negated(&self) -> Self {
        match self {
            MatrixSchedule::Constant { base } => MatrixSchedule::Constant { base: -base },
            MatrixSchedule::ScalarProfile { profile, base } => MatrixSchedule::ScalarProfile {
                profile: profile.clone(),
                base: -base,
            },
            MatrixSchedule::SampledLinear { samples } => MatrixSchedule::SampledLinear {
                samples: samples.iter().map(|(t, m)| (*t, -m)).collect(),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// JSON form: tagged objects with row-major nested-array matrices.
// ---------------------------------------------------------------------------

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config("matrix literal has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config("matrix rows must be nonempty and equal-length".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

#[derive(Serialize, Deserialize)]
struct SampleRepr {
    t: f64,
    m: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ScheduleRepr {
    Constant {
        base: Vec<Vec<f64>>,
    },
    SampledLinear {
        samples: Vec<SampleRepr>,
    },
    ScalarProfile {
        profile: ScalarProfile,
        base: Vec<Vec<f64>>,
    },
}

impl Serialize for MatrixSchedule {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            MatrixSchedule::Constant { base } => ScheduleRepr::Constant {
                base: matrix_to_rows(base),
            },
            MatrixSchedule::SampledLinear { samples } => ScheduleRepr::SampledLinear {
                samples: samples
                    .iter()
                    .map(|(t, m)| SampleRepr {
                        t: *t,
                        m: matrix_to_rows(m),
                    })
                    .collect(),
            },
            MatrixSchedule::ScalarProfile { profile, base } => ScheduleRepr::ScalarProfile {
                profile: profile.clone(),
                base: matrix_to_rows(base),
            },
        };
        repr.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for MatrixSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let repr = ScheduleRepr::deserialize(de)?;
        let sched = match repr {
            ScheduleRepr::Constant { base } => {
                MatrixSchedule::constant(matrix_from_rows(&base).map_err(DeError::custom)?)
            }
            ScheduleRepr::SampledLinear { samples } => {
                let parsed: Result<Vec<_>> = samples
                    .iter()
                    .map(|s| matrix_from_rows(&s.m).map(|m| (s.t, m)))
                    .collect();
                MatrixSchedule::sampled_linear(parsed.map_err(DeError::custom)?)
                    .map_err(DeError::custom)?
            }
            ScheduleRepr::ScalarProfile { profile, base } => MatrixSchedule::scalar_profile(
                profile,
                matrix_from_rows(&base).map_err(DeError::custom)?,
            )
            .map_err(DeError::custom)?,
        };
        Ok(sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn eye(s: f64) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * s
    }

    #[test]
    fn constant_eval_anywhere() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.01, -0.1, 0.15]);
        let s = MatrixSchedule::constant(a.clone());
        assert_eq!(s.eval(7.3).unwrap(), a);
    }

    #[test]
    fn scalar_profile_exp_at_zero_is_base() {
        let g0 = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 6.0]);
        let s = MatrixSchedule::scalar_profile(ScalarProfile::ExpRate { rate: 0.1 }, g0.clone())
            .unwrap();
        assert_eq!(s.eval(0.0).unwrap(), g0);
        let at5 = s.eval(5.0).unwrap();
        assert_relative_eq!(at5[(0, 0)], 4.0 * (0.5f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn sampled_midpoint_interpolates() {
        let s =
            MatrixSchedule::sampled_linear(vec![(0.0, eye(1.0)), (1.0, eye(3.0))]).unwrap();
        let mid = s.eval(0.5).unwrap();
        assert_relative_eq!(mid[(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(mid[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sampled_exact_at_nodes_bit_for_bit() {
        let m0 = DMatrix::from_row_slice(2, 2, &[0.1234567890123, -1.0, 2.0, 0.3]);
        let m1 = DMatrix::from_row_slice(2, 2, &[7.0, 0.25, -0.125, 9.0]);
        let s = MatrixSchedule::sampled_linear(vec![(0.0, m0.clone()), (2.5, m1.clone())]).unwrap();
        assert_eq!(s.eval(0.0).unwrap(), m0);
        assert_eq!(s.eval(2.5).unwrap(), m1);
    }

    #[test]
    fn sampled_rejects_out_of_domain() {
        let s = MatrixSchedule::sampled_linear(vec![(0.0, eye(1.0)), (1.0, eye(2.0))]).unwrap();
        assert!(matches!(s.eval(1.5), Err(Error::Domain(_))));
        // Within the 1e-9 span tolerance: clamps instead of erroring.
        assert!(s.eval(1.0 + 1e-10).is_ok());
    }

    #[test]
    fn sampled_rejects_nonincreasing_times() {
        let r = MatrixSchedule::sampled_linear(vec![(0.0, eye(1.0)), (0.0, eye(2.0))]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn unknown_profile_name_is_config_error() {
        let json = r#"{"kind":"scalar_profile","profile":{"name":"sine","period":1.0},"base":[[1.0]]}"#;
        assert!(serde_json::from_str::<MatrixSchedule>(json).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = MatrixSchedule::scalar_profile(
            ScalarProfile::Affine { a: 1.0, b: 0.1 },
            DMatrix::from_row_slice(2, 2, &[0.5, -0.1, 0.0, -0.15]),
        )
        .unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: MatrixSchedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        // Linearity between adjacent samples: 2*f(tau) = f(tau-h) + f(tau+h).
        #[test]
        fn piecewise_linearity(mid in 0.05f64..0.95, h in 1e-4f64..0.04) {
            let m0 = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
            let m1 = DMatrix::from_row_slice(2, 2, &[-1.0, 4.0, 2.5, 0.0]);
            let s = MatrixSchedule::sampled_linear(vec![(0.0, m0), (1.0, m1)]).unwrap();
            let a = s.eval(mid - h).unwrap();
            let b = s.eval(mid + h).unwrap();
            let c = s.eval(mid).unwrap();
            let lhs = &c * 2.0;
            let rhs = &a + &b;
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((lhs[(i,j)] - rhs[(i,j)]).abs() <= 1e-12 * (1.0 + rhs[(i,j)].abs()));
                }
            }
        }

        // Round-trip through JSON preserves evaluation.
        #[test]
        fn json_eval_consistency(t in 0.0f64..5.0, scale in 0.1f64..10.0) {
            let s = MatrixSchedule::scalar_profile(
                ScalarProfile::ExpRate { rate: 0.1 },
                eye(scale),
            ).unwrap();
            let text = serde_json::to_string(&s).unwrap();
            let back: MatrixSchedule = serde_json::from_str(&text).unwrap();
            let a = s.eval(t).unwrap();
            let b = back.eval(t).unwrap();
            prop_assert!((a[(0,0)] - b[(0,0)]).abs() == 0.0);
        }
    }
}
