//! Structural causal model for the treatment/outcome simulation.
//!
//! ```text
//! u1, u2 ~ N(0, sd_u1), N(0, sd_u2)      aggressiveness, fitness
//! z      ~ N(0, sd_z)                    heterogeneity (prognostic)
//! x      ~ N(u1 - u2, sd_x)              size (collider)
//! t      ~ Bern(sigmoid(N(t_slope*u2 + t_offset, t_noise_sd)))
//! y      ~ N(y_treat*t + y_z*z + y_u1*u1 + y_offset, y_noise_sd)
//! ```
//!
//! All second arguments are standard deviations. Subject `i` of a cohort with
//! seed `s` draws from substream `i` of seed `s`, in the fixed order
//! u1, u2, z, x, latent t, Bernoulli uniform, y.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols;
use crate::rng::Stream;
pub use crate::stats::logistic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScmParams {
    pub sd_u1: f64,
    pub sd_u2: f64,
    pub sd_z: f64,
    pub sd_x: f64,
    pub t_slope: f64,
    pub t_offset: f64,
    pub t_noise_sd: f64,
    pub y_treat_coef: f64,
    pub y_z_coef: f64,
    pub y_u1_coef: f64,
    pub y_offset: f64,
    pub y_noise_sd: f64,
}

impl Default for ScmParams {
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        ScmParams {
            sd_u1: 0.7071,
            sd_u2: 0.7071,
            sd_z: 1.0,
            sd_x: 0.05,
            t_slope: 1.828,
            t_offset: -0.5,
            t_noise_sd: 0.25,
            y_treat_coef: 1.0,
            y_z_coef: -1.0,
            y_u1_coef: -2.0,
            y_offset: -0.5,
            y_noise_sd: 0.05,
        }
    }
}

impl ScmParams {
    pub fn validate(&self) -> Result<()> {
        let sds = [
            ("sd_u1", self.sd_u1),
            ("sd_u2", self.sd_u2),
            ("sd_z", self.sd_z),
            ("sd_x", self.sd_x),
            ("t_noise_sd", self.t_noise_sd),
            ("y_noise_sd", self.y_noise_sd),
        ];
        for (name, v) in sds {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Param(format!(
                    "{name} must be a positive finite sd, got {v}"
                )));
            }
        }
        let coefs = [
            self.t_slope,
            self.t_offset,
            self.y_treat_coef,
            self.y_z_coef,
            self.y_u1_coef,
            self.y_offset,
        ];
        if coefs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Param("non-finite coefficient".into()));
        }
        Ok(())
    }
}

/// Standardized exogenous noise for one subject.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Noise {
    pub e_u1: f64,
    pub e_u2: f64,
    pub e_z: f64,
    pub e_x: f64,
    pub e_t: f64,
    /// Uniform in [0,1) compared against the treatment probability.
    pub v_t: f64,
    pub e_y: f64,
}

impl Noise {
    pub fn draw(s: &mut Stream) -> Self {
        Noise {
            e_u1: s.std_normal(),
            e_u2: s.std_normal(),
            e_z: s.std_normal(),
            e_x: s.std_normal(),
            e_t: s.std_normal(),
            v_t: s.uniform(),
            e_y: s.std_normal(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub u1: f64,
    pub u2: f64,
    pub z: f64,
    pub x: f64,
    pub t: u8,
    pub y: f64,
}

impl Subject {
    pub fn t_f64(&self) -> f64 {
        f64::from(self.t)
    }
}

/// Probability of treatment given fitness and the latent treatment noise.
pub fn treatment_prob(p: &ScmParams, u2: f64, e_t: f64) -> f64 {
    logistic(p.t_slope * u2 + p.t_offset + p.t_noise_sd * e_t)
}

/// Evaluates the structural assignments. `do_t` overrides the treatment.
pub fn assign(p: &ScmParams, n: &Noise, do_t: Option<u8>) -> Subject {
    let u1 = p.sd_u1 * n.e_u1;
    let u2 = p.sd_u2 * n.e_u2;
    let z = p.sd_z * n.e_z;
    let x = u1 - u2 + p.sd_x * n.e_x;
    let t = do_t.unwrap_or_else(|| u8::from(n.v_t < treatment_prob(p, u2, n.e_t)));
    let y = outcome_mean(p, t, z, u1) + p.y_noise_sd * n.e_y;
    Subject { u1, u2, z, x, t, y }
}

fn outcome_mean(p: &ScmParams, t: u8, z: f64, u1: f64) -> f64 {
    p.y_treat_coef * f64::from(t) + p.y_z_coef * z + p.y_u1_coef * u1 + p.y_offset
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    pub seed: u64,
    pub params: ScmParams,
}

pub fn sample_cohort(params: &ScmParams, n: usize, seed: u64) -> Result<Cohort> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Param("cohort size must be at least 1".into()));
    }
    let subjects = (0..n)
        .map(|i| {
            let mut s = Stream::substream(seed, i as u64);
            assign(params, &Noise::draw(&mut s), None)
        })
        .collect();
    Ok(Cohort {
        subjects,
        seed,
        params: params.clone(),
    })
}

/// Monte Carlo E[y | do(t=1)] - E[y | do(t=0)] with shared noise per subject.
pub fn interventional_ate(params: &ScmParams, n: usize, seed: u64) -> Result<f64> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Param("n must be at least 1".into()));
    }
    let mut acc = 0.0;
    for i in 0..n {
        let mut s = Stream::substream(seed, i as u64);
        let noise = Noise::draw(&mut s);
        acc += assign(params, &noise, Some(1)).y - assign(params, &noise, Some(0)).y;
    }
    Ok(acc / n as f64)
}

/// t coefficient of OLS y ~ t + x + z on a fresh cohort: the estimand a model
/// that conditions on the collider would report.
pub fn conditional_bias_oracle(params: &ScmParams, n: usize, seed: u64) -> Result<f64> {
    if n < 1000 {
        return Err(Error::InsufficientData { need: 1000, got: n });
    }
    let c = sample_cohort(params, n, seed)?;
    let cols = [c.t(), c.x(), c.z()];
    let fit = ols::fit_columns(&cols, &c.y(), ols::DEFAULT_RIDGE)?;
    Ok(fit.coefficients[1])
}

#[derive(Serialize)]
struct CohortManifest<'a> {
    n: usize,
    seed: u64,
    params: &'a ScmParams,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn t(&self) -> Vec<f64> {
        self.subjects.iter().map(Subject::t_f64).collect()
    }

    pub fn x(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.x).collect()
    }

    pub fn z(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.z).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.y).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("u1,u2,z,x,t,y\n");
        for s in &self.subjects {
            let _ = writeln!(out, "{},{},{},{},{},{}", s.u1, s.u2, s.z, s.x, s.t, s.y);
        }
        out
    }

    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CohortManifest {
            n: self.len(),
            seed: self.seed,
            params: &self.params,
        })?)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let js = dir.join(format!("{stem}.json"));
        std::fs::write(&js, self.manifest_json()?).map_err(|e| Error::io(&js, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_treated() {
        let s = assign(&ScmParams::default(), &Noise::default(), Some(1));
        assert_eq!(s.y, 0.5);
        assert_eq!(s.x, 0.0);
    }

    #[test]
    fn rejects_bad_sd() {
        let p = ScmParams {
            sd_x: 0.0,
            ..Default::default()
        };
        assert!(matches!(sample_cohort(&p, 10, 1), Err(Error::Param(_))));
        let p = ScmParams {
            y_noise_sd: -1.0,
            ..Default::default()
        };
        assert!(interventional_ate(&p, 10, 1).is_err());
    }

    #[test]
    fn cohort_is_deterministic() {
        let p = ScmParams::default();
        let a = sample_cohort(&p, 200, 42).unwrap();
        let b = sample_cohort(&p, 200, 42).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = sample_cohort(&p, 200, 43).unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn prefix_stable_under_length() {
        let p = ScmParams::default();
        let a = sample_cohort(&p, 50, 9).unwrap();
        let b = sample_cohort(&p, 80, 9).unwrap();
        assert_eq!(a.subjects[..], b.subjects[..50]);
    }

    #[test]
    fn single_subject_ate_is_coefficient() {
        let p = ScmParams {
            y_treat_coef: 0.7,
            ..Default::default()
        };
        let ate = interventional_ate(&p, 1, 5).unwrap();
        assert!((ate - 0.7).abs() < 1e-12);
    }

    #[test]
    fn csv_header_and_rows() {
        let c = sample_cohort(&ScmParams::default(), 10, 1).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("u1,u2,z,x,t,y\n"));
        assert_eq!(csv.lines().count(), 11);
    }
}
