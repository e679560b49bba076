use causalnet::scm::{self, ScmParams};
use causalnet::stats;

/// E[g(V)] for V ~ N(mean, sd²) by the trapezoid rule over ±10 sd.
fn gauss_expect(mean: f64, sd: f64, g: impl Fn(f64) -> f64) -> f64 {
    let n = 20_000;
    let (lo, hi) = (-10.0, 10.0);
    let h = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let s = lo + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let dens = (-0.5 * s * s).exp() / (2.0 * std::f64::consts::PI).sqrt();
        acc += w * dens * g(mean + sd * s);
    }
    acc * h
}

/// The treatment logit is a*u2 + b + c*e with u2 ~ N(0, s²), e ~ N(0, 1),
/// so it is Gaussian and E[u2 | logit] is linear in the logit.
struct TreatmentMoments {
    p: f64,
    cov_u2: f64,
}

fn treatment_moments(p: &ScmParams) -> TreatmentMoments {
    let var_u2 = p.sd_u2 * p.sd_u2;
    let var_v = p.t_slope * p.t_slope * var_u2 + p.t_noise_sd * p.t_noise_sd;
    let k = p.t_slope * var_u2 / var_v;
    let pr = gauss_expect(0.0, var_v.sqrt(), |v| stats::logistic(v + p.t_offset));
    let ev = gauss_expect(0.0, var_v.sqrt(), |v| v * stats::logistic(v + p.t_offset));
    TreatmentMoments {
        p: pr,
        cov_u2: k * ev,
    }
}

/// Population coefficient of t in the regression of y on {t, x, z}. z is
/// independent of (t, x) so it drops out of the t/x block.
fn population_beta_t(p: &ScmParams) -> f64 {
    let m = treatment_moments(p);
    let var_t = m.p * (1.0 - m.p);
    let var_u1 = p.sd_u1 * p.sd_u1;
    let var_x = var_u1 + p.sd_u2 * p.sd_u2 + p.sd_x * p.sd_x;
    let c_tx = -m.cov_u2;
    let c_ty = p.y_treat_coef * var_t;
    let c_xy = p.y_treat_coef * c_tx + p.y_u1_coef * var_u1;
    let det = var_t * var_x - c_tx * c_tx;
    (c_ty * var_x - c_tx * c_xy) / det
}

#[test]
fn quadrature_oracle_values() {
    let p = ScmParams::default();
    let m = treatment_moments(&p);
    assert!((m.p - 0.4073).abs() < 5e-4, "{}", m.p);
    assert!((population_beta_t(&p) - 0.2252).abs() < 5e-4);
}

#[test]
fn treatment_rate_matches_quadrature() {
    let p = ScmParams::default();
    let c = scm::sample_cohort(&p, 100_000, 11).unwrap();
    let rate = stats::mean(&c.t());
    let want = treatment_moments(&p).p;
    assert!((rate - want).abs() < 0.007, "rate {rate} vs {want}");
}

#[test]
fn conditional_regression_matches_population_coefficient() {
    let p = ScmParams::default();
    let b = scm::conditional_bias_oracle(&p, 100_000, 12).unwrap();
    let want = population_beta_t(&p);
    assert!((b - want).abs() < 0.03, "beta_t {b} vs {want}");
}

#[test]
fn interventional_effect_is_treatment_coefficient() {
    let p = ScmParams::default();
    let ate = scm::interventional_ate(&p, 100_000, 13).unwrap();
    assert!((ate - 1.0).abs() < 0.01, "{ate}");

    let p2 = ScmParams {
        y_treat_coef: -0.3,
        ..ScmParams::default()
    };
    let ate2 = scm::interventional_ate(&p2, 10_000, 13).unwrap();
    assert!((ate2 + 0.3).abs() < 0.01, "{ate2}");
}

#[test]
fn marginal_moments() {
    let p = ScmParams::default();
    let c = scm::sample_cohort(&p, 50_000, 14).unwrap();
    let x = c.x();
    let y = c.y();
    assert!(stats::mean(&x).abs() < 0.02);
    assert!((stats::variance(&x) - 1.0).abs() < 0.03);
    assert!((stats::variance(&c.z()) - 1.0).abs() < 0.03);
    // corr(x, y) is negative through u1.
    assert!(stats::pearson(&x, &y) < -0.4);
}

#[test]
fn cohorts_are_deterministic_and_prefix_stable() {
    let p = ScmParams::default();
    let a = scm::sample_cohort(&p, 200, 5).unwrap();
    let b = scm::sample_cohort(&p, 200, 5).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let short = scm::sample_cohort(&p, 50, 5).unwrap();
    assert_eq!(short.subjects[..], a.subjects[..50]);
    let other = scm::sample_cohort(&p, 200, 6).unwrap();
    assert_ne!(a.to_csv(), other.to_csv());
}

#[test]
fn csv_and_manifest() {
    let c = scm::sample_cohort(&ScmParams::default(), 10, 1).unwrap();
    let csv = c.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("u1,u2,z,x,t,y"));
    assert_eq!(lines.count(), 10);
    let m: serde_json::Value = serde_json::from_str(&c.manifest_json().unwrap()).unwrap();
    assert_eq!(m["n"], 10);

    let dir = tempfile::tempdir().unwrap();
    c.write(dir.path(), "cohort").unwrap();
    assert!(dir.path().join("cohort.csv").exists());
    assert!(dir.path().join("cohort.json").exists());
}

#[test]
fn rejects_nonpositive_sd() {
    for bad in [0.0, -1.0, f64::NAN] {
        let p = ScmParams {
            sd_z: bad,
            ..ScmParams::default()
        };
        assert!(scm::sample_cohort(&p, 10, 1).is_err());
    }
}
