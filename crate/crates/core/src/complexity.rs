//! Empirical estimators for attack complexity, privacy leakage, gradient
//! distortion, protection complexity and the constants of the bi-Lipschitz
//! and self-bounded-regret assumptions.

use serde::{Deserialize, Serialize};

use crate::attack::AttackTrace;
use crate::error::{invalid, Error, Result};
use crate::models::{param_grad_flat, ModelSpec};
use crate::numerics::{check_finite, check_same_dim, squared_distance, RngStream};
use crate::protection::{apply, project_to_sphere, MechanismConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityVariant {
    /// Error averaged over iterations `1..=T`, as in the definition.
    RunningMean,
    /// Error of iterate `T` alone.
    LastIterate,
}

/// `S_k(tau)`: an iteration count, or never reached within the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackComplexity {
    Attained(usize),
    Unattained,
}

impl AttackComplexity {
    pub fn iterations(&self) -> Option<usize> {
        match self {
            AttackComplexity::Attained(t) => Some(*t),
            AttackComplexity::Unattained => None,
        }
    }

    /// Sort key that places `Unattained` after every attained count.
    pub fn rank(&self) -> usize {
        self.iterations().unwrap_or(usize::MAX)
    }
}

impl std::fmt::Display for AttackComplexity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackComplexity::Attained(t) => write!(f, "{t}"),
            AttackComplexity::Unattained => f.write_str("unattained"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub s_k_tau: AttackComplexity,
    pub epsilon_p: f64,
    pub delta_k: f64,
    pub protection_c: f64,
    pub tau: f64,
    pub gamma: f64,
    pub dataset_size: usize,
    pub variant: ComplexityVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimates {
    pub c_a_hat: f64,
    pub c_b_hat: f64,
    pub p_hat: f64,
    pub c0_hat: f64,
    pub c2_hat: f64,
    pub sample_count: usize,
}

fn check_traces(traces: &[AttackTrace]) -> Result<(usize, usize)> {
    let Some(first) = traces.first() else {
        return invalid("no traces");
    };
    let (t, n) = (first.iterations(), first.samples());
    if t == 0 || n == 0 {
        return invalid("empty trace");
    }
    for tr in traces {
        if tr.iterations() != t || tr.per_iter_errors.iter().any(|r| r.len() != n) {
            return invalid("traces have inconsistent shapes");
        }
        if !tr.metric_is_distance() {
            return invalid("complexity estimators need a distance metric (mse)");
        }
    }
    Ok((t, n))
}

impl AttackTrace {
    fn metric_is_distance(&self) -> bool {
        self.metric == crate::attack::MetricKind::Mse
    }
}

/// Per-iteration error averaged over traces and samples.
fn mean_error_curve(traces: &[AttackTrace], t_max: usize, n: usize) -> Vec<f64> {
    let denom = (traces.len() * n) as f64;
    (0..t_max)
        .map(|t| {
            traces
                .iter()
                .map(|tr| tr.per_iter_errors[t].iter().sum::<f64>())
                .sum::<f64>()
                / denom
        })
        .collect()
}

/// `S_k(tau)` from traces over independent datasets/seeds.
pub fn attack_complexity(
    traces: &[AttackTrace],
    tau: f64,
    variant: ComplexityVariant,
) -> Result<AttackComplexity> {
    if !(tau > 0.0) {
        return invalid("tau must be > 0");
    }
    let (t_max, n) = check_traces(traces)?;
    let curve = mean_error_curve(traces, t_max, n);
    let hit = match variant {
        ComplexityVariant::LastIterate => curve.iter().position(|e| *e <= tau),
        ComplexityVariant::RunningMean => {
            let mut sum = 0.0;
            curve.iter().enumerate().position(|(t, e)| {
                sum += e;
                sum / (t + 1) as f64 <= tau
            })
        }
    };
    Ok(hit.map_or(AttackComplexity::Unattained, |t| AttackComplexity::Attained(t + 1)))
}

/// `epsilon_p = 1 - mean(d / tau)` over traces, samples and the first `t`
/// iterations. With `clamp`, each ratio is clipped to `[0, 1]` first.
pub fn privacy_leakage(traces: &[AttackTrace], tau: f64, t: usize, clamp: bool) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return invalid("tau must be > 0");
    }
    let (t_max, n) = check_traces(traces)?;
    if t == 0 || t > t_max {
        return invalid(format!("T = {t} outside 1..={t_max}"));
    }
    let mut acc = 0.0;
    for tr in traces {
        for row in &tr.per_iter_errors[..t] {
            for e in row {
                let r = e / tau;
                acc += if clamp { r.clamp(0.0, 1.0) } else { r };
            }
        }
    }
    Ok(1.0 - acc / (traces.len() * n * t) as f64)
}

/// `Delta = ||W_original - W_protected||_2`.
pub fn gradient_distortion(w_original: &[f64], w_protected: &[f64]) -> Result<f64> {
    check_same_dim(w_original, w_protected, "gradient_distortion")?;
    check_finite(w_original)?;
    check_finite(w_protected)?;
    Ok(squared_distance(w_original, w_protected).sqrt())
}

/// Monte-Carlo `C = E||W_protected - W_original||^2` over `trials` draws.
///
/// For sphere-normalized mechanisms the reference point is the projected
/// input, so both ends live on the unit sphere.
pub fn protection_complexity_mc(
    mechanism: &MechanismConfig,
    w_original: &[f64],
    trials: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if trials == 0 {
        return invalid("trials must be >= 1");
    }
    let reference = if mechanism.normalize_to_sphere {
        project_to_sphere(w_original)?
    } else {
        w_original.to_vec()
    };
    let mut acc = 0.0;
    for _ in 0..trials {
        let out = apply(mechanism, w_original, rng)?;
        acc += squared_distance(&out, &reference);
    }
    Ok(acc / trials as f64)
}

/// Extremes of `||x1 - x2|| / ||g(x1) - g(x2)||` over `pairs` uniform draws
/// from `[0, 1]^dim`. These bracket the bi-Lipschitz constants from inside.
pub fn estimate_bilipschitz<G>(g: G, dim: usize, pairs: usize, rng: &mut RngStream) -> Result<(f64, f64)>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if pairs < 2 {
        return invalid("need at least 2 pairs");
    }
    if dim == 0 {
        return invalid("dim must be >= 1");
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut used = 0usize;
    for _ in 0..pairs {
        let a: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
        let (ga, gb) = (g(&a)?, g(&b)?);
        let dg = squared_distance(&ga, &gb).sqrt();
        let dx = squared_distance(&a, &b).sqrt();
        if dg == 0.0 || dx == 0.0 || !dg.is_finite() {
            continue;
        }
        let r = dx / dg;
        lo = lo.min(r);
        hi = hi.max(r);
        used += 1;
    }
    if used == 0 {
        return Err(Error::EstimationFailed(
            "every sampled pair had identical gradients".into(),
        ));
    }
    Ok((lo, hi))
}

/// [`estimate_bilipschitz`] for a model's single-sample parameter gradient
/// at fixed `theta` and label.
pub fn estimate_bilipschitz_model(
    spec: &ModelSpec,
    theta: &[f64],
    label: usize,
    pairs: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    estimate_bilipschitz(
        |x| param_grad_flat(spec, theta, x, &[label]).map(|v| v.into_vec()),
        spec.input_dim,
        pairs,
        rng,
    )
}

/// Fits `cumsum(T) ~ c * T^p` to the gradient-mismatch sequence.
///
/// `p_hat` is the least-squares slope of `ln cumsum(T)` on `ln T`, clipped
/// into `(0, 1]`; `c0_hat`/`c2_hat` are the min/max of `cumsum(T) / T^p_hat`.
/// Leading iterations with zero cumulative mismatch are skipped.
pub fn fit_regret(trace: &AttackTrace) -> Result<(f64, f64, f64)> {
    fit_regret_sequence(&trace.per_iter_grad_mismatch)
}

pub fn fit_regret_sequence(mismatch: &[f64]) -> Result<(f64, f64, f64)> {
    if mismatch.len() < 10 {
        return invalid("regret fit needs at least 10 iterations");
    }
    check_finite(mismatch)?;
    let mut cum = 0.0;
    let points: Vec<(f64, f64)> = mismatch
        .iter()
        .enumerate()
        .filter_map(|(t, m)| {
            cum += m;
            (cum > 0.0).then(|| (((t + 1) as f64), cum))
        })
        .collect();
    if points.len() < 2 {
        return Err(Error::DegenerateFit("cumulative mismatch is zero".into()));
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (t, c)| (a + t.ln(), b + c.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(a, b), (t, c)| {
        let dx = t.ln() - mx;
        (a + dx * (c.ln() - my), b + dx * dx)
    });
    let slope = sxy / sxx;
    let p = slope.clamp(f64::MIN_POSITIVE, 1.0);
    let (c0, c2) = points.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), (t, c)| {
        let r = c / t.powf(p);
        (lo.min(r), hi.max(r))
    });
    Ok((p, c0, c2))
}

/// Both estimator groups at once.
pub fn estimate_constants(
    spec: &ModelSpec,
    theta: &[f64],
    label: usize,
    pairs: usize,
    trace: &AttackTrace,
    rng: &mut RngStream,
) -> Result<ConstantEstimates> {
    let (c_a_hat, c_b_hat) = estimate_bilipschitz_model(spec, theta, label, pairs, rng)?;
    let (p_hat, c0_hat, c2_hat) = fit_regret(trace)?;
    Ok(ConstantEstimates {
        c_a_hat,
        c_b_hat,
        p_hat,
        c0_hat,
        c2_hat,
        sample_count: pairs,
    })
}

/// Hoeffding half-width `sqrt(ln(2/gamma) / (2n))`.
pub fn hoeffding_half_width(gamma: f64, n: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return invalid("gamma must lie in (0, 1)");
    }
    if n == 0 {
        return invalid("n must be >= 1");
    }
    Ok(((2.0 / gamma).ln() / (2.0 * n as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::MetricKind;
    use crate::numerics::Vector;

    fn trace_from(errors: Vec<Vec<f64>>) -> AttackTrace {
        let t = errors.len();
        AttackTrace {
            metric: MetricKind::Mse,
            tau: 0.5,
            per_iter_errors: errors,
            per_iter_objective: vec![0.0; t],
            per_iter_grad_mismatch: vec![0.0; t],
            final_reconstruction: vec![Vector::zeros(1)],
            converged_iter: None,
        }
    }

    fn constant(e: f64, t: usize, n: usize) -> AttackTrace {
        trace_from(vec![vec![e; n]; t])
    }

    #[test]
    fn attack_complexity_examples() {
        let tau = 0.2;
        let rm = ComplexityVariant::RunningMean;
        assert_eq!(attack_complexity(&[constant(tau / 2.0, 5, 2)], tau, rm).unwrap(), AttackComplexity::Attained(1));
        assert_eq!(attack_complexity(&[constant(2.0 * tau, 5, 2)], tau, rm).unwrap(), AttackComplexity::Unattained);
        // running means 0.9, 0.7, 0.5
        let tr = trace_from(vec![vec![0.9], vec![0.5], vec![0.1]]);
        assert_eq!(attack_complexity(&[tr.clone()], 0.5, rm).unwrap(), AttackComplexity::Attained(3));
        assert_eq!(
            attack_complexity(&[tr], 0.5, ComplexityVariant::LastIterate).unwrap(),
            AttackComplexity::Attained(2)
        );
    }

    #[test]
    fn attack_complexity_rejects_mixed_shapes() {
        let a = constant(0.1, 5, 2);
        let b = constant(0.1, 4, 2);
        assert!(attack_complexity(&[a.clone(), b], 0.5, ComplexityVariant::RunningMean).is_err());
        let c = constant(0.1, 5, 3);
        assert!(attack_complexity(&[a, c], 0.5, ComplexityVariant::RunningMean).is_err());
        assert!(attack_complexity(&[], 0.5, ComplexityVariant::RunningMean).is_err());
    }

    #[test]
    fn leakage_examples() {
        let tau = 0.3;
        assert_eq!(privacy_leakage(&[constant(0.0, 4, 3)], tau, 4, true).unwrap(), 1.0);
        assert_eq!(privacy_leakage(&[constant(tau, 4, 3)], tau, 4, true).unwrap(), 0.0);
        let tr = trace_from(vec![vec![0.2 * tau, 0.6 * tau]; 3]);
        assert!((privacy_leakage(&[tr], tau, 3, true).unwrap() - 0.6).abs() < 1e-12);
        assert!(privacy_leakage(&[constant(0.0, 4, 3)], 0.0, 4, true).is_err());
        assert!(privacy_leakage(&[constant(0.0, 4, 3)], 1.0, 5, true).is_err());
    }

    #[test]
    fn leakage_clamping() {
        let tr = constant(3.0, 2, 1);
        assert_eq!(privacy_leakage(&[tr.clone()], 1.0, 2, true).unwrap(), 0.0);
        assert_eq!(privacy_leakage(&[tr], 1.0, 2, false).unwrap(), -2.0);
    }

    #[test]
    fn leakage_improves_when_reconstructions_are_perfect() {
        let mut rng = RngStream::new(1, 1);
        let errors: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.uniform()).collect()).collect();
        let tr = trace_from(errors);
        let perfect = constant(0.0, 10, 3);
        for clamp in [true, false] {
            let before = privacy_leakage(&[tr.clone()], 0.4, 10, clamp).unwrap();
            let after = privacy_leakage(&[perfect.clone()], 0.4, 10, clamp).unwrap();
            assert!(after >= before);
            assert!(before <= 1.0);
        }
    }

    #[test]
    fn distortion_examples() {
        assert_eq!(gradient_distortion(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(gradient_distortion(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2f64.sqrt());
        assert!(gradient_distortion(&[1.0], &[1.0, 2.0]).is_err());
        let mut rng = RngStream::new(2, 2);
        let a: Vec<f64> = (0..9).map(|_| rng.standard_normal()).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.standard_normal()).collect();
        let mut s = 0.0;
        for i in 0..9 {
            s += (a[i] - b[i]).powi(2);
        }
        assert!((gradient_distortion(&a, &b).unwrap() - s.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn protection_complexity_identity_and_gaussian() {
        let mut rng = RngStream::new(7, 0);
        let w: Vec<f64> = (0..16).map(|_| rng.standard_normal()).collect();
        assert_eq!(
            protection_complexity_mc(&MechanismConfig::identity(), &w, 100, &mut rng).unwrap(),
            0.0
        );
        let c1 = protection_complexity_mc(&MechanismConfig::gaussian(0.1), &w, 100_000, &mut rng).unwrap();
        assert!(((c1 - 0.16) / 0.16).abs() < 0.05, "{c1}");
        let c2 = protection_complexity_mc(&MechanismConfig::gaussian(0.2), &w, 100_000, &mut rng).unwrap();
        assert!(((c2 / c1) - 4.0).abs() / 4.0 < 0.10);
        assert!(protection_complexity_mc(&MechanismConfig::identity(), &w, 0, &mut rng).is_err());
    }

    #[test]
    fn bilipschitz_linear_maps() {
        let mut rng = RngStream::new(0, 0);
        let (a, b) = estimate_bilipschitz(|x| Ok(x.to_vec()), 3, 50, &mut rng).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let (a, b) = estimate_bilipschitz(|x| Ok(x.iter().map(|v| 2.0 * v).collect()), 3, 50, &mut rng).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && (b - 0.5).abs() < 1e-12);
        let r = estimate_bilipschitz(|_| Ok(vec![1.0]), 3, 50, &mut rng);
        assert!(matches!(r, Err(Error::EstimationFailed(_))));
        assert!(estimate_bilipschitz(|x| Ok(x.to_vec()), 3, 1, &mut rng).is_err());
    }

    #[test]
    fn bilipschitz_ordering_on_model() {
        let spec = ModelSpec::logistic(2, 2);
        let theta = vec![1.2, -0.7, -0.4, 0.9, 0.1, -0.2];
        let (a, b) = estimate_bilipschitz_model(&spec, &theta, 1, 200, &mut RngStream::new(3, 0)).unwrap();
        assert!(a > 0.0 && a <= b);
    }

    fn from_cumsum(cum: impl Fn(f64) -> f64, n: usize) -> Vec<f64> {
        (1..=n).map(|t| cum(t as f64) - cum(t as f64 - 1.0)).collect()
    }

    #[test]
    fn regret_fit_recovers_constructed_exponents() {
        let (p, _, _) = fit_regret_sequence(&from_cumsum(|t| t.sqrt(), 200)).unwrap();
        assert!((p - 0.5).abs() < 1e-6);
        let (p, c0, c2) = fit_regret_sequence(&vec![1.0; 50]).unwrap();
        assert!((p - 1.0).abs() < 1e-9 && (c0 - 1.0).abs() < 1e-9 && (c2 - 1.0).abs() < 1e-9);
        let (p, c0, c2) = fit_regret_sequence(&from_cumsum(|t| 3.0 * t.powf(0.7), 300)).unwrap();
        assert!((p - 0.7).abs() < 1e-6);
        assert!((c0 - 3.0).abs() < 1e-6 && (c2 - 3.0).abs() < 1e-6);
    }

    #[test]
    fn regret_fit_degenerate_cases() {
        assert!(matches!(fit_regret_sequence(&[0.0; 20]), Err(Error::DegenerateFit(_))));
        assert!(fit_regret_sequence(&[1.0; 5]).is_err());
    }

    #[test]
    fn hoeffding_width() {
        let h = hoeffding_half_width(0.1, 100).unwrap();
        assert!((h - (20f64.ln() / 200.0).sqrt()).abs() < 1e-15);
        assert!(hoeffding_half_width(1.0, 100).is_err());
    }
}
