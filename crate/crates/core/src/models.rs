//! Small differentiable classifiers and the gradient-matching objective.
//!
//! Parameters are a flat vector. Logistic regression stores the weight
//! matrix `W` (classes x inputs, row-major) followed by the bias. The MLP
//! stores `W1` (hidden x inputs), `b1`, `W2` (classes x hidden), `b2`, with
//! a tanh hidden layer.
//!
//! The gradient-matching objective is `0.5 * ||grad_theta L(theta; x_hat, y) - g||^2`.
//! Reconstructions `x_hat` are passed flat, sample after sample.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{check_finite, finite_diff_grad, Vector, DEFAULT_FD_STEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Hidden width; ignored for logistic regression.
    #[serde(default)]
    pub hidden_dim: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            input_dim,
            num_classes,
            hidden_dim: 0,
        }
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1,
            input_dim,
            num_classes,
            hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return invalid("model.input_dim must be >= 1");
        }
        if self.num_classes < 2 {
            return invalid("model.num_classes must be >= 2");
        }
        if self.kind == ModelKind::Mlp1 && self.hidden_dim == 0 {
            return invalid("model.hidden_dim must be >= 1 for mlp1");
        }
        Ok(())
    }

    /// Flattened parameter count `m`.
    pub fn param_dim(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_dim);
        match self.kind {
            ModelKind::LogisticRegression => c * d + c,
            ModelKind::Mlp1 => h * d + h + c * h + c,
        }
    }
}

/// One labeled example with features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vector,
    pub y: usize,
}

impl LabeledSample {
    pub fn new(x: Vector, y: usize) -> Result<Self> {
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("sample feature {v} outside [0, 1]"));
        }
        Ok(Self { x, y })
    }

    pub fn from_slice(x: &[f64], y: usize) -> Result<Self> {
        Self::new(Vector::new(x.to_vec())?, y)
    }

    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if self.x.dim() != spec.input_dim {
            return invalid(format!(
                "sample has {} features, model expects {}",
                self.x.dim(),
                spec.input_dim
            ));
        }
        if self.y >= spec.num_classes {
            return invalid(format!(
                "label {} out of range for {} classes",
                self.y, spec.num_classes
            ));
        }
        Ok(())
    }
}

fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    // log-sum-exp of the original logits
    max + sum.ln()
}

/// Loss of one sample; adds `scale * grad` into `grad`.
fn accumulate_sample(
    spec: &ModelSpec,
    theta: &[f64],
    x: &[f64],
    y: usize,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let (d, c) = (spec.input_dim, spec.num_classes);
    match spec.kind {
        ModelKind::LogisticRegression => {
            let (w, b) = theta.split_at(c * d);
            let mut p: Vec<f64> = (0..c)
                .map(|k| b[k] + w[k * d..(k + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
                .collect();
            let zy = p[y];
            let lse = softmax_in_place(&mut p);
            p[y] -= 1.0;
            let (gw, gb) = grad.split_at_mut(c * d);
            for k in 0..c {
                let e = scale * p[k];
                for j in 0..d {
                    gw[k * d + j] += e * x[j];
                }
                gb[k] += e;
            }
            lse - zy
        }
        ModelKind::Mlp1 => {
            let h = spec.hidden_dim;
            let (w1, rest) = theta.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let hidden: Vec<f64> = (0..h)
                .map(|k| {
                    (b1[k] + w1[k * d..(k + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
                        .tanh()
                })
                .collect();
            let mut p: Vec<f64> = (0..c)
                .map(|k| {
                    b2[k] + w2[k * h..(k + 1) * h].iter().zip(&hidden).map(|(a, v)| a * v).sum::<f64>()
                })
                .collect();
            let zy = p[y];
            let lse = softmax_in_place(&mut p);
            p[y] -= 1.0;

            let (gw1, rest) = grad.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            let mut dh = vec![0.0; h];
            for k in 0..c {
                let e = p[k];
                for j in 0..h {
                    gw2[k * h + j] += scale * e * hidden[j];
                    dh[j] += w2[k * h + j] * e;
                }
                gb2[k] += scale * e;
            }
            for j in 0..h {
                let da = scale * dh[j] * (1.0 - hidden[j] * hidden[j]);
                for i in 0..d {
                    gw1[j * d + i] += da * x[i];
                }
                gb1[j] += da;
            }
            lse - zy
        }
    }
}

fn check_theta(spec: &ModelSpec, theta: &[f64]) -> Result<()> {
    spec.validate()?;
    if theta.len() != spec.param_dim() {
        return invalid(format!(
            "theta has {} entries, model has {} parameters",
            theta.len(),
            spec.param_dim()
        ));
    }
    check_finite(theta)
}

fn check_flat_batch(spec: &ModelSpec, xs: &[f64], labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return invalid("empty batch");
    }
    if xs.len() != spec.input_dim * labels.len() {
        return invalid(format!(
            "reconstruction has {} entries, expected {} x {}",
            xs.len(),
            labels.len(),
            spec.input_dim
        ));
    }
    if let Some(y) = labels.iter().find(|y| **y >= spec.num_classes) {
        return invalid(format!("label {y} out of range"));
    }
    Ok(())
}

/// Mean loss and mean parameter gradient over a flat batch. Inputs are
/// assumed validated.
pub(crate) fn flat_loss_and_grad(
    spec: &ModelSpec,
    theta: &[f64],
    xs: &[f64],
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let d = spec.input_dim;
    let n = labels.len();
    let scale = 1.0 / n as f64;
    let mut grad = vec![0.0; spec.param_dim()];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss += accumulate_sample(spec, theta, &xs[i * d..(i + 1) * d], y, scale, &mut grad);
    }
    (loss * scale, grad)
}

/// Mean cross-entropy and its parameter gradient over `batch`.
pub fn loss_and_param_grad(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &[LabeledSample],
) -> Result<(f64, Vector)> {
    check_theta(spec, theta)?;
    if batch.is_empty() {
        return invalid("empty batch");
    }
    for s in batch {
        s.check_against(spec)?;
    }
    let xs: Vec<f64> = batch.iter().flat_map(|s| s.x.iter().copied()).collect();
    let labels: Vec<usize> = batch.iter().map(|s| s.y).collect();
    let (loss, grad) = flat_loss_and_grad(spec, theta, &xs, &labels);
    finite_result(loss, grad)
}

fn finite_result(loss: f64, grad: Vec<f64>) -> Result<(f64, Vector)> {
    if !loss.is_finite() {
        return Err(Error::NumericDomain("non-finite loss".into()));
    }
    check_finite(&grad)?;
    Ok((loss, Vector::from_finite(grad)))
}

/// Parameter gradient for reconstructed inputs given flat; inputs may leave `[0, 1]`.
pub fn param_grad_flat(
    spec: &ModelSpec,
    theta: &[f64],
    xs: &[f64],
    labels: &[usize],
) -> Result<Vector> {
    check_theta(spec, theta)?;
    check_flat_batch(spec, xs, labels)?;
    check_finite(xs)?;
    let (loss, grad) = flat_loss_and_grad(spec, theta, xs, labels);
    finite_result(loss, grad).map(|(_, g)| g)
}

fn check_match_inputs(
    spec: &ModelSpec,
    theta: &[f64],
    x_hat: &[f64],
    labels: &[usize],
    g_target: &[f64],
) -> Result<()> {
    check_theta(spec, theta)?;
    check_flat_batch(spec, x_hat, labels)?;
    if g_target.len() != spec.param_dim() {
        return invalid(format!(
            "target gradient has {} entries, model has {} parameters",
            g_target.len(),
            spec.param_dim()
        ));
    }
    Ok(())
}

pub(crate) fn match_value_unchecked(
    spec: &ModelSpec,
    theta: &[f64],
    x_hat: &[f64],
    labels: &[usize],
    g_target: &[f64],
) -> f64 {
    let (_, g) = flat_loss_and_grad(spec, theta, x_hat, labels);
    0.5 * g
        .iter()
        .zip(g_target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
}

/// `0.5 * ||grad_theta L(theta; x_hat, labels) - g_target||^2`.
pub fn grad_match_value(
    spec: &ModelSpec,
    theta: &[f64],
    x_hat: &[f64],
    labels: &[usize],
    g_target: &[f64],
) -> Result<f64> {
    check_match_inputs(spec, theta, x_hat, labels, g_target)?;
    Ok(match_value_unchecked(spec, theta, x_hat, labels, g_target))
}

/// Gradient of [`grad_match_value`] with respect to `x_hat`.
///
/// Closed form for logistic regression; central differences for the MLP.
pub fn grad_match_input_grad(
    spec: &ModelSpec,
    theta: &[f64],
    x_hat: &[f64],
    labels: &[usize],
    g_target: &[f64],
) -> Result<Vector> {
    check_match_inputs(spec, theta, x_hat, labels, g_target)?;
    check_finite(x_hat)?;
    match spec.kind {
        ModelKind::LogisticRegression => {
            let g = logistic_input_grad(spec, theta, x_hat, labels, g_target);
            check_finite(&g)?;
            Ok(Vector::from_finite(g))
        }
        ModelKind::Mlp1 => finite_diff_grad(
            |x| Ok(match_value_unchecked(spec, theta, x, labels, g_target)),
            x_hat,
            DEFAULT_FD_STEP,
        ),
    }
}

/// With residual `R = G(x_hat) - g` split into `(R_W, R_b)`, the derivative
/// for sample `i` is `(1/n) * (W^T J_i (R_W x_i + R_b) + R_W^T e_i)` where
/// `J_i` is the softmax Jacobian and `e_i = p_i - onehot(y_i)`.
fn logistic_input_grad(
    spec: &ModelSpec,
    theta: &[f64],
    x_hat: &[f64],
    labels: &[usize],
    g_target: &[f64],
) -> Vec<f64> {
    let (d, c) = (spec.input_dim, spec.num_classes);
    let n = labels.len();
    let (_, g) = flat_loss_and_grad(spec, theta, x_hat, labels);
    let resid: Vec<f64> = g.iter().zip(g_target).map(|(a, b)| a - b).collect();
    let (rw, rb) = resid.split_at(c * d);
    let (w, b) = theta.split_at(c * d);

    let mut out = vec![0.0; n * d];
    for (i, &y) in labels.iter().enumerate() {
        let x = &x_hat[i * d..(i + 1) * d];
        let mut p: Vec<f64> = (0..c)
            .map(|k| b[k] + w[k * d..(k + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect();
        softmax_in_place(&mut p);

        let v: Vec<f64> = (0..c)
            .map(|k| rb[k] + rw[k * d..(k + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect();
        let pv: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
        let u: Vec<f64> = (0..c).map(|k| p[k] * (v[k] - pv)).collect();

        let dst = &mut out[i * d..(i + 1) * d];
        for k in 0..c {
            let e = p[k] - if k == y { 1.0 } else { 0.0 };
            for j in 0..d {
                dst[j] += w[k * d + j] * u[k] + rw[k * d + j] * e;
            }
        }
        for v in dst.iter_mut() {
            *v /= n as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, RngStream};

    fn random_theta(spec: &ModelSpec, rng: &mut RngStream, scale: f64) -> Vec<f64> {
        (0..spec.param_dim()).map(|_| scale * rng.standard_normal()).collect()
    }

    fn random_sample(spec: &ModelSpec, rng: &mut RngStream) -> LabeledSample {
        let x = (0..spec.input_dim).map(|_| rng.uniform()).collect();
        let y = (rng.uniform() * spec.num_classes as f64) as usize;
        LabeledSample::new(Vector::new(x).unwrap(), y).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
        num / den
    }

    #[test]
    fn param_dims() {
        assert_eq!(ModelSpec::logistic(4, 3).param_dim(), 15);
        assert_eq!(ModelSpec::mlp1(4, 5, 3).param_dim(), 20 + 5 + 15 + 3);
        assert!(ModelSpec::logistic(4, 1).validate().is_err());
        assert!(ModelSpec::mlp1(4, 0, 2).validate().is_err());
    }

    #[test]
    fn uniform_softmax_loss_is_ln2() {
        let spec = ModelSpec::logistic(3, 2);
        let theta = vec![0.0; spec.param_dim()];
        let s = LabeledSample::new(Vector::new(vec![0.2, 0.9, 0.4]).unwrap(), 1).unwrap();
        let (loss, _) = loss_and_param_grad(&spec, &theta, &[s]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_rejected() {
        let spec = ModelSpec::logistic(2, 2);
        let theta = vec![0.0; spec.param_dim()];
        assert!(matches!(
            loss_and_param_grad(&spec, &theta, &[]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn sample_range_enforced() {
        assert!(LabeledSample::new(Vector::new(vec![1.5]).unwrap(), 0).is_err());
    }

    #[test]
    fn batch_grad_is_mean_of_singletons() {
        for spec in [ModelSpec::logistic(3, 3), ModelSpec::mlp1(3, 4, 2)] {
            let mut rng = RngStream::new(5, 0);
            let theta = random_theta(&spec, &mut rng, 1.0);
            let a = random_sample(&spec, &mut rng);
            let b = random_sample(&spec, &mut rng);
            let (_, ga) = loss_and_param_grad(&spec, &theta, &[a.clone()]).unwrap();
            let (_, gb) = loss_and_param_grad(&spec, &theta, &[b.clone()]).unwrap();
            let (_, gab) = loss_and_param_grad(&spec, &theta, &[a, b]).unwrap();
            for i in 0..gab.dim() {
                assert!((gab[i] - 0.5 * (ga[i] + gb[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn param_grad_matches_finite_differences() {
        for spec in [ModelSpec::logistic(4, 3), ModelSpec::mlp1(3, 5, 3)] {
            let mut rng = RngStream::new(17, 1);
            for _ in 0..100 {
                let theta = random_theta(&spec, &mut rng, 1.0);
                let batch = vec![random_sample(&spec, &mut rng), random_sample(&spec, &mut rng)];
                let (_, g) = loss_and_param_grad(&spec, &theta, &batch).unwrap();
                let fd = finite_diff_grad(
                    |t| loss_and_param_grad(&spec, t, &batch).map(|(l, _)| l),
                    &theta,
                    1e-5,
                )
                .unwrap();
                assert!(rel_err(&g, &fd) < 1e-5, "{:?}", spec.kind);
            }
        }
    }

    #[test]
    fn match_value_zero_at_truth_and_definition_at_zero_target() {
        let spec = ModelSpec::mlp1(3, 4, 3);
        let mut rng = RngStream::new(8, 0);
        let theta = random_theta(&spec, &mut rng, 1.0);
        let s = random_sample(&spec, &mut rng);
        let (_, g) = loss_and_param_grad(&spec, &theta, &[s.clone()]).unwrap();
        assert_eq!(grad_match_value(&spec, &theta, &s.x, &[s.y], &g).unwrap(), 0.0);

        let zero = vec![0.0; spec.param_dim()];
        let v = grad_match_value(&spec, &theta, &s.x, &[s.y], &zero).unwrap();
        let expected = 0.5 * g.iter().map(|v| v * v).sum::<f64>();
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn match_value_equals_brute_force_recomputation() {
        let spec = ModelSpec::logistic(3, 2);
        let mut rng = RngStream::new(9, 0);
        let theta = random_theta(&spec, &mut rng, 1.0);
        let target: Vec<f64> = (0..spec.param_dim()).map(|_| rng.standard_normal()).collect();
        let xs: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let labels = [0usize, 1];
        // recompute each per-sample gradient by hand and average
        let mut g = vec![0.0; spec.param_dim()];
        for (i, &y) in labels.iter().enumerate() {
            let x = &xs[i * 3..i * 3 + 3];
            let z: Vec<f64> = (0..2)
                .map(|k| theta[6 + k] + (0..3).map(|j| theta[k * 3 + j] * x[j]).sum::<f64>())
                .collect();
            let ez: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            let s: f64 = ez.iter().sum();
            for k in 0..2 {
                let e = ez[k] / s - if k == y { 1.0 } else { 0.0 };
                for j in 0..3 {
                    g[k * 3 + j] += 0.5 * e * x[j];
                }
                g[6 + k] += 0.5 * e;
            }
        }
        let expected: f64 = 0.5 * g.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let v = grad_match_value(&spec, &theta, &xs, &labels, &target).unwrap();
        assert!((v - expected).abs() < 1e-12 * expected.max(1.0));
    }

    #[test]
    fn match_dimension_mismatch_rejected() {
        let spec = ModelSpec::logistic(3, 2);
        let theta = vec![0.0; spec.param_dim()];
        let target = vec![0.0; spec.param_dim()];
        assert!(grad_match_value(&spec, &theta, &[0.1, 0.2], &[0], &target).is_err());
        assert!(grad_match_value(&spec, &theta, &[0.1, 0.2, 0.3], &[0], &target[1..]).is_err());
        assert!(grad_match_input_grad(&spec, &theta, &[0.1, 0.2, 0.3], &[2], &target).is_err());
    }

    #[test]
    fn logistic_input_grad_matches_finite_differences() {
        let spec = ModelSpec::logistic(4, 3);
        let mut rng = RngStream::new(31, 0);
        for _ in 0..100 {
            let theta = random_theta(&spec, &mut rng, 1.0);
            let target: Vec<f64> = (0..spec.param_dim()).map(|_| 0.3 * rng.standard_normal()).collect();
            let xs: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();
            let labels = [0usize, 2];
            let g = grad_match_input_grad(&spec, &theta, &xs, &labels, &target).unwrap();
            let fd = finite_diff_grad(
                |x| grad_match_value(&spec, &theta, x, &labels, &target),
                &xs,
                1e-5,
            )
            .unwrap();
            assert!(rel_err(&g, &fd) < 1e-5);
        }
    }

    #[test]
    fn input_grad_vanishes_at_exact_match() {
        for spec in [ModelSpec::logistic(3, 2), ModelSpec::mlp1(3, 4, 2)] {
            let mut rng = RngStream::new(4, 4);
            let theta = random_theta(&spec, &mut rng, 1.0);
            let s = random_sample(&spec, &mut rng);
            let (_, g) = loss_and_param_grad(&spec, &theta, &[s.clone()]).unwrap();
            let ig = grad_match_input_grad(&spec, &theta, &s.x, &[s.y], &g).unwrap();
            assert!(ig.iter().all(|v| v.abs() < 1e-8), "{ig:?}");
        }
    }

    #[test]
    fn directional_derivative_matches() {
        let spec = ModelSpec::logistic(3, 3);
        let mut rng = RngStream::new(77, 0);
        let theta = random_theta(&spec, &mut rng, 1.0);
        let base: Vec<f64> = (0..spec.param_dim()).map(|_| rng.standard_normal()).collect();
        let xs: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
        let dir: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        for scale in [0.0, 0.5, 1.0, 2.0] {
            let target: Vec<f64> = base.iter().map(|v| v * scale).collect();
            let g = grad_match_input_grad(&spec, &theta, &xs, &[1], &target).unwrap();
            let h = 1e-5;
            let plus: Vec<f64> = xs.iter().zip(&dir).map(|(x, d)| x + h * d).collect();
            let minus: Vec<f64> = xs.iter().zip(&dir).map(|(x, d)| x - h * d).collect();
            let fd = (grad_match_value(&spec, &theta, &plus, &[1], &target).unwrap()
                - grad_match_value(&spec, &theta, &minus, &[1], &target).unwrap())
                / (2.0 * h);
            let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((an - fd).abs() < 1e-4, "scale {scale}: {an} vs {fd}");
        }
    }
}
