//! Closed-form protection and attack complexity bounds.
//!
//! Every calculator reports infeasibility (a nonpositive denominator or a
//! negative radicand) as a normal outcome rather than an error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::hoeffding_half_width;
use crate::error::{invalid, Result};
use crate::protection::MechanismKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaId {
    ProtectionLower,
    ProtectionOrder,
    ProtectionIntervalLower,
    ProtectionIntervalUpper,
    AttackUpper,
    AttackUpperSubstituted,
    AttackLower,
    AttackLowerSubstituted,
}

impl FormulaId {
    pub fn as_str(&self) -> &'static str {
        match self {
            FormulaId::ProtectionLower => "protection_lower",
            FormulaId::ProtectionOrder => "protection_order",
            FormulaId::ProtectionIntervalLower => "protection_interval_lower",
            FormulaId::ProtectionIntervalUpper => "protection_interval_upper",
            FormulaId::AttackUpper => "attack_upper",
            FormulaId::AttackUpperSubstituted => "attack_upper_substituted",
            FormulaId::AttackLower => "attack_lower",
            FormulaId::AttackLowerSubstituted => "attack_lower_substituted",
        }
    }
}

/// Inputs shared by the bound calculators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    /// Model (gradient) dimension.
    pub m: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_hat: Option<f64>,
    #[serde(default)]
    pub zeta: Option<f64>,
    pub tau: f64,
    pub epsilon_p: f64,
    pub dataset_size: usize,
    pub gamma: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub c2: f64,
    #[serde(default = "unit")]
    pub c_const: f64,
    pub p: f64,
}

fn unit() -> f64 {
    1.0
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return invalid("bounds.m must be >= 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid("bounds.epsilon must be > 0");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return invalid("bounds.tau must be > 0");
        }
        if !(self.epsilon_p.is_finite() && self.epsilon_p <= 1.0) {
            return invalid("bounds.epsilon_p must be finite and <= 1");
        }
        if self.dataset_size == 0 {
            return invalid("bounds.dataset_size must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return invalid("bounds.gamma must lie in (0, 1)");
        }
        if !(self.c_a > 0.0 && self.c_a <= self.c_b && self.c_b.is_finite()) {
            return invalid("bounds constants need 0 < c_a <= c_b");
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return invalid("bounds.c2 must be > 0");
        }
        if !(self.c_const > 0.0 && self.c_const.is_finite()) {
            return invalid("bounds.c_const must be > 0");
        }
        if !self.p.is_finite() {
            return invalid("bounds.p must be finite");
        }
        Ok(())
    }

    /// The regret exponent lies in `(0, 1)`, where the lower bound is defined.
    pub fn p_in_range(&self) -> bool {
        self.p > 0.0 && self.p < 1.0
    }

    /// Hoeffding term `sqrt(ln(2/gamma) / (2|D|))`.
    pub fn hoeffding(&self) -> Result<f64> {
        hoeffding_half_width(self.gamma, self.dataset_size)
    }
}

/// Where the gradient distortion entering the attack bounds comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    Measured(f64),
    /// Derived from `(m, epsilon, gamma)` by the substituted closed form.
    Substituted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub formula_id: FormulaId,
    pub value: Option<f64>,
    pub feasible: bool,
    /// Denominator (or, for the interval, the shifted level). Absent only
    /// when the substituted distortion itself is undefined.
    pub denominator: Option<f64>,
    /// Gradient distortion used, for attack bounds.
    pub delta: Option<f64>,
    /// Radicand of the substituted distortion.
    pub radicand: Option<f64>,
    /// Lower-bound precondition `delta >= (2 c2 c_b / c_a) T^(p-1)` at the
    /// returned `T`.
    pub applicable: Option<bool>,
    pub note: Option<String>,
}

impl BoundReport {
    fn new(formula_id: FormulaId, value: Option<f64>, denominator: Option<f64>) -> Self {
        Self {
            formula_id,
            feasible: value.is_some(),
            value,
            denominator,
            delta: None,
            radicand: None,
            applicable: None,
            note: None,
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return invalid(format!("epsilon must be > 0, got {epsilon}"));
    }
    Ok(())
}

fn rate(m: usize, epsilon: f64) -> f64 {
    m as f64 / (epsilon * epsilon).min(epsilon)
}

/// `c * max(m / min(eps, eps^2), 1)`.
pub fn protection_lower_bound(m: usize, epsilon: f64, c_const: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if m == 0 {
        return invalid("m must be >= 1");
    }
    if !(c_const > 0.0 && c_const.is_finite()) {
        return invalid("c_const must be > 0");
    }
    Ok(c_const * rate(m, epsilon).max(1.0))
}

/// `m / min(eps^2, eps)` with unit constant.
pub fn protection_order(m: usize, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if m == 0 {
        return invalid("m must be >= 1");
    }
    Ok(rate(m, epsilon))
}

/// Rates at `eps_hat + zeta` (lower) and `eps_hat - zeta` (upper); the upper
/// side is infeasible once `eps_hat - zeta <= 0`.
pub fn protection_interval_estimated(m: usize, epsilon_hat: f64, zeta: f64) -> Result<(BoundReport, BoundReport)> {
    check_epsilon(epsilon_hat)?;
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return invalid("zeta must be >= 0");
    }
    if m == 0 {
        return invalid("m must be >= 1");
    }
    let hi = epsilon_hat + zeta;
    let lo = epsilon_hat - zeta;
    let lower = BoundReport::new(FormulaId::ProtectionIntervalLower, Some(rate(m, hi)), Some(hi));
    let upper = BoundReport::new(
        FormulaId::ProtectionIntervalUpper,
        (lo > 0.0).then(|| rate(m, lo)),
        Some(lo),
    );
    Ok((lower, upper))
}

/// Substituted distortion radicand `m/min(eps^2, eps) + sign * sqrt(m ln(1/gamma) / 2)`.
fn substituted_radicand(inputs: &BoundInputs, sign: f64) -> f64 {
    let m = inputs.m as f64;
    rate(inputs.m, inputs.epsilon) + sign * (m * (1.0 / inputs.gamma).ln() / 2.0).sqrt()
}

fn resolve_delta(inputs: &BoundInputs, distortion: Distortion, sign: f64) -> Result<(Option<f64>, Option<f64>)> {
    match distortion {
        Distortion::Measured(d) if d >= 0.0 && d.is_finite() => Ok((Some(d), None)),
        Distortion::Measured(d) => invalid(format!("gradient distortion must be >= 0, got {d}")),
        Distortion::Substituted => {
            let r = substituted_radicand(inputs, sign);
            Ok(((r >= 0.0).then(|| r.sqrt()), Some(r)))
        }
    }
}

/// Upper bound on attack iterations:
/// `T <= (c2 c_b / (c_a delta - tau [1 - eps_p + h]))^2`.
pub fn attack_t_upper(inputs: &BoundInputs, distortion: Distortion) -> Result<BoundReport> {
    inputs.validate()?;
    let h = inputs.hoeffding()?;
    let substituted = distortion == Distortion::Substituted;
    let id = if substituted {
        FormulaId::AttackUpperSubstituted
    } else {
        FormulaId::AttackUpper
    };
    let (delta, radicand) = resolve_delta(inputs, distortion, -1.0)?;
    let denominator = delta.map(|d| inputs.c_a * d - inputs.tau * (1.0 - inputs.epsilon_p + h));
    let value = denominator
        .filter(|den| *den > 0.0)
        .map(|den| (inputs.c2 * inputs.c_b / den).powi(2));
    let mut report = BoundReport::new(id, value, denominator);
    report.delta = delta;
    report.radicand = radicand;
    if substituted {
        report.note = Some("substituted distortion is a lower estimate used inside an upper bound".into());
    }
    Ok(report)
}

/// Lower bound on attack iterations:
/// `T >= (c2 c_b / (4 [tau (1 - eps_p) + h] - c_a delta))^(1 / (1 - p))`.
pub fn attack_t_lower(inputs: &BoundInputs, distortion: Distortion) -> Result<BoundReport> {
    inputs.validate()?;
    if !inputs.p_in_range() {
        return invalid("bounds.p must lie in (0, 1)");
    }
    let h = inputs.hoeffding()?;
    let id = if distortion == Distortion::Substituted {
        FormulaId::AttackLowerSubstituted
    } else {
        FormulaId::AttackLower
    };
    let (delta, radicand) = resolve_delta(inputs, distortion, 1.0)?;
    let denominator = delta.map(|d| 4.0 * (inputs.tau * (1.0 - inputs.epsilon_p) + h) - inputs.c_a * d);
    let value = denominator
        .filter(|den| *den > 0.0)
        .map(|den| (inputs.c2 * inputs.c_b / den).powf(1.0 / (1.0 - inputs.p)));
    let mut report = BoundReport::new(id, value, denominator);
    report.delta = delta;
    report.radicand = radicand;
    if let (Some(t), Some(d)) = (value, delta) {
        let need = 2.0 * inputs.c2 * inputs.c_b / inputs.c_a * t.powf(inputs.p - 1.0);
        report.applicable = Some(d >= need);
    }
    Ok(report)
}

/// Every calculator evaluated on one set of inputs, in a fixed order.
/// Attack bounds use `measured_delta` when given, and are always also
/// evaluated in substituted form.
pub fn all_bounds(inputs: &BoundInputs, measured_delta: Option<f64>) -> Result<Vec<BoundReport>> {
    inputs.validate()?;
    let mut out = vec![
        BoundReport::new(
            FormulaId::ProtectionLower,
            Some(protection_lower_bound(inputs.m, inputs.epsilon, inputs.c_const)?),
            None,
        ),
        BoundReport::new(
            FormulaId::ProtectionOrder,
            Some(protection_order(inputs.m, inputs.epsilon)?),
            None,
        ),
    ];
    if let Some(eh) = inputs.epsilon_hat {
        let (lo, hi) = protection_interval_estimated(inputs.m, eh, inputs.zeta.unwrap_or(0.0))?;
        out.push(lo);
        out.push(hi);
    }
    if let Some(d) = measured_delta {
        out.push(attack_t_upper(inputs, Distortion::Measured(d))?);
    }
    out.push(attack_t_upper(inputs, Distortion::Substituted)?);
    let mut lower = |id: FormulaId, d: Distortion| -> Result<()> {
        if inputs.p_in_range() {
            out.push(attack_t_lower(inputs, d)?);
        } else {
            let mut r = BoundReport::new(id, None, None);
            r.note = Some(format!("not applicable: regret exponent p = {} outside (0, 1)", inputs.p));
            out.push(r);
        }
        Ok(())
    };
    if let Some(d) = measured_delta {
        lower(FormulaId::AttackLower, Distortion::Measured(d))?;
    }
    lower(FormulaId::AttackLowerSubstituted, Distortion::Substituted)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub epsilons: Vec<f64>,
    pub dims: Vec<usize>,
    pub mechanisms: Vec<MechanismKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mechanism: MechanismKind,
    pub m: usize,
    pub epsilon: f64,
    pub protection_rate: f64,
    pub attack_t_lower: Option<f64>,
    /// The lower bound on attack iterations exceeds the attacker's budget.
    pub pruned: bool,
}

/// Grid sweep over `(mechanism, m, epsilon)`. Each point gets the protection
/// rate and the substituted attack lower bound. Points whose lower bound
/// exceeds `t_budget` are marked pruned (out of the attacker's reach). The
/// table lists pruned points first, each group by ascending protection rate,
/// ties kept in grid order.
pub fn sweep_designs(grid: &SweepGrid, t_budget: f64, constants: &BoundInputs) -> Result<Vec<SweepRow>> {
    if grid.epsilons.is_empty() || grid.dims.is_empty() || grid.mechanisms.is_empty() {
        return invalid("sweep grid must be non-empty in every axis");
    }
    if !(t_budget > 0.0) {
        return invalid("attacker budget must be > 0");
    }
    if !constants.p_in_range() {
        return invalid("sweep needs a regret exponent p in (0, 1)");
    }
    let points: Vec<(MechanismKind, usize, f64)> = grid
        .mechanisms
        .iter()
        .flat_map(|k| {
            grid.dims
                .iter()
                .flat_map(move |m| grid.epsilons.iter().map(move |e| (*k, *m, *e)))
        })
        .collect();
    let mut rows = points
        .par_iter()
        .map(|&(mechanism, m, epsilon)| {
            let inputs = BoundInputs {
                m,
                epsilon,
                ..constants.clone()
            };
            let lower = attack_t_lower(&inputs, Distortion::Substituted)?;
            Ok(SweepRow {
                mechanism,
                m,
                epsilon,
                protection_rate: protection_order(m, epsilon)?,
                attack_t_lower: lower.value,
                pruned: lower.value.is_some_and(|t| t > t_budget),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        b.pruned
            .cmp(&a.pruned)
            .then(a.protection_rate.total_cmp(&b.protection_rate))
    });
    Ok(rows)
}
