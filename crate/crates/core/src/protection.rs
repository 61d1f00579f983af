//! Gradient-distortion mechanisms and privacy-level conversions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{check_finite, dot, norm_unchecked, RngStream, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Identity,
    Gaussian,
    Laplace,
    SphereCap,
}

/// A protection mechanism `W_original -> W_protected`.
///
/// `noise_scale` is the per-coordinate standard deviation (gaussian), the
/// Laplace scale `b` (laplace), or the cap half-angle in radians
/// (sphere_cap, in `[0, pi]`). For sphere_cap, `cap_mass` is the probability
/// of drawing inside the cap; otherwise the draw is uniform over the rest of
/// the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_mbp_epsilon: Option<f64>,
    #[serde(default)]
    pub normalize_to_sphere: bool,
    #[serde(default = "default_cap_mass")]
    pub cap_mass: f64,
}

fn default_cap_mass() -> f64 {
    1.0
}

impl MechanismConfig {
    pub fn identity() -> Self {
        Self {
            kind: MechanismKind::Identity,
            noise_scale: 0.0,
            nominal_mbp_epsilon: None,
            normalize_to_sphere: false,
            cap_mass: 1.0,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            kind: MechanismKind::Gaussian,
            noise_scale: sigma,
            ..Self::identity()
        }
    }

    pub fn laplace(scale: f64) -> Self {
        Self {
            kind: MechanismKind::Laplace,
            noise_scale: scale,
            ..Self::identity()
        }
    }

    pub fn sphere_cap(half_angle: f64, cap_mass: f64) -> Self {
        Self {
            kind: MechanismKind::SphereCap,
            noise_scale: half_angle,
            normalize_to_sphere: true,
            cap_mass,
            ..Self::identity()
        }
    }

    pub fn with_nominal_epsilon(mut self, eps: f64) -> Self {
        self.nominal_mbp_epsilon = Some(eps);
        self
    }

    pub fn normalized(mut self) -> Self {
        self.normalize_to_sphere = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return invalid(format!("mechanism.noise_scale must be >= 0, got {}", self.noise_scale));
        }
        if let Some(eps) = self.nominal_mbp_epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return invalid(format!("mechanism.nominal_mbp_epsilon must be > 0, got {eps}"));
            }
        }
        match self.kind {
            MechanismKind::Identity if self.noise_scale != 0.0 => {
                invalid("identity mechanism requires noise_scale = 0")
            }
            MechanismKind::SphereCap => {
                if !self.normalize_to_sphere {
                    return invalid("sphere_cap requires normalize_to_sphere = true");
                }
                if self.noise_scale > std::f64::consts::PI {
                    return invalid("sphere_cap half-angle must lie in [0, pi]");
                }
                if !(0.0..=1.0).contains(&self.cap_mass) {
                    return invalid("sphere_cap cap_mass must lie in [0, 1]");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Applies `mechanism` to a gradient.
pub fn apply(mechanism: &MechanismConfig, w_original: &[f64], rng: &mut RngStream) -> Result<Vector> {
    mechanism.validate()?;
    if w_original.is_empty() {
        return Err(Error::InvalidDimension("empty gradient".into()));
    }
    check_finite(w_original)?;
    if mechanism.kind == MechanismKind::Identity && !mechanism.normalize_to_sphere {
        return Ok(Vector::from_finite(w_original.to_vec()));
    }

    let input = if mechanism.normalize_to_sphere {
        project_to_sphere(w_original)?
    } else {
        w_original.to_vec()
    };

    let mut out = match mechanism.kind {
        MechanismKind::Identity => input,
        MechanismKind::Gaussian => input
            .iter()
            .map(|v| v + mechanism.noise_scale * rng.standard_normal())
            .collect(),
        MechanismKind::Laplace => input
            .iter()
            .map(|v| v + sample_laplace(mechanism.noise_scale, rng))
            .collect(),
        MechanismKind::SphereCap => sample_cap(&input, mechanism.noise_scale, mechanism.cap_mass, rng),
    };

    if mechanism.normalize_to_sphere {
        let n = norm_unchecked(&out);
        if n == 0.0 {
            return Err(Error::DegenerateInput("mechanism output has zero norm".into()));
        }
        out.iter_mut().for_each(|v| *v /= n);
    }
    check_finite(&out)?;
    Ok(Vector::from_finite(out))
}

/// Unit-norm copy of `w`; zero vectors have no direction and are rejected.
pub fn project_to_sphere(w: &[f64]) -> Result<Vec<f64>> {
    let n = norm_unchecked(w);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateInput(
            "cannot project a zero gradient onto the sphere".into(),
        ));
    }
    Ok(w.iter().map(|v| v / n).collect())
}

fn sample_laplace(scale: f64, rng: &mut RngStream) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    // inverse CDF on u in (-1/2, 1/2)
    let mut u = rng.uniform() - 0.5;
    while u == -0.5 {
        u = rng.uniform() - 0.5;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Uniform draw inside the cap `{u : angle(u, x) <= alpha}` with probability
/// `cap_mass`, otherwise uniform on the complement. `x` is unit-norm.
fn sample_cap(x: &[f64], alpha: f64, cap_mass: f64, rng: &mut RngStream) -> Vec<f64> {
    use std::f64::consts::PI;
    let m = x.len();
    let inside = rng.uniform() < cap_mass;
    let (lo, hi) = if inside { (0.0, alpha) } else { (alpha, PI) };

    if m == 1 {
        // S^0 = {x, -x}; the cap contains -x only when alpha = pi
        let flip = if inside { alpha >= PI && rng.uniform() < 0.5 } else { alpha < PI || rng.uniform() < 0.5 };
        return vec![if flip { -x[0] } else { x[0] }];
    }
    if hi <= lo {
        return if inside { x.to_vec() } else { x.iter().map(|v| -v).collect() };
    }

    // polar angle density on the sphere is proportional to sin^{m-2}
    let peak = if lo <= PI / 2.0 && hi >= PI / 2.0 {
        1.0
    } else {
        lo.sin().max(hi.sin())
    };
    let phi = loop {
        let phi = lo + (hi - lo) * rng.uniform();
        if m == 2 || rng.uniform() <= (phi.sin() / peak).powi(m as i32 - 2) {
            break phi;
        }
    };

    let tangent = loop {
        let mut v: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
        let proj = dot(&v, x);
        v.iter_mut().zip(x).for_each(|(a, b)| *a -= proj * b);
        let n = norm_unchecked(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|a| *a /= n);
            break v;
        }
    };
    let (s, c) = phi.sin_cos();
    x.iter().zip(&tangent).map(|(a, t)| c * a + s * t).collect()
}

/// Where a privacy level came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelSource {
    Nominal,
    Converted,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLevel {
    pub ldp_epsilon: Option<f64>,
    pub mbp_epsilon: Option<f64>,
    pub source: LevelSource,
}

impl PrivacyLevel {
    /// An LDP guarantee together with the MBP level it implies.
    pub fn from_ldp(eps: f64) -> Result<Self> {
        Ok(Self {
            ldp_epsilon: Some(eps),
            mbp_epsilon: Some(ldp_to_mbp(eps)?),
            source: LevelSource::Converted,
        })
    }

    /// An MBP guarantee together with the LDP level it implies.
    pub fn from_mbp(xi: f64) -> Result<Self> {
        Ok(Self {
            ldp_epsilon: Some(mbp_to_ldp(xi)?),
            mbp_epsilon: Some(xi),
            source: LevelSource::Converted,
        })
    }

    pub fn estimated_mbp(xi: f64) -> Result<Self> {
        check_level(xi)?;
        Ok(Self {
            ldp_epsilon: None,
            mbp_epsilon: Some(xi),
            source: LevelSource::Estimated,
        })
    }
}

fn check_level(x: f64) -> Result<()> {
    if !(x >= 0.0) || x.is_infinite() {
        return invalid(format!("privacy level must be a finite value >= 0, got {x}"));
    }
    Ok(())
}

/// A xi-LDP mechanism is also xi-MBP.
pub fn ldp_to_mbp(xi: f64) -> Result<f64> {
    check_level(xi)?;
    Ok(xi)
}

/// A xi-MBP mechanism is 2xi-LDP.
pub fn mbp_to_ldp(xi: f64) -> Result<f64> {
    check_level(xi)?;
    Ok(2.0 * xi)
}
