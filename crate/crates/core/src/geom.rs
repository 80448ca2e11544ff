//! Cones, hyperplanes and the angle bookkeeping behind the truncation layers.
//!
//! A cone `p + c_θ[h]` holds every `x` whose offset `x - p` makes an angle of
//! at most `θ/2` with the unit axis `h`. The diagonal cone of aperture
//! `θ_n` is the widest one around `u_n` that stays in the nonnegative
//! orthant, and `W_θ` squeezes a wider cone into it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{rotation_to, unit_diagonal, Mat, Vector};

/// Angular slack applied on cone boundaries to absorb round-off.
pub const CONE_SLACK: f64 = 1e-9;

const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    #[serde(with = "crate::numlin::serde_vector")]
    pub apex: Vector,
    #[serde(with = "crate::numlin::serde_vector")]
    pub axis: Vector,
    pub aperture: f64,
}

impl Cone {
    pub fn new(apex: Vector, axis: Vector, aperture: f64) -> Result<Self> {
        if apex.len() != axis.len() {
            return Err(Error::DimensionMismatch(format!(
                "apex has dimension {}, axis {}",
                apex.len(),
                axis.len()
            )));
        }
        if !(aperture > 0.0 && aperture <= std::f64::consts::PI) {
            return Err(Error::InvalidInput(format!("aperture {aperture} outside (0, pi]")));
        }
        if (axis.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidInput("cone axis must be a unit vector".into()));
        }
        Ok(Self { apex, axis, aperture })
    }

    pub fn dim(&self) -> usize {
        self.apex.len()
    }

    /// The cone with the same apex and aperture around `-axis`.
    pub fn backward(&self) -> Self {
        Self { apex: self.apex.clone(), axis: -&self.axis, aperture: self.aperture }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    #[serde(with = "crate::numlin::serde_vector")]
    pub point: Vector,
    #[serde(with = "crate::numlin::serde_vector")]
    pub normal: Vector,
}

impl Hyperplane {
    pub fn new(point: Vector, normal: Vector) -> Result<Self> {
        if point.len() != normal.len() {
            return Err(Error::DimensionMismatch("hyperplane point and normal".into()));
        }
        if (normal.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidInput("hyperplane normal must be a unit vector".into()));
        }
        Ok(Self { point, normal })
    }

    /// `<x - p, ν>`.
    pub fn signed_distance(&self, x: &Vector) -> f64 {
        (x - &self.point).dot(&self.normal)
    }
}

/// Angle in `[0, π]` between two vectors; zero if either vanishes.
pub fn angle_between(u: &Vector, v: &Vector) -> f64 {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0).acos()
}

/// `2·arccos(√(n−1)/√n)`, evaluated as `2·atan(1/√(n−1))`.
pub fn theta_n(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("theta_n needs n >= 2, got {n}")));
    }
    Ok(2.0 * (1.0 / ((n - 1) as f64).sqrt()).atan())
}

/// Shrink factor `tan(θ_n/2)/tan(θ/2)` for `θ > θ_n`, otherwise 1.
pub fn lambda_shrink(theta: f64, n: usize) -> Result<f64> {
    if !(theta > 0.0 && theta < std::f64::consts::PI) {
        return Err(Error::InvalidInput(format!("theta {theta} outside (0, pi)")));
    }
    let tn = theta_n(n)?;
    if theta > tn {
        Ok((tn / 2.0).tan() / (theta / 2.0).tan())
    } else {
        Ok(1.0)
    }
}

/// `W_θ = R̃ diag(1, λ, …, λ) R̃ᵀ` with `R̃ e_1 = u_n/|u_n|`.
pub fn w_theta(theta: f64, n: usize) -> Result<Mat> {
    let lambda = lambda_shrink(theta, n)?;
    let mut e1 = Vector::zeros(n);
    e1[0] = 1.0;
    let rt = rotation_to(&e1, &unit_diagonal(n))?;
    let mut d = Vector::from_element(n, lambda);
    d[0] = 1.0;
    let w = &rt * Mat::from_diagonal(&d) * rt.transpose();
    Ok((&w + w.transpose()) * 0.5)
}

/// `R` with `R h = u_n/|u_n|`.
pub fn rotation_to_diagonal(h: &Vector) -> Result<Mat> {
    rotation_to(h, &unit_diagonal(h.len()))
}

pub fn cone_contains(c: &Cone, x: &Vector) -> bool {
    let d = x - &c.apex;
    if d.norm() == 0.0 {
        return true;
    }
    angle_between(&d, &c.axis) <= c.aperture / 2.0 + CONE_SLACK
}

/// Smallest aperture of a cone at `apex` around `axis` holding every ball of
/// the given radius centred at `points`. May exceed π.
pub fn min_enclosing_aperture(
    apex: &Vector,
    axis: &Vector,
    points: &[Vector],
    radius: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in points {
        let d = p - apex;
        let dist = d.norm();
        if dist <= radius {
            return Err(Error::BallTouchesApex { distance: dist, radius });
        }
        worst = worst.max(angle_between(&d, axis) + (radius / dist).asin());
    }
    Ok(2.0 * worst)
}

pub fn ball_in_cone(center: &Vector, radius: f64, c: &Cone) -> bool {
    if radius == 0.0 {
        return cone_contains(c, center);
    }
    let d = center - &c.apex;
    let dist = d.norm();
    dist > radius && angle_between(&d, &c.axis) + (radius / dist).asin() <= c.aperture / 2.0
}
