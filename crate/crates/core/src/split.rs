//! Closed-form split of one Gaussian into two at a plane, and its inverse.
//!
//! Each child is the moment-matched Gaussian of the parent's mass on one side
//! of the plane, so the pair conserves the parent's zeroth, first and second
//! moments exactly. All quantities below are expressed through the projection
//! of the parent onto the plane normal: `tau^2 = n^T Sigma n` and the signed
//! distance `d0` of the mean from the plane.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Matrix3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::model::{
    signed_distance, Covariance, Gaussian, Moments, Plane, Side, DEFAULT_SCALE_FLOOR,
};

/// Offset added to the side weights and the update amplitude so that neither
/// ever reaches zero in a denominator.
pub const EPSILON: f64 = 1e-20;

/// Multiple of the projected scale beyond which a plane no longer affects a splat.
pub const INFLUENCE_SIGMAS: f64 = 3.0;

/// Intermediate quantities shared by both children.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitAuxiliaries {
    /// Mass fraction of the negative side.
    pub c_l: f64,
    /// Mass fraction of the positive side.
    pub c_r: f64,
    /// Update amplitude: the standard normal density at `d0 / tau`.
    pub d_amp: f64,
    /// `Sigma0 n`.
    pub l0: Vector3<f64>,
    /// `sqrt(n^T Sigma0 n)`.
    pub tau: f64,
    /// Signed distance of the parent mean from the plane.
    pub d0: f64,
}

pub fn split_aux(g: &Gaussian, p: &Plane) -> SplitAuxiliaries {
    let sigma = g.covariance().into_inner();
    let n = p.normal.into_inner();
    let l0 = sigma * n;
    let tau = n.dot(&l0).max(0.0).sqrt();
    let d0 = signed_distance(p, &g.position);
    let e = libm::erf(d0 / (2f64.sqrt() * tau));
    SplitAuxiliaries {
        c_l: 0.5 * (1.0 - e + EPSILON),
        c_r: 0.5 * (1.0 + e + EPSILON),
        d_amp: ((-d0 * d0 / (2.0 * tau * tau)).exp() + EPSILON) / (2.0 * PI).sqrt(),
        l0,
        tau,
        d0,
    }
}

/// Distance threshold `eta = 3 max(|R^T n| * scales)` for `|d0|`.
///
/// `R^T n` is the plane normal expressed in the splat's principal frame; the
/// absolute value keeps the threshold a distance.
pub fn influence_threshold(g: &Gaussian, normal: &Unit<Vector3<f64>>) -> f64 {
    let local = g.rotation.inverse_transform_vector(normal);
    INFLUENCE_SIGMAS * local.abs().component_mul(&g.scales).max()
}

/// `|d0| < eta`: the plane cuts through the splat's influence range.
pub fn plane_affects(g: &Gaussian, p: &Plane) -> bool {
    signed_distance(p, &g.position).abs() < influence_threshold(g, &p.normal)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitOutcome {
    /// `left` lies on the negative side of the plane, `right` on the positive side.
    Split { left: Gaussian, right: Gaussian },
    /// The plane is outside the splat's influence range.
    PassThrough(Gaussian),
}

impl SplitOutcome {
    pub fn is_split(&self) -> bool {
        matches!(self, SplitOutcome::Split { .. })
    }

    pub fn into_gaussians(self) -> Vec<Gaussian> {
        match self {
            SplitOutcome::Split { left, right } => vec![left, right],
            SplitOutcome::PassThrough(g) => vec![g],
        }
    }
}

/// Splits `g` at `p` if the plane is within its influence range.
pub fn split_at_plane(g: &Gaussian, p: &Plane) -> Result<SplitOutcome> {
    if !plane_affects(g, p) {
        return Ok(SplitOutcome::PassThrough(g.clone()));
    }
    let (left, right) = split_children(g, p)?;
    Ok(SplitOutcome::Split { left, right })
}

/// Closed-form split without the influence gate.
pub fn split_children(g: &Gaussian, p: &Plane) -> Result<(Gaussian, Gaussian)> {
    let aux = split_aux(g, p);
    children_from_aux(g, &aux)
}

fn children_from_aux(g: &Gaussian, aux: &SplitAuxiliaries) -> Result<(Gaussian, Gaussian)> {
    let SplitAuxiliaries {
        c_l,
        c_r,
        d_amp,
        l0,
        tau,
        d0,
    } = *aux;
    let sigma0 = g.covariance().into_inner();
    let llt = l0 * l0.transpose() / (tau * tau);

    let mu_l = g.position - l0 * (d_amp / (tau * c_l));
    let mu_r = g.position + l0 * (d_amp / (tau * c_r));
    let sigma_l = sigma0 + llt * (d0 * d_amp / (tau * c_l) - d_amp * d_amp / (c_l * c_l));
    let sigma_r = sigma0 - llt * (d0 * d_amp / (tau * c_r) + d_amp * d_amp / (c_r * c_r));

    let left = child(g, g.opacity_mass * c_l, mu_l, sigma_l)?;
    let right = child(g, g.opacity_mass * c_r, mu_r, sigma_r)?;
    Ok((left, right))
}

fn child(
    parent: &Gaussian,
    mass: f64,
    mean: Vector3<f64>,
    sigma: Matrix3<f64>,
) -> Result<Gaussian> {
    let cov = Covariance::from_matrix((sigma + sigma.transpose()) * 0.5);
    let g = Gaussian::from_moments(mass, mean, &cov, parent.sh_coeffs.clone())?;
    if g.scales.iter().all(|&s| s <= DEFAULT_SCALE_FLOOR) {
        return Err(Error::DegenerateChild);
    }
    Ok(g)
}

/// Split through the splat's own center along `normal` (`d0 = 0`).
///
/// With the plane through the mean the side weights are exactly one half,
/// the amplitude is `1/sqrt(2 pi)` and the `d0` term of the covariance update
/// vanishes, so neither the error function nor the offsets are needed.
pub fn split_through_center(
    g: &Gaussian,
    normal: &Unit<Vector3<f64>>,
) -> Result<(Gaussian, Gaussian)> {
    let sigma0 = g.covariance().into_inner();
    let n = normal.into_inner();
    let l0 = sigma0 * n;
    let tau = n.dot(&l0).sqrt();
    let d_amp = 1.0 / (2.0 * PI).sqrt();
    // D / (tau C) with C = 1/2
    let shift = l0 * (2.0 * d_amp / tau);
    // D^2 / C^2 = 2/pi
    let shrink = l0 * l0.transpose() * (2.0 / PI) / (tau * tau);
    let sigma = sigma0 - shrink;
    let half = 0.5 * g.opacity_mass;
    let left = child(g, half, g.position - shift, sigma)?;
    let right = child(g, half, g.position + shift, sigma)?;
    Ok((left, right))
}

/// Inverse of a split: the single Gaussian with the pair's combined moments.
pub fn merge(left: &Gaussian, right: &Gaussian) -> Result<Gaussian> {
    let (a_l, a_r) = (left.opacity_mass, right.opacity_mass);
    let total = a_l + a_r;
    if !(total > 0.0) {
        return Err(Error::ZeroMass { total });
    }
    let mu0 = (left.position * a_l + right.position * a_r) / total;
    // Centered form of (a_l S_l + a_r S_r)/a + (a_l m_l m_l^T + a_r m_r m_r^T)/a - m m^T;
    // avoids cancelling two large outer products when the means are far from the origin.
    let dl = left.position - mu0;
    let dr = right.position - mu0;
    let sigma = (left.covariance().into_inner() * a_l
        + right.covariance().into_inner() * a_r
        + dl * dl.transpose() * a_l
        + dr * dr.transpose() * a_r)
        / total;
    let sh = left
        .sh_coeffs
        .iter()
        .zip(&right.sh_coeffs)
        .map(|(l, r)| (l * a_l + r * a_r) / total)
        .collect();
    Gaussian::from_moments(total, mu0, &Covariance::from_matrix(sigma), sh)
}

/// Mass fraction of a splat on one side of a plane, given `d0` and `tau`.
///
/// Uses the complementary error function so far tails stay accurate.
pub fn side_fraction(d0: f64, tau: f64, side: Side) -> f64 {
    let z = d0 / tau * FRAC_1_SQRT_2;
    match side {
        Side::Negative => 0.5 * libm::erfc(z),
        Side::Positive => 0.5 * libm::erfc(-z),
    }
}

/// Mass of `alpha * pdf` inside one half-space of `p`.
pub fn halfspace_mass(g: &Gaussian, p: &Plane, side: Side) -> f64 {
    let n = p.normal.into_inner();
    let tau = (n.dot(&(g.covariance().into_inner() * n))).max(0.0).sqrt();
    let d0 = signed_distance(p, &g.position);
    let fraction = if tau > 0.0 {
        side_fraction(d0, tau, side)
    } else if p.side_of(&g.position) == side {
        1.0
    } else {
        0.0
    };
    g.opacity_mass * fraction
}

/// Integrals of `alpha * pdf`, `alpha * x * pdf` and `alpha * x x^T * pdf`
/// over the negative half-space of `p`.
pub fn halfspace_moments(g: &Gaussian, p: &Plane) -> Moments {
    halfspace_moments_on(g, p, Side::Negative)
}

/// [`halfspace_moments`] for either side.
pub fn halfspace_moments_on(g: &Gaussian, p: &Plane, side: Side) -> Moments {
    let sigma0 = g.covariance().into_inner();
    let n = p.normal.into_inner();
    let l0 = sigma0 * n;
    let tau = n.dot(&l0).max(0.0).sqrt();
    let d0 = signed_distance(p, &g.position);
    let fraction = side_fraction(d0, tau, side);
    let mass = g.opacity_mass * fraction;
    if !(fraction > 0.0) {
        return Moments::zero();
    }
    let z = d0 / tau;
    let phi = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    let ratio = phi / fraction;
    let s = side.sign();
    // Truncated normal of t = n.(x - mu0) on the kept side, lifted back along L0.
    let mean = g.position + l0 * (s * ratio / tau);
    let var_factor = 1.0 - s * z * ratio - ratio * ratio;
    let cov = sigma0 + l0 * l0.transpose() * ((var_factor - 1.0) / (tau * tau));
    Moments {
        mass,
        first: mean * mass,
        second: (cov + mean * mean.transpose()) * mass,
    }
}
