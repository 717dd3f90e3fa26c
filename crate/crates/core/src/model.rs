//! Splat primitives and the covariance algebra shared by every other module.
//!
//! A [`Gaussian`] carries an opacity *mass*: the weight multiplying a
//! normalized density, so that integrating `opacity_mass * pdf` over all of
//! space gives back `opacity_mass`. Splat files store a peak amplitude
//! instead; the conversion lives in [`crate::ply`].

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scales never drop below this after sanitization (scene units).
pub const DEFAULT_SCALE_FLOOR: f64 = 1e-12;

/// Relative asymmetry tolerated by [`decompose`] before it refuses the input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Determinants below this make [`pdf_at`] fail instead of overflowing.
pub const MIN_DETERMINANT: f64 = 1e-300;

/// Number of SH coefficients (all three channels) for a given degree.
pub fn sh_len(degree: u8) -> usize {
    let k = degree as usize + 1;
    3 * k * k
}

/// One anisotropic splat.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviations in the rotated frame.
    pub scales: Vector3<f64>,
    pub opacity_mass: f64,
    /// DC terms first, then the higher bands, in file order.
    pub sh_coeffs: Vec<f64>,
}

impl Gaussian {
    pub fn new(
        position: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        scales: Vector3<f64>,
        opacity_mass: f64,
        sh_coeffs: Vec<f64>,
    ) -> Result<Self> {
        let g = Gaussian {
            position,
            rotation,
            scales,
            opacity_mass,
            sh_coeffs,
        };
        g.validate()?;
        Ok(g)
    }

    /// Axis-aligned isotropic splat with no color, mostly for tests and tools.
    pub fn isotropic(position: Vector3<f64>, sigma: f64, opacity_mass: f64) -> Result<Self> {
        Gaussian::new(
            position,
            UnitQuaternion::identity(),
            Vector3::repeat(sigma),
            opacity_mass,
            vec![0.0; 3],
        )
    }

    /// Builds a splat from mass, mean and covariance, sanitizing the covariance.
    pub fn from_moments(
        opacity_mass: f64,
        position: Vector3<f64>,
        covariance: &Covariance,
        sh_coeffs: Vec<f64>,
    ) -> Result<Self> {
        let (rotation, scales) = decompose(covariance)?;
        Gaussian::new(position, rotation, scales, opacity_mass, sh_coeffs)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGaussian("non-finite position".into()));
        }
        if !self.scales.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(Error::InvalidGaussian(format!(
                "scales must be positive, got {:?}",
                self.scales.as_slice()
            )));
        }
        if !(self.opacity_mass.is_finite() && self.opacity_mass >= 0.0) {
            return Err(Error::InvalidGaussian(format!(
                "opacity mass must be non-negative, got {}",
                self.opacity_mass
            )));
        }
        if !self.rotation.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGaussian("non-finite rotation".into()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn covariance(&self) -> Covariance {
        covariance(self)
    }

    /// Principal direction belonging to `scales[axis]`.
    pub fn principal_direction(&self, axis: usize) -> Unit<Vector3<f64>> {
        Unit::new_normalize(self.rotation_matrix().column(axis).into_owned())
    }

    /// Same splat with a different mass (used for zero-mass placeholders of deleted pieces).
    pub fn with_mass(&self, opacity_mass: f64) -> Self {
        Gaussian {
            opacity_mass,
            ..self.clone()
        }
    }

    pub fn translated(&self, delta: &Vector3<f64>) -> Self {
        Gaussian {
            position: self.position + delta,
            ..self.clone()
        }
    }
}

/// Symmetric 3x3 covariance (scene units squared).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance(Matrix3<f64>);

impl Covariance {
    /// Wraps a matrix without checking it; [`decompose`] does the checking.
    pub fn from_matrix(matrix: Matrix3<f64>) -> Self {
        Covariance(matrix)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }
}

/// `R diag(s^2) R^T`, symmetrized.
pub fn covariance(g: &Gaussian) -> Covariance {
    let r = g.rotation_matrix();
    let s2 = g.scales.component_mul(&g.scales);
    let m = r * Matrix3::from_diagonal(&s2) * r.transpose();
    Covariance((m + m.transpose()) * 0.5)
}

/// Eigen-decomposes a covariance into a proper rotation and scales.
pub fn decompose(c: &Covariance) -> Result<(UnitQuaternion<f64>, Vector3<f64>)> {
    decompose_with_floor(c, DEFAULT_SCALE_FLOOR)
}

/// Like [`decompose`] with a caller-chosen scale floor.
///
/// Eigenvalues are clamped with `max(0, .)`, reported in descending order,
/// and the eigenvector basis is made right-handed by multiplying it by its
/// determinant. Among the equivalent bases (column signs, permutations of
/// tied eigenvalues) the one closest to the identity is returned.
pub fn decompose_with_floor(
    c: &Covariance,
    scale_floor: f64,
) -> Result<(UnitQuaternion<f64>, Vector3<f64>)> {
    let m = c.matrix();
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidGaussian("non-finite covariance".into()));
    }
    let magnitude = m.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (m - m.transpose()).amax() / magnitude;
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(Error::NonSymmetric { asymmetry });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let mut basis = Matrix3::from_fn(|r, col| eig.eigenvectors[(r, order[col])]);

    let clamped = values.map(|v| v.max(0.0));
    basis = fix_handedness(&basis);
    let basis = canonical_basis(&basis, &clamped);

    let scales = clamped.map(|v| v.sqrt().max(scale_floor));
    let rotation =
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(basis));
    Ok((rotation, scales))
}

/// `R det(R)`: turns an improper orthogonal basis into a rotation.
pub fn fix_handedness(r: &Matrix3<f64>) -> Matrix3<f64> {
    let det = r.determinant();
    if det < 0.0 {
        -r
    } else {
        *r
    }
}

/// Picks, among sign flips and permutations within tied eigenvalues, the
/// right-handed basis with the largest trace.
fn canonical_basis(basis: &Matrix3<f64>, values: &Vector3<f64>) -> Matrix3<f64> {
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let tie = 1e-12 * values.amax().max(f64::MIN_POSITIVE);
    let mut best = *basis;
    let mut best_trace = f64::NEG_INFINITY;
    for perm in PERMS {
        if (0..3).any(|k| (values[perm[k]] - values[k]).abs() > tie) {
            continue;
        }
        for signs in 0..8u8 {
            let candidate = Matrix3::from_fn(|r, col| {
                let flip = if signs >> col & 1 == 1 { -1.0 } else { 1.0 };
                flip * basis[(r, perm[col])]
            });
            if candidate.determinant() <= 0.0 {
                continue;
            }
            let trace = candidate.trace();
            if trace > best_trace + 1e-12 {
                best_trace = trace;
                best = candidate;
            }
        }
    }
    best
}

/// Normalized density `N(x; mu, Sigma)`.
pub fn pdf_at(g: &Gaussian, x: &Vector3<f64>) -> Result<f64> {
    let var = g.scales.component_mul(&g.scales);
    let det = var.product();
    if !(det >= MIN_DETERMINANT) {
        return Err(Error::SingularCovariance { det });
    }
    let local = g.rotation.inverse_transform_vector(&(x - g.position));
    let maha: f64 = local
        .iter()
        .zip(var.iter())
        .map(|(y, v)| y * y / v)
        .sum();
    Ok((2.0 * PI).powf(-1.5) / det.sqrt() * (-0.5 * maha).exp())
}

/// Which half-space a point falls in. Points on the plane count as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Negative,
    Positive,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Negative => Side::Positive,
            Side::Positive => Side::Negative,
        }
    }

    /// +1 for positive, -1 for negative.
    pub fn sign(self) -> f64 {
        match self {
            Side::Negative => -1.0,
            Side::Positive => 1.0,
        }
    }
}

/// Oriented plane `n . x + d = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Unit<Vector3<f64>>,
    pub offset: f64,
}

impl Plane {
    /// Normalizes `normal`, scaling `offset` by the same factor so the set of
    /// points is unchanged.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidPlane(format!(
                "normal {:?} / offset {offset}",
                normal.as_slice()
            )));
        }
        Ok(Plane {
            normal: Unit::new_unchecked(normal / len),
            offset: offset / len,
        })
    }

    /// Plane with the given normal passing through `point`.
    pub fn through(point: &Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let p = Plane::new(normal, 0.0)?;
        Ok(Plane {
            offset: -p.normal.dot(point),
            ..p
        })
    }

    pub fn side_of(&self, x: &Vector3<f64>) -> Side {
        if signed_distance(self, x) < 0.0 {
            Side::Negative
        } else {
            Side::Positive
        }
    }

    /// The same plane after the whole scene is moved by `delta`.
    pub fn translated(&self, delta: &Vector3<f64>) -> Plane {
        Plane {
            normal: self.normal,
            offset: self.offset - self.normal.dot(delta),
        }
    }
}

/// `n . x + d`.
pub fn signed_distance(p: &Plane, x: &Vector3<f64>) -> f64 {
    p.normal.dot(x) + p.offset
}

/// Zeroth, first and second raw moments of `sum_k alpha_k pdf_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub first: Vector3<f64>,
    pub second: Matrix3<f64>,
}

impl Moments {
    pub fn zero() -> Self {
        Moments {
            mass: 0.0,
            first: Vector3::zeros(),
            second: Matrix3::zeros(),
        }
    }

    pub fn of(g: &Gaussian) -> Self {
        let a = g.opacity_mass;
        let mu = g.position;
        Moments {
            mass: a,
            first: mu * a,
            second: (g.covariance().into_inner() + mu * mu.transpose()) * a,
        }
    }

    /// Largest relative residual of the three moments against `reference`.
    ///
    /// Mass and second moment are compared relative to their own magnitude.
    /// The first moment uses `mass * (|mean| + spread)` so that splats near
    /// the origin are not judged against a vanishing denominator.
    pub fn relative_residual(&self, reference: &Moments) -> MomentResidual {
        let scale_mass = reference.mass.abs().max(f64::MIN_POSITIVE);
        let mean = reference.first / scale_mass;
        let central = reference.second / scale_mass - mean * mean.transpose();
        let spread = central.norm().sqrt();
        let first_scale = (scale_mass * (mean.norm() + spread)).max(f64::MIN_POSITIVE);
        let second_scale = reference.second.norm().max(f64::MIN_POSITIVE);
        MomentResidual {
            mass: (self.mass - reference.mass).abs() / scale_mass,
            first: (self.first - reference.first).norm() / first_scale,
            second: (self.second - reference.second).norm() / second_scale,
        }
    }
}

impl std::ops::Add for Moments {
    type Output = Moments;

    fn add(self, rhs: Moments) -> Moments {
        Moments {
            mass: self.mass + rhs.mass,
            first: self.first + rhs.first,
            second: self.second + rhs.second,
        }
    }
}

impl std::iter::Sum for Moments {
    fn sum<I: Iterator<Item = Moments>>(iter: I) -> Moments {
        iter.fold(Moments::zero(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MomentResidual {
    pub mass: f64,
    pub first: f64,
    pub second: f64,
}

impl MomentResidual {
    pub fn max(&self, other: &MomentResidual) -> MomentResidual {
        MomentResidual {
            mass: self.mass.max(other.mass),
            first: self.first.max(other.first),
            second: self.second.max(other.second),
        }
    }
}

/// Ordered collection of splats sharing one SH degree.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplatModel {
    pub gaussians: Vec<Gaussian>,
    pub sh_degree: u8,
}

impl SplatModel {
    pub fn new(gaussians: Vec<Gaussian>, sh_degree: u8) -> Result<Self> {
        let m = SplatModel {
            gaussians,
            sh_degree,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > 3 {
            return Err(Error::InvalidGaussian(format!(
                "sh degree {} outside [0, 3]",
                self.sh_degree
            )));
        }
        let expected = sh_len(self.sh_degree);
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate()
                .map_err(|e| Error::InvalidGaussian(format!("gaussian {i}: {e}")))?;
            if g.sh_coeffs.len() != expected {
                return Err(Error::InvalidGaussian(format!(
                    "gaussian {i} has {} sh coefficients, degree {} needs {expected}",
                    g.sh_coeffs.len(),
                    self.sh_degree
                )));
            }
        }
        Ok(())
    }

    /// Keeps the SH degree, replaces the splats.
    pub fn with_gaussians(&self, gaussians: Vec<Gaussian>) -> SplatModel {
        SplatModel {
            gaussians,
            sh_degree: self.sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.gaussians.iter().map(|g| g.opacity_mass).sum()
    }

    pub fn moments(&self) -> Moments {
        self.gaussians.iter().map(Moments::of).sum()
    }
}
