//! Deterministic synthetic inputs: a box-shell scene of flat splats, and
//! random splats and planes for property checks.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{sh_len, Gaussian, Plane, SplatModel};
use crate::split::influence_threshold;

/// Parameters of [`box_shell`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxShell {
    pub count: usize,
    /// Half side lengths of the box.
    pub half_extents: Vector3<f64>,
    /// Normal-to-tangent scale ratio of the flat splats.
    pub flatness: f64,
    pub seed: u64,
}

impl Default for BoxShell {
    fn default() -> Self {
        BoxShell {
            count: 50_000,
            half_extents: Vector3::new(1.0, 0.8, 0.6),
            flatness: 0.1,
            seed: 42,
        }
    }
}

/// Flat splats tiling the six faces of an axis-aligned box centered at the
/// origin, roughly as a trained model of an opaque box would look.
///
/// Tangent scales are about one sample spacing, so neighbors overlap; peak
/// opacities are drawn in `[0.3, 0.95]` and converted to masses.
pub fn box_shell(cfg: &BoxShell) -> SplatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.half_extents;
    // face k has normal +-e_k and spans the two other axes
    let areas: Vec<f64> = (0..3)
        .map(|k| 4.0 * h[(k + 1) % 3] * h[(k + 2) % 3])
        .collect();
    let total: f64 = 2.0 * areas.iter().sum::<f64>();
    let spacing = (total / cfg.count.max(1) as f64).sqrt();

    let gaussians = (0..cfg.count)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total / 2.0;
            let mut k = 0;
            while k < 2 && pick >= areas[k] {
                pick -= areas[k];
                k += 1;
            }
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (u, w) = ((k + 1) % 3, (k + 2) % 3);
            let mut position = Vector3::zeros();
            position[k] = sign * h[k];
            position[u] = rng.random_range(-h[u]..h[u]);
            position[w] = rng.random_range(-h[w]..h[w]);

            let normal = Vector3::ith(k, sign);
            let theta = rng.random_range(0.0..PI);
            let (eu, ew) = (Vector3::ith(u, 1.0), Vector3::ith(w, 1.0));
            let t1 = eu * theta.cos() + ew * theta.sin();
            let t2 = normal.cross(&t1);
            let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
                Matrix3::from_columns(&[t1, t2, normal]),
            ));
            let s1 = spacing * rng.random_range(0.6..1.6);
            let s2 = spacing * rng.random_range(0.4..1.0);
            let s3 = s2.min(s1) * cfg.flatness * rng.random_range(0.5..1.5);
            let scales = Vector3::new(s1, s2, s3);
            let peak = rng.random_range(0.3..0.95);
            let mass = peak * (2.0 * PI).powf(1.5) * scales.product();
            let sh = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            Gaussian::new(position, rotation, scales, mass, sh).expect("generated splat is valid")
        })
        .collect();
    SplatModel::new(gaussians, 0).expect("generated model is valid")
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q = Quaternion::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

/// Random splat with a random orientation, position within `[-10, 10]^3`,
/// scales spanning at most a factor `sqrt(max_condition)` (so the covariance
/// condition number stays below `max_condition`) and mass in `[0.1, 10]`.
pub fn random_gaussian<R: Rng + ?Sized>(rng: &mut R, max_condition: f64) -> Gaussian {
    let base: f64 = 10f64.powf(rng.random_range(-2.0..0.5));
    let spread = max_condition.sqrt().ln();
    let scales = Vector3::from_fn(|_, _| base * (rng.random::<f64>() * spread).exp());
    let position = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
    let mass = 10f64.powf(rng.random_range(-1.0..1.0));
    let sh = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
    Gaussian::new(position, random_rotation(rng), scales, mass, sh).expect("valid by construction")
}

/// Random model whose splats all have a renderable peak opacity in
/// `[0.02, 0.98]`, with random SH coefficients of the given degree.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, count: usize, sh_degree: u8) -> SplatModel {
    let gaussians = (0..count)
        .map(|_| {
            let mut g = random_gaussian(rng, 1e4);
            let peak = rng.random_range(0.02..0.98);
            g.opacity_mass = peak * (2.0 * PI).powf(1.5) * g.scales.product();
            g.sh_coeffs = (0..sh_len(sh_degree))
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            g
        })
        .collect();
    SplatModel::new(gaussians, sh_degree).expect("valid by construction")
}

/// Random plane that cuts `g` within its influence range: `d0` uniform in
/// `(-eta, eta)`.
pub fn random_cutting_plane<R: Rng + ?Sized>(rng: &mut R, g: &Gaussian) -> Plane {
    let n = random_unit_vector(rng);
    let plane = Plane::new(n, 0.0).expect("unit normal");
    let eta = influence_threshold(g, &plane.normal);
    let d0 = rng.random_range(-1.0..1.0) * eta * (1.0 - 1e-12);
    Plane {
        offset: d0 - plane.normal.dot(&g.position),
        ..plane
    }
}
