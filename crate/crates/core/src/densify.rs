//! Homogenization passes that split elongated splats until their principal
//! scales are comparable.
//!
//! [`homogenize`] cuts each splat whose largest scale exceeds `eta_gamma`
//! times its second largest through its own center along the long axis.
//! [`densify_for_points`] uses ratios regularized by the model's mean splat
//! size and an off-center cut, so that the splat means alone give a fairly
//! uniform point cloud.

use nalgebra::{Unit, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Gaussian, Plane, SplatModel};
use crate::split::{split_children, split_through_center};

pub const DEFAULT_MAX_ROUNDS: usize = 8;

/// Upper bucket edges of the gamma histogram; the last bucket is open.
pub const HISTOGRAM_EDGES: [f64; 5] = [1.5, 2.0, 5.0, 10.0, 100.0];

/// Ratio of the largest to the second largest scale.
pub fn gamma(g: &Gaussian) -> f64 {
    let t = sorted_scales(g);
    t[0].1 / t[1].1
}

/// `(axis, scale)` pairs, largest scale first; ties keep axis order.
fn sorted_scales(g: &Gaussian) -> [(usize, f64); 3] {
    let mut t = [(0, g.scales[0]), (1, g.scales[1]), (2, g.scales[2])];
    t.sort_by(|a, b| b.1.total_cmp(&a.1));
    t
}

/// Count of splats per gamma bucket: `counts[k]` holds gammas below
/// `HISTOGRAM_EDGES[k]` (and at least the previous edge), the last entry the rest.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct GammaHistogram {
    pub counts: [usize; HISTOGRAM_EDGES.len() + 1],
}

impl GammaHistogram {
    pub fn of(m: &SplatModel) -> Self {
        let mut h = GammaHistogram::default();
        for g in &m.gaussians {
            let k = HISTOGRAM_EDGES
                .iter()
                .position(|&e| gamma(g) < e)
                .unwrap_or(HISTOGRAM_EDGES.len());
            h.counts[k] += 1;
        }
        h
    }

    /// Bucket labels such as `[1.5, 2)` and `[100, inf)`.
    pub fn labels() -> Vec<String> {
        let mut lo = 1.0;
        let mut out = Vec::new();
        for e in HISTOGRAM_EDGES {
            out.push(format!("[{lo}, {e})"));
            lo = e;
        }
        out.push(format!("[{lo}, inf)"));
        out
    }
}

/// Outcome of a homogenization pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InhomogeneityReport {
    /// Largest gamma in the output (1 for an empty model).
    pub gamma_max: f64,
    pub histogram: GammaHistogram,
    /// Rounds in which at least one splat was split.
    pub split_rounds: usize,
    pub final_count: usize,
    /// Splats still violating the pass's criterion.
    pub remaining: usize,
    /// The round limit was hit with violators left.
    pub exhausted: bool,
}

impl InhomogeneityReport {
    fn new(m: &SplatModel, split_rounds: usize, remaining: usize) -> Self {
        InhomogeneityReport {
            gamma_max: max_gamma(m),
            histogram: GammaHistogram::of(m),
            split_rounds,
            final_count: m.len(),
            remaining,
            exhausted: remaining > 0,
        }
    }

    /// `RoundsExhausted` if the pass stopped before reaching its fixpoint.
    pub fn check(&self) -> Result<()> {
        if self.exhausted {
            Err(Error::RoundsExhausted {
                rounds: self.split_rounds,
                remaining: self.remaining,
            })
        } else {
            Ok(())
        }
    }
}

pub fn max_gamma(m: &SplatModel) -> f64 {
    m.gaussians.iter().map(gamma).fold(1.0, f64::max)
}

/// Runs up to `max_rounds` rounds; each round replaces every violator (per
/// `plan`) by its two children in place. Returns the model, the rounds used
/// and the violators left.
fn run_rounds<P>(m: &SplatModel, max_rounds: usize, plan: P) -> Result<(SplatModel, usize, usize)>
where
    P: Fn(&[Gaussian]) -> Vec<Option<Cut>>,
{
    let mut gaussians = m.gaussians.clone();
    let mut rounds = 0;
    loop {
        let cuts = plan(&gaussians);
        let violators = cuts.iter().filter(|c| c.is_some()).count();
        if violators == 0 || rounds == max_rounds {
            return Ok((m.with_gaussians(gaussians), rounds, violators));
        }
        let parts: Vec<Result<Vec<Gaussian>>> = gaussians
            .into_par_iter()
            .zip(cuts)
            .map(|(g, cut)| match cut {
                None => Ok(vec![g]),
                Some(cut) => {
                    let (l, r) = match cut {
                        Cut::Center(n) => split_through_center(&g, &n)?,
                        Cut::Plane(p) => split_children(&g, &p)?,
                    };
                    Ok(vec![l, r])
                }
            })
            .collect();
        gaussians = Vec::new();
        for part in parts {
            gaussians.extend(part?);
        }
        rounds += 1;
    }
}

enum Cut {
    /// Through the splat's own center, with this normal.
    Center(Unit<Vector3<f64>>),
    Plane(Plane),
}

/// Splits every splat with `gamma > eta_gamma` through its center along its
/// longest principal axis, until none is left or `max_rounds` rounds ran.
///
/// Running out of rounds is not an error here; see [`InhomogeneityReport::check`].
pub fn homogenize(
    m: &SplatModel,
    eta_gamma: f64,
    max_rounds: usize,
) -> Result<(SplatModel, InhomogeneityReport)> {
    if !(eta_gamma > 1.0) {
        return Err(Error::InvalidSpec(format!("eta_gamma must be > 1, got {eta_gamma}")));
    }
    let (out, rounds, remaining) = run_rounds(m, max_rounds, |gs| {
        gs.par_iter()
            .map(|g| {
                (gamma(g) > eta_gamma)
                    .then(|| Cut::Center(g.principal_direction(sorted_scales(g)[0].0)))
            })
            .collect()
    })?;
    let report = InhomogeneityReport::new(&out, rounds, remaining);
    Ok((out, report))
}

/// Regularized scale ratios of one splat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaIj {
    /// `T_i / (T_j + r_m)` for `(i, j)` = `(0, 1)`, `(1, 2)`, `(0, 2)` over the
    /// descending scales `T`.
    pub values: [f64; 3],
    /// Index into `Gaussian::scales` of the `i` of the largest ratio.
    pub axis: usize,
}

impl GammaIj {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn gamma_ij(g: &Gaussian, r_m: f64) -> GammaIj {
    const PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
    let t = sorted_scales(g);
    let values = PAIRS.map(|(i, j)| t[i].1 / (t[j].1 + r_m));
    let best = (0..3)
        .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)))
        .expect("three pairs");
    GammaIj {
        values,
        axis: t[PAIRS[best].0].0,
    }
}

/// Mean over splats of the largest principal scale.
pub fn mean_max_scale(m: &SplatModel) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.gaussians.iter().map(|g| g.scales.max()).sum::<f64>() / m.len() as f64
}

/// The off-center cut: normal along principal axis `axis`, placed `2 T` behind
/// the mean so that `d0 = 2 T`.
pub fn point_cut(g: &Gaussian, axis: usize) -> Plane {
    let n = g.principal_direction(axis);
    Plane {
        normal: n,
        offset: 2.0 * g.scales[axis] - n.dot(&g.position),
    }
}

/// Splits splats with any `gamma_ij > eta_gamma` at [`point_cut`] of the
/// offending axis, recomputing the mean scale `r_m` every round.
pub fn densify_for_points(
    m: &SplatModel,
    eta_gamma: f64,
    max_rounds: usize,
) -> Result<(SplatModel, InhomogeneityReport)> {
    if !(eta_gamma > 0.0) {
        return Err(Error::InvalidSpec(format!("eta_gamma must be > 0, got {eta_gamma}")));
    }
    let (out, rounds, remaining) = run_rounds(m, max_rounds, |gs| {
        let r_m = gs.iter().map(|g| g.scales.max()).sum::<f64>() / gs.len().max(1) as f64;
        gs.par_iter()
            .map(|g| {
                let r = gamma_ij(g, r_m);
                (r.max() > eta_gamma).then(|| Cut::Plane(point_cut(g, r.axis)))
            })
            .collect()
    })?;
    let report = InhomogeneityReport::new(&out, rounds, remaining);
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use std::f64::consts::PI;

    fn splat(scales: [f64; 3], rot: UnitQuaternion<f64>) -> Gaussian {
        Gaussian::new(Vector3::new(0.3, -1.0, 2.0), rot, Vector3::from(scales), 1.0, vec![0.0; 3])
            .unwrap()
    }

    fn model(gs: Vec<Gaussian>) -> SplatModel {
        SplatModel::new(gs, 0).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let id = UnitQuaternion::identity();
        assert_eq!(gamma(&splat([1.0, 1.0, 1.0], id)), 1.0);
        assert_eq!(gamma(&splat([10.0, 2.0, 1.0], id)), 5.0);
        assert_eq!(gamma(&splat([3.0, 3.0, 1.0], id)), 1.0);
        assert_eq!(gamma(&splat([1.0, 2.0, 10.0], id)), 5.0);
    }

    #[test]
    fn uniform_model_unchanged() {
        let m = model(vec![splat([1.0, 0.9, 0.8], UnitQuaternion::identity())]);
        let (out, report) = homogenize(&m, 5.0, 8).unwrap();
        assert_eq!(out, m);
        assert_eq!(report.split_rounds, 0);
        assert!(!report.exhausted);
        let (out, report) = densify_for_points(&m, 2.0, 8).unwrap();
        assert_eq!(out, m);
        assert_eq!(report.split_rounds, 0);
    }

    #[test]
    fn ten_to_one_needs_two_rounds() {
        let m = model(vec![splat([10.0, 1.0, 1.0], UnitQuaternion::identity())]);
        let (one, r1) = homogenize(&m, 5.0, 1).unwrap();
        assert_eq!(one.len(), 2);
        let shrunk = 10.0 * (1.0 - 2.0 / PI).sqrt();
        assert_relative_eq!(shrunk, 6.028, epsilon = 1e-3);
        for g in &one.gaussians {
            assert_relative_eq!(g.scales.max(), shrunk, epsilon = 1e-9);
        }
        assert!(r1.exhausted);
        assert!(r1.check().is_err());
        let (two, r2) = homogenize(&m, 5.0, 8).unwrap();
        assert_eq!(r2.split_rounds, 2);
        assert_eq!(two.len(), 4);
        assert!(r2.gamma_max <= 5.0);
        assert!(r2.check().is_ok());
    }

    #[test]
    fn homogenize_conserves_model_moments() {
        let gs = (0..6)
            .map(|i| {
                splat(
                    [8.0 + i as f64, 1.0, 0.5],
                    UnitQuaternion::from_euler_angles(0.3 * i as f64, -0.2, 0.9),
                )
            })
            .collect();
        let m = model(gs);
        let (out, _) = homogenize(&m, 5.0, 8).unwrap();
        let r = out.moments().relative_residual(&m.moments());
        assert!(r.mass < 1e-12 && r.first < 1e-9 && r.second < 1e-9, "{r:?}");
    }

    #[test]
    fn gamma_ij_examples() {
        let id = UnitQuaternion::identity();
        let r = gamma_ij(&splat([1.0, 1.0, 1.0], id), 1.0);
        assert_eq!(r.values, [0.5; 3]);
        let r = gamma_ij(&splat([5.0, 1.0, 1.0], id), 0.0);
        assert_eq!(r.values[0], 5.0);
        assert_eq!(r.axis, 0);
        let r = gamma_ij(&splat([1.0, 5.0, 2.0], id), 0.0);
        assert_eq!(r.axis, 1);
        let r = gamma_ij(&splat([50.0, 1.0, 1.0], id), 1e9);
        assert!(r.max() < 1e-7);
    }

    #[test]
    fn off_center_cut_mass_fractions() {
        let g = splat([3.0, 1.0, 0.5], UnitQuaternion::from_euler_angles(0.4, 0.1, -0.7));
        let p = point_cut(&g, 0);
        assert_relative_eq!(crate::model::signed_distance(&p, &g.position), 6.0, epsilon = 1e-12);
        let (l, r) = split_children(&g, &p).unwrap();
        let erf = libm::erf(2f64.sqrt());
        assert_relative_eq!(l.opacity_mass, 0.5 * (1.0 - erf), epsilon = 1e-9);
        assert_relative_eq!(r.opacity_mass, 0.5 * (1.0 + erf), epsilon = 1e-9);
        assert_relative_eq!(r.opacity_mass, 0.97725, epsilon = 1e-5);
    }

    #[test]
    fn densify_adds_points_and_conserves() {
        let mut gs = vec![splat([6.0, 0.5, 0.5], UnitQuaternion::from_euler_angles(0.2, 0.3, 0.4))];
        gs.extend((0..5).map(|_| splat([0.5, 0.5, 0.4], UnitQuaternion::identity())));
        let m = model(gs);
        assert!(gamma_ij(&m.gaussians[0], mean_max_scale(&m)).max() > 2.0);
        let (out, report) = densify_for_points(&m, 2.0, 64).unwrap();
        assert!(out.len() > m.len());
        assert!(!report.exhausted, "{report:?}");
        let r_m = mean_max_scale(&out);
        for g in &out.gaussians {
            assert!(gamma_ij(g, r_m).max() <= 2.0);
        }
        let r = out.moments().relative_residual(&m.moments());
        assert!(r.mass < 1e-12 && r.first < 1e-9 && r.second < 1e-9, "{r:?}");
    }

    #[test]
    fn histogram_buckets() {
        let id = UnitQuaternion::identity();
        let m = model(vec![
            splat([1.0, 1.0, 1.0], id),
            splat([3.0, 1.0, 1.0], id),
            splat([300.0, 1.0, 1.0], id),
        ]);
        let h = GammaHistogram::of(&m);
        assert_eq!(h.counts, [1, 0, 1, 0, 0, 1]);
        assert_eq!(GammaHistogram::labels().len(), h.counts.len());
        assert_eq!(GammaHistogram::labels()[0], "[1, 1.5)");
        assert_eq!(max_gamma(&SplatModel::default()), 1.0);
    }

    #[test]
    fn invalid_thresholds() {
        let m = SplatModel::default();
        assert!(homogenize(&m, 1.0, 8).is_err());
        assert!(densify_for_points(&m, 0.0, 8).is_err());
    }
}
