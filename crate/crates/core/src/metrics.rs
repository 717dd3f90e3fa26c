//! Interval error and external excess of a set of split Gaussians, plus the
//! Monte-Carlo estimators used to cross-check every closed form.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{signed_distance, Gaussian, Plane, Side};
use crate::split::halfspace_mass;

/// One output Gaussian of an edit, paired with the Gaussian it replaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub child: Gaussian,
    pub parent: Gaussian,
    /// Half-space the child belongs to.
    pub side: Side,
    pub plane: Plane,
}

impl SplitRecord {
    /// Side is taken from the child's mean; means on the plane go positive.
    pub fn new(child: Gaussian, parent: Gaussian, plane: Plane) -> Self {
        let side = plane.side_of(&child.position);
        SplitRecord {
            child,
            parent,
            side,
            plane,
        }
    }

    /// Record for a piece that was deleted where it should have survived:
    /// the child keeps the shape but carries no mass.
    pub fn removed(original: Gaussian, plane: Plane) -> Self {
        let side = plane.side_of(&original.position);
        SplitRecord {
            child: original.with_mass(0.0),
            parent: original,
            side,
            plane,
        }
    }

    /// `|child mass in V_g - parent mass in V_g|`.
    pub fn interval_term(&self) -> f64 {
        (halfspace_mass(&self.child, &self.plane, self.side)
            - halfspace_mass(&self.parent, &self.plane, self.side))
        .abs()
    }

    /// Child mass leaking into the opposite half-space.
    pub fn excess_term(&self) -> f64 {
        halfspace_mass(&self.child, &self.plane, self.side.opposite())
    }

    /// Applies the same translation to child, parent and plane.
    pub fn translated(&self, delta: &Vector3<f64>) -> Self {
        SplitRecord {
            child: self.child.translated(delta),
            parent: self.parent.translated(delta),
            side: self.side,
            plane: self.plane.translated(delta),
        }
    }
}

/// Mean over records of the interval term.
pub fn interval_error(records: &[SplitRecord]) -> Result<f64> {
    mean_of(records, SplitRecord::interval_term)
}

/// Mean over records of the excess term.
pub fn external_excess(records: &[SplitRecord]) -> Result<f64> {
    mean_of(records, SplitRecord::excess_term)
}

fn mean_of(records: &[SplitRecord], term: impl Fn(&SplitRecord) -> f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    // sequential sum: the result must not depend on thread count
    let total: f64 = records.iter().map(term).sum();
    Ok(total / records.len() as f64)
}

/// Quality figures of one edit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EditReport {
    pub e_i: f64,
    pub e_e: f64,
    /// Number of evaluated Gaussians (the metrics' normalizer).
    #[serde(rename = "W")]
    pub split_count: usize,
    #[serde(rename = "removed")]
    pub removed_count: usize,
    #[serde(rename = "passthrough")]
    pub passthrough_count: usize,
}

impl EditReport {
    /// Report for a record set; an empty set gives zero metrics.
    pub fn from_records(
        records: &[SplitRecord],
        removed_count: usize,
        passthrough_count: usize,
    ) -> Self {
        let (e_i, e_e) = if records.is_empty() {
            (0.0, 0.0)
        } else {
            (
                interval_error(records).expect("non-empty"),
                external_excess(records).expect("non-empty"),
            )
        };
        EditReport {
            e_i,
            e_e,
            split_count: records.len(),
            removed_count,
            passthrough_count,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Distance from `exact` in standard errors (0 when both agree exactly).
    pub fn z_score(&self, exact: f64) -> f64 {
        let diff = (self.value - exact).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error
        }
    }
}

/// `z` with `P(|Z| > z) = p` for a standard normal `Z`.
pub fn two_sided_z(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0);
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if libm::erfc(mid * std::f64::consts::FRAC_1_SQRT_2) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws `samples` points from `g`'s distribution and returns
/// `alpha * (fraction on the negative side of p)` with its binomial standard error.
pub fn mc_halfspace_mass(g: &Gaussian, p: &Plane, samples: usize, seed: u64) -> Estimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let x = sample_point(g, &mut rng);
        if signed_distance(p, &x) < 0.0 {
            hits += 1;
        }
    }
    let n = samples.max(1) as f64;
    let frac = hits as f64 / n;
    Estimate {
        value: g.opacity_mass * frac,
        std_error: g.opacity_mass * (frac * (1.0 - frac) / n).sqrt(),
    }
}

/// Monte-Carlo estimates of the half-space integrals of `alpha pdf`,
/// `alpha x pdf` and `alpha x x^T pdf`.
#[derive(Debug, Clone, PartialEq)]
pub struct McMoments {
    pub mass: Estimate,
    pub first: [Estimate; 3],
    pub second: [[Estimate; 3]; 3],
}

pub fn mc_halfspace_moments(
    g: &Gaussian,
    p: &Plane,
    side: Side,
    samples: usize,
    seed: u64,
) -> McMoments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = [Welford::default(); 13];
    let a = g.opacity_mass;
    for _ in 0..samples {
        let x = sample_point(g, &mut rng);
        let inside = p.side_of(&x) == side;
        let w = if inside { a } else { 0.0 };
        acc[0].push(w);
        for i in 0..3 {
            acc[1 + i].push(w * x[i]);
        }
        let xx: Matrix3<f64> = x * x.transpose();
        for i in 0..3 {
            for j in 0..3 {
                acc[4 + 3 * i + j].push(w * xx[(i, j)]);
            }
        }
    }
    let est = |k: usize| acc[k].estimate();
    McMoments {
        mass: est(0),
        first: [est(1), est(2), est(3)],
        second: [
            [est(4), est(5), est(6)],
            [est(7), est(8), est(9)],
            [est(10), est(11), est(12)],
        ],
    }
}

/// `mu + R (s * z)` with `z` standard normal.
pub fn sample_point<R: rand::Rng + ?Sized>(g: &Gaussian, rng: &mut R) -> Vector3<f64> {
    let z = Vector3::from_fn(|i, _| {
        let v: f64 = StandardNormal.sample(rng);
        v * g.scales[i]
    });
    g.position + g.rotation * z
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn estimate(&self) -> Estimate {
        let n = self.n.max(1) as f64;
        let var = if self.n > 1 { self.m2 / (n - 1.0) } else { 0.0 };
        Estimate {
            value: self.mean,
            std_error: (var / n).sqrt(),
        }
    }
}
