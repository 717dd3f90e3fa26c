//! Model edits: cutting along a plane and deleting the inside of a prism or
//! of a closed implicit surface, each with the moment-conserving split and
//! with the naive baselines (move, remove, filter) for comparison.
//!
//! Every edit returns the edited model, an [`EditReport`] and, for each output
//! splat, the index of the input splat it descends from. Split children
//! replace their parent in place, left child first.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Unit, Vector3};
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::metrics::{EditReport, SplitRecord};
use crate::model::{signed_distance, Gaussian, Plane, Side, SplatModel};
use crate::split::{influence_threshold, plane_affects, split_children};

/// Upper bound on how often an edit re-splits the pieces it produced.
pub const MAX_REPEAT: u8 = 3;

/// Step limit of the gradient projection onto a generic implicit surface.
pub const PROJECTION_MAX_STEPS: usize = 50;

/// `|B|` below which the projection counts as converged.
pub const PROJECTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneStrategy {
    /// Split every splat the plane cuts through, `repeat` times.
    Ours { repeat: u8 },
    /// Assign whole splats to a side by their mean.
    Move,
    /// Delete every splat the plane cuts through.
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeleteStrategy {
    /// Split boundary splats, then delete the pieces whose mean is inside.
    Ours { repeat: u8 },
    /// Delete splats whose mean is inside, split nothing.
    Filter,
}

#[derive(Debug, Clone)]
pub enum EditSpec {
    /// Cut along `plane` and push the two halves `gap` apart along its normal.
    PlaneSplit {
        plane: Plane,
        gap: f64,
        strategy: PlaneStrategy,
    },
    PolygonDelete {
        prism: Prism,
        strategy: DeleteStrategy,
    },
    CurveDelete {
        surface: ImplicitSurface,
        strategy: DeleteStrategy,
    },
}

impl EditSpec {
    /// Parses the JSON form, e.g.
    /// `{"kind": "plane_split", "plane": {"normal": [1, 0, 0], "d": 0}, "gap": 0.1, "strategy": "ours", "repeat": 2}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let dto: EditSpecDto = serde_json::from_str(text)?;
        dto.try_into()
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EditSpecDto {
    PlaneSplit {
        plane: PlaneDto,
        #[serde(default)]
        gap: f64,
        strategy: StrategyName,
        #[serde(default = "one")]
        repeat: u8,
    },
    PolygonDelete {
        prism: PrismDto,
        strategy: StrategyName,
        #[serde(default = "one")]
        repeat: u8,
    },
    CurveDelete {
        surface: SurfaceDto,
        strategy: StrategyName,
        #[serde(default = "one")]
        repeat: u8,
    },
}

fn one() -> u8 {
    1
}

#[derive(Debug, Deserialize)]
struct PlaneDto {
    normal: [f64; 3],
    d: f64,
}

#[derive(Debug, Deserialize)]
struct PrismDto {
    vertices: [[f64; 3]; 3],
    axis: [f64; 3],
    extent: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SurfaceDto {
    Sphere { center: [f64; 3], radius: f64 },
    Ellipsoid { center: [f64; 3], semiaxes: [f64; 3] },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum StrategyName {
    Ours,
    Move,
    Remove,
    Filter,
}

fn check_repeat(repeat: u8) -> Result<u8> {
    if (1..=MAX_REPEAT).contains(&repeat) {
        Ok(repeat)
    } else {
        Err(Error::InvalidSpec(format!(
            "repeat must be in [1, {MAX_REPEAT}], got {repeat}"
        )))
    }
}

fn delete_strategy(name: StrategyName, repeat: u8) -> Result<DeleteStrategy> {
    match name {
        StrategyName::Ours => Ok(DeleteStrategy::Ours {
            repeat: check_repeat(repeat)?,
        }),
        StrategyName::Filter => Ok(DeleteStrategy::Filter),
        other => Err(Error::InvalidSpec(format!(
            "strategy {other:?} does not apply to deletions (use ours or filter)"
        ))),
    }
}

impl TryFrom<EditSpecDto> for EditSpec {
    type Error = Error;

    fn try_from(dto: EditSpecDto) -> Result<Self> {
        let v = Vector3::from;
        match dto {
            EditSpecDto::PlaneSplit {
                plane,
                gap,
                strategy,
                repeat,
            } => {
                if !(gap.is_finite() && gap >= 0.0) {
                    return Err(Error::InvalidSpec(format!("gap must be >= 0, got {gap}")));
                }
                let strategy = match strategy {
                    StrategyName::Ours => PlaneStrategy::Ours {
                        repeat: check_repeat(repeat)?,
                    },
                    StrategyName::Move => PlaneStrategy::Move,
                    StrategyName::Remove => PlaneStrategy::Remove,
                    StrategyName::Filter => {
                        return Err(Error::InvalidSpec(
                            "strategy filter does not apply to plane splits".into(),
                        ))
                    }
                };
                Ok(EditSpec::PlaneSplit {
                    plane: Plane::new(v(plane.normal), plane.d)?,
                    gap,
                    strategy,
                })
            }
            EditSpecDto::PolygonDelete {
                prism,
                strategy,
                repeat,
            } => Ok(EditSpec::PolygonDelete {
                prism: Prism::new(
                    prism.vertices.map(Vector3::from),
                    v(prism.axis),
                    prism.extent,
                )?,
                strategy: delete_strategy(strategy, repeat)?,
            }),
            EditSpecDto::CurveDelete {
                surface,
                strategy,
                repeat,
            } => {
                let surface = match surface {
                    SurfaceDto::Sphere { center, radius } => {
                        ImplicitSurface::sphere(v(center), radius)?
                    }
                    SurfaceDto::Ellipsoid { center, semiaxes } => {
                        ImplicitSurface::ellipsoid(v(center), v(semiaxes))?
                    }
                };
                Ok(EditSpec::CurveDelete {
                    surface,
                    strategy: delete_strategy(strategy, repeat)?,
                })
            }
        }
    }
}

type ScalarField = Arc<dyn Fn(&Vector3<f64>) -> f64 + Send + Sync>;
type VectorField = Arc<dyn Fn(&Vector3<f64>) -> Vector3<f64> + Send + Sync>;

/// Closed surface `B(x) = 0` with `B < 0` inside.
#[derive(Clone)]
pub enum ImplicitSurface {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Axis-aligned ellipsoid.
    Ellipsoid {
        center: Vector3<f64>,
        semiaxes: Vector3<f64>,
    },
    /// Any surface given by `B` and its gradient.
    Generic {
        value: ScalarField,
        gradient: VectorField,
    },
}

impl fmt::Debug for ImplicitSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImplicitSurface::Sphere { center, radius } => f
                .debug_struct("Sphere")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            ImplicitSurface::Ellipsoid { center, semiaxes } => f
                .debug_struct("Ellipsoid")
                .field("center", center)
                .field("semiaxes", semiaxes)
                .finish(),
            ImplicitSurface::Generic { .. } => f.write_str("Generic"),
        }
    }
}

impl ImplicitSurface {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidSpec(format!("invalid sphere radius {radius}")));
        }
        Ok(ImplicitSurface::Sphere { center, radius })
    }

    pub fn ellipsoid(center: Vector3<f64>, semiaxes: Vector3<f64>) -> Result<Self> {
        if !semiaxes.iter().all(|a| a.is_finite() && *a > 0.0)
            || !center.iter().all(|c| c.is_finite())
        {
            return Err(Error::InvalidSpec(format!(
                "invalid ellipsoid semiaxes {:?}",
                semiaxes.as_slice()
            )));
        }
        Ok(ImplicitSurface::Ellipsoid { center, semiaxes })
    }

    pub fn generic(
        value: impl Fn(&Vector3<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&Vector3<f64>) -> Vector3<f64> + Send + Sync + 'static,
    ) -> Self {
        ImplicitSurface::Generic {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    pub fn value(&self, x: &Vector3<f64>) -> f64 {
        match self {
            ImplicitSurface::Sphere { center, radius } => {
                (x - center).norm_squared() - radius * radius
            }
            ImplicitSurface::Ellipsoid { center, semiaxes } => {
                (x - center).component_div(semiaxes).norm_squared() - 1.0
            }
            ImplicitSurface::Generic { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            ImplicitSurface::Sphere { center, .. } => (x - center) * 2.0,
            ImplicitSurface::Ellipsoid { center, semiaxes } => {
                (x - center).component_div(&semiaxes.component_mul(semiaxes)) * 2.0
            }
            ImplicitSurface::Generic { gradient, .. } => gradient(x),
        }
    }

    pub fn is_inside(&self, x: &Vector3<f64>) -> bool {
        self.value(x) < 0.0
    }

    /// Surface point nearest to `x`; exact for spheres and ellipsoids, a
    /// Newton-style gradient projection for generic surfaces.
    pub fn closest_point(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        match self {
            ImplicitSurface::Sphere { center, radius } => {
                let r = x - center;
                let len = r.norm();
                let dir = if len > 0.0 { r / len } else { Vector3::x() };
                Ok(center + dir * *radius)
            }
            ImplicitSurface::Ellipsoid { center, semiaxes } => {
                Ok(center + ellipsoid_closest(&(x - center), semiaxes))
            }
            ImplicitSurface::Generic { .. } => self.project(x),
        }
    }

    fn project(&self, start: &Vector3<f64>) -> Result<Vector3<f64>> {
        let mut x = *start;
        for step in 0..=PROJECTION_MAX_STEPS {
            let b = self.value(&x);
            if !b.is_finite() {
                return Err(Error::ProjectionDiverged {
                    steps: step,
                    residual: b,
                });
            }
            if b.abs() <= PROJECTION_TOLERANCE {
                return Ok(x);
            }
            if step == PROJECTION_MAX_STEPS {
                return Err(Error::ProjectionDiverged {
                    steps: step,
                    residual: b.abs(),
                });
            }
            let g = self.gradient(&x);
            let g2 = g.norm_squared();
            if !(g2.is_finite() && g2 > 0.0) {
                return Err(Error::ProjectionDiverged {
                    steps: step,
                    residual: b.abs(),
                });
            }
            x -= g * (b / g2);
        }
        unreachable!("loop returns on its last step")
    }

    /// Tangent plane at the surface point nearest to `x`, normal pointing outward.
    pub fn tangent_plane(&self, x: &Vector3<f64>) -> Result<Plane> {
        let foot = self.closest_point(x)?;
        let mut n = self.gradient(&foot);
        if !(n.norm() > 0.0) {
            // center of a sphere-like surface: any direction is normal
            n = Vector3::x();
        }
        Plane::through(&foot, n)
    }

    /// Cheap lower bound on the distance from `x` to the surface for generic
    /// surfaces, used to skip splats far away before projecting them.
    fn distance_estimate(&self, x: &Vector3<f64>) -> f64 {
        match self {
            ImplicitSurface::Generic { .. } => {
                let g = self.gradient(x).norm();
                if g > 0.0 {
                    self.value(x).abs() / g
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }
}

/// Closest point on the axis-aligned ellipsoid `sum (y_i / a_i)^2 = 1` to `y`,
/// found by bisection on the Lagrange multiplier.
fn ellipsoid_closest(y: &Vector3<f64>, a: &Vector3<f64>) -> Vector3<f64> {
    let a_max = a.max();
    let sign = y.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
    // a zero coordinate on the shortest axis makes the root bracket degenerate
    let z = y.map(|v| v.abs().max(1e-15 * a_max));
    let a2 = a.component_mul(a);
    let imin = a.imin();
    let f = |t: f64| -> f64 {
        (0..3)
            .map(|i| (a[i] * z[i] / (t + a2[i])).powi(2))
            .sum::<f64>()
            - 1.0
    };
    let mut lo = -a2[imin] + a[imin] * z[imin];
    let mut hi = -a2[imin] + a.component_mul(&z).norm();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    Vector3::from_fn(|i, _| sign[i] * a2[i] * z[i] / (t + a2[i]))
}

/// `I = ((A - x) . (A - B)) ((B - x) . (A - B))`; `I <= 0` exactly when the
/// projection of `x` onto line AB falls within the segment.
pub fn segment_projection_indicator(
    x: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
) -> f64 {
    let ab = a - b;
    (a - x).dot(&ab) * (b - x).dot(&ab)
}

/// Whether the segment AB passes within the splat's influence range: the
/// distance from the mean to the segment (perpendicular foot when it lies on
/// the segment, nearest endpoint otherwise) must be below the splat's
/// threshold in that direction.
pub fn segment_gaussian_intersects(g: &Gaussian, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    let mu = &g.position;
    let nearest = if segment_projection_indicator(mu, a, b) <= 0.0 {
        let dir = b - a;
        let len2 = dir.norm_squared();
        if len2 == 0.0 {
            *a
        } else {
            a + dir * ((mu - a).dot(&dir) / len2)
        }
    } else if (a - mu).norm_squared() <= (b - mu).norm_squared() {
        *a
    } else {
        *b
    };
    let offset = nearest - mu;
    let dist = offset.norm();
    if dist == 0.0 {
        return true;
    }
    dist < influence_threshold(g, &Unit::new_unchecked(offset / dist))
}

/// One planar face of a prism with its outward plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub plane: Plane,
    /// Convex polygon, in order around the boundary.
    pub vertices: Vec<Vector3<f64>>,
}

impl Face {
    fn contains_projection(&self, x: &Vector3<f64>) -> bool {
        let n = self.plane.normal.into_inner();
        let q = x - n * signed_distance(&self.plane, x);
        let k = self.vertices.len();
        let (mut pos, mut neg) = (false, false);
        for i in 0..k {
            let (v0, v1) = (&self.vertices[i], &self.vertices[(i + 1) % k]);
            let s = (v1 - v0).cross(&(q - v0)).dot(&n);
            pos |= s > 0.0;
            neg |= s < 0.0;
        }
        !(pos && neg)
    }

    /// The face plane cuts the splat and the splat's footprint touches the face.
    pub fn intersects(&self, g: &Gaussian) -> bool {
        if !plane_affects(g, &self.plane) {
            return false;
        }
        if self.contains_projection(&g.position) {
            return true;
        }
        let k = self.vertices.len();
        (0..k).any(|i| {
            segment_gaussian_intersects(g, &self.vertices[i], &self.vertices[(i + 1) % k])
        })
    }
}

/// Triangle extruded by `extent` along `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prism {
    pub triangle: [Vector3<f64>; 3],
    pub axis: Unit<Vector3<f64>>,
    pub extent: f64,
    faces: Vec<Face>,
}

impl Prism {
    pub fn new(triangle: [Vector3<f64>; 3], axis: Vector3<f64>, extent: f64) -> Result<Self> {
        let [a, b, c] = triangle;
        if !triangle.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::DegeneratePrism("non-finite vertex".into()));
        }
        let cross = (b - a).cross(&(c - a));
        let scale = [(b - a).norm(), (c - b).norm(), (a - c).norm()]
            .into_iter()
            .fold(0.0f64, f64::max);
        if !(cross.norm() > 1e-12 * scale * scale) {
            return Err(Error::DegeneratePrism("triangle has zero area".into()));
        }
        let len = axis.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::DegeneratePrism("axis has zero length".into()));
        }
        let axis = Unit::new_unchecked(axis / len);
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::DegeneratePrism(format!("extent must be > 0, got {extent}")));
        }
        let mut normal = cross.normalize();
        if normal.dot(&axis).abs() < 1e-9 {
            return Err(Error::DegeneratePrism("axis lies in the triangle plane".into()));
        }
        if normal.dot(&axis) < 0.0 {
            normal = -normal;
        }
        let h = axis.into_inner() * extent;
        let center = (a + b + c) / 3.0 + h / 2.0;
        let mut faces = vec![
            Face {
                plane: Plane::through(&a, -normal)?,
                vertices: vec![a, b, c],
            },
            Face {
                plane: Plane::through(&(a + h), normal)?,
                vertices: vec![a + h, b + h, c + h],
            },
        ];
        for (p, q) in [(a, b), (b, c), (c, a)] {
            let mut n = (q - p).cross(&h);
            if n.dot(&(center - p)) > 0.0 {
                n = -n;
            }
            faces.push(Face {
                plane: Plane::through(&p, n)?,
                vertices: vec![p, q, q + h, p + h],
            });
        }
        Ok(Prism {
            triangle,
            axis,
            extent,
            faces,
        })
    }

    /// Caps first (base, then top), then the three sides; normals point outward.
    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Strictly inside every face plane.
    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        self.faces
            .iter()
            .all(|f| signed_distance(&f.plane, x) < 0.0)
    }
}

/// Result of an edit.
#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub model: SplatModel,
    pub report: EditReport,
    /// For each output splat, the index of the input splat it came from.
    pub origins: Vec<usize>,
}

pub fn apply_edit(m: &SplatModel, spec: &EditSpec) -> Result<EditOutcome> {
    match spec {
        EditSpec::PlaneSplit {
            plane,
            gap,
            strategy,
        } => plane_split_edit(m, plane, *gap, *strategy),
        EditSpec::PolygonDelete { prism, strategy } => polygon_delete_edit(m, prism, *strategy),
        EditSpec::CurveDelete { surface, strategy } => curve_delete_edit(m, surface, *strategy),
    }
}

#[derive(Debug, Clone)]
struct Piece {
    gaussian: Gaussian,
    origin: usize,
    /// The splat this piece was split from, and the cut that produced it.
    split_from: Option<(Gaussian, Plane)>,
}

fn pieces_of(m: &SplatModel) -> Vec<Piece> {
    m.gaussians
        .iter()
        .enumerate()
        .map(|(origin, g)| Piece {
            gaussian: g.clone(),
            origin,
            split_from: None,
        })
        .collect()
}

/// Splits every piece for which `cut` yields a plane, keeping order.
fn refine<F>(pieces: Vec<Piece>, cut: F) -> Result<Vec<Piece>>
where
    F: Fn(&Gaussian) -> Result<Option<Plane>> + Sync,
{
    let parts: Vec<Result<Vec<Piece>>> = pieces
        .into_par_iter()
        .map(|piece| match cut(&piece.gaussian)? {
            None => Ok(vec![piece]),
            Some(plane) => {
                let (left, right) = split_children(&piece.gaussian, &plane)?;
                let parent = Some((piece.gaussian, plane));
                Ok(vec![
                    Piece {
                        gaussian: left,
                        origin: piece.origin,
                        split_from: parent.clone(),
                    },
                    Piece {
                        gaussian: right,
                        origin: piece.origin,
                        split_from: parent,
                    },
                ])
            }
        })
        .collect();
    let mut out = Vec::with_capacity(parts.len() * 2);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Cuts the model along `p` and moves the halves `gap` apart along the normal
/// (`-gap/2` for the negative side, `+gap/2` for the positive side).
///
/// The metrics cover the splats the plane cuts through (`|d0| < eta`). Each
/// output piece is compared with the splat it was split from, both moved with
/// the piece, against the original plane. Unsplit splats count as their own
/// parent and deleted ones as massless children.
pub fn plane_split_edit(
    m: &SplatModel,
    p: &Plane,
    gap: f64,
    strategy: PlaneStrategy,
) -> Result<EditOutcome> {
    let half = p.normal.into_inner() * (gap / 2.0);
    let shift = |x: &Vector3<f64>| half * p.side_of(x).sign();
    let touched: Vec<bool> = m.gaussians.par_iter().map(|g| plane_affects(g, p)).collect();
    let passthrough = touched.iter().filter(|t| !**t).count();

    let mut gaussians = Vec::with_capacity(m.len());
    let mut origins = Vec::with_capacity(m.len());
    let mut records = Vec::new();
    let mut removed = 0;
    match strategy {
        PlaneStrategy::Ours { repeat } => {
            let mut pieces = pieces_of(m);
            for _ in 0..check_repeat(repeat)? {
                pieces = refine(pieces, |g| Ok(plane_affects(g, p).then_some(*p)))?;
            }
            for piece in pieces {
                let delta = shift(&piece.gaussian.position);
                let moved = piece.gaussian.translated(&delta);
                if let Some((parent, plane)) = piece.split_from {
                    records.push(SplitRecord::new(
                        moved.clone(),
                        parent.translated(&delta),
                        plane,
                    ));
                }
                gaussians.push(moved);
                origins.push(piece.origin);
            }
        }
        PlaneStrategy::Move | PlaneStrategy::Remove => {
            for (i, (g, hit)) in m.gaussians.iter().zip(&touched).enumerate() {
                let moved = g.translated(&shift(&g.position));
                if !hit {
                    gaussians.push(moved);
                    origins.push(i);
                } else if strategy == PlaneStrategy::Move {
                    records.push(SplitRecord::new(moved.clone(), moved.clone(), *p));
                    gaussians.push(moved);
                    origins.push(i);
                } else {
                    records.push(SplitRecord::removed(moved, *p));
                    removed += 1;
                }
            }
        }
    }
    Ok(EditOutcome {
        model: m.with_gaussians(gaussians),
        report: EditReport::from_records(&records, removed, passthrough),
        origins,
    })
}

/// Shared tail of the deletion edits: keeps the pieces `keep` accepts and
/// records the kept descendants of touched splats.
fn finish_delete(
    m: &SplatModel,
    pieces: Vec<Piece>,
    touched: &[bool],
    keep: impl Fn(&Gaussian) -> bool,
) -> EditOutcome {
    let passthrough = touched.iter().filter(|t| !**t).count();
    let mut gaussians = Vec::with_capacity(pieces.len());
    let mut origins = Vec::with_capacity(pieces.len());
    let mut records = Vec::new();
    let mut removed = 0;
    for piece in pieces {
        if !keep(&piece.gaussian) {
            removed += 1;
            continue;
        }
        if let Some((parent, plane)) = piece.split_from {
            records.push(SplitRecord::new(piece.gaussian.clone(), parent, plane));
        }
        gaussians.push(piece.gaussian);
        origins.push(piece.origin);
    }
    EditOutcome {
        model: m.with_gaussians(gaussians),
        report: EditReport::from_records(&records, removed, passthrough),
        origins,
    }
}

/// Filter-style deletion: drops splats `inside` accepts, records touched
/// survivors against the boundary plane `boundary` found for them.
fn filter_delete<B>(m: &SplatModel, boundary: B, inside: impl Fn(&Gaussian) -> bool) -> Result<EditOutcome>
where
    B: Fn(&Gaussian) -> Result<Option<Plane>> + Sync,
{
    let planes: Vec<Result<Option<Plane>>> = m.gaussians.par_iter().map(&boundary).collect();
    let pieces = m
        .gaussians
        .iter()
        .zip(planes)
        .enumerate()
        .map(|(origin, (g, plane))| {
            Ok(Piece {
                gaussian: g.clone(),
                origin,
                split_from: plane?.map(|p| (g.clone(), p)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let touched: Vec<bool> = pieces.iter().map(|p| p.split_from.is_some()).collect();
    Ok(finish_delete(m, pieces, &touched, |g| !inside(g)))
}

/// Deletes everything inside `prism`.
///
/// Splats crossing a face are split at that face's plane (faces in order,
/// `repeat` rounds over all faces); afterwards every piece whose mean is
/// inside is dropped. The metrics cover the kept pieces of touched splats.
pub fn polygon_delete_edit(
    m: &SplatModel,
    prism: &Prism,
    strategy: DeleteStrategy,
) -> Result<EditOutcome> {
    match strategy {
        DeleteStrategy::Ours { repeat } => {
            let touched: Vec<bool> = m
                .gaussians
                .par_iter()
                .map(|g| prism.faces().iter().any(|f| f.intersects(g)))
                .collect();
            let mut pieces = pieces_of(m);
            for _ in 0..check_repeat(repeat)? {
                for face in prism.faces() {
                    pieces = refine(pieces, |g| Ok(face.intersects(g).then_some(face.plane)))?;
                }
            }
            Ok(finish_delete(m, pieces, &touched, |g| {
                !prism.contains(&g.position)
            }))
        }
        DeleteStrategy::Filter => filter_delete(
            m,
            |g| {
                // the closest face the splat crosses stands in for its boundary
                Ok(prism
                    .faces()
                    .iter()
                    .filter(|f| f.intersects(g))
                    .min_by(|a, b| {
                        let da = signed_distance(&a.plane, &g.position).abs();
                        let db = signed_distance(&b.plane, &g.position).abs();
                        da.total_cmp(&db)
                    })
                    .map(|f| f.plane))
            },
            |g| prism.contains(&g.position),
        ),
    }
}

/// Tangent plane at the nearest surface point if it cuts the splat.
fn surface_cut(s: &ImplicitSurface, g: &Gaussian) -> Result<Option<Plane>> {
    // eta never exceeds three times the largest scale
    if s.distance_estimate(&g.position) > 2.0 * 3.0 * g.scales.max() {
        return Ok(None);
    }
    let plane = s.tangent_plane(&g.position)?;
    Ok(plane_affects(g, &plane).then_some(plane))
}

/// Deletes everything inside the closed surface `s`.
///
/// Splats cut by the tangent plane at their nearest surface point are split
/// there; each of the `repeat` rounds recomputes the tangent plane per piece.
/// Pieces with `B(mean) < 0` are then dropped.
pub fn curve_delete_edit(
    m: &SplatModel,
    s: &ImplicitSurface,
    strategy: DeleteStrategy,
) -> Result<EditOutcome> {
    match strategy {
        DeleteStrategy::Ours { repeat } => {
            let touched = m
                .gaussians
                .par_iter()
                .map(|g| surface_cut(s, g).map(|c| c.is_some()))
                .collect::<Result<Vec<bool>>>()?;
            let mut pieces = pieces_of(m);
            for _ in 0..check_repeat(repeat)? {
                pieces = refine(pieces, |g| surface_cut(s, g))?;
            }
            Ok(finish_delete(m, pieces, &touched, |g| {
                !s.is_inside(&g.position)
            }))
        }
        DeleteStrategy::Filter => filter_delete(
            m,
            |g| surface_cut(s, g),
            |g| s.is_inside(&g.position),
        ),
    }
}

/// Moves the splats whose mean lies on `side` of `p` by `delta`.
pub fn translate_side(m: &SplatModel, p: &Plane, side: Side, delta: &Vector3<f64>) -> SplatModel {
    m.with_gaussians(
        m.gaussians
            .iter()
            .map(|g| {
                if p.side_of(&g.position) == side {
                    g.translated(delta)
                } else {
                    g.clone()
                }
            })
            .collect(),
    )
}
