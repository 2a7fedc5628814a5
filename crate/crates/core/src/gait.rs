//! Gaits, mirror maps, and the velocity-indexed gait library.
//!
//! A library stores canonical left-stance gaits. Queries at arbitrary
//! velocities are answered with a convex combination of coefficient matrices
//! taken from the Delaunay triangle containing the query (or from the nearest
//! hull point when the query lies outside the library's velocity range).

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};
use thiserror::Error;

use crate::bezier::{BezierCurve, BezierError};

/// Barycentric weights below this magnitude (negative) still count as inside.
const INSIDE_TOLERANCE: f64 = 1e-12;

/// Planar walking velocity in m/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Velocity {
    pub x: f64,
    pub y: f64,
}

impl Velocity {
    pub const ZERO: Velocity = Velocity { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: Velocity) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Reflection across the sagittal plane.
    pub fn mirrored(&self) -> Velocity {
        Velocity::new(self.x, -self.y)
    }

    fn sub(self, o: Velocity) -> Velocity {
        Velocity::new(self.x - o.x, self.y - o.y)
    }

    fn dot(self, o: Velocity) -> f64 {
        self.x * o.x + self.y * o.y
    }
}

impl fmt::Display for Velocity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Supporting leg for a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stance {
    Left,
    Right,
}

impl Stance {
    pub fn flipped(self) -> Stance {
        match self {
            Stance::Left => Stance::Right,
            Stance::Right => Stance::Left,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Stance::Left => 'L',
            Stance::Right => 'R',
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaitError {
    #[error("gait library is empty")]
    Empty,
    #[error(transparent)]
    Bezier(#[from] BezierError),
    #[error("gait '{gait}': step_duration must be positive and finite, got {value}")]
    InvalidStepDuration { gait: String, value: f64 },
    #[error("gait '{gait}': velocity is not finite")]
    NonFiniteVelocity { gait: String },
    #[error("gait '{gait}': {field} is {found}, expected {expected}")]
    DimensionMismatch {
        gait: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("gaits '{first}' and '{second}' share velocity {velocity}")]
    DuplicateVelocity {
        first: String,
        second: String,
        velocity: Velocity,
    },
    #[error("gait '{gait}' is stored with right stance; libraries hold left-stance gaits only")]
    NonCanonicalStance { gait: String },
    #[error("invalid mirror map: {0}")]
    InvalidMirror(String),
    #[error("mirror map is not an involution at output {index}")]
    MirrorNotInvolution { index: usize },
    #[error("velocity triangulation failed: {0}")]
    Triangulation(String),
    #[error("query velocity {0} is not finite")]
    NonFiniteQuery(Velocity),
}

pub type Result<T, E = GaitError> = std::result::Result<T, E>;

/// One step of periodic joint-space motion.
#[derive(Clone, Debug, PartialEq)]
pub struct Gait {
    pub name: String,
    pub curve: BezierCurve,
    pub velocity: Velocity,
    /// Step duration `T` in seconds.
    pub step_duration: f64,
    pub stance: Stance,
}

impl Gait {
    pub fn new(
        name: impl Into<String>,
        curve: BezierCurve,
        velocity: Velocity,
        step_duration: f64,
        stance: Stance,
    ) -> Result<Self> {
        let name = name.into();
        if !(step_duration > 0.0 && step_duration.is_finite()) {
            return Err(GaitError::InvalidStepDuration {
                gait: name,
                value: step_duration,
            });
        }
        if !velocity.is_finite() {
            return Err(GaitError::NonFiniteVelocity { gait: name });
        }
        Ok(Self {
            name,
            curve,
            velocity,
            step_duration,
            stance,
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.curve.n_rows()
    }

    /// The same step performed on the opposite leg.
    pub fn mirrored(&self, map: &MirrorMap) -> Result<Gait> {
        Ok(Gait {
            name: self.name.clone(),
            curve: map
                .apply(&self.curve)
                .map_err(|found| GaitError::DimensionMismatch {
                    gait: self.name.clone(),
                    field: "n_outputs",
                    expected: map.len(),
                    found,
                })?,
            velocity: self.velocity.mirrored(),
            step_duration: self.step_duration,
            stance: self.stance.flipped(),
        })
    }
}

/// Left/right output symmetry: output `i` of the mirrored gait is
/// `signs[i] * output[permutation[i]]` of the original.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorMap {
    permutation: Vec<usize>,
    signs: Vec<f64>,
}

impl MirrorMap {
    pub fn new(permutation: Vec<usize>, signs: Vec<f64>) -> Result<Self> {
        let n = permutation.len();
        if n == 0 {
            return Err(GaitError::InvalidMirror("empty permutation".into()));
        }
        if signs.len() != n {
            return Err(GaitError::InvalidMirror(format!(
                "{} signs for {n} outputs",
                signs.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || seen[p] {
                return Err(GaitError::InvalidMirror(format!(
                    "{permutation:?} is not a permutation of 0..{n}"
                )));
            }
            seen[p] = true;
        }
        if let Some(i) = signs.iter().position(|s| *s != 1.0 && *s != -1.0) {
            return Err(GaitError::InvalidMirror(format!(
                "sign {} at output {i} is not +1 or -1",
                signs[i]
            )));
        }
        for i in 0..n {
            let p = permutation[i];
            if permutation[p] != i || signs[i] != signs[p] {
                return Err(GaitError::MirrorNotInvolution { index: i });
            }
        }
        Ok(Self { permutation, signs })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            permutation: (0..n).collect(),
            signs: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// Applies the map to a coefficient matrix. On mismatch, returns the
    /// curve's row count.
    pub fn apply(&self, curve: &BezierCurve) -> std::result::Result<BezierCurve, usize> {
        if curve.n_rows() != self.len() {
            return Err(curve.n_rows());
        }
        let src = curve.coeffs();
        let out = DMatrix::from_fn(src.nrows(), src.ncols(), |r, c| {
            self.signs[r] * src[(self.permutation[r], c)]
        });
        Ok(BezierCurve::from_matrix_unchecked(out))
    }

    /// Applies the map to a single pose vector.
    pub fn apply_pose(&self, pose: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|r| self.signs[r] * pose[self.permutation[r]])
            .collect()
    }
}

/// Library-level descriptive metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LibraryMetadata {
    #[serde(default)]
    pub robot_name: String,
    /// Number of robot links.
    #[serde(default)]
    pub n_l: usize,
    /// Dimension of the extended state.
    #[serde(default)]
    pub n_e: usize,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// How non-node queries choose the gaits to combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpolationMode {
    /// Barycentric weights in the containing Delaunay triangle.
    #[default]
    Simplex,
    /// Barycentric weights in the triangle of the three nearest nodes, with
    /// negative weights clipped and the rest renormalized.
    NearestThree,
}

/// Spatial index over gait velocities.
#[derive(Clone, Debug, PartialEq)]
pub enum VelocityIndex {
    Single,
    /// All nodes on one line. `order` lists node indices sorted by their
    /// coordinate `params` along `direction` measured from `origin`.
    Segment {
        origin: Velocity,
        direction: Velocity,
        order: Vec<usize>,
        params: Vec<f64>,
    },
    Triangles {
        triangles: Vec<[usize; 3]>,
        /// Hull vertices in counter-clockwise order.
        hull: Vec<usize>,
    },
}

/// Convex weights over library nodes for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    /// `(gait index, weight)` pairs with positive weights summing to one.
    pub terms: Vec<(usize, f64)>,
    /// The query, after projection onto the library's velocity range.
    pub velocity: Velocity,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    position: Point2<f64>,
}

impl HasPosition for Node {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        self.position
    }
}

/// A validated, immutable set of canonical gaits.
#[derive(Clone, Debug)]
pub struct GaitLibrary {
    gaits: Vec<Gait>,
    mirror: MirrorMap,
    n_outputs: usize,
    degree: usize,
    index: VelocityIndex,
    metadata: LibraryMetadata,
    warnings: Vec<String>,
}

impl GaitLibrary {
    /// Validates the gaits and builds the velocity index.
    pub fn new(gaits: Vec<Gait>, mirror: MirrorMap, metadata: LibraryMetadata) -> Result<Self> {
        let first = gaits.first().ok_or(GaitError::Empty)?;
        let n_outputs = first.n_outputs();
        let degree = first.curve.degree();
        if mirror.len() != n_outputs {
            return Err(GaitError::InvalidMirror(format!(
                "map covers {} outputs, library has {n_outputs}",
                mirror.len()
            )));
        }
        for g in &gaits {
            if g.n_outputs() != n_outputs {
                return Err(GaitError::DimensionMismatch {
                    gait: g.name.clone(),
                    field: "n_outputs",
                    expected: n_outputs,
                    found: g.n_outputs(),
                });
            }
            if g.curve.degree() != degree {
                return Err(GaitError::DimensionMismatch {
                    gait: g.name.clone(),
                    field: "degree",
                    expected: degree,
                    found: g.curve.degree(),
                });
            }
            if g.stance != Stance::Left {
                return Err(GaitError::NonCanonicalStance {
                    gait: g.name.clone(),
                });
            }
            if !(g.step_duration > 0.0 && g.step_duration.is_finite()) {
                return Err(GaitError::InvalidStepDuration {
                    gait: g.name.clone(),
                    value: g.step_duration,
                });
            }
            if !g.velocity.is_finite() {
                return Err(GaitError::NonFiniteVelocity {
                    gait: g.name.clone(),
                });
            }
        }
        for (i, a) in gaits.iter().enumerate() {
            for b in &gaits[i + 1..] {
                if a.velocity == b.velocity {
                    return Err(GaitError::DuplicateVelocity {
                        first: a.name.clone(),
                        second: b.name.clone(),
                        velocity: a.velocity,
                    });
                }
            }
        }

        let mut warnings = Vec::new();
        let index = build_index(&gaits, &mut warnings)?;
        for w in &warnings {
            log::debug!("{w}");
        }
        Ok(Self {
            gaits,
            mirror,
            n_outputs,
            degree,
            index,
            metadata,
            warnings,
        })
    }

    pub fn gaits(&self) -> &[Gait] {
        &self.gaits
    }

    pub fn mirror(&self) -> &MirrorMap {
        &self.mirror
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn index(&self) -> &VelocityIndex {
        &self.index
    }

    pub fn metadata(&self) -> &LibraryMetadata {
        &self.metadata
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.gaits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaits.is_empty()
    }

    /// Triangles of the velocity triangulation (empty for degenerate indices).
    pub fn triangles(&self) -> &[[usize; 3]] {
        match &self.index {
            VelocityIndex::Triangles { triangles, .. } => triangles,
            _ => &[],
        }
    }

    /// Area enclosed by the velocity hull (zero for degenerate indices).
    pub fn hull_area(&self) -> f64 {
        match &self.index {
            VelocityIndex::Triangles { hull, .. } => {
                let mut twice = 0.0;
                for k in 0..hull.len() {
                    let a = self.gaits[hull[k]].velocity;
                    let b = self.gaits[hull[(k + 1) % hull.len()]].velocity;
                    twice += a.x * b.y - b.x * a.y;
                }
                0.5 * twice
            }
            _ => 0.0,
        }
    }

    /// Smallest interior angle over all triangles, in radians.
    pub fn min_triangle_angle(&self) -> Option<f64> {
        self.triangles()
            .iter()
            .map(|t| {
                let p = t.map(|i| self.gaits[i].velocity);
                (0..3)
                    .map(|k| {
                        let a = p[(k + 1) % 3].sub(p[k]);
                        let b = p[(k + 2) % 3].sub(p[k]);
                        (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(f64::min)
    }

    /// Nearest point of the library's velocity range to `v`.
    pub fn project(&self, v: Velocity) -> Result<Velocity> {
        Ok(self.weights(v, InterpolationMode::Simplex)?.velocity)
    }

    /// Convex weights over nodes for a query velocity.
    pub fn weights(&self, v: Velocity, mode: InterpolationMode) -> Result<Weights> {
        if !v.is_finite() {
            return Err(GaitError::NonFiniteQuery(v));
        }
        if let Some(i) = self.gaits.iter().position(|g| g.velocity == v) {
            return Ok(Weights {
                terms: vec![(i, 1.0)],
                velocity: v,
            });
        }
        let raw = match &self.index {
            VelocityIndex::Single => Weights {
                terms: vec![(0, 1.0)],
                velocity: self.gaits[0].velocity,
            },
            VelocityIndex::Segment {
                origin,
                direction,
                order,
                params,
            } => self.segment_weights(v, *origin, *direction, order, params),
            VelocityIndex::Triangles { triangles, hull } => match self.locate(v, triangles) {
                Some(terms) => match mode {
                    InterpolationMode::Simplex => Weights { terms, velocity: v },
                    InterpolationMode::NearestThree => self.nearest_three_weights(v),
                },
                None => self.hull_weights(v, hull),
            },
        };
        Ok(normalized(raw))
    }

    /// The gait at velocity `v`: a convex combination of library gaits.
    pub fn interpolate(&self, v: Velocity) -> Result<Gait> {
        self.interpolate_with(v, InterpolationMode::Simplex)
    }

    pub fn interpolate_with(&self, v: Velocity, mode: InterpolationMode) -> Result<Gait> {
        let w = self.weights(v, mode)?;
        Ok(self.combine(&w))
    }

    /// Applies precomputed weights.
    pub fn combine(&self, w: &Weights) -> Gait {
        if let [(i, weight)] = w.terms[..] {
            if weight == 1.0 {
                let mut g = self.gaits[i].clone();
                g.velocity = w.velocity;
                return g;
            }
        }
        let mut coeffs = DMatrix::zeros(self.n_outputs, self.degree + 1);
        let mut duration = 0.0;
        for &(i, weight) in &w.terms {
            coeffs.zip_apply(self.gaits[i].curve.coeffs(), |a, b| *a += weight * b);
            duration += weight * self.gaits[i].step_duration;
        }
        let name = w
            .terms
            .iter()
            .map(|(i, weight)| format!("{}*{}", weight, self.gaits[*i].name))
            .collect::<Vec<_>>()
            .join("+");
        Gait {
            name,
            curve: BezierCurve::from_matrix_unchecked(coeffs),
            velocity: w.velocity,
            step_duration: duration,
            stance: Stance::Left,
        }
    }

    fn locate(&self, v: Velocity, triangles: &[[usize; 3]]) -> Option<Vec<(usize, f64)>> {
        triangles.iter().find_map(|tri| {
            let w = barycentric(tri.map(|i| self.gaits[i].velocity), v)?;
            if w.iter().all(|x| *x >= -INSIDE_TOLERANCE) {
                Some(tri.iter().copied().zip(w).collect())
            } else {
                None
            }
        })
    }

    fn nearest_three_weights(&self, v: Velocity) -> Weights {
        let mut by_distance: Vec<usize> = (0..self.gaits.len()).collect();
        by_distance.sort_by(|a, b| {
            let da = self.gaits[*a].velocity.distance(v);
            let db = self.gaits[*b].velocity.distance(v);
            da.total_cmp(&db).then(a.cmp(b))
        });
        let (a, b) = (by_distance[0], by_distance[1]);
        for &c in &by_distance[2..] {
            let tri = [a, b, c];
            if let Some(w) = barycentric(tri.map(|i| self.gaits[i].velocity), v) {
                let w = w.map(|x| x.max(0.0));
                let sum: f64 = w.iter().sum();
                return Weights {
                    terms: tri.iter().copied().zip(w.map(|x| x / sum)).collect(),
                    velocity: v,
                };
            }
        }
        Weights {
            terms: vec![(a, 1.0)],
            velocity: v,
        }
    }

    fn hull_weights(&self, v: Velocity, hull: &[usize]) -> Weights {
        let mut best: Option<(f64, usize, usize, f64, Velocity)> = None;
        for k in 0..hull.len() {
            let (ia, ib) = (hull[k], hull[(k + 1) % hull.len()]);
            let (t, p) = project_to_segment(self.gaits[ia].velocity, self.gaits[ib].velocity, v);
            let d = p.distance(v);
            if best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, ia, ib, t, p));
            }
        }
        let (_, ia, ib, t, p) = best.expect("hull has at least three vertices");
        edge_weights(
            ia,
            ib,
            t,
            p,
            self.gaits[ia].velocity,
            self.gaits[ib].velocity,
        )
    }

    fn segment_weights(
        &self,
        v: Velocity,
        origin: Velocity,
        direction: Velocity,
        order: &[usize],
        params: &[f64],
    ) -> Weights {
        let last = params.len() - 1;
        let s = v.sub(origin).dot(direction).clamp(params[0], params[last]);
        let k = params[..last].iter().rposition(|p| *p <= s).unwrap_or(0);
        let (ia, ib) = (order[k], order[k + 1]);
        let t = (s - params[k]) / (params[k + 1] - params[k]);
        let a = self.gaits[ia].velocity;
        let b = self.gaits[ib].velocity;
        let p = Velocity::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
        edge_weights(ia, ib, t, p, a, b)
    }
}

fn edge_weights(ia: usize, ib: usize, t: f64, p: Velocity, a: Velocity, b: Velocity) -> Weights {
    if t <= 0.0 {
        Weights {
            terms: vec![(ia, 1.0)],
            velocity: a,
        }
    } else if t >= 1.0 {
        Weights {
            terms: vec![(ib, 1.0)],
            velocity: b,
        }
    } else {
        Weights {
            terms: vec![(ia, 1.0 - t), (ib, t)],
            velocity: p,
        }
    }
}

/// Drops non-positive weights and rescales the rest to sum to one.
fn normalized(mut w: Weights) -> Weights {
    w.terms.retain(|(_, x)| *x > 0.0);
    let sum: f64 = w.terms.iter().map(|(_, x)| x).sum();
    if sum != 1.0 {
        for (_, x) in &mut w.terms {
            *x /= sum;
        }
    }
    w
}

/// Barycentric coordinates of `q` in triangle `p`; `None` if degenerate.
pub fn barycentric(p: [Velocity; 3], q: Velocity) -> Option<[f64; 3]> {
    let [a, b, c] = p;
    let det = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let w0 = ((b.y - c.y) * (q.x - c.x) + (c.x - b.x) * (q.y - c.y)) / det;
    let w1 = ((c.y - a.y) * (q.x - c.x) + (a.x - c.x) * (q.y - c.y)) / det;
    Some([w0, w1, 1.0 - w0 - w1])
}

fn project_to_segment(a: Velocity, b: Velocity, q: Velocity) -> (f64, Velocity) {
    let ab = b.sub(a);
    let t = (q.sub(a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    (t, Velocity::new(a.x + t * ab.x, a.y + t * ab.y))
}

fn build_index(gaits: &[Gait], warnings: &mut Vec<String>) -> Result<VelocityIndex> {
    if gaits.len() == 1 {
        warnings.push("single gait: no 2-D interpolation, every query returns it".into());
        return Ok(VelocityIndex::Single);
    }
    let mut dt: DelaunayTriangulation<Node> = DelaunayTriangulation::new();
    let mut handle_to_gait = BTreeMap::new();
    for (i, g) in gaits.iter().enumerate() {
        let h = dt
            .insert(Node {
                position: Point2::new(g.velocity.x, g.velocity.y),
            })
            .map_err(|e| GaitError::Triangulation(format!("gait '{}': {e:?}", g.name)))?;
        handle_to_gait.insert(h.index(), i);
    }
    if dt.all_vertices_on_line() {
        warnings.push(
            "velocity points are collinear: no 2-D interpolation, using piecewise-linear \
             interpolation along the line"
                .into(),
        );
        return Ok(segment_index(gaits));
    }
    let node = |h: spade::handles::VertexHandle<'_, Node>| handle_to_gait[&h.fix().index()];
    let triangles: Vec<[usize; 3]> = dt.inner_faces().map(|f| f.vertices().map(&node)).collect();
    // spade walks the hull clockwise
    let mut hull: Vec<usize> = dt.convex_hull().map(|e| node(e.from())).collect();
    hull.reverse();
    Ok(VelocityIndex::Triangles { triangles, hull })
}

fn segment_index(gaits: &[Gait]) -> VelocityIndex {
    let mut best = (0, 1, -1.0);
    for i in 0..gaits.len() {
        for j in i + 1..gaits.len() {
            let d = gaits[i].velocity.distance(gaits[j].velocity);
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    let origin = gaits[best.0].velocity;
    let span = gaits[best.1].velocity.sub(origin);
    let direction = Velocity::new(span.x / best.2, span.y / best.2);
    let mut order: Vec<usize> = (0..gaits.len()).collect();
    let coord = |i: usize| gaits[i].velocity.sub(origin).dot(direction);
    order.sort_by(|a, b| coord(*a).total_cmp(&coord(*b)));
    let params = order.iter().map(|i| coord(*i)).collect();
    VelocityIndex::Segment {
        origin,
        direction,
        order,
        params,
    }
}
