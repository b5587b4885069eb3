//! Galerkin discretization of the single-layer operator
//! `V phi(x) = -1/(2 pi) int log|x - y| phi(y) dy` on NURBS spaces, pointwise
//! evaluation of `V Phi` on the curve and residual sampling.
//!
//! Element-pair integrals are classified as coincident, adjacent or
//! separated. The first two use Duffy-type rules with the logarithm split
//! off in reference coordinates; separated pairs use tensor Gauss rules
//! whose order depends on the distance between the elements, and pairs
//! that are too close for the coarsest admissible rule are subdivided.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    norm, sub, GeometryKind, ParamCurve, Point, CIRCLE_RADIUS, SLIT_HALF_LENGTH,
};
use crate::mesh::KnotMesh;
use crate::quadrature::{gauss_legendre, gauss_log, Interpolation, PairRule, QuadRule, Separation};

/// Factor in front of the logarithmic kernel.
pub const KERNEL_SCALE: f64 = -1.0 / (2.0 * PI);

const MAX_DEPTH: usize = 60;

/// Quadrature orders: Gauss-Legendre points per direction and points of the
/// log-weighted rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub n: usize,
    pub log_n: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { n: 16, log_n: 16 }
    }
}

/// All rules used by assembly and potential evaluation.
#[derive(Clone, Debug)]
pub struct Quadrature {
    config: QuadConfig,
    gl: QuadRule,
    log: QuadRule,
    coincident: PairRule,
    adjacent: PairRule,
    /// `(minimal separation ratio, rule)`, most separated first; the last
    /// rule is `gl`
    tiers: Vec<(f64, QuadRule)>,
}

impl Quadrature {
    pub fn new(config: QuadConfig) -> Result<Self> {
        if config.n == 0 || config.log_n == 0 {
            return Err(Error::Config("quadrature orders must be positive".into()));
        }
        let gl = gauss_legendre(config.n)?;
        let log = gauss_log(config.log_n)?;
        let coincident = PairRule::new(Separation::Coincident, &gl, &gl, &log);
        let adjacent = PairRule::new(Separation::Adjacent, &gl, &gl, &log);
        let far = gauss_legendre((config.n / 4).max(4).min(config.n))?;
        let mid = gauss_legendre((config.n / 2).max(4).min(config.n))?;
        let tiers = vec![(16.0, far), (2.0, mid), (0.5, gl.clone())];
        Ok(Quadrature {
            config,
            gl,
            log,
            coincident,
            adjacent,
            tiers,
        })
    }

    pub fn config(&self) -> QuadConfig {
        self.config
    }

    pub fn gauss(&self) -> &QuadRule {
        &self.gl
    }

    pub fn log_rule(&self) -> &QuadRule {
        &self.log
    }

    /// Index of the cheapest rule admissible at separation `ratio`
    /// (gap over element length).
    fn tier(&self, ratio: f64) -> Option<usize> {
        self.tiers.iter().position(|(r, _)| ratio >= *r)
    }

    fn full_tier(&self) -> usize {
        self.tiers.len() - 1
    }
}

/// Right-hand sides `f` of `V phi = f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rhs {
    /// `f = 1`
    One,
    /// `f(x) = x_1`
    X1,
    /// `f(x) = |x_1|^s`, only in `H^{1/2}` near `x_1 = 0` for small `s`
    AbsPow(f64),
}

/// Exponent used by `abs-pow` when none is given.
pub const DEFAULT_ABS_POW: f64 = 0.6;

impl Rhs {
    pub fn eval(self, x: Point) -> f64 {
        match self {
            Rhs::One => 1.0,
            Rhs::X1 => x[0],
            Rhs::AbsPow(s) => x[0].abs().powf(s),
        }
    }
}

impl fmt::Display for Rhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rhs::One => f.write_str("one"),
            Rhs::X1 => f.write_str("x1"),
            Rhs::AbsPow(s) if *s == DEFAULT_ABS_POW => f.write_str("abs-pow"),
            Rhs::AbsPow(s) => write!(f, "abs-pow:{s}"),
        }
    }
}

impl FromStr for Rhs {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Rhs::One),
            "x1" => Ok(Rhs::X1),
            "abs-pow" => Ok(Rhs::AbsPow(DEFAULT_ABS_POW)),
            _ => match s.strip_prefix("abs-pow:").map(str::parse::<f64>) {
                Some(Ok(e)) if e > 0.0 && e.is_finite() => Ok(Rhs::AbsPow(e)),
                _ => Err(Error::Config(format!("unknown right-hand side '{s}'"))),
            },
        }
    }
}

/// `<f, phi> = ||phi||_V^2` for the exact solution, where known.
///
/// Circle and slit values are closed forms. The square and pacman values are
/// the limits of the Galerkin energies `b . x` of fine adaptive p = 1 solves,
/// which increase monotonically to the exact energy (see the
/// `reference_energy` example); they are good to about 1e-12.
pub fn reference_energy(kind: GeometryKind, rhs: Rhs) -> Option<f64> {
    match (kind, rhs) {
        // phi = -1 / (r log r) on the circle of radius r
        (GeometryKind::Circle, Rhs::One) => {
            let r = CIRCLE_RADIUS;
            Some(2.0 * PI * r * (-1.0 / (r * r.ln())))
        }
        // V cos = (r/2) cos on the circle, so phi = (2/r) x_1
        (GeometryKind::Circle, Rhs::X1) => Some(2.0 * PI * CIRCLE_RADIUS.powi(2)),
        // phi = c / sqrt(L^2 - y^2) with c = 2 / log(2/L)
        (GeometryKind::Slit, Rhs::One) => Some(2.0 * PI / (2.0 / SLIT_HALF_LENGTH).ln()),
        (GeometryKind::Square, Rhs::One) => SQUARE_ONE_ENERGY,
        (GeometryKind::Pacman, Rhs::One) => PACMAN_ONE_ENERGY,
        _ => None,
    }
}

const SQUARE_ONE_ENERGY: Option<f64> = Some(4.352336887551);
const PACMAN_ONE_ENERGY: Option<f64> = Some(6.741928517202);

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// The Dirichlet datum `f` and, if known, the exact energy `<f, phi>`.
#[derive(Clone)]
pub struct ProblemData {
    f: ScalarFn,
    reference_energy: Option<f64>,
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("reference_energy", &self.reference_energy)
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    pub fn new(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        ProblemData {
            f: Arc::new(f),
            reference_energy: None,
        }
    }

    pub fn builtin(kind: GeometryKind, rhs: Rhs) -> Self {
        ProblemData {
            f: Arc::new(move |x| rhs.eval(x)),
            reference_energy: reference_energy(kind, rhs),
        }
    }

    pub fn with_reference_energy(mut self, energy: f64) -> Self {
        self.reference_energy = Some(energy);
        self
    }

    pub fn f(&self, x: Point) -> f64 {
        (self.f)(x)
    }

    pub fn reference_energy(&self) -> Option<f64> {
        self.reference_energy
    }
}

/// Samples of one element (or sub-interval) for a Gauss rule.
#[derive(Clone, Debug)]
struct Samples {
    /// positions relative to the element's anchor
    points: Vec<Point>,
    /// weight times Jacobian `h |gamma'|`
    jw: Vec<f64>,
    /// `p + 1` basis values per point
    basis: Vec<f64>,
}

#[derive(Clone, Debug)]
struct ElementGeom {
    t0: f64,
    h: f64,
    span: usize,
    piece: usize,
    /// index into `MeshGeometry::anchors`
    anchor: usize,
    /// `gamma(t0)` relative to the anchor
    origin: Point,
    center: Point,
    radius: f64,
    tiers: Vec<Samples>,
}

/// Per-element data shared by assembly and potential evaluation.
struct MeshGeometry<'a> {
    mesh: &'a KnotMesh,
    curve: &'a ParamCurve,
    q: usize,
    /// piece ends; positions are stored relative to the nearest one so that
    /// short elements near corners and endpoints keep their relative accuracy
    anchors: Vec<Point>,
    elems: Vec<ElementGeom>,
}

impl<'a> MeshGeometry<'a> {
    fn new(mesh: &'a KnotMesh, quad: &Quadrature) -> Self {
        let curve = mesh.curve().as_ref();
        let q = mesh.degree() + 1;
        let n_pieces = curve.piece_count();
        let mut anchors: Vec<Point> = (0..n_pieces)
            .map(|i| curve.point_on(i, curve.piece_range(i).0))
            .collect();
        if !curve.is_closed() {
            anchors.push(curve.point_on(n_pieces - 1, curve.b()));
        }
        let mut geo = MeshGeometry {
            mesh,
            curve,
            q,
            anchors,
            elems: Vec::with_capacity(mesh.n_elements()),
        };
        for e in 0..mesh.n_elements() {
            let (t0, t1) = mesh.element(e);
            let piece = curve.piece_at(0.5 * (t0 + t1));
            let (a, b) = curve.piece_range(piece);
            let (anchor, c) = if t0 - a <= b - t1 {
                (piece, a)
            } else {
                ((piece + 1) % geo.anchors.len(), b)
            };
            let mut g = ElementGeom {
                t0,
                h: t1 - t0,
                span: mesh.element_span(e),
                piece,
                anchor,
                origin: curve.displacement_on(piece, c, t0 - c),
                center: [0.0; 2],
                radius: 0.0,
                tiers: Vec::new(),
            };
            let (center, radius) = geo.ball_of(&g, 0.0, 1.0);
            g.center = center;
            g.radius = radius;
            g.tiers = quad
                .tiers
                .iter()
                .map(|(_, rule)| geo.sample(&g, 0.0, 1.0, rule))
                .collect();
            geo.elems.push(g);
        }
        geo
    }

    fn speed(&self, g: &ElementGeom, t: f64) -> f64 {
        norm(self.curve.tangent_on(g.piece, t))
    }

    /// Basis values at `t0 + tau`.
    fn basis(&self, g: &ElementGeom, tau: f64) -> Vec<f64> {
        self.mesh.space().span_basis_local(g.span, tau)
    }

    /// Position of `t0 + tau` relative to the element's anchor.
    fn local_point(&self, g: &ElementGeom, tau: f64) -> Point {
        let d = self.curve.displacement_on(g.piece, g.t0, tau);
        [g.origin[0] + d[0], g.origin[1] + d[1]]
    }

    /// Absolute position of a point stored relative to element `e`'s anchor.
    fn absolute(&self, e: usize, p: Point) -> Point {
        let a = self.anchors[self.elems[e].anchor];
        [a[0] + p[0], a[1] + p[1]]
    }

    /// Anchor of `e1` minus anchor of `e2`.
    fn anchor_shift(&self, e1: usize, e2: usize) -> Point {
        let (a1, a2) = (self.elems[e1].anchor, self.elems[e2].anchor);
        if a1 == a2 {
            [0.0; 2]
        } else {
            sub(self.anchors[a1], self.anchors[a2])
        }
    }

    /// Enclosing ball of the image of reference interval `[s0, s1]`.
    fn ball_of(&self, g: &ElementGeom, s0: f64, s1: f64) -> (Point, f64) {
        let center = self.curve.point_on(g.piece, g.t0 + g.h * 0.5 * (s0 + s1));
        let len = self
            .curve
            .arclength_unchecked(g.t0 + g.h * s0, g.t0 + g.h * s1);
        (center, 0.5 * len)
    }

    fn ball(&self, e: usize, s0: f64, s1: f64) -> (Point, f64) {
        let g = &self.elems[e];
        if s0 == 0.0 && s1 == 1.0 {
            (g.center, g.radius)
        } else {
            self.ball_of(g, s0, s1)
        }
    }

    fn sample(&self, g: &ElementGeom, s0: f64, s1: f64, rule: &QuadRule) -> Samples {
        let len = s1 - s0;
        let mut out = Samples {
            points: Vec::with_capacity(rule.len()),
            jw: Vec::with_capacity(rule.len()),
            basis: Vec::with_capacity(rule.len() * self.q),
        };
        for (x, w) in rule.iter() {
            let tau = g.h * (s0 + len * x);
            let t = g.t0 + tau;
            out.points.push(self.local_point(g, tau));
            out.jw.push(w * len * g.h * self.speed(g, t));
            out.basis.extend(self.basis(g, tau));
        }
        out
    }

    fn samples(
        &self,
        quad: &Quadrature,
        e: usize,
        s0: f64,
        s1: f64,
        tier: usize,
    ) -> Cow<'_, Samples> {
        let g = &self.elems[e];
        if s0 == 0.0 && s1 == 1.0 {
            Cow::Borrowed(&g.tiers[tier])
        } else {
            Cow::Owned(self.sample(g, s0, s1, &quad.tiers[tier].1))
        }
    }

    fn first(&self, e: usize) -> usize {
        self.elems[e].span + 1 - self.q
    }

    /// Adjacent pair `(left, right)` if `e1 < e2` share a node.
    fn adjacency(&self, e1: usize, e2: usize) -> Option<(usize, usize)> {
        let n = self.elems.len();
        if e2 == e1 + 1 {
            Some((e1, e2))
        } else if self.mesh.is_closed() && e1 == 0 && e2 == n - 1 {
            Some((n - 1, 0))
        } else {
            None
        }
    }

    fn coincident(&self, quad: &Quadrature, e: usize, local: &mut [f64]) {
        let g = &self.elems[e];
        let q = self.q;
        local.fill(0.0);
        for node in &quad.coincident.nodes {
            let ts = g.t0 + g.h * node.s;
            let tt = g.t0 + g.h * node.t;
            let factor = if node.singular {
                1.0
            } else {
                let d = self.curve.displacement_on(g.piece, tt, g.h * node.da);
                (norm(d) / node.da.abs()).ln()
            };
            let w = node.weight * g.h * g.h * self.speed(g, ts) * self.speed(g, tt) * factor;
            let rs = self.basis(g, g.h * node.s);
            let rt = self.basis(g, g.h * node.t);
            for i in 0..q {
                for j in 0..q {
                    local[i * q + j] += w * rs[i] * rt[j];
                }
            }
        }
    }

    /// `left` ends where `right` starts; rows belong to `left`.
    fn adjacent(&self, quad: &Quadrature, left: usize, right: usize, local: &mut [f64]) {
        let gl = &self.elems[left];
        let gr = &self.elems[right];
        let q = self.q;
        let zl = gl.t0 + gl.h;
        local.fill(0.0);
        for node in &quad.adjacent.nodes {
            let (x, y) = (node.da, node.db);
            let ts = zl - gl.h * x;
            let tt = gr.t0 + gr.h * y;
            let factor = if node.singular {
                1.0
            } else {
                let d = sub(
                    self.curve.displacement_on(gr.piece, gr.t0, gr.h * y),
                    self.curve.displacement_on(gl.piece, zl, -gl.h * x),
                );
                (norm(d) / x.max(y)).ln()
            };
            let w = node.weight * gl.h * gr.h * self.speed(gl, ts) * self.speed(gr, tt) * factor;
            let rs = self.basis(gl, gl.h - gl.h * x);
            let rt = self.basis(gr, gr.h * y);
            for i in 0..q {
                for j in 0..q {
                    local[i * q + j] += w * rs[i] * rt[j];
                }
            }
        }
    }

    /// Adds the separated-pair integral over reference sub-intervals to `local`.
    #[allow(clippy::too_many_arguments)]
    fn separated(
        &self,
        quad: &Quadrature,
        e1: usize,
        (a0, a1): (f64, f64),
        e2: usize,
        (b0, b1): (f64, f64),
        depth: usize,
        local: &mut [f64],
    ) -> Result<()> {
        let (c1, r1) = self.ball(e1, a0, a1);
        let (c2, r2) = self.ball(e2, b0, b1);
        let gap = norm(sub(c1, c2)) - r1 - r2;
        let ratio = gap / (2.0 * r1.max(r2));
        if let Some(tier) = quad.tier(ratio) {
            let s1 = self.samples(quad, e1, a0, a1, tier);
            let s2 = self.samples(quad, e2, b0, b1, tier);
            let q = self.q;
            let shift = self.anchor_shift(e1, e2);
            let mut v = vec![0.0; q];
            for (a, pa) in s1.points.iter().enumerate() {
                v.fill(0.0);
                for (b, pb) in s2.points.iter().enumerate() {
                    let d = [pa[0] - pb[0] + shift[0], pa[1] - pb[1] + shift[1]];
                    let k = s2.jw[b] * 0.5 * (d[0] * d[0] + d[1] * d[1]).ln();
                    for (vj, rb) in v.iter_mut().zip(&s2.basis[b * q..(b + 1) * q]) {
                        *vj += k * rb;
                    }
                }
                let ra = &s1.basis[a * q..(a + 1) * q];
                for i in 0..q {
                    let f = s1.jw[a] * ra[i];
                    for j in 0..q {
                        local[i * q + j] += f * v[j];
                    }
                }
            }
            return Ok(());
        }
        if depth >= MAX_DEPTH {
            return Err(Error::Assembly(format!(
                "elements {e1} and {e2} are too close to separate"
            )));
        }
        if r1 >= r2 {
            let m = 0.5 * (a0 + a1);
            self.separated(quad, e1, (a0, m), e2, (b0, b1), depth + 1, local)?;
            self.separated(quad, e1, (m, a1), e2, (b0, b1), depth + 1, local)
        } else {
            let m = 0.5 * (b0 + b1);
            self.separated(quad, e1, (a0, a1), e2, (b0, m), depth + 1, local)?;
            self.separated(quad, e1, (a0, a1), e2, (m, b1), depth + 1, local)
        }
    }
}

/// Dense Galerkin system `A x = b` with `A_ij = <V R_j, R_i>`, `b_i = <f, R_i>`.
#[derive(Clone, Debug)]
pub struct GalerkinSystem {
    pub matrix: DMatrix<f64>,
    pub load: DVector<f64>,
}

fn add_block(a: &mut DMatrix<f64>, r0: usize, c0: usize, local: &[f64], q: usize, mirror: bool) {
    for i in 0..q {
        for j in 0..q {
            let v = local[i * q + j];
            a[(r0 + i, c0 + j)] += v;
            if mirror {
                a[(c0 + j, r0 + i)] += v;
            }
        }
    }
}

/// `assemble`: Galerkin matrix and load vector on the mesh's NURBS space.
pub fn assemble(
    mesh: &KnotMesh,
    problem: &ProblemData,
    quad: &Quadrature,
) -> Result<GalerkinSystem> {
    let matrix = assemble_matrix(mesh, quad)?;
    let load = assemble_load(mesh, problem, quad)?;
    Ok(GalerkinSystem { matrix, load })
}

pub fn assemble_matrix(mesh: &KnotMesh, quad: &Quadrature) -> Result<DMatrix<f64>> {
    let geo = MeshGeometry::new(mesh, quad);
    let n = mesh.n_elements();
    let q = geo.q;
    let dim = mesh.dofs();
    let mut a = DMatrix::zeros(dim, dim);
    let mut local = vec![0.0; q * q];
    for e1 in 0..n {
        geo.coincident(quad, e1, &mut local);
        add_block(&mut a, geo.first(e1), geo.first(e1), &local, q, false);
        for e2 in e1 + 1..n {
            match geo.adjacency(e1, e2) {
                Some((l, r)) => {
                    geo.adjacent(quad, l, r, &mut local);
                    add_block(&mut a, geo.first(l), geo.first(r), &local, q, true);
                }
                None => {
                    local.fill(0.0);
                    geo.separated(quad, e1, (0.0, 1.0), e2, (0.0, 1.0), 0, &mut local)?;
                    add_block(&mut a, geo.first(e1), geo.first(e2), &local, q, true);
                }
            }
        }
    }
    a *= KERNEL_SCALE;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Assembly(
            "non-finite matrix entry (self-intersecting curve?)".into(),
        ));
    }
    Ok(a)
}

pub fn assemble_load(
    mesh: &KnotMesh,
    problem: &ProblemData,
    quad: &Quadrature,
) -> Result<DVector<f64>> {
    let geo = MeshGeometry::new(mesh, quad);
    let q = geo.q;
    let mut b = DVector::<f64>::zeros(mesh.dofs());
    let full = quad.full_tier();
    for e in 0..mesh.n_elements() {
        let s = &geo.elems[e].tiers[full];
        let first = geo.first(e);
        for (k, x) in s.points.iter().enumerate() {
            let fw = s.jw[k] * problem.f(geo.absolute(e, *x));
            for i in 0..q {
                b[first + i] += fw * s.basis[k * q + i];
            }
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Assembly("non-finite load entry".into()));
    }
    Ok(b)
}

/// `solve`: Cholesky solve of the diagonally scaled system with one step of
/// iterative refinement.
pub fn solve(system: &GalerkinSystem) -> Result<Vec<f64>> {
    let a = &system.matrix;
    let n = a.nrows();
    if (0..n).any(|i| !(a[(i, i)] > 0.0)) {
        return Err(Error::Factorization(
            "Galerkin matrix is not positive definite".into(),
        ));
    }
    let d = DVector::from_fn(n, |i, _| 1.0 / a[(i, i)].sqrt());
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * d[i] * d[j]);
    let chol = scaled
        .cholesky()
        .ok_or_else(|| Error::Factorization("Galerkin matrix is not positive definite".into()))?;
    let solve_scaled = |rhs: &DVector<f64>| chol.solve(&rhs.component_mul(&d)).component_mul(&d);
    let mut x = solve_scaled(&system.load);
    let r = &system.load - a * &x;
    x += solve_scaled(&r);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization("solution is not finite".into()));
    }
    Ok(x.as_slice().to_vec())
}

/// `energy_norm`: `sqrt(a^T A a)`.
pub fn energy_norm(coeffs: &[f64], matrix: &DMatrix<f64>) -> Result<f64> {
    let a = DVector::from_column_slice(coeffs);
    let e = a.dot(&(matrix * &a));
    let scale = matrix.amax() * a.norm_squared();
    if e < -1e-12 * scale {
        return Err(Error::Internal(format!("negative energy {e}")));
    }
    Ok(e.max(0.0).sqrt())
}

/// A discrete density `Phi = sum_i coeffs[i] R_i` on a mesh.
#[derive(Clone, Debug)]
pub struct Density {
    mesh: KnotMesh,
    coeffs: Vec<f64>,
}

impl Density {
    pub fn new(mesh: KnotMesh, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.dofs() {
            return Err(Error::domain(format!(
                "expected {} coefficients, got {}",
                mesh.dofs(),
                coeffs.len()
            )));
        }
        Ok(Density { mesh, coeffs })
    }

    pub fn mesh(&self) -> &KnotMesh {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `Phi(t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.mesh
            .space()
            .eval(&self.coeffs, self.mesh.curve().wrap(t)?)
    }
}

/// Evaluates `V Phi` on the curve. Holds per-element caches, so build it
/// once per density; it is `Sync` and may be shared between threads.
pub struct Potential<'a> {
    density: &'a Density,
    quad: &'a Quadrature,
    geo: MeshGeometry<'a>,
    /// per element and tier: `jw * Phi` at the sample points
    phi_w: Vec<Vec<Vec<f64>>>,
}

impl<'a> Potential<'a> {
    pub fn new(density: &'a Density, quad: &'a Quadrature) -> Self {
        let geo = MeshGeometry::new(&density.mesh, quad);
        let q = geo.q;
        let phi_w = (0..geo.elems.len())
            .map(|e| {
                let first = geo.first(e);
                let c = &density.coeffs[first..first + q];
                geo.elems[e]
                    .tiers
                    .iter()
                    .map(|s| weighted_density(s, c, q))
                    .collect()
            })
            .collect();
        Potential {
            density,
            quad,
            geo,
            phi_w,
        }
    }

    /// `Phi(t0 + tau)` on element `e`.
    fn phi(&self, e: usize, tau: f64) -> f64 {
        let g = &self.geo.elems[e];
        let first = self.geo.first(e);
        self.geo
            .basis(g, tau)
            .iter()
            .zip(&self.density.coeffs[first..])
            .map(|(r, c)| r * c)
            .sum()
    }

    /// Parameter of `t` inside element `e`, if it lies there.
    fn containing(&self, e: usize, t: f64) -> Option<f64> {
        let mesh = &self.density.mesh;
        let (z0, z1) = mesh.element(e);
        if (z0..=z1).contains(&t) {
            return Some(t);
        }
        if mesh.is_closed() {
            let curve = mesh.curve();
            let n = mesh.n_elements();
            if e == n - 1 && t == curve.a() {
                return Some(curve.b());
            }
            if e == 0 && t == curve.b() {
                return Some(curve.a());
            }
        }
        None
    }

    /// `int_e log|gamma(t) - y| Phi(y) dy` for `t = t0 + tau` in element `e`.
    fn singular(&self, e: usize, tau: f64) -> f64 {
        let g = &self.geo.elems[e];
        let curve = self.geo.curve;
        let t = g.t0 + tau;
        let mut sum = 0.0;
        for (dir, len) in [(-1.0, tau), (1.0, g.h - tau)] {
            if len <= 0.0 {
                continue;
            }
            for (x, w) in self.quad.gl.iter() {
                let u = dir * len * x;
                let d = curve.displacement_on(g.piece, t, u);
                let gval = self.phi(e, tau + u) * self.geo.speed(g, t + u);
                sum += len * w * gval * (norm(d).ln() - x.ln());
            }
            for (x, w) in self.quad.log.iter() {
                let u = dir * len * x;
                let gval = self.phi(e, tau + u) * self.geo.speed(g, t + u);
                sum -= len * w * gval;
            }
        }
        sum
    }

    /// `x` is the absolute evaluation point, `xe` the same point relative to
    /// the anchor of element `ex`.
    fn regular(
        &self,
        e: usize,
        (x, ex, xe): (Point, usize, Point),
        (s0, s1): (f64, f64),
        depth: usize,
    ) -> Result<f64> {
        let (c, r) = self.geo.ball(e, s0, s1);
        let ratio = (norm(sub(x, c)) - r) / (2.0 * r);
        if let Some(tier) = self.quad.tier(ratio) {
            let shift = self.geo.anchor_shift(ex, e);
            let log_dist = |p: &Point| {
                let d = [xe[0] - p[0] + shift[0], xe[1] - p[1] + shift[1]];
                0.5 * (d[0] * d[0] + d[1] * d[1]).ln()
            };
            if s0 == 0.0 && s1 == 1.0 {
                let s = &self.geo.elems[e].tiers[tier];
                return Ok(s
                    .points
                    .iter()
                    .zip(&self.phi_w[e][tier])
                    .map(|(p, w)| w * log_dist(p))
                    .sum());
            }
            let s = self.geo.samples(self.quad, e, s0, s1, tier);
            let first = self.geo.first(e);
            let q = self.geo.q;
            let w = weighted_density(&s, &self.density.coeffs[first..first + q], q);
            return Ok(s.points.iter().zip(&w).map(|(p, w)| w * log_dist(p)).sum());
        }
        if depth >= MAX_DEPTH {
            return Err(Error::Internal(format!(
                "evaluation point too close to element {e}"
            )));
        }
        let m = 0.5 * (s0 + s1);
        Ok(self.regular(e, (x, ex, xe), (s0, m), depth + 1)?
            + self.regular(e, (x, ex, xe), (m, s1), depth + 1)?)
    }

    /// `eval_V`: `(V Phi)(gamma(t))`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let t = self.geo.curve.wrap(t)?;
        let e = self.density.mesh.element_of(t)?;
        self.eval_in(e, t)
    }

    /// `(V Phi)(gamma(t))` for `t` in element `ex`.
    fn eval_in(&self, ex: usize, t: f64) -> Result<f64> {
        let gx = &self.geo.elems[ex];
        let xe = self.geo.local_point(gx, t - gx.t0);
        let x = self.geo.absolute(ex, xe);
        let mut total = 0.0;
        for e in 0..self.geo.elems.len() {
            total += match self.containing(e, t) {
                Some(tl) => self.singular(e, tl - self.geo.elems[e].t0),
                None => self.regular(e, (x, ex, xe), (0.0, 1.0), 0)?,
            };
        }
        Ok(KERNEL_SCALE * total)
    }
}

fn weighted_density(s: &Samples, coeffs: &[f64], q: usize) -> Vec<f64> {
    s.jw.iter()
        .enumerate()
        .map(|(k, jw)| {
            let phi: f64 = s.basis[k * q..(k + 1) * q]
                .iter()
                .zip(coeffs)
                .map(|(r, c)| r * c)
                .sum();
            jw * phi
        })
        .collect()
}

/// `eval_V` for a single point; builds the caches on every call.
pub fn eval_v(density: &Density, quad: &Quadrature, t: f64) -> Result<f64> {
    Potential::new(density, quad).eval(t)
}

/// A function sampled at `k` Gauss points per element, with its arclength
/// derivative obtained by differentiating the per-element interpolant.
#[derive(Clone, Debug)]
pub struct ResidualTable {
    k: usize,
    rule: QuadRule,
    interp: Interpolation,
    /// parameter length of each element
    h_check: Vec<f64>,
    values: Vec<f64>,
    /// reference derivative `d r / d s` at the samples
    ref_derivs: Vec<f64>,
    /// `h |gamma'|` at the samples
    jac: Vec<f64>,
}

impl ResidualTable {
    /// Samples `r(t)` on every element; `r` receives the element and parameter.
    pub fn from_fn(
        mesh: &KnotMesh,
        k: usize,
        mut r: impl FnMut(usize, f64) -> Result<f64>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::domain(format!(
                "need at least 2 samples per element, got {k}"
            )));
        }
        let rule = gauss_legendre(k)?;
        let interp = Interpolation::new(&rule.nodes);
        let curve = mesh.curve();
        let n = mesh.n_elements();
        let mut values = Vec::with_capacity(n * k);
        let mut ref_derivs = Vec::with_capacity(n * k);
        let mut jac = Vec::with_capacity(n * k);
        let mut h_check = Vec::with_capacity(n);
        for e in 0..n {
            let (t0, t1) = mesh.element(e);
            let h = t1 - t0;
            let piece = curve.piece_at(0.5 * (t0 + t1));
            let start = values.len();
            for &s in &rule.nodes {
                let t = t0 + h * s;
                values.push(r(e, t)?);
                jac.push(h * norm(curve.tangent_on(piece, t)));
            }
            ref_derivs.extend(interp.differentiate(&values[start..]));
            h_check.push(h);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Internal("non-finite residual sample".into()));
        }
        Ok(ResidualTable {
            k,
            rule,
            interp,
            h_check,
            values,
            ref_derivs,
            jac,
        })
    }

    pub fn samples_per_element(&self) -> usize {
        self.k
    }

    pub fn n_elements(&self) -> usize {
        self.h_check.len()
    }

    /// Reference nodes in `[0, 1]`.
    pub fn nodes(&self) -> &[f64] {
        &self.rule.nodes
    }

    pub fn values(&self, e: usize) -> &[f64] {
        &self.values[e * self.k..(e + 1) * self.k]
    }

    /// Arclength derivative at sample `j` of element `e`.
    pub fn deriv(&self, e: usize, j: usize) -> f64 {
        let i = e * self.k + j;
        self.ref_derivs[i] / self.jac[i]
    }

    /// `||d_Gamma r||^2_{L^2(T)}` for element `e`.
    pub fn deriv_norm_sq(&self, e: usize) -> f64 {
        (0..self.k)
            .map(|j| {
                let i = e * self.k + j;
                let d = self.ref_derivs[i];
                // (d / jac)^2 * jac * w
                self.rule.weights[j] * d * d / self.jac[i]
            })
            .sum()
    }

    /// Interpolated residual at reference coordinate `s` of element `e`.
    pub fn interpolate(&self, e: usize, s: f64) -> f64 {
        self.interp.eval(self.values(e), s)
    }

    /// Interpolated reference derivative `d r / d s` at `s`.
    pub fn interpolate_ref_deriv(&self, e: usize, s: f64) -> f64 {
        self.interp
            .eval(&self.ref_derivs[e * self.k..(e + 1) * self.k], s)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `residual_samples`: `r = f - V Phi` at `k` Gauss points per element.
pub fn residual_samples(
    density: &Density,
    problem: &ProblemData,
    quad: &Quadrature,
    k: usize,
) -> Result<ResidualTable> {
    if k < 2 {
        return Err(Error::domain(format!(
            "need at least 2 samples per element, got {k}"
        )));
    }
    let potential = Potential::new(density, quad);
    let curve = density.mesh.curve();
    ResidualTable::from_fn(&density.mesh, k, |e, t| {
        Ok(problem.f(curve.point(t)) - potential.eval_in(e, t)?)
    })
}
