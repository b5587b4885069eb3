//! Piecewise smooth boundary parametrizations `gamma: [a, b] -> R^2`.
//!
//! A curve is a chain of smooth pieces. Piece boundaries are the corners
//! (`smooth_breaks`); meshes put nodes there so that no element straddles a
//! corner. Pieces can compute chord vectors `gamma(t + d) - gamma(t)` without
//! cancellation, which the singular quadrature relies on.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, QuadRule};

pub type Point = [f64; 2];

pub(crate) fn sub(p: Point, q: Point) -> Point {
    [p[0] - q[0], p[1] - q[1]]
}

pub(crate) fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

/// Which one-sided limit to take at a corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One smooth piece, parametrized over the local interval `[0, len]`.
pub trait CurvePiece: Send + Sync + fmt::Debug {
    fn point(&self, tau: f64) -> Point;

    fn tangent(&self, tau: f64) -> Point;

    /// `gamma(tau + delta) - gamma(tau)`.
    fn displacement(&self, tau: f64, delta: f64) -> Point {
        sub(self.point(tau + delta), self.point(tau))
    }

    /// Closed-form arclength of `[tau0, tau1]`, if the piece has one.
    fn arclength(&self, _tau0: f64, _tau1: f64) -> Option<f64> {
        None
    }
}

/// Straight segment `start + velocity * tau`.
#[derive(Clone, Debug)]
pub struct Line {
    pub start: Point,
    pub velocity: Point,
}

impl CurvePiece for Line {
    fn point(&self, tau: f64) -> Point {
        [
            self.start[0] + self.velocity[0] * tau,
            self.start[1] + self.velocity[1] * tau,
        ]
    }

    fn tangent(&self, _tau: f64) -> Point {
        self.velocity
    }

    fn displacement(&self, _tau: f64, delta: f64) -> Point {
        [self.velocity[0] * delta, self.velocity[1] * delta]
    }

    fn arclength(&self, tau0: f64, tau1: f64) -> Option<f64> {
        Some(norm(self.velocity) * (tau1 - tau0))
    }
}

/// Circular arc `center + radius (cos phi, sin phi)` with `phi = phi0 + omega tau`.
#[derive(Clone, Debug)]
pub struct CircularArc {
    pub center: Point,
    pub radius: f64,
    pub phi0: f64,
    pub omega: f64,
}

impl CurvePiece for CircularArc {
    fn point(&self, tau: f64) -> Point {
        let phi = self.phi0 + self.omega * tau;
        [
            self.center[0] + self.radius * phi.cos(),
            self.center[1] + self.radius * phi.sin(),
        ]
    }

    fn tangent(&self, tau: f64) -> Point {
        let phi = self.phi0 + self.omega * tau;
        let v = self.radius * self.omega;
        [-v * phi.sin(), v * phi.cos()]
    }

    fn displacement(&self, tau: f64, delta: f64) -> Point {
        let half = 0.5 * self.omega * delta;
        let mid = self.phi0 + self.omega * tau + half;
        let chord = 2.0 * self.radius * half.sin();
        [-chord * mid.sin(), chord * mid.cos()]
    }

    fn arclength(&self, tau0: f64, tau1: f64) -> Option<f64> {
        Some(self.radius * self.omega.abs() * (tau1 - tau0))
    }
}

type PointFn = Arc<dyn Fn(f64) -> Point + Send + Sync>;

/// A piece given by closures for the point and its derivative.
#[derive(Clone)]
pub struct FnPiece {
    pub point: PointFn,
    pub tangent: PointFn,
}

impl fmt::Debug for FnPiece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnPiece")
    }
}

impl CurvePiece for FnPiece {
    fn point(&self, tau: f64) -> Point {
        (self.point)(tau)
    }

    fn tangent(&self, tau: f64) -> Point {
        (self.tangent)(tau)
    }
}

/// The built-in test geometries. All have diameter at most one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Circle,
    Slit,
    Square,
    Pacman,
}

impl GeometryKind {
    pub const ALL: [GeometryKind; 4] = [
        GeometryKind::Circle,
        GeometryKind::Slit,
        GeometryKind::Square,
        GeometryKind::Pacman,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::Circle => "circle",
            GeometryKind::Slit => "slit",
            GeometryKind::Square => "square",
            GeometryKind::Pacman => "pacman",
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GeometryKind::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown geometry '{s}'")))
    }
}

/// Radius of the circle geometry.
pub const CIRCLE_RADIUS: f64 = 0.5;
/// Half length of the slit `(-0.49, 0) -- (0.49, 0)`.
pub const SLIT_HALF_LENGTH: f64 = 0.49;
pub const SQUARE_SIDE: f64 = 0.4;
pub const PACMAN_RADIUS: f64 = 0.4;
/// Angle spanned by the pacman arc; the mouth is the remaining `pi/4`.
pub const PACMAN_OPENING: f64 = 7.0 * PI / 4.0;

/// `builtin_geometry`: the named test curve.
pub fn builtin_geometry(name: &str) -> Result<ParamCurve> {
    Ok(ParamCurve::builtin(name.parse()?))
}

/// A piecewise smooth, open or closed parametrization.
#[derive(Clone, Debug)]
pub struct ParamCurve {
    name: String,
    a: f64,
    b: f64,
    closed: bool,
    starts: Vec<f64>,
    lengths: Vec<f64>,
    pieces: Vec<Arc<dyn CurvePiece>>,
    breaks: Vec<f64>,
    /// cumulative arclength at the piece starts, plus the total
    cumulative: Vec<f64>,
}

fn gl16() -> &'static QuadRule {
    static RULE: OnceLock<QuadRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16).expect("n > 0"))
}

fn directions_differ(u: Point, v: Point) -> bool {
    let (nu, nv) = (norm(u), norm(v));
    let cross = (u[0] * v[1] - u[1] * v[0]) / (nu * nv);
    let dot = (u[0] * v[0] + u[1] * v[1]) / (nu * nv);
    cross.abs() > 1e-10 || dot < 0.0
}

impl ParamCurve {
    /// Chains `pieces` (each with its parameter length) starting at parameter `a`.
    pub fn from_pieces(
        name: impl Into<String>,
        a: f64,
        closed: bool,
        pieces: Vec<(f64, Arc<dyn CurvePiece>)>,
    ) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Config("a curve needs at least one piece".into()));
        }
        if pieces
            .iter()
            .any(|(len, _)| !(*len > 0.0 && len.is_finite()))
        {
            return Err(Error::Config("piece lengths must be positive".into()));
        }
        let mut starts = Vec::with_capacity(pieces.len());
        let mut t = a;
        for (len, _) in &pieces {
            starts.push(t);
            t += len;
        }
        let b = t;
        let (lengths, pieces): (Vec<f64>, Vec<_>) = pieces.into_iter().unzip();

        for i in 1..pieces.len() {
            let end = pieces[i - 1].point(lengths[i - 1]);
            let start = pieces[i].point(0.0);
            if norm(sub(end, start)) > 1e-12 {
                return Err(Error::Config(format!(
                    "pieces {} and {} do not join",
                    i - 1,
                    i
                )));
            }
        }
        let first = pieces[0].point(0.0);
        let last = pieces[pieces.len() - 1].point(lengths[lengths.len() - 1]);
        if closed && norm(sub(first, last)) > 1e-12 {
            return Err(Error::Config("closed curve does not close up".into()));
        }

        let mut breaks = Vec::new();
        if closed {
            let t_end = pieces[pieces.len() - 1].tangent(lengths[lengths.len() - 1]);
            let t_start = pieces[0].tangent(0.0);
            if pieces.len() > 1 || directions_differ(t_end, t_start) {
                breaks.push(a);
            }
        }
        breaks.extend(starts.iter().skip(1).copied());

        let mut curve = ParamCurve {
            name: name.into(),
            a,
            b,
            closed,
            starts,
            lengths,
            pieces,
            breaks,
            cumulative: Vec::new(),
        };
        let mut cumulative = vec![0.0];
        for i in 0..curve.pieces.len() {
            let len = curve.piece_arclength(i, 0.0, curve.lengths[i]);
            cumulative.push(cumulative[i] + len);
        }
        curve.cumulative = cumulative;
        Ok(curve)
    }

    /// The straight segment from `p0` (at `a`) to `p1` (at `b`).
    pub fn segment(p0: Point, p1: Point, a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Config("segment needs a < b".into()));
        }
        let len = b - a;
        let line = Line {
            start: p0,
            velocity: [(p1[0] - p0[0]) / len, (p1[1] - p0[1]) / len],
        };
        ParamCurve::from_pieces("segment", a, false, vec![(len, Arc::new(line))])
    }

    pub fn builtin(kind: GeometryKind) -> Self {
        let curve = match kind {
            GeometryKind::Circle => ParamCurve::from_pieces(
                kind.name(),
                0.0,
                true,
                vec![(
                    2.0 * PI,
                    Arc::new(CircularArc {
                        center: [0.0, 0.0],
                        radius: CIRCLE_RADIUS,
                        phi0: 0.0,
                        omega: 1.0,
                    }) as Arc<dyn CurvePiece>,
                )],
            ),
            GeometryKind::Slit => {
                let l = SLIT_HALF_LENGTH;
                ParamCurve::from_pieces(
                    kind.name(),
                    -l,
                    false,
                    vec![(
                        2.0 * l,
                        Arc::new(Line {
                            start: [-l, 0.0],
                            velocity: [1.0, 0.0],
                        }) as Arc<dyn CurvePiece>,
                    )],
                )
            }
            GeometryKind::Square => {
                let h = 0.5 * SQUARE_SIDE;
                let corners = [[-h, -h], [h, -h], [h, h], [-h, h]];
                let pieces = (0..4)
                    .map(|i| {
                        let p = corners[i];
                        let q = corners[(i + 1) % 4];
                        let v = [(q[0] - p[0]) / SQUARE_SIDE, (q[1] - p[1]) / SQUARE_SIDE];
                        (
                            SQUARE_SIDE,
                            Arc::new(Line {
                                start: p,
                                velocity: v,
                            }) as Arc<dyn CurvePiece>,
                        )
                    })
                    .collect();
                ParamCurve::from_pieces(kind.name(), 0.0, true, pieces)
            }
            GeometryKind::Pacman => {
                let r = PACMAN_RADIUS;
                let half_mouth = 0.5 * (2.0 * PI - PACMAN_OPENING);
                let (phi_in, phi_out) = (half_mouth, half_mouth + PACMAN_OPENING);
                let tip_in = [r * phi_in.cos(), r * phi_in.sin()];
                let tip_out = [r * phi_out.cos(), r * phi_out.sin()];
                ParamCurve::from_pieces(
                    kind.name(),
                    0.0,
                    true,
                    vec![
                        (
                            r,
                            Arc::new(Line {
                                start: [0.0, 0.0],
                                velocity: [tip_in[0] / r, tip_in[1] / r],
                            }) as Arc<dyn CurvePiece>,
                        ),
                        (
                            r * PACMAN_OPENING,
                            Arc::new(CircularArc {
                                center: [0.0, 0.0],
                                radius: r,
                                phi0: phi_in,
                                omega: 1.0 / r,
                            }),
                        ),
                        (
                            r,
                            Arc::new(Line {
                                start: tip_out,
                                velocity: [-tip_out[0] / r, -tip_out[1] / r],
                            }),
                        ),
                    ],
                )
            }
        };
        curve.expect("built-in geometries are valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn param_interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Parameters where `gamma` is only continuous; nodes must sit there.
    pub fn smooth_breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// All piece boundaries in `[a, b]`, including both ends.
    pub fn piece_boundaries(&self) -> Vec<f64> {
        let mut v = self.starts.clone();
        v.push(self.b);
        v
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    /// Parameter interval of piece `i`.
    pub fn piece_range(&self, i: usize) -> (f64, f64) {
        let end = self.starts.get(i + 1).copied().unwrap_or(self.b);
        (self.starts[i], end)
    }

    /// Maps `t` into `[a, b]` (periodically for closed curves).
    pub fn wrap(&self, t: f64) -> Result<f64> {
        if (self.a..=self.b).contains(&t) {
            return Ok(t);
        }
        if self.closed && t.is_finite() {
            let period = self.b - self.a;
            return Ok(self.a + (t - self.a).rem_euclid(period));
        }
        Err(Error::domain(format!(
            "parameter {t} outside [{}, {}]",
            self.a, self.b
        )))
    }

    fn piece_index(&self, t: f64, side: Side) -> usize {
        let i = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        if side == Side::Left && i > 0 && t == self.starts[i] {
            i - 1
        } else {
            i
        }
    }

    /// Index of the piece containing `t` (the right one at a corner).
    pub fn piece_at(&self, t: f64) -> usize {
        self.piece_index(t, Side::Right).min(self.pieces.len() - 1)
    }

    /// `gamma(t)` evaluated with piece `i`, also slightly outside that piece.
    pub fn point_on(&self, i: usize, t: f64) -> Point {
        self.pieces[i].point(t - self.starts[i])
    }

    pub fn tangent_on(&self, i: usize, t: f64) -> Point {
        self.pieces[i].tangent(t - self.starts[i])
    }

    /// `gamma(t + delta) - gamma(t)` evaluated with piece `i`.
    pub fn displacement_on(&self, i: usize, t: f64, delta: f64) -> Point {
        self.pieces[i].displacement(t - self.starts[i], delta)
    }

    /// `eval_point`: `gamma(t)`, wrapping `t` for closed curves.
    pub fn eval_point(&self, t: f64) -> Result<Point> {
        let t = self.wrap(t)?;
        Ok(self.point(t))
    }

    /// `gamma(t)` for `t` in `[a, b]`, no checks.
    pub fn point(&self, t: f64) -> Point {
        let i = self.piece_index(t, Side::Right);
        self.pieces[i].point(t - self.starts[i])
    }

    /// One-sided derivative `gamma'(t)`.
    pub fn tangent(&self, t: f64, side: Side) -> Result<Point> {
        let t = self.wrap(t)?;
        let side = if t == self.a && !self.closed {
            Side::Right
        } else if t == self.b && !self.closed {
            Side::Left
        } else {
            side
        };
        if self.closed && t == self.a && side == Side::Left {
            let last = self.pieces.len() - 1;
            return Ok(self.pieces[last].tangent(self.lengths[last]));
        }
        let i = self.piece_index(t, side);
        Ok(self.pieces[i].tangent(t - self.starts[i]))
    }

    /// `|gamma'(t)|` from the right (from the left at `b`).
    pub fn speed(&self, t: f64) -> f64 {
        let side = if t >= self.b { Side::Left } else { Side::Right };
        let i = self.piece_index(t, side);
        norm(self.pieces[i].tangent(t - self.starts[i]))
    }

    /// `gamma(t + delta) - gamma(t)` computed inside the piece that contains
    /// `t + delta / 2`. Both parameters must lie in that piece.
    pub fn displacement(&self, t: f64, delta: f64) -> Point {
        let i = self.piece_index(t + 0.5 * delta, Side::Right);
        self.pieces[i].displacement(t - self.starts[i], delta)
    }

    fn piece_arclength(&self, i: usize, tau0: f64, tau1: f64) -> f64 {
        if let Some(len) = self.pieces[i].arclength(tau0, tau1) {
            return len;
        }
        let piece = &self.pieces[i];
        let speed_integral = |lo: f64, hi: f64| {
            let h = hi - lo;
            gl16().integrate(|x| norm(piece.tangent(lo + h * x))) * h
        };
        fn adapt(f: &dyn Fn(f64, f64) -> f64, lo: f64, hi: f64, whole: f64, depth: u32) -> f64 {
            let mid = 0.5 * (lo + hi);
            let (left, right) = (f(lo, mid), f(mid, hi));
            let halves = left + right;
            if depth == 0 || (halves - whole).abs() <= 1e-13 * halves.abs().max(1e-300) {
                halves
            } else {
                adapt(f, lo, mid, left, depth - 1) + adapt(f, mid, hi, right, depth - 1)
            }
        }
        adapt(&speed_integral, tau0, tau1, speed_integral(tau0, tau1), 30)
    }

    /// `arclength`: length of `gamma([t1, t2])`.
    pub fn arclength(&self, t1: f64, t2: f64) -> Result<f64> {
        if !(t1 <= t2) {
            return Err(Error::domain(format!(
                "arclength needs t1 <= t2, got {t1} > {t2}"
            )));
        }
        if t1 < self.a || t2 > self.b {
            return Err(Error::domain(format!(
                "arclength interval [{t1}, {t2}] outside [{}, {}]",
                self.a, self.b
            )));
        }
        Ok(self.arclength_unchecked(t1, t2))
    }

    pub(crate) fn arclength_unchecked(&self, t1: f64, t2: f64) -> f64 {
        if t1 == t2 {
            return 0.0;
        }
        let i1 = self.piece_index(t1, Side::Right);
        let i2 = self.piece_index(t2, Side::Left);
        if i1 == i2 {
            return self.piece_arclength(i1, t1 - self.starts[i1], t2 - self.starts[i1]);
        }
        let mut total = self.piece_arclength(i1, t1 - self.starts[i1], self.lengths[i1]);
        total += self.cumulative[i2] - self.cumulative[i1 + 1];
        total + self.piece_arclength(i2, 0.0, t2 - self.starts[i2])
    }

    /// Total length `L`.
    pub fn length(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    /// `param_of_arclength`: the `t` with `arclength(a, t) = s`.
    pub fn param_of_arclength(&self, s: f64) -> Result<f64> {
        let total = self.length();
        if !(0.0..=total).contains(&s) {
            return Err(Error::domain(format!("arclength {s} outside [0, {total}]")));
        }
        if s == 0.0 {
            return Ok(self.a);
        }
        if s == total {
            return Ok(self.b);
        }
        let i = self
            .cumulative
            .partition_point(|&c| c <= s)
            .saturating_sub(1)
            .min(self.pieces.len() - 1);
        let target = s - self.cumulative[i];
        let piece = &self.pieces[i];
        let (mut lo, mut hi) = (0.0, self.lengths[i]);
        let mut tau = target / (self.cumulative[i + 1] - self.cumulative[i]) * hi;
        for _ in 0..200 {
            let g = self.piece_arclength(i, 0.0, tau) - target;
            if g == 0.0 {
                break;
            }
            if g > 0.0 {
                hi = tau;
            } else {
                lo = tau;
            }
            let speed = norm(piece.tangent(tau));
            let mut next = tau - g / speed;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - tau).abs();
            tau = next;
            if step <= 1e-15 * (1.0 + tau.abs()) || hi - lo <= 1e-15 * (1.0 + tau.abs()) {
                break;
            }
        }
        Ok(self.starts[i] + tau)
    }

    /// Largest distance between `n` equispaced parameter samples.
    pub fn sampled_diameter(&self, n: usize) -> f64 {
        let pts: Vec<Point> = (0..=n)
            .map(|k| self.point(self.a + (self.b - self.a) * k as f64 / n as f64))
            .collect();
        let mut diam: f64 = 0.0;
        for (i, p) in pts.iter().enumerate() {
            for q in &pts[i + 1..] {
                diam = diam.max(norm(sub(*p, *q)));
            }
        }
        diam
    }

    /// `(min, max)` of `|gamma'|` over `n` samples per piece (both one-sided
    /// limits at piece ends).
    pub fn speed_bounds(&self, n: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for (piece, &len) in self.pieces.iter().zip(&self.lengths) {
            for k in 0..=n {
                let v = norm(piece.tangent(len * k as f64 / n as f64));
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// Bi-Lipschitz constant of the arclength parametrization, estimated
    /// from `n` samples: the smallest `C` with
    /// `1/C <= |gamma_L(s) - gamma_L(t)| / |s - t| <= C` on the sampled pairs.
    /// For closed curves pairs are restricted to `|s - t| <= 3L/4`.
    pub fn bi_lipschitz_constant(&self, n: usize) -> Result<f64> {
        let total = self.length();
        let samples: Vec<(f64, Point)> = (0..=n)
            .map(|k| {
                let s = total * k as f64 / n as f64;
                let t = self.param_of_arclength(s)?;
                Ok((s, self.point(t)))
            })
            .collect::<Result<_>>()?;
        let mut c: f64 = 1.0;
        for (i, (s, p)) in samples.iter().enumerate() {
            for (t, q) in &samples[i + 1..] {
                let gap = t - s;
                if self.closed && gap > 0.75 * total {
                    continue;
                }
                let ratio = norm(sub(*p, *q)) / gap;
                c = c.max(ratio).max(1.0 / ratio);
            }
        }
        Ok(c)
    }

    /// Rejects cusps: at every corner the one-sided tangents must not point
    /// in opposite directions.
    pub fn check_no_cusps(&self) -> Result<()> {
        for &t in &self.breaks {
            let l = self.tangent(t, Side::Left)?;
            let r = self.tangent(t, Side::Right)?;
            let cross = l[0] * r[1] - l[1] * r[0];
            let dot = l[0] * r[0] + l[1] * r[1];
            if cross.abs() <= 1e-12 * norm(l) * norm(r) && dot < 0.0 {
                return Err(Error::Config(format!("cusp at parameter {t}")));
            }
        }
        Ok(())
    }
}
