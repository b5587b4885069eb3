//! Gauss rules on the reference interval `[0, 1]` and tensor/Duffy rules for
//! element pairs with a logarithmic kernel singularity.
//!
//! Every rule here is generated from the three-term recurrence of its
//! orthogonal polynomials: the Jacobi matrix gives initial nodes through a
//! symmetric eigendecomposition, which are then polished by Newton's method
//! on the recurrence, and the weights follow from the Christoffel numbers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// A quadrature rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Applies the rule to `f` on `[0, 1]`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// n-point Gauss-Legendre rule on `[0, 1]`, exact for degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> Result<QuadRule> {
    if n == 0 {
        return Err(Error::domain("Gauss-Legendre rule needs n >= 1"));
    }
    // monic shifted Legendre: a_k = 1/2, b_k = k^2 / (4 (4k^2 - 1))
    let alpha = vec![0.5; n];
    let beta: Vec<f64> = (0..n)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                let k = k as f64;
                k * k / (4.0 * (4.0 * k * k - 1.0))
            }
        })
        .collect();
    Ok(gauss_from_recurrence(&alpha, &beta))
}

/// n-point Gauss rule for `int_0^1 f(t) log(1/t) dt`, exact for polynomials
/// `f` of degree `2n - 1`.
///
/// The recurrence coefficients of the log weight are obtained with the
/// modified Chebyshev algorithm from the modified moments against the monic
/// shifted Legendre polynomials, which are known in closed form:
/// `int_0^1 P*_k(t) log(1/t) dt = (-1)^k / (k (k+1))` for `k >= 1`.
pub fn gauss_log(n: usize) -> Result<QuadRule> {
    if n == 0 {
        return Err(Error::domain("log-weighted Gauss rule needs n >= 1"));
    }
    let m = 2 * n;
    let a = vec![0.5; m];
    let b: Vec<f64> = (0..m)
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                let k = k as f64;
                k * k / (4.0 * (4.0 * k * k - 1.0))
            }
        })
        .collect();

    // modified moments; monic scaling (k!)^2 / (2k)! accumulated as a product
    let mut nu = vec![0.0; m];
    nu[0] = 1.0;
    let mut scale = 1.0;
    for (k, nu_k) in nu.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        scale *= kf / (2.0 * (2.0 * kf - 1.0));
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *nu_k = sign / (kf * (kf + 1.0)) * scale;
    }

    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut sigma_prev = vec![0.0; m + 1];
    let mut sigma = nu.clone();
    sigma.push(0.0);
    alpha[0] = a[0] + nu[1] / nu[0];
    beta[0] = nu[0];
    for k in 1..n {
        let mut next = vec![0.0; m + 1];
        for l in k..(m - k) {
            let mut v =
                sigma[l + 1] - (alpha[k - 1] - a[l]) * sigma[l] - beta[k - 1] * sigma_prev[l];
            if l >= 1 {
                v += b[l] * sigma[l - 1];
            }
            next[l] = v;
        }
        alpha[k] = a[k] + next[k + 1] / next[k] - sigma[k] / sigma[k - 1];
        beta[k] = next[k] / sigma[k - 1];
        sigma_prev = sigma;
        sigma = next;
    }
    Ok(gauss_from_recurrence(&alpha, &beta))
}

/// Gauss rule from monic recurrence coefficients; `beta[0]` is the total mass.
fn gauss_from_recurrence(alpha: &[f64], beta: &[f64]) -> QuadRule {
    let n = alpha.len();
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = alpha[i];
        if i + 1 < n {
            let off = beta[i + 1].sqrt();
            jacobi[(i, i + 1)] = off;
            jacobi[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|x, y| x.total_cmp(y));

    // p_n and p_n' by the recurrence, plus the Christoffel sum
    let eval = |x: f64| -> (f64, f64, f64) {
        let (mut p_prev, mut p) = (0.0, 1.0);
        let (mut d_prev, mut d) = (0.0, 0.0);
        let mut norm = beta[0];
        let mut christoffel = 1.0 / norm;
        for k in 0..n {
            let p_next = (x - alpha[k]) * p - if k > 0 { beta[k] * p_prev } else { 0.0 };
            let d_next = p + (x - alpha[k]) * d - if k > 0 { beta[k] * d_prev } else { 0.0 };
            p_prev = p;
            p = p_next;
            d_prev = d;
            d = d_next;
            if k + 1 < n {
                norm *= beta[k + 1];
                christoffel += p * p / norm;
            }
        }
        (p, d, christoffel)
    };

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, d, _) = eval(*x);
            if d != 0.0 {
                let step = p / d;
                *x -= step;
                if step.abs() <= 1e-17 {
                    break;
                }
            }
        }
        let (_, _, christoffel) = eval(*x);
        weights.push(1.0 / christoffel);
    }
    QuadRule { nodes, weights }
}

/// Relative position of two elements in an element-pair integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Separation {
    /// Both reference coordinates live on the same element.
    Coincident,
    /// The first element ends where the second one starts.
    Adjacent,
    /// Disjoint elements; the kernel is smooth.
    Far,
}

/// A point of a [`PairRule`].
///
/// `da`/`db` carry the small distances to the singular set without
/// cancellation: for coincident pairs `da = s - t`; for adjacent pairs
/// `da = 1 - s` and `db = t`. They are zero for far pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairNode {
    pub s: f64,
    pub t: f64,
    pub da: f64,
    pub db: f64,
    pub weight: f64,
    /// The weight already contains the factor `log d(s, t)`.
    pub singular: bool,
}

/// Quadrature on `[0,1]^2` for `int int F(s,t) k(s,t) ds dt`, where the kernel
/// `k` behaves like `log d(s,t)` with `d` the reference distance to the
/// singular set (see [`PairNode::log_distance`]).
///
/// The rule splits `k = log d + (k - log d)`: singular points integrate
/// `F log d` (the log factor is part of their weight) and regular points
/// integrate `F (k - log d)`, whose second factor is bounded.
#[derive(Clone, Debug)]
pub struct PairRule {
    pub separation: Separation,
    pub nodes: Vec<PairNode>,
}

impl PairNode {
    /// `log d(s, t)` for the separation class the node was built for.
    pub fn log_distance(&self, separation: Separation) -> f64 {
        match separation {
            Separation::Coincident => self.da.abs().ln(),
            Separation::Adjacent => self.da.max(self.db).ln(),
            Separation::Far => 0.0,
        }
    }
}

impl PairRule {
    /// Builds the pair rule for `separation` from a Gauss-Legendre rule
    /// (`outer`, also used in the co-direction) and a log-weighted rule.
    pub fn new(separation: Separation, outer: &QuadRule, inner: &QuadRule, log: &QuadRule) -> Self {
        let mut nodes = Vec::new();
        match separation {
            Separation::Far => {
                for (s, ws) in outer.iter() {
                    for (t, wt) in inner.iter() {
                        nodes.push(PairNode {
                            s,
                            t,
                            da: 0.0,
                            db: 0.0,
                            weight: ws * wt,
                            singular: false,
                        });
                    }
                }
            }
            Separation::Coincident => {
                // s > t: u = s - t, t = (1 - u) v; the mirror triangle swaps s and t
                for (sign, swap) in [(1.0, false), (-1.0, true)] {
                    let mut push = |u: f64, w: f64, singular: bool| {
                        for (v, wv) in inner.iter() {
                            let lo = (1.0 - u) * v;
                            let hi = u + lo;
                            let (s, t) = if swap { (lo, hi) } else { (hi, lo) };
                            nodes.push(PairNode {
                                s,
                                t,
                                da: sign * u,
                                db: 0.0,
                                weight: w * (1.0 - u) * wv,
                                singular,
                            });
                        }
                    };
                    for (u, w) in log.iter() {
                        push(u, -w, true);
                    }
                    for (u, w) in outer.iter() {
                        push(u, w, false);
                    }
                }
            }
            Separation::Adjacent => {
                // x = 1 - s, y = t; Duffy on y <= x (y = x v) and x <= y (x = y v)
                for lower in [true, false] {
                    let mut push = |r: f64, w: f64, singular: bool| {
                        for (v, wv) in inner.iter() {
                            let (x, y) = if lower { (r, r * v) } else { (r * v, r) };
                            nodes.push(PairNode {
                                s: 1.0 - x,
                                t: y,
                                da: x,
                                db: y,
                                weight: w * r * wv,
                                singular,
                            });
                        }
                    };
                    for (r, w) in log.iter() {
                        push(r, -w, true);
                    }
                    for (r, w) in outer.iter() {
                        push(r, w, false);
                    }
                }
            }
        }
        PairRule { separation, nodes }
    }

    /// `int int f(s,t) k(s,t)`, with `kernel` returning `k` at a node. For
    /// far rules the kernel is used as is.
    pub fn integrate(
        &self,
        f: impl Fn(&PairNode) -> f64,
        kernel: impl Fn(&PairNode) -> f64,
    ) -> f64 {
        self.nodes
            .iter()
            .map(|node| {
                let fv = f(node);
                if node.singular {
                    node.weight * fv
                } else {
                    node.weight * fv * (kernel(node) - node.log_distance(self.separation))
                }
            })
            .sum()
    }
}

/// `duffy_pairs`: the pair rule for a separation class.
pub fn duffy_pairs(
    outer: &QuadRule,
    inner: &QuadRule,
    log: &QuadRule,
    separation: Separation,
) -> PairRule {
    PairRule::new(separation, outer, inner, log)
}

/// Barycentric Lagrange interpolation on a fixed node set of `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Interpolation {
    nodes: Vec<f64>,
    bary: Vec<f64>,
    /// differentiation matrix at the nodes, row-major
    diff: Vec<f64>,
}

impl Interpolation {
    pub fn new(nodes: &[f64]) -> Self {
        let k = nodes.len();
        let bary: Vec<f64> = (0..k)
            .map(|j| {
                let prod: f64 = (0..k)
                    .filter(|&m| m != j)
                    .map(|m| nodes[j] - nodes[m])
                    .product();
                1.0 / prod
            })
            .collect();
        let mut diff = vec![0.0; k * k];
        for i in 0..k {
            let mut diag = 0.0;
            for j in 0..k {
                if i != j {
                    let d = (bary[j] / bary[i]) / (nodes[i] - nodes[j]);
                    diff[i * k + j] = d;
                    diag -= d;
                }
            }
            diff[i * k + i] = diag;
        }
        Interpolation {
            nodes: nodes.to_vec(),
            bary,
            diff,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Derivative of the interpolant at the nodes.
    pub fn differentiate(&self, values: &[f64]) -> Vec<f64> {
        let k = self.nodes.len();
        (0..k)
            .map(|i| (0..k).map(|j| self.diff[i * k + j] * values[j]).sum())
            .collect()
    }

    /// Value of the interpolant of `values` at `x`.
    pub fn eval(&self, values: &[f64], x: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, &xj) in self.nodes.iter().enumerate() {
            let d = x - xj;
            if d == 0.0 {
                return values[j];
            }
            let c = self.bary[j] / d;
            num += c * values[j];
            den += c;
        }
        num / den
    }
}
