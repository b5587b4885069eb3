//! Node-based a posteriori estimators: the weighted-residual estimator `mu`,
//! the Faermann estimator `eta`, and the element-based auxiliary quantities
//! `rho` and `rho~`.
//!
//! All of them work on a [`ResidualTable`], so the residual `f - V Phi` is
//! computed once per level.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bem::ResidualTable;
use crate::error::{Error, Result};
use crate::geometry::{norm, sub};
use crate::mesh::KnotMesh;
use crate::quadrature::{gauss_legendre, QuadRule};

/// Default Gauss order per direction for the `eta` double integrals.
pub const ETA_ORDER: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Mu,
    Eta,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Mu => "mu",
            EstimatorKind::Eta => "eta",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(EstimatorKind::Mu),
            "eta" => Ok(EstimatorKind::Eta),
            _ => Err(Error::Config(format!("unknown estimator '{s}'"))),
        }
    }
}

/// Squared indicators, one per counted node.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorSet {
    kind: EstimatorKind,
    nodes: Vec<usize>,
    params: Vec<f64>,
    values: Vec<f64>,
    total: f64,
}

impl IndicatorSet {
    pub fn new(
        kind: EstimatorKind,
        nodes: Vec<usize>,
        params: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if nodes.len() != values.len() || params.len() != values.len() {
            return Err(Error::domain("indicator arrays differ in length"));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!("invalid indicator {v}")));
        }
        let total = values.iter().sum();
        Ok(IndicatorSet {
            kind,
            nodes,
            params,
            values,
            total,
        })
    }

    fn for_mesh(kind: EstimatorKind, mesh: &KnotMesh, values: Vec<f64>) -> Result<Self> {
        let nodes: Vec<usize> = mesh.counted_nodes().collect();
        let params = nodes.iter().map(|&z| mesh.nodes()[z]).collect();
        IndicatorSet::new(kind, nodes, params, values)
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    /// Mesh node indices.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Node parameters.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Squared indicators.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of the squared indicators.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// Square root of the total.
    pub fn estimate(&self) -> f64 {
        self.total.sqrt()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_table(mesh: &KnotMesh, table: &ResidualTable) -> Result<()> {
    if table.n_elements() != mesh.n_elements() {
        return Err(Error::domain(format!(
            "residual table covers {} elements, mesh has {}",
            table.n_elements(),
            mesh.n_elements()
        )));
    }
    Ok(())
}

fn deriv_norms(mesh: &KnotMesh, table: &ResidualTable) -> Result<Vec<f64>> {
    check_table(mesh, table)?;
    Ok((0..mesh.n_elements())
        .map(|e| table.deriv_norm_sq(e))
        .collect())
}

/// `mu(z)^2 = |gamma^{-1}(omega(z))| * ||d_Gamma r||^2_{L^2(omega(z))}`.
pub fn mu_indicators(mesh: &KnotMesh, table: &ResidualTable) -> Result<IndicatorSet> {
    let norms = deriv_norms(mesh, table)?;
    let values = mesh
        .counted_nodes()
        .map(|z| {
            let patch = mesh.node_elements(z);
            let len: f64 = patch.iter().map(|&e| mesh.h_check(e)).sum();
            len * patch.iter().map(|&e| norms[e]).sum::<f64>()
        })
        .collect();
    IndicatorSet::for_mesh(EstimatorKind::Mu, mesh, values)
}

/// `rho(T)^2 = h_check(T) * ||d_Gamma r||^2_{L^2(T)}`.
pub fn rho_indicators(mesh: &KnotMesh, table: &ResidualTable) -> Result<Vec<f64>> {
    let norms = deriv_norms(mesh, table)?;
    Ok(norms
        .iter()
        .enumerate()
        .map(|(e, n)| mesh.h_check(e) * n)
        .collect())
}

/// `rho~(T)^2 = h~(T) * ||d_Gamma r||^2_{L^2(T)}` for a mesh-size function
/// given per element (see [`KnotMesh::tilde_h`]).
pub fn rho_tilde_indicators(
    mesh: &KnotMesh,
    table: &ResidualTable,
    tilde_h: &[f64],
) -> Result<Vec<f64>> {
    let norms = deriv_norms(mesh, table)?;
    if tilde_h.len() != norms.len() {
        return Err(Error::domain("mesh-size function does not match the mesh"));
    }
    Ok(norms.iter().zip(tilde_h).map(|(n, h)| h * n).collect())
}

/// Double integrals of `|r(x) - r(y)|^2 / |x - y|^2` over element pairs.
struct Faermann<'a> {
    mesh: &'a KnotMesh,
    table: &'a ResidualTable,
    rule: QuadRule,
    pieces: Vec<usize>,
}

impl<'a> Faermann<'a> {
    fn new(mesh: &'a KnotMesh, table: &'a ResidualTable, order: usize) -> Result<Self> {
        let curve = mesh.curve();
        let pieces = (0..mesh.n_elements())
            .map(|e| {
                let (t0, t1) = mesh.element(e);
                curve.piece_at(0.5 * (t0 + t1))
            })
            .collect();
        Ok(Faermann {
            mesh,
            table,
            rule: gauss_legendre(order)?,
            pieces,
        })
    }

    fn jac(&self, e: usize, s: f64) -> f64 {
        let (t0, t1) = self.mesh.element(e);
        let h = t1 - t0;
        h * norm(self.mesh.curve().tangent_on(self.pieces[e], t0 + h * s))
    }

    /// Integral over `T x T`.
    fn same(&self, e: usize) -> f64 {
        let curve = self.mesh.curve();
        let (t0, t1) = self.mesh.element(e);
        let h = t1 - t0;
        let piece = self.pieces[e];
        let mut sum = 0.0;
        // symmetric: twice the integral over s = t + u, u in (0, 1)
        for (u, wu) in self.rule.iter() {
            let len = 1.0 - u;
            for (v, wv) in self.rule.iter() {
                let t = len * v;
                let s = t + u;
                let q = if u < 1e-6 {
                    self.table.interpolate_ref_deriv(e, t).powi(2)
                } else {
                    let dr = self.table.interpolate(e, s) - self.table.interpolate(e, t);
                    let d = norm(curve.displacement_on(piece, t0 + h * t, h * u));
                    dr * dr / (d * d) * self.jac(e, s) * self.jac(e, t)
                };
                sum += wu * wv * len * q;
            }
        }
        2.0 * sum
    }

    /// Integral over `T_l x T_r` where `T_l` ends where `T_r` starts.
    fn adjacent(&self, left: usize, right: usize) -> f64 {
        let curve = self.mesh.curve();
        let (l0, l1) = self.mesh.element(left);
        let (r0, r1) = self.mesh.element(right);
        let (hl, hr) = (l1 - l0, r1 - r0);
        let mut sum = 0.0;
        // x: distance from the common node into T_l, y: into T_r, both in
        // reference units; each triangle x >= y and y >= x gets a Duffy map
        for swap in [false, true] {
            for (xi, wxi) in self.rule.iter() {
                for (eta, weta) in self.rule.iter() {
                    let (x, y) = if swap { (xi * eta, xi) } else { (xi, xi * eta) };
                    let sl = 1.0 - x;
                    let d = norm(sub(
                        curve.displacement_on(self.pieces[right], r0, hr * y),
                        curve.displacement_on(self.pieces[left], l1, -hl * x),
                    ));
                    let dr = self.table.interpolate(left, sl) - self.table.interpolate(right, y);
                    let q = dr * dr / (d * d) * self.jac(left, sl) * self.jac(right, y);
                    sum += wxi * weta * xi * q;
                }
            }
        }
        sum
    }
}

/// `eta(z)^2 = |r|^2_{H^{1/2}(omega(z))}`, the Sobolev-Slobodeckij seminorm
/// over the node patch in arclength measure. `order` is the Gauss order per
/// direction and element pair.
pub fn eta_indicators(
    mesh: &KnotMesh,
    table: &ResidualTable,
    order: usize,
) -> Result<IndicatorSet> {
    check_table(mesh, table)?;
    let f = Faermann::new(mesh, table, order)?;
    let same: Vec<f64> = (0..mesh.n_elements()).map(|e| f.same(e)).collect();
    let values = mesh
        .counted_nodes()
        .map(|z| match mesh.node_elements(z)[..] {
            [e] => same[e],
            [l, r] => same[l] + same[r] + 2.0 * f.adjacent(l, r),
            _ => unreachable!("a node has one or two elements"),
        })
        .map(|v: f64| v.max(0.0))
        .collect();
    IndicatorSet::for_mesh(EstimatorKind::Eta, mesh, values)
}
