//! Knot meshes: breakpoints of the parameter interval with multiplicities,
//! the NURBS space they induce, and the refinement strategy (bisection,
//! multiplicity increase and mesh-ratio closure).
//!
//! Nodes are `z_0 = a < z_1 < ... < z_n = b` and element `e` is
//! `[z_e, z_{e+1}]`. For open curves every node is counted and both ends
//! carry multiplicity `p + 1`. For closed curves `z_0` and `z_n` are the same
//! point; only `z_1, ..., z_n` are counted and `z_n` keeps multiplicity `p + 1`.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::ParamCurve;
use crate::splines::{KnotVector, NurbsSpace};

/// Relative slack used when comparing element lengths, so that ulp-level
/// differences between "equal" elements never trigger refinement.
const RATIO_SLACK: f64 = 1e-12;

/// Elements shorter than this many units in the last place of their
/// endpoints are not bisected.
pub const MIN_BISECT_ULPS: f64 = 256.0;

fn bisectable(z0: f64, z1: f64) -> bool {
    let ulp = z0.abs().max(z1.abs()) * f64::EPSILON;
    z1 - z0 >= MIN_BISECT_ULPS * ulp.max(f64::MIN_POSITIVE)
}

/// The initial mesh every refinement descends from.
#[derive(Debug)]
pub struct MeshRoot {
    curve: Arc<ParamCurve>,
    p: usize,
    nodes: Vec<f64>,
    mults: Vec<usize>,
    space: NurbsSpace,
    kappa0: f64,
}

impl MeshRoot {
    pub fn curve(&self) -> &Arc<ParamCurve> {
        &self.curve
    }

    pub fn kappa0(&self) -> f64 {
        self.kappa0
    }

    pub fn space(&self) -> &NurbsSpace {
        &self.space
    }
}

#[derive(Clone, Debug)]
pub struct KnotMesh {
    root: Arc<MeshRoot>,
    nodes: Vec<f64>,
    mults: Vec<usize>,
    space: NurbsSpace,
    /// knot-span index of each element
    spans: Vec<usize>,
    /// parameter length of each element: the root element length halved
    /// once per bisection, free of rounding in the node coordinates
    lengths: Vec<f64>,
}

/// Seed of a patch: nodes or elements.
#[derive(Clone, Debug)]
pub enum Seed {
    Nodes(Vec<usize>),
    Elements(Vec<usize>),
}

fn validate_nodes(curve: &ParamCurve, p: usize, nodes: &[f64], mults: &[usize]) -> Result<()> {
    if nodes.len() != mults.len() {
        return Err(Error::Config(
            "nodes and multiplicities differ in length".into(),
        ));
    }
    let min_elements = if curve.is_closed() { 3 } else { 1 };
    if nodes.len() < min_elements + 1 {
        return Err(Error::Config(format!(
            "a {} curve needs at least {min_elements} elements",
            if curve.is_closed() { "closed" } else { "open" }
        )));
    }
    if nodes[0] != curve.a() || nodes[nodes.len() - 1] != curve.b() {
        return Err(Error::Config("nodes must start at a and end at b".into()));
    }
    if nodes.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("nodes must be strictly increasing".into()));
    }
    if mults.iter().any(|&m| m == 0 || m > p + 1) {
        return Err(Error::Config(format!(
            "multiplicities must lie in 1..={}",
            p + 1
        )));
    }
    for &t in curve.smooth_breaks() {
        if !nodes.contains(&t) {
            return Err(Error::Config(format!("corner at {t} is not a node")));
        }
    }
    Ok(())
}

fn element_spans(p: usize, mults: &[usize]) -> Vec<usize> {
    let n = mults.len() - 1;
    let mut spans = Vec::with_capacity(n);
    let mut k = p;
    for e in 0..n {
        if e > 0 {
            k += mults[e];
        }
        spans.push(k);
    }
    spans
}

/// Element lengths of a mesh whose nodes arise from bisecting the elements
/// of `root`: each is the root element length times the nearest power of two.
/// Elements that are not dyadic parts of a root element keep their
/// coordinate difference.
fn dyadic_lengths(root: &[f64], nodes: &[f64]) -> Vec<f64> {
    nodes
        .windows(2)
        .map(|w| {
            let diff = w[1] - w[0];
            let mid = 0.5 * (w[0] + w[1]);
            let r = root.partition_point(|&z| z <= mid).clamp(1, root.len() - 1);
            let full = root[r] - root[r - 1];
            let level = (full / diff).log2().round();
            let exact = full * (-level).exp2();
            if level >= 0.0 && (diff / exact - 1.0).abs() < 1e-3 {
                exact
            } else {
                diff
            }
        })
        .collect()
}

fn ratio_of(lengths: &[f64], closed: bool) -> f64 {
    let n = lengths.len();
    let mut kappa: f64 = 1.0;
    let mut pair = |x: f64, y: f64| kappa = kappa.max(x / y).max(y / x);
    for w in lengths.windows(2) {
        pair(w[0], w[1]);
    }
    if closed && n > 1 {
        pair(lengths[0], lengths[n - 1]);
    }
    kappa
}

impl KnotMesh {
    /// An initial mesh. End multiplicities are forced to `p + 1`; `weights`
    /// default to one.
    pub fn initial(
        curve: Arc<ParamCurve>,
        p: usize,
        nodes: Vec<f64>,
        mut mults: Vec<usize>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        validate_nodes(&curve, p, &nodes, &mults)?;
        let n = nodes.len() - 1;
        mults[0] = p + 1;
        mults[n] = p + 1;
        let kv = KnotVector::from_nodes(p, &nodes, &mults, curve.is_closed())?;
        let space = match weights {
            Some(w) => NurbsSpace::new(kv, w)?,
            None => NurbsSpace::unweighted(kv),
        };
        let lengths: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        let kappa0 = ratio_of(&lengths, curve.is_closed());
        let root = Arc::new(MeshRoot {
            curve,
            p,
            nodes: nodes.clone(),
            mults: mults.clone(),
            space: space.clone(),
            kappa0,
        });
        let spans = element_spans(p, &mults);
        Ok(KnotMesh {
            root,
            nodes,
            mults,
            space,
            spans,
            lengths,
        })
    }

    /// About `n0` elements of equal parameter length per smooth piece, all
    /// interior multiplicities one.
    pub fn uniform(curve: Arc<ParamCurve>, p: usize, n0: usize) -> Result<Self> {
        if n0 == 0 {
            return Err(Error::Config(
                "initial mesh needs at least one element".into(),
            ));
        }
        let bounds = curve.piece_boundaries();
        let total = curve.b() - curve.a();
        let mut nodes = vec![curve.a()];
        for w in bounds.windows(2) {
            let count = ((n0 as f64 * (w[1] - w[0]) / total).round() as usize).max(1);
            for k in 1..count {
                nodes.push(w[0] + (w[1] - w[0]) * k as f64 / count as f64);
            }
            nodes.push(w[1]);
        }
        let mults = vec![1; nodes.len()];
        KnotMesh::initial(curve, p, nodes, mults, None)
    }

    /// A mesh descending from `root` with the given nodes and multiplicities;
    /// weights are obtained by knot insertion from the root weights.
    pub fn from_root(root: Arc<MeshRoot>, nodes: Vec<f64>, mut mults: Vec<usize>) -> Result<Self> {
        validate_nodes(&root.curve, root.p, &nodes, &mults)?;
        let n = nodes.len() - 1;
        mults[0] = root.p + 1;
        mults[n] = root.p + 1;
        let mut space = root.space.clone();
        let (mut i, mut j) = (0, 0);
        while i < root.nodes.len() || j < nodes.len() {
            let (rz, rm) = root
                .nodes
                .get(i)
                .map_or((f64::INFINITY, 0), |&z| (z, root.mults[i]));
            let (z, m) = nodes.get(j).map_or((f64::INFINITY, 0), |&z| (z, mults[j]));
            if rz < z || (rz == z && rm > m) {
                return Err(Error::domain(format!(
                    "mesh does not refine its root at parameter {rz}"
                )));
            }
            let extra = if rz == z { m - rm } else { m };
            for _ in 0..extra {
                space = space.insert_knot(z)?.space;
            }
            if rz == z {
                i += 1;
            }
            j += 1;
        }
        let spans = element_spans(root.p, &mults);
        let lengths = dyadic_lengths(&root.nodes, &nodes);
        Ok(KnotMesh {
            root,
            nodes,
            mults,
            space,
            spans,
            lengths,
        })
    }

    pub fn root(&self) -> &Arc<MeshRoot> {
        &self.root
    }

    pub fn curve(&self) -> &Arc<ParamCurve> {
        &self.root.curve
    }

    pub fn degree(&self) -> usize {
        self.root.p
    }

    pub fn is_closed(&self) -> bool {
        self.root.curve.is_closed()
    }

    pub fn kappa0(&self) -> f64 {
        self.root.kappa0
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn mults(&self) -> &[usize] {
        &self.mults
    }

    pub fn space(&self) -> &NurbsSpace {
        &self.space
    }

    pub fn dofs(&self) -> usize {
        self.space.dim()
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Indices of the counted nodes `N`.
    pub fn counted_nodes(&self) -> RangeInclusive<usize> {
        let n = self.n_elements();
        if self.is_closed() {
            1..=n
        } else {
            0..=n
        }
    }

    /// `|K|`: counted nodes with multiplicity.
    pub fn knot_count(&self) -> usize {
        self.counted_nodes().map(|j| self.mults[j]).sum()
    }

    pub fn element(&self, e: usize) -> (f64, f64) {
        (self.nodes[e], self.nodes[e + 1])
    }

    /// Parameter length of element `e`.
    pub fn h_check(&self, e: usize) -> f64 {
        self.lengths[e]
    }

    /// Arclength of element `e`.
    pub fn h(&self, e: usize) -> f64 {
        let (t0, t1) = self.element(e);
        self.root.curve.arclength_unchecked(t0, t1)
    }

    /// Knot span of element `e`; the active basis functions are
    /// `span - p ..= span`.
    pub fn element_span(&self, e: usize) -> usize {
        self.spans[e]
    }

    /// The element containing parameter `t` (the right one at nodes, the
    /// last one at `b`).
    pub fn element_of(&self, t: f64) -> Result<usize> {
        let t = self.root.curve.wrap(t)?;
        let e = self.nodes.partition_point(|&z| z <= t).saturating_sub(1);
        Ok(e.min(self.n_elements() - 1))
    }

    /// Maps node 0 of a closed mesh to its counted twin `n`.
    pub fn canonical_node(&self, z: usize) -> usize {
        if self.is_closed() && z == 0 {
            self.n_elements()
        } else {
            z
        }
    }

    /// Elements having node `z` as an endpoint.
    pub fn node_elements(&self, z: usize) -> Vec<usize> {
        let n = self.n_elements();
        let z = self.canonical_node(z);
        if self.is_closed() && z == n {
            return vec![n - 1, 0];
        }
        let mut v = Vec::with_capacity(2);
        if z > 0 {
            v.push(z - 1);
        }
        if z < n {
            v.push(z);
        }
        v
    }

    /// The element before `e`, wrapping on closed curves.
    pub fn prev_element(&self, e: usize) -> Option<usize> {
        match e {
            0 if self.is_closed() => Some(self.n_elements() - 1),
            0 => None,
            _ => Some(e - 1),
        }
    }

    /// The element after `e`, wrapping on closed curves.
    pub fn next_element(&self, e: usize) -> Option<usize> {
        let n = self.n_elements();
        if e + 1 < n {
            Some(e + 1)
        } else if self.is_closed() {
            Some(0)
        } else {
            None
        }
    }

    pub fn element_neighbors(&self, e: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.prev_element(e).into_iter().collect();
        if let Some(next) = self.next_element(e) {
            if !v.contains(&next) {
                v.push(next);
            }
        }
        v
    }

    /// `mesh_ratio`: largest parameter-length ratio of neighboring elements.
    pub fn mesh_ratio(&self) -> f64 {
        ratio_of(&self.lengths, self.is_closed())
    }

    /// `patch`: the `m`-th patch of `seed` as a sorted element set.
    pub fn patch(&self, seed: &Seed, m: usize) -> Result<BTreeSet<usize>> {
        let n = self.n_elements();
        let mut set: BTreeSet<usize> = match seed {
            Seed::Nodes(nodes) => {
                if let Some(&z) = nodes.iter().find(|&&z| z > n) {
                    return Err(Error::domain(format!("node {z} not in mesh")));
                }
                if m == 0 {
                    // a node set has no elements of its own
                    return Ok(BTreeSet::new());
                }
                nodes.iter().flat_map(|&z| self.node_elements(z)).collect()
            }
            Seed::Elements(elems) => {
                if let Some(&e) = elems.iter().find(|&&e| e >= n) {
                    return Err(Error::domain(format!("element {e} not in mesh")));
                }
                let set: BTreeSet<usize> = elems.iter().copied().collect();
                if m == 0 {
                    return Ok(set);
                }
                self.grow(&set)
            }
        };
        for _ in 1..m {
            set = self.grow(&set);
        }
        Ok(set)
    }

    fn grow(&self, set: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut out = set.clone();
        for &e in set {
            out.extend(self.element_neighbors(e));
        }
        out
    }

    /// Nodes lying on the closure of an element set, counted indices.
    pub fn nodes_of(&self, elements: &BTreeSet<usize>) -> BTreeSet<usize> {
        elements
            .iter()
            .flat_map(|&e| [self.canonical_node(e), self.canonical_node(e + 1)])
            .collect()
    }

    /// `refine` without coefficient transport.
    pub fn refine(&self, marked: &[usize]) -> Result<KnotMesh> {
        Ok(self.refine_with(marked, None)?.0)
    }

    /// `refine`: bisection of elements with both endpoints marked,
    /// multiplicity increase at the other marked nodes (bisection of their
    /// elements once the multiplicity is `p + 1`), closure so that no
    /// neighbor of a refined element is more than `kappa0` times longer,
    /// then bisection at parameter midpoints. Coefficients, if given, are
    /// transported so that the represented function does not change.
    pub fn refine_with(
        &self,
        marked: &[usize],
        coeffs: Option<&[f64]>,
    ) -> Result<(KnotMesh, Option<Vec<f64>>)> {
        let n = self.n_elements();
        let p = self.degree();
        if let Some(c) = coeffs {
            if c.len() != self.dofs() {
                return Err(Error::domain(format!(
                    "expected {} coefficients, got {}",
                    self.dofs(),
                    c.len()
                )));
            }
        }
        let mut is_marked = vec![false; n + 1];
        for &z in marked {
            if z > n {
                return Err(Error::domain(format!("marked node {z} not in mesh")));
            }
            is_marked[self.canonical_node(z)] = true;
        }
        if self.is_closed() {
            is_marked[0] = is_marked[n];
        }

        let mut queued = vec![false; n];
        let mut covered = vec![false; n + 1];
        for e in 0..n {
            if is_marked[e] && is_marked[e + 1] {
                queued[e] = true;
                covered[e] = true;
                covered[e + 1] = true;
            }
        }
        if self.is_closed() {
            covered[n] |= covered[0];
        }

        let mut mults = self.mults.clone();
        for z in self.counted_nodes() {
            if !is_marked[z] || covered[z] {
                continue;
            }
            if mults[z] < p + 1 {
                mults[z] += 1;
            } else {
                for e in self.node_elements(z) {
                    queued[e] = true;
                }
            }
        }

        let kappa0 = self.kappa0() * (1.0 + RATIO_SLACK);
        let mut stack: Vec<usize> = (0..n).filter(|&e| queued[e]).collect();
        while let Some(e) = stack.pop() {
            for e2 in self.element_neighbors(e) {
                if !queued[e2] && self.h_check(e2) > kappa0 * self.h_check(e) {
                    queued[e2] = true;
                    stack.push(e2);
                }
            }
        }

        let mut nodes = Vec::with_capacity(n + 1);
        let mut new_mults = Vec::with_capacity(n + 1);
        let mut lengths = Vec::with_capacity(n);
        let mut inserts = Vec::new();
        for j in 0..=n {
            nodes.push(self.nodes[j]);
            new_mults.push(mults[j]);
            for _ in self.mults[j]..mults[j] {
                inserts.push(self.nodes[j]);
            }
            if j == n {
                break;
            }
            if queued[j] {
                let (z0, z1) = self.element(j);
                if !bisectable(z0, z1) {
                    return Err(Error::Resolution(format!(
                        "element [{z0}, {z1}] is too short to bisect in double precision"
                    )));
                }
                let mid = 0.5 * (z0 + z1);
                nodes.push(mid);
                new_mults.push(1);
                inserts.push(mid);
                lengths.extend([0.5 * self.lengths[j]; 2]);
            } else {
                lengths.push(self.lengths[j]);
            }
        }

        let mut space = self.space.clone();
        let mut c = coeffs.map(<[f64]>::to_vec);
        for &u in &inserts {
            let ins = space.insert_knot(u)?;
            if let Some(cv) = c.as_mut() {
                *cv = ins.transport(cv);
            }
            space = ins.space;
        }
        let spans = element_spans(p, &new_mults);
        let mesh = KnotMesh {
            root: Arc::clone(&self.root),
            nodes,
            mults: new_mults,
            space,
            spans,
            lengths,
        };
        Ok((mesh, c))
    }

    /// Bisects every element (marks every node, so no multiplicity changes).
    pub fn refine_uniform(&self) -> Result<KnotMesh> {
        let all: Vec<usize> = (0..=self.n_elements()).collect();
        self.refine(&all)
    }

    /// Coefficients on `finer` of the function with coefficients `coeffs`
    /// here. `finer` must be a refinement of this mesh.
    pub fn transport(&self, coeffs: &[f64], finer: &KnotMesh) -> Result<Vec<f64>> {
        if coeffs.len() != self.dofs() {
            return Err(Error::domain(format!(
                "expected {} coefficients, got {}",
                self.dofs(),
                coeffs.len()
            )));
        }
        if self.root.p != finer.root.p || self.is_closed() != finer.is_closed() {
            return Err(Error::domain("transport between unrelated meshes"));
        }
        let mut inserts = Vec::new();
        let mut i = 0;
        for (&z, &m) in finer.nodes.iter().zip(&finer.mults) {
            let old = if self.nodes.get(i) == Some(&z) {
                i += 1;
                self.mults[i - 1]
            } else {
                0
            };
            if m < old {
                return Err(Error::domain("target mesh is not a refinement"));
            }
            inserts.extend(std::iter::repeat_n(z, m - old));
        }
        if i != self.nodes.len() {
            return Err(Error::domain("target mesh is not a refinement"));
        }
        let mut space = self.space.clone();
        let mut c = coeffs.to_vec();
        for u in inserts {
            let ins = space.insert_knot(u)?;
            c = ins.transport(&c);
            space = ins.space;
        }
        Ok(c)
    }

    /// `overlay`: node union with maximal multiplicities.
    pub fn overlay(&self, other: &KnotMesh) -> Result<KnotMesh> {
        let same = Arc::ptr_eq(&self.root, &other.root)
            || (self.root.p == other.root.p
                && self.root.nodes == other.root.nodes
                && self.root.mults == other.root.mults
                && self.root.space == other.root.space
                && self.root.curve.name() == other.root.curve.name());
        if !same {
            return Err(Error::domain(
                "overlay of meshes with different initial meshes",
            ));
        }
        let (mut i, mut j) = (0, 0);
        let (mut nodes, mut mults) = (Vec::new(), Vec::new());
        while i < self.nodes.len() || j < other.nodes.len() {
            let x = self.nodes.get(i).copied().unwrap_or(f64::INFINITY);
            let y = other.nodes.get(j).copied().unwrap_or(f64::INFINITY);
            if x < y {
                nodes.push(x);
                mults.push(self.mults[i]);
                i += 1;
            } else if y < x {
                nodes.push(y);
                mults.push(other.mults[j]);
                j += 1;
            } else {
                nodes.push(x);
                mults.push(self.mults[i].max(other.mults[j]));
                i += 1;
                j += 1;
            }
        }
        KnotMesh::from_root(Arc::clone(&self.root), nodes, mults)
    }

    /// `tilde_h`: `|gamma^{-1}(omega(T))| * q1^(sum of multiplicities of the
    /// nodes in omega(T))` per element.
    pub fn tilde_h(&self, q1: f64) -> Vec<f64> {
        (0..self.n_elements())
            .map(|e| {
                let patch = self.grow(&BTreeSet::from([e]));
                let len: f64 = patch.iter().map(|&t| self.h_check(t)).sum();
                let count: usize = self.nodes_of(&patch).iter().map(|&z| self.mults[z]).sum();
                len * q1.powi(count as i32)
            })
            .collect()
    }

    /// Position of `param` among the nodes, if it is one.
    pub fn node_index(&self, param: f64) -> Option<usize> {
        self.nodes.binary_search_by(|z| z.total_cmp(&param)).ok()
    }
}

/// Largest knot growth `|K_+| - |K_0|` caused by marking a single node of
/// the initial mesh. Used to calibrate the bound
/// `|K_l| - |K_0| <= C sum_j |M_j|` along refinement sequences.
pub fn single_mark_growth(initial: &KnotMesh) -> Result<usize> {
    let k0 = initial.knot_count();
    let mut worst = 0;
    for z in initial.counted_nodes() {
        let refined = initial.refine(&[z])?;
        worst = worst.max(refined.knot_count() - k0);
    }
    Ok(worst)
}
