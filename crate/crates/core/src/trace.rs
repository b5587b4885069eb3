//! Plain-text mesh traces and matrix triplet files.
//!
//! A mesh trace is a sequence of blocks, one per iteration:
//!
//! ```text
//! mesh 0 p=1 geometry=slit
//! -0.49 2
//! 0 1
//! 0.49 2
//! ```
//!
//! Each node line holds the parameter and its multiplicity. Lines starting
//! with `#` and blank lines are ignored.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{GeometryKind, ParamCurve};
use crate::mesh::KnotMesh;

/// Largest matrix dimension accepted by [`triplets_to_matrix`].
pub const MAX_TRIPLET_DIM: usize = 20_000;

#[derive(Clone, Debug, PartialEq)]
pub struct MeshTrace {
    pub iter: usize,
    pub p: usize,
    pub geometry: String,
    pub nodes: Vec<f64>,
    pub mults: Vec<usize>,
}

impl MeshTrace {
    pub fn of(iter: usize, mesh: &KnotMesh) -> Self {
        MeshTrace {
            iter,
            p: mesh.degree(),
            geometry: mesh.curve().name().to_string(),
            nodes: mesh.nodes().to_vec(),
            mults: mesh.mults().to_vec(),
        }
    }

    /// Rebuilds the mesh on a built-in geometry with unit weights.
    pub fn to_mesh(&self) -> Result<KnotMesh> {
        let kind: GeometryKind = self.geometry.parse()?;
        let curve = Arc::new(ParamCurve::builtin(kind));
        KnotMesh::initial(curve, self.p, self.nodes.clone(), self.mults.clone(), None)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "mesh {} p={} geometry={}",
            self.iter, self.p, self.geometry
        )?;
        for (z, m) in self.nodes.iter().zip(&self.mults) {
            writeln!(w, "{z} {m}")?;
        }
        Ok(())
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn field<'a>(line: usize, token: Option<&'a str>, key: &str) -> Result<&'a str> {
    token
        .and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| Error::parse(line, format!("expected {key}=...")))
}

fn finish(line: usize, block: Option<MeshTrace>, out: &mut Vec<MeshTrace>) -> Result<()> {
    let Some(b) = block else { return Ok(()) };
    if b.nodes.len() < 2 {
        return Err(Error::parse(
            line,
            format!("mesh {} has fewer than two nodes", b.iter),
        ));
    }
    out.push(b);
    Ok(())
}

/// Parses a mesh trace. Nodes must increase strictly and multiplicities lie
/// in `1..=p+1`.
pub fn parse_trace(text: &str) -> Result<Vec<MeshTrace>> {
    let mut out = Vec::new();
    let mut block: Option<MeshTrace> = None;
    let mut last = 0;
    for (line, l) in content_lines(text) {
        last = line;
        let mut tokens = l.split_whitespace();
        if l.starts_with("mesh") {
            finish(line, block.take(), &mut out)?;
            tokens.next();
            let iter = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::parse(line, "expected iteration number"))?;
            let p: usize = field(line, tokens.next(), "p")?
                .parse()
                .map_err(|_| Error::parse(line, "bad degree"))?;
            if p > 64 {
                return Err(Error::parse(line, "degree too large"));
            }
            let geometry = field(line, tokens.next(), "geometry")?.to_string();
            if geometry.is_empty() || tokens.next().is_some() {
                return Err(Error::parse(line, "malformed header"));
            }
            block = Some(MeshTrace {
                iter,
                p,
                geometry,
                nodes: Vec::new(),
                mults: Vec::new(),
            });
            continue;
        }
        let b = block
            .as_mut()
            .ok_or_else(|| Error::parse(line, "node line before mesh header"))?;
        let (Some(z), Some(m), None) = (tokens.next(), tokens.next(), tokens.next()) else {
            return Err(Error::parse(line, "expected 'param multiplicity'"));
        };
        let z: f64 = z.parse().map_err(|_| Error::parse(line, "bad parameter"))?;
        let m: usize = m
            .parse()
            .map_err(|_| Error::parse(line, "bad multiplicity"))?;
        if !z.is_finite() {
            return Err(Error::parse(line, "parameter is not finite"));
        }
        if m == 0 || m > b.p + 1 {
            return Err(Error::parse(
                line,
                format!("multiplicity {m} outside 1..={}", b.p + 1),
            ));
        }
        if b.nodes.last().is_some_and(|&prev| !(prev < z)) {
            return Err(Error::parse(line, "nodes must increase strictly"));
        }
        b.nodes.push(z);
        b.mults.push(m);
    }
    finish(last, block, &mut out)?;
    Ok(out)
}

/// Writes all entries of `a` as `i j value` lines.
pub fn write_triplets(w: &mut impl Write, a: &DMatrix<f64>) -> Result<()> {
    writeln!(w, "# {} {}", a.nrows(), a.ncols())?;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            writeln!(w, "{i} {j} {}", a[(i, j)])?;
        }
    }
    Ok(())
}

/// Parses `i j value` lines.
pub fn parse_triplets(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for (line, l) in content_lines(text) {
        let mut tokens = l.split_whitespace();
        let (Some(i), Some(j), Some(v), None) =
            (tokens.next(), tokens.next(), tokens.next(), tokens.next())
        else {
            return Err(Error::parse(line, "expected 'i j value'"));
        };
        let i = i.parse().map_err(|_| Error::parse(line, "bad row index"))?;
        let j = j
            .parse()
            .map_err(|_| Error::parse(line, "bad column index"))?;
        let v: f64 = v.parse().map_err(|_| Error::parse(line, "bad value"))?;
        if !v.is_finite() {
            return Err(Error::parse(line, "value is not finite"));
        }
        out.push((i, j, v));
    }
    Ok(out)
}

/// Dense matrix from triplets; missing entries are zero, repeated ones are
/// an error.
pub fn triplets_to_matrix(triplets: &[(usize, usize, f64)]) -> Result<DMatrix<f64>> {
    let rows = triplets
        .iter()
        .map(|t| t.0.saturating_add(1))
        .max()
        .unwrap_or(0);
    let cols = triplets
        .iter()
        .map(|t| t.1.saturating_add(1))
        .max()
        .unwrap_or(0);
    if rows > MAX_TRIPLET_DIM || cols > MAX_TRIPLET_DIM {
        return Err(Error::domain(format!(
            "matrix larger than {MAX_TRIPLET_DIM}"
        )));
    }
    let mut a = DMatrix::zeros(rows, cols);
    let mut seen = DMatrix::from_element(rows, cols, false);
    for &(i, j, v) in triplets {
        if seen[(i, j)] {
            return Err(Error::domain(format!("entry ({i}, {j}) given twice")));
        }
        seen[(i, j)] = true;
        a[(i, j)] = v;
    }
    Ok(a)
}
