//! Estimates `<f, phi>` for f = 1 on the square and the pacman. Prints the
//! Aitken extrapolation of uniform solves and the last Galerkin energies of
//! an adaptive run. The adaptive energies converge much faster and are the
//! ones frozen in the library.
//!
//! ```text
//! cargo run --release --example reference_energy -- [p] [levels] [max_dofs]
//! ```

use std::sync::Arc;

use igabem::bem::{assemble, solve, ProblemData, QuadConfig, Quadrature, Rhs};
use igabem::driver::{run_observed, RunConfig};
use igabem::geometry::{GeometryKind, ParamCurve};
use igabem::mesh::KnotMesh;

fn energy(mesh: &KnotMesh, problem: &ProblemData, quad: &Quadrature) -> igabem::Result<f64> {
    let system = assemble(mesh, problem, quad)?;
    let x = solve(&system)?;
    Ok(system.load.iter().zip(&x).map(|(b, x)| b * x).sum())
}

fn aitken(e0: f64, e1: f64, e2: f64) -> f64 {
    let d1 = e1 - e0;
    let d2 = e2 - e1;
    if d2 == d1 {
        e2
    } else {
        e2 - d2 * d2 / (d2 - d1)
    }
}

fn main() -> igabem::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let p = args.first().copied().unwrap_or(1);
    let levels = args.get(1).copied().unwrap_or(8);
    let quad = Quadrature::new(QuadConfig { n: 20, log_n: 20 })?;
    for kind in [GeometryKind::Square, GeometryKind::Pacman] {
        let problem = ProblemData::builtin(kind, Rhs::One);
        let mut mesh = KnotMesh::uniform(Arc::new(ParamCurve::builtin(kind)), p, 4)?;
        let mut seq = Vec::new();
        for _ in 0..levels {
            seq.push(energy(&mesh, &problem, &quad)?);
            let n = seq.len();
            let extrapolated = if n >= 3 {
                format!("{:.15}", aitken(seq[n - 3], seq[n - 2], seq[n - 1]))
            } else {
                String::from("-")
            };
            println!(
                "{} dofs={} energy={:.15} aitken={}",
                kind,
                mesh.dofs(),
                seq[n - 1],
                extrapolated
            );
            mesh = mesh.refine_uniform()?;
        }
        let config = RunConfig {
            geometry: kind,
            p,
            max_dofs: args.get(2).copied().unwrap_or(3000),
            quad: quad.config(),
            timing: false,
            ..RunConfig::default()
        };
        let mut adaptive = Vec::new();
        run_observed(&config, |level| {
            let e: f64 = level
                .system
                .load
                .iter()
                .zip(level.coeffs)
                .map(|(b, x)| b * x)
                .sum();
            adaptive.push((level.record.dofs, e, level.record.mu));
            Ok(())
        })?;
        for (dofs, e, mu) in adaptive.iter().rev().take(4).rev() {
            println!("{kind} adaptive dofs={dofs} energy={e:.15} mu={mu:e}");
        }
    }
    Ok(())
}
