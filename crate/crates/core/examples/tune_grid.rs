//! Grid tuning: every grid point runs on every training problem, is scored
//! by the mean NMSE over a late iteration window, and the median over
//! problems picks the winner. `PNPRECON_THREADS` caps the worker count.

use pnprecon::denoiser::DenoiserHandle;
use pnprecon::experiments::{grid_product, tune, TuningSpec};
use pnprecon::forward::Problem;
use pnprecon::mask::make_cartesian_mask;
use pnprecon::phantom::{make_phantom, PhantomKind};
use pnprecon::solvers::{Algorithm, SolverConfig};

fn main() -> pnprecon::Result<()> {
    let shape = (64, 64);
    let mut problems = Vec::new();
    for k in 0..4u64 {
        let x0 = make_phantom(shape, &PhantomKind::Blocks { seed: k + 1 })?;
        problems.push(Problem::simulate(
            x0,
            make_cartesian_mask(shape, 4.0, 0.08, 100 + k)?,
            40.0,
            200 + k,
        )?);
    }
    let grid = grid_product(&[
        ("gamma".into(), vec![10.0, 100.0, 1e3, 1e4]),
        ("t_switch".into(), vec![0.0, 10.0]),
    ]);
    let mut spec = TuningSpec::new(grid, problems);
    spec.t_meas = 20;
    spec.t_max = 60;
    let template = SolverConfig::new(Algorithm::DdVampPp, DenoiserHandle::wavelet_soft(1.0));
    let report = tune(&spec, &template)?;

    for (i, row) in report.rows.iter().enumerate() {
        let params: Vec<String> = row.assignment.iter().map(|(n, v)| format!("{n}={v}")).collect();
        let mark = if i == report.best { "  <- selected" } else { "" };
        println!(
            "{:<24} score {:7.2} dB, diverged {}{mark}",
            params.join(" "),
            row.score_db,
            row.n_diverged
        );
    }
    report.write_csv(std::io::stdout())?;
    Ok(())
}
