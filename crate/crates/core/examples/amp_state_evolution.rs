//! AMP on a dense i.i.d. Gaussian operator with a sparse signal.
//!
//! For this operator the effective noise at the denoiser input is close to
//! white Gaussian with variance `tau`, so the `tau` column tracks the actual
//! input error. Run with `cargo run --release --example amp_state_evolution`.

use num_complex::Complex64;
use pnprecon::denoiser::{DenoiserHandle, ProbeKind};
use pnprecon::forward::{DenseMatrix, ForwardOperator, Problem};
use pnprecon::image::ComplexImage;
use pnprecon::solvers::{solve, Algorithm, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> pnprecon::Result<()> {
    let (side, m) = (32, 512);
    let noise_var: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // Bernoulli-Gaussian signal, 10% nonzero
    let x0 = ComplexImage::from_fn(side, side, |_, _| {
        if rng.random::<f64>() < 0.1 {
            Complex64::new(rng.sample(StandardNormal), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let a = DenseMatrix::gaussian(m, (side, side), 12);
    // everything real, so the divergence is taken along the real axis
    let s = noise_var.sqrt();
    let y: Vec<Complex64> = a
        .apply(x0.data())
        .into_iter()
        .map(|v| v + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let prob = Problem::new(ForwardOperator::Dense(a), y, 1.0 / noise_var)?.with_ground_truth(x0)?;

    let mut cfg = SolverConfig::new(Algorithm::Amp, DenoiserHandle::soft_threshold(1.5));
    cfg.max_iters = 20;
    cfg.probe_kind = ProbeKind::Real;
    let rec = solve(&prob, &cfg)?;
    println!(
        "{:>4} {:>12} {:>12} {:>9} {:>10}",
        "t", "tau", "input mse", "ratio", "nmse dB"
    );
    for r in &rec.trace.records {
        let (tau, mse) = (r.tau.unwrap(), r.input_mse.unwrap());
        println!(
            "{:>4} {:>12.4e} {:>12.4e} {:>9.3} {:>10.2}",
            r.iteration,
            tau,
            mse,
            tau / mse,
            r.nmse_db.unwrap()
        );
    }
    Ok(())
}
