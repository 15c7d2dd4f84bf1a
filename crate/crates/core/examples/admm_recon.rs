//! PnP-ADMM and ADMM-PR on an undersampled Cartesian acquisition, plus
//! classical l1-wavelet ADMM (the `wavelet_prox` denoiser is the exact prox).

use pnprecon::denoiser::DenoiserHandle;
use pnprecon::forward::Problem;
use pnprecon::mask::make_cartesian_mask;
use pnprecon::metrics::{nmse, ssim};
use pnprecon::phantom::{make_phantom, PhantomKind};
use pnprecon::solvers::{solve, Algorithm, SolverConfig};

fn main() -> pnprecon::Result<()> {
    let shape = (128, 128);
    let x0 = make_phantom(shape, &PhantomKind::SheppLogan)?;
    let mask = make_cartesian_mask(shape, 4.0, 0.08, 3)?;
    let prob = Problem::simulate(x0.clone(), mask, 40.0, 4)?;
    println!("zero-filled: NMSE {:.2} dB", nmse(&prob.zero_filled()?, &x0)?);

    let runs = [
        ("PnP-ADMM", Algorithm::Admm, DenoiserHandle::wavelet_soft(1.0), 1e3),
        ("PnP-ADMM-PR", Algorithm::AdmmPr, DenoiserHandle::wavelet_soft(1.0), 1e3),
        (
            "l1-wavelet ADMM",
            Algorithm::Admm,
            DenoiserHandle::wavelet_prox(0.02 * prob.gamma_w),
            0.05 * prob.gamma_w,
        ),
    ];
    for (name, alg, den, gamma) in runs {
        let mut cfg = SolverConfig::new(alg, den);
        cfg.admm_gamma = gamma;
        cfg.max_iters = 100;
        let rec = solve(&prob, &cfg)?;
        let every: Vec<String> = rec
            .trace
            .records
            .iter()
            .filter(|r| r.iteration % 20 == 0)
            .map(|r| format!("{:.2}", r.nmse_db.unwrap()))
            .collect();
        println!(
            "{name:>16}: NMSE at 20,40,..: [{}] dB, final SSIM {:.3}",
            every.join(", "),
            ssim(&rec.estimate, &x0)?
        );
    }
    Ok(())
}
