//! NMSE-versus-iteration comparison of PnP-ADMM, damped DD-VAMP, undamped
//! D-VAMP and DD-VAMP++ on one Cartesian problem.
//!
//! `cargo run --release --example vamp_comparison -- traces.csv` also writes
//! the curves as CSV (iteration, then one column per algorithm).

use pnprecon::denoiser::DenoiserHandle;
use pnprecon::forward::Problem;
use pnprecon::mask::make_cartesian_mask;
use pnprecon::phantom::{make_phantom, PhantomKind};
use pnprecon::solvers::{solve, Algorithm, SolverConfig, ZetaRule};
use pnprecon::Error;

fn main() -> pnprecon::Result<()> {
    let shape = (64, 64);
    let x0 = make_phantom(shape, &PhantomKind::Blocks { seed: 5 })?;
    let prob = Problem::simulate(x0, make_cartesian_mask(shape, 4.0, 0.08, 105)?, 40.0, 205)?;
    let base = SolverConfig::new(Algorithm::Admm, DenoiserHandle::wavelet_soft(1.0));

    let mut admm = base.clone();
    admm.admm_gamma = 1e4;
    let mut vamp = base.clone();
    vamp.algorithm = Algorithm::DdVamp;
    vamp.vamp_gamma2_init = 10.0;
    let mut undamped = vamp.clone();
    undamped.vamp_theta = 1.0;
    undamped.vamp_zeta_rule = ZetaRule::Fixed(1.0);
    let mut pp = base.clone();
    pp.algorithm = Algorithm::DdVampPp;
    pp.admm_gamma = 1e4;
    pp.t_switch = 10;

    let runs = [
        ("admm", admm),
        ("dd_vamp", vamp),
        ("undamped", undamped),
        ("dd_vamp_pp", pp),
    ];
    let mut curves = Vec::new();
    for (name, cfg) in runs {
        let trace = match solve(&prob, &cfg) {
            Ok(r) => {
                let v = r.trace.final_nmse_db().unwrap_or(f64::NAN);
                println!("{name:>10}: final NMSE {v:.2} dB");
                r.trace
            }
            Err(Error::Diverged(d)) => {
                println!("{name:>10}: {d}");
                d.trace
            }
            Err(e) => return Err(e),
        };
        curves.push((name, trace.nmse_db()));
    }

    if let Some(path) = std::env::args().nth(1) {
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["iteration"];
        header.extend(curves.iter().map(|(n, _)| *n));
        w.write_record(&header)?;
        for t in 0..base.max_iters {
            let mut row = vec![(t + 1).to_string()];
            row.extend(
                curves
                    .iter()
                    .map(|(_, c)| c.get(t).copied().flatten().map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        println!("wrote {path}");
    }
    Ok(())
}
