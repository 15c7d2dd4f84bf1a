//! Built-in denoisers and their divergence `tr{grad f}/N`: closed form
//! where it exists, random probing otherwise.

use pnprecon::denoiser::{mc_divergence, Denoiser, DenoiserHandle, LinearMap, ProbeKind, Probing};
use pnprecon::image::ComplexImage;
use pnprecon::metrics::nmse;
use pnprecon::phantom::{make_phantom, PhantomKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pnprecon::Result<()> {
    let x0 = make_phantom((64, 64), &PhantomKind::SheppLogan)?;
    let tau: f64 = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noisy = x0.add(&ComplexImage::random_normal(64, 64, &mut rng).scale(tau.sqrt()));
    println!("noisy input: NMSE {:.2} dB", nmse(&noisy, &x0)?);

    let denoisers = [
        ("wavelet_soft", DenoiserHandle::wavelet_soft(1.0)),
        ("soft_threshold", DenoiserHandle::soft_threshold(1.0)),
        ("gaussian_smooth", DenoiserHandle::gaussian_smooth(0.8)),
        ("linear 0.7 I", DenoiserHandle::linear(LinearMap::Scaled(0.7))),
    ];
    for (name, d) in &denoisers {
        let out = d.denoise(&noisy, tau)?;
        let probed = mc_divergence(d, &noisy, tau, &Probing::new(20, 3))?;
        let closed = d
            .divergence_at(&noisy, tau, ProbeKind::Circular)
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{name:>16}: NMSE {:6.2} dB, divergence probed {:.4} +- {:.4}, closed form {closed}",
            nmse(&out, &x0)?,
            probed.alpha_bar,
            probed.std_error()
        );
    }
    Ok(())
}
