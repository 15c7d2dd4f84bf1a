//! The measurement model `y = M F x0 + w` on a Shepp-Logan phantom:
//! unitary transforms, Cartesian and point masks, noise calibration and the
//! zero-filled reconstruction `A^H y`.

use pnprecon::forward::{apply_a, Problem};
use pnprecon::fourier::{dft2, idft2};
use pnprecon::mask::{make_cartesian_mask, make_point_mask};
use pnprecon::metrics::{nmse, ssim};
use pnprecon::phantom::{make_phantom, PhantomKind};

fn main() -> pnprecon::Result<()> {
    let shape = (128, 128);
    let x0 = make_phantom(shape, &PhantomKind::SheppLogan)?;

    let k = dft2(&x0);
    println!("||x0|| = {:.6}, ||F x0|| = {:.6}", x0.norm(), k.norm());
    println!("round trip error {:.2e}", idft2(&k).distance_sqr(&x0).sqrt());

    let masks = [
        ("cartesian", make_cartesian_mask(shape, 4.0, 0.08, 7)?),
        ("point", make_point_mask(shape, 4.0, 6.0, 7)?),
    ];
    for (name, mask) in masks {
        let clean = apply_a(&x0, &mask)?;
        let prob = Problem::simulate(x0.clone(), mask.clone(), 40.0, 8)?;
        let noise: f64 = prob.y.iter().zip(clean.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let snr = 10.0 * (clean.norm_sqr() / noise).log10();
        let zf = prob.zero_filled()?;
        println!(
            "{name:>9}: M = {:5} (R = {:.2}), realized SNR {snr:.2} dB, gamma_w = {:.3e}, zero-filled NMSE {:.2} dB, SSIM {:.3}",
            mask.n_kept(),
            mask.acceleration(),
            prob.gamma_w,
            nmse(&zf, &x0)?,
            ssim(&zf, &x0)?
        );
    }
    Ok(())
}
