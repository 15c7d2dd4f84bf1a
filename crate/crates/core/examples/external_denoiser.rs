//! Out-of-process denoising: a server thread answers requests on a Unix
//! socket and DD-VAMP talks to it through the external-denoiser client.
//! The binary protocol moves f64 planes exactly, so the reconstruction
//! matches the in-process run bit for bit.
//!
//! The same server is available as `pnprecon serve --socket <path>`, or over
//! stdin/stdout when spawned by `--endpoint "pnprecon serve"`.

#[cfg(unix)]
fn main() -> pnprecon::Result<()> {
    use std::os::unix::net::UnixListener;
    use std::time::Duration;

    use pnprecon::denoiser::{DenoiserHandle, DenoiserKind};
    use pnprecon::external::{serve, Endpoint, ExternalDenoiser};
    use pnprecon::forward::Problem;
    use pnprecon::mask::make_cartesian_mask;
    use pnprecon::phantom::{make_phantom, PhantomKind};
    use pnprecon::solvers::{solve, Algorithm, SolverConfig};

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("denoiser.sock");
    let listener = UnixListener::bind(&path)?;
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let reader = stream.try_clone().expect("socket clone");
            let _ = serve(reader, stream, &DenoiserHandle::wavelet_soft(1.0), 1 << 20);
        }
    });

    let shape = (64, 64);
    let x0 = make_phantom(shape, &PhantomKind::SheppLogan)?;
    let prob = Problem::simulate(x0, make_cartesian_mask(shape, 4.0, 0.08, 1)?, 40.0, 2)?;

    let mut local = SolverConfig::new(Algorithm::DdVamp, DenoiserHandle::wavelet_soft(1.0));
    local.max_iters = 30;
    let mut remote = local.clone();
    let client = ExternalDenoiser::new(Endpoint::Socket(path), Duration::from_secs(10));
    remote.denoiser = DenoiserHandle::new(DenoiserKind::External(client));

    let a = solve(&prob, &local)?;
    let b = solve(&prob, &remote)?;
    println!(
        "in-process {:.3} dB, over the socket {:.3} dB, {} denoiser calls, identical: {}",
        a.trace.final_nmse_db().unwrap(),
        b.trace.final_nmse_db().unwrap(),
        b.trace.total_denoiser_calls(),
        a.estimate == b.estimate
    );
    Ok(())
}

#[cfg(not(unix))]
fn main() {
    eprintln!("this example needs Unix sockets");
}
