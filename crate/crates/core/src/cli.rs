//! The `pnprecon` command line.
//!
//! Every subcommand reads its settings from, in increasing priority,
//! built-in defaults, an optional `--config` file and command-line flags.
//! The resolved settings are written to `manifest.txt` in the output
//! directory before any work starts; passing that manifest back through
//! `--config` repeats the run. Manifest lines whose key starts with `info.`
//! are provenance and results, and are ignored on input.
//!
//! Exit codes: 0 success, 2 usage error, 3 solver divergence, 4 I/O error.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::config::KeyValues;
use crate::denoiser::{ComplexPolicy, Denoiser, DenoiserHandle, DenoiserKind, ProbeKind};
use crate::error::{Error, Result};
use crate::experiments::{batch_run, grid_product, tune, RunStatus, TuningSpec};
use crate::external::{self, Endpoint, ExternalDenoiser};
use crate::forward::{KSpaceVector, Problem};
use crate::image::ComplexImage;
use crate::mask::{make_cartesian_mask, make_point_mask, MaskKind, SamplingMask};
use crate::phantom::{make_phantom, PhantomKind};
use crate::solvers::{solve, Algorithm, SolverConfig, ZetaRule};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_IO: u8 = 4;

pub const MANIFEST: &str = "manifest.txt";
pub const PHANTOM_FILE: &str = "phantom.cplx";
pub const MASK_FILE: &str = "mask.txt";
pub const KSPACE_FILE: &str = "kspace.cplx";
pub const ESTIMATE_FILE: &str = "estimate.cplx";
pub const ESTIMATE_PGM: &str = "estimate.pgm";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "tune_report.csv";
pub const SELECTED_FILE: &str = "selected.conf";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const RUNS_FILE: &str = "runs.csv";

const VERSION: &str = env!("CARGO_PKG_VERSION");
const INFO_PREFIX: &str = "info.";
const GRID_PREFIX: &str = "grid.";

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) => EXIT_USAGE,
        Error::Diverged(_) | Error::AllDiverged | Error::NonFinite(_) | Error::CgNotConverged { .. } => EXIT_DIVERGED,
        Error::Io(_)
        | Error::Format(_)
        | Error::ShapeMismatch { .. }
        | Error::EndpointUnreachable(_)
        | Error::Timeout(_)
        | Error::Protocol(_)
        | Error::Server(_) => EXIT_IO,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pnprecon",
    version,
    about = "Plug-and-play compressed-sensing MRI reconstruction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom, a sampling mask and noisy k-space measurements.
    Simulate(SimulateArgs),
    /// Reconstruct one simulated problem.
    Recon(ReconArgs),
    /// Grid-search solver parameters over a set of problems.
    Tune(TuneArgs),
    /// Run one configuration over a set of problems.
    Batch(BatchArgs),
    /// Answer denoise requests over stdin/stdout or a Unix socket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// shepp_logan, blocks[:seed] or file:<path>
    #[arg(long)]
    pub phantom: Option<String>,
    #[arg(long)]
    pub size: Option<usize>,
    /// cartesian, point or full
    #[arg(long)]
    pub mask: Option<String>,
    /// Acceleration N/M.
    #[arg(long = "R", alias = "r")]
    pub acceleration: Option<f64>,
    #[arg(long)]
    pub center_fraction: Option<f64>,
    #[arg(long)]
    pub poly_degree: Option<f64>,
    /// Measurement SNR in dB; `inf` for noiseless data.
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct SolverArgs {
    /// amp, damp, admm, admm_pr, dd_vamp or dd_vamp_pp
    #[arg(long)]
    pub alg: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// ADMM stepsize and DD-VAMP++ warm-up precision.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub gamma2_init: Option<f64>,
    #[arg(long)]
    pub t_switch: Option<usize>,
    /// AMP step scaling, or `auto`.
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// `adaptive` or a fixed value in (0, 1].
    #[arg(long)]
    pub zeta: Option<String>,
    #[arg(long)]
    pub probes: Option<usize>,
    /// Finite-difference step, or `auto`.
    #[arg(long)]
    pub epsilon: Option<String>,
    /// circular or real
    #[arg(long)]
    pub probe_kind: Option<String>,
    /// wavelet_soft, wavelet_prox, soft_threshold, gaussian_smooth, identity or external
    #[arg(long)]
    pub denoiser: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// External denoiser: a command line, or `unix:<path>`.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// External denoiser timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// split_re_im or magnitude_phase
    #[arg(long)]
    pub complex_policy: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pr_extra_update: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by `simulate`.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the noise precision recorded with the problem.
    #[arg(long)]
    pub gamma_w: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training problem directory; repeat for several.
    #[arg(long = "problem")]
    pub problems: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parameter name; pair each with a `--grid`.
    #[arg(long = "param")]
    pub params: Vec<String>,
    /// Comma-separated values for the matching `--param`.
    #[arg(long = "grid")]
    pub grids: Vec<String>,
    #[arg(long)]
    pub t_meas: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "problem")]
    pub problems: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// wavelet_soft, wavelet_prox, soft_threshold, gaussian_smooth or identity
    #[arg(long)]
    pub denoiser: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub complex_policy: Option<String>,
    /// Listen on this Unix socket instead of stdin/stdout.
    #[arg(long)]
    pub socket: Option<PathBuf>,
    #[arg(long)]
    pub max_pixels: Option<usize>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("pnprecon: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Recon(a) => cmd_recon(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn put<T: Display>(kv: &mut KeyValues, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        kv.set(key, v);
    }
}

impl SolverArgs {
    fn overrides(&self, kv: &mut KeyValues) {
        put(kv, "alg", &self.alg);
        put(kv, "iters", &self.iters);
        put(kv, "gamma", &self.gamma);
        put(kv, "gamma2_init", &self.gamma2_init);
        put(kv, "t_switch", &self.t_switch);
        put(kv, "beta", &self.beta);
        put(kv, "theta", &self.theta);
        put(kv, "zeta", &self.zeta);
        put(kv, "probes", &self.probes);
        put(kv, "epsilon", &self.epsilon);
        put(kv, "probe_kind", &self.probe_kind);
        put(kv, "denoiser", &self.denoiser);
        put(kv, "lambda", &self.lambda);
        put(kv, "sigma", &self.sigma);
        put(kv, "endpoint", &self.endpoint);
        put(kv, "timeout", &self.timeout);
        put(kv, "complex_policy", &self.complex_policy);
        put(kv, "seed", &self.seed);
        put(kv, "pr_extra_update", &self.pr_extra_update);
    }
}

/// Loads the config file (if any) and lays the flag values over it.
fn gather(command: &str, config: &Option<PathBuf>, flags: KeyValues) -> Result<KeyValues> {
    let mut kv = match config {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::new(),
    };
    if let Some(c) = kv.get("info.command") {
        if c != command {
            return Err(Error::invalid(format!("config was written by `{c}`, not `{command}`")));
        }
    }
    kv.merge(&flags);
    Ok(kv)
}

/// Reads typed settings with defaults and records what was resolved.
struct Resolver<'a> {
    given: &'a KeyValues,
    resolved: KeyValues,
}

impl<'a> Resolver<'a> {
    fn new(given: &'a KeyValues) -> Self {
        Self {
            given,
            resolved: KeyValues::new(),
        }
    }

    fn optional<T: FromStr + Display>(&mut self, key: &str) -> Result<Option<T>> {
        let v = self.given.parse_value::<T>(key)?;
        put(&mut self.resolved, key, &v);
        Ok(v)
    }

    fn value<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T> {
        let v = self.given.parse_value::<T>(key)?.unwrap_or(default);
        self.resolved.set(key, &v);
        Ok(v)
    }

    fn required<T: FromStr + Display>(&mut self, key: &str) -> Result<T> {
        self.optional(key)?
            .ok_or_else(|| Error::invalid(format!("missing required setting `{key}`")))
    }

    /// `auto` (the default) maps to `None`.
    fn auto_f64(&mut self, key: &str) -> Result<Option<f64>> {
        let s: String = self.value(key, "auto".to_owned())?;
        if s == "auto" {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::invalid(format!("`{key}` must be `auto` or a number, got `{s}`")))
        }
    }

    /// Rejects keys that were given but never read.
    fn finish(self) -> Result<KeyValues> {
        for key in self.given.keys() {
            let known =
                key.starts_with(INFO_PREFIX) || key.starts_with(GRID_PREFIX) || self.resolved.get(key).is_some();
            if !known {
                return Err(Error::invalid(format!("unknown setting `{key}`")));
            }
        }
        Ok(self.resolved)
    }
}

fn denoiser_from(r: &mut Resolver, allow_external: bool) -> Result<DenoiserHandle> {
    let kind: String = r.value("denoiser", "wavelet_soft".to_owned())?;
    let lambda: f64 = r.value("lambda", 1.0)?;
    let sigma: f64 = r.value("sigma", 1.0)?;
    let policy: ComplexPolicy = r.value("complex_policy", ComplexPolicy::SplitReIm)?;
    let handle = match kind.as_str() {
        "wavelet_soft" => DenoiserHandle::wavelet_soft(lambda),
        "wavelet_prox" => DenoiserHandle::wavelet_prox(lambda),
        "soft_threshold" => DenoiserHandle::soft_threshold(lambda),
        "gaussian_smooth" => DenoiserHandle::gaussian_smooth(sigma),
        "identity" => DenoiserHandle::identity(),
        "external" if allow_external => {
            let endpoint: String = r.required("endpoint")?;
            let secs: f64 = r.value("timeout", external::DEFAULT_TIMEOUT.as_secs_f64())?;
            let timeout =
                Duration::try_from_secs_f64(secs).map_err(|_| Error::invalid(format!("bad timeout {secs}")))?;
            DenoiserHandle::new(DenoiserKind::External(ExternalDenoiser::new(
                endpoint.parse::<Endpoint>()?,
                timeout,
            )))
        }
        other => return Err(Error::invalid(format!("unknown denoiser `{other}`"))),
    };
    Ok(handle.with_policy(policy))
}

fn solver_from(r: &mut Resolver) -> Result<SolverConfig> {
    let algorithm: Algorithm = r.value("alg", Algorithm::DdVampPp)?;
    let denoiser = denoiser_from(r, true)?;
    let mut cfg = SolverConfig::new(algorithm, denoiser);
    cfg.max_iters = r.value("iters", cfg.max_iters)?;
    cfg.admm_gamma = r.value("gamma", cfg.admm_gamma)?;
    cfg.vamp_gamma2_init = r.value("gamma2_init", cfg.vamp_gamma2_init)?;
    cfg.t_switch = r.value("t_switch", cfg.t_switch)?;
    cfg.amp_beta = r.auto_f64("beta")?;
    cfg.vamp_theta = r.value("theta", cfg.vamp_theta)?;
    cfg.vamp_zeta_rule = r.value("zeta", ZetaRule::Adaptive)?;
    cfg.probes = r.value("probes", cfg.probes)?;
    cfg.epsilon = r.auto_f64("epsilon")?;
    cfg.probe_kind = r.value("probe_kind", ProbeKind::Circular)?;
    cfg.seed = r.value("seed", cfg.seed)?;
    cfg.pr_extra_update = r.value("pr_extra_update", cfg.pr_extra_update)?;
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn header(manifest: &mut KeyValues, command: &str, config: &Option<PathBuf>) {
    manifest.set("info.command", command);
    manifest.set("info.version", VERSION);
    if let Some(c) = config {
        manifest.set("info.config", c.display());
    }
}

/// Writes the phantom, mask and zero-filled k-space grid of a simulated problem.
pub fn write_problem(dir: &Path, prob: &Problem) -> Result<()> {
    let y = prob
        .kspace()
        .ok_or_else(|| Error::invalid("only masked Fourier problems can be written"))?;
    if let Some(x0) = &prob.x0 {
        x0.write_cplx(dir.join(PHANTOM_FILE))?;
    }
    y.mask().write(dir.join(MASK_FILE))?;
    y.to_grid().write_cplx(dir.join(KSPACE_FILE))?;
    Ok(())
}

/// Reads a problem directory written by `simulate`. The phantom, when
/// present, becomes the ground truth for NMSE reporting.
pub fn load_problem(dir: &Path, gamma_w: Option<f64>) -> Result<(Problem, KeyValues)> {
    let manifest = KeyValues::read(dir.join(MANIFEST))?;
    let gamma_w = match gamma_w {
        Some(g) => g,
        None => manifest
            .parse_value::<f64>("info.gamma_w")?
            .ok_or_else(|| Error::Format(format!("{}: no info.gamma_w in manifest", dir.display())))?,
    };
    let mask = SamplingMask::read(dir.join(MASK_FILE))?;
    let grid = ComplexImage::read_cplx(dir.join(KSPACE_FILE))?;
    let mut prob = Problem::masked(KSpaceVector::from_grid(&grid, &mask)?, gamma_w)?;
    let phantom = dir.join(PHANTOM_FILE);
    if phantom.exists() {
        prob = prob.with_ground_truth(ComplexImage::read_cplx(phantom)?)?;
    }
    prob.snr_db = manifest.parse_value("snr_db")?;
    Ok((prob, manifest))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut flags = KeyValues::new();
    put(&mut flags, "out", &a.out.as_ref().map(|p| p.display()));
    put(&mut flags, "phantom", &a.phantom);
    put(&mut flags, "size", &a.size);
    put(&mut flags, "mask", &a.mask);
    put(&mut flags, "R", &a.acceleration);
    put(&mut flags, "center_fraction", &a.center_fraction);
    put(&mut flags, "poly_degree", &a.poly_degree);
    put(&mut flags, "snr_db", &a.snr_db);
    put(&mut flags, "seed", &a.seed);
    let given = gather("simulate", &a.config, flags)?;

    let mut r = Resolver::new(&given);
    let out = PathBuf::from(r.required::<String>("out")?);
    let phantom_name: String = r.value("phantom", "shepp_logan".to_owned())?;
    let size: usize = r.value("size", 128)?;
    let mask_kind: MaskKind = r.value("mask", MaskKind::Cartesian)?;
    let acceleration: f64 = r.value("R", 4.0)?;
    let center_fraction: f64 = r.value("center_fraction", 0.08)?;
    let poly_degree: f64 = r.value("poly_degree", crate::mask::DEFAULT_POLY_DEGREE)?;
    let snr_db: f64 = r.value("snr_db", 40.0)?;
    let seed: u64 = r.value("seed", 0)?;
    let mut manifest = r.finish()?;
    if size == 0 {
        return Err(Error::invalid("size must be positive"));
    }
    let phantom: PhantomKind = phantom_name.parse()?;
    let (mask_seed, noise_seed) = (seed, seed.wrapping_add(1));
    header(&mut manifest, "simulate", &a.config);
    manifest.set("info.mask_seed", mask_seed);
    manifest.set("info.noise_seed", noise_seed);

    let shape = (size, size);
    let mask = match mask_kind {
        MaskKind::Cartesian => make_cartesian_mask(shape, acceleration, center_fraction, mask_seed)?,
        MaskKind::Point => make_point_mask(shape, acceleration, poly_degree, mask_seed)?,
        MaskKind::Full => SamplingMask::full(shape),
        MaskKind::Custom => return Err(Error::invalid("simulate cannot generate a custom mask")),
    };
    create_dir(&out)?;
    manifest.write(out.join(MANIFEST))?;

    let x0 = make_phantom(shape, &phantom)?;
    let prob = Problem::simulate(x0, mask, snr_db, noise_seed)?;
    write_problem(&out, &prob)?;
    manifest.set("info.gamma_w", prob.gamma_w);
    manifest.set("info.n_measurements", prob.y.len());
    manifest.write(out.join(MANIFEST))?;
    println!(
        "{}: {}x{} {} mask, {} of {} samples, gamma_w = {:e}",
        out.display(),
        size,
        size,
        mask_kind,
        prob.y.len(),
        size * size,
        prob.gamma_w
    );
    Ok(())
}

fn provenance(manifest: &mut KeyValues, problem: &KeyValues, prefix: &str) {
    for key in ["info.mask_seed", "info.noise_seed", "snr_db", "info.gamma_w"] {
        if let Some(v) = problem.get(key) {
            let name = key.trim_start_matches(INFO_PREFIX);
            manifest.set(&format!("info.{prefix}{name}"), v);
        }
    }
}

fn cmd_recon(a: &ReconArgs) -> Result<()> {
    let mut flags = KeyValues::new();
    put(&mut flags, "problem", &a.problem.as_ref().map(|p| p.display()));
    put(&mut flags, "out", &a.out.as_ref().map(|p| p.display()));
    put(&mut flags, "gamma_w", &a.gamma_w);
    a.solver.overrides(&mut flags);
    let given = gather("recon", &a.config, flags)?;

    let mut r = Resolver::new(&given);
    let problem_dir = PathBuf::from(r.required::<String>("problem")?);
    let out = PathBuf::from(r.required::<String>("out")?);
    let gamma_w: Option<f64> = r.optional("gamma_w")?;
    let cfg = solver_from(&mut r)?;
    let mut manifest = r.finish()?;
    header(&mut manifest, "recon", &a.config);

    let (prob, problem_manifest) = load_problem(&problem_dir, gamma_w)?;
    provenance(&mut manifest, &problem_manifest, "problem_");
    create_dir(&out)?;
    manifest.write(out.join(MANIFEST))?;

    let (estimate, trace, failure) = match solve(&prob, &cfg) {
        Ok(rec) => (Some(rec.estimate), rec.trace, None),
        Err(Error::Diverged(d)) => (d.last_estimate.clone(), d.trace.clone(), Some(Error::Diverged(d))),
        Err(e) => return Err(e),
    };
    trace.write_csv_file(out.join(TRACE_FILE))?;
    if let Some(x) = &estimate {
        x.write_cplx(out.join(ESTIMATE_FILE))?;
        let (lo, hi) = x.write_magnitude_pgm(out.join(ESTIMATE_PGM))?;
        manifest.set("info.pgm_min", lo);
        manifest.set("info.pgm_max", hi);
    }
    manifest.set("info.iterations", trace.len());
    if let Some(v) = trace.final_nmse_db() {
        manifest.set("info.final_nmse_db", v);
    }
    match &failure {
        None => manifest.set("info.status", "completed"),
        Some(e) => {
            manifest.set("info.status", "diverged");
            manifest.set("info.reason", e);
        }
    }
    manifest.write(out.join(MANIFEST))?;
    match failure {
        Some(e) => Err(e),
        None => {
            match trace.final_nmse_db() {
                Some(v) => println!("{}: {} iterations, final NMSE {v:.3} dB", cfg.algorithm, trace.len()),
                None => println!("{}: {} iterations", cfg.algorithm, trace.len()),
            }
            Ok(())
        }
    }
}

fn problem_list(given: &mut KeyValues, dirs: &[PathBuf]) {
    if !dirs.is_empty() {
        let joined: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
        given.set("problems", joined.join(","));
    }
}

fn load_problems(list: &str) -> Result<Vec<Problem>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|d| load_problem(Path::new(d), None).map(|(p, _)| p))
        .collect()
}

fn parse_values(name: &str, list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad value `{v}` in grid for `{name}`")))
        })
        .collect()
}

fn cmd_tune(a: &TuneArgs) -> Result<()> {
    if a.params.len() != a.grids.len() {
        return Err(Error::invalid("every --param needs exactly one --grid"));
    }
    let mut flags = KeyValues::new();
    problem_list(&mut flags, &a.problems);
    put(&mut flags, "out", &a.out.as_ref().map(|p| p.display()));
    put(&mut flags, "t_meas", &a.t_meas);
    put(&mut flags, "t_max", &a.t_max);
    for (name, list) in a.params.iter().zip(&a.grids) {
        flags.set(&format!("{GRID_PREFIX}{name}"), list);
    }
    a.solver.overrides(&mut flags);
    let given = gather("tune", &a.config, flags)?;

    let mut r = Resolver::new(&given);
    let problems: String = r.required("problems")?;
    let out = PathBuf::from(r.required::<String>("out")?);
    let t_meas: usize = r.value("t_meas", 35)?;
    let t_max: usize = r.value("t_max", 150)?;
    let template = solver_from(&mut r)?;
    let solver_keys = r.resolved.clone();
    let mut params = Vec::new();
    for (key, list) in given.iter().filter(|(k, _)| k.starts_with(GRID_PREFIX)) {
        let name = &key[GRID_PREFIX.len()..];
        params.push((name.to_owned(), parse_values(name, list)?));
        r.resolved.set(key, list);
    }
    let mut manifest = r.finish()?;
    header(&mut manifest, "tune", &a.config);

    let grid = grid_product(&params);
    let images = load_problems(&problems)?;
    let spec = TuningSpec {
        grid,
        t_meas,
        t_max,
        images,
    };
    spec.validate()?;
    create_dir(&out)?;
    manifest.write(out.join(MANIFEST))?;

    let report = tune(&spec, &template)?;
    report.write_csv_file(out.join(REPORT_FILE))?;
    let best = report.best_row();

    let mut selected = KeyValues::new();
    for (k, v) in solver_keys
        .iter()
        .filter(|(k, _)| !matches!(*k, "problems" | "out" | "t_meas" | "t_max"))
    {
        selected.set(k, v);
    }
    for (name, v) in &best.assignment {
        selected.set(name, v);
    }
    selected.write(out.join(SELECTED_FILE))?;
    manifest.set("info.best_score_db", best.score_db);
    for (name, v) in &best.assignment {
        manifest.set(&format!("info.best.{name}"), v);
    }
    manifest.write(out.join(MANIFEST))?;

    let shown: Vec<String> = best.assignment.iter().map(|(n, v)| format!("{n} = {v}")).collect();
    println!(
        "best of {} grid points: {} (score {:.3} dB, {} diverged)",
        report.rows.len(),
        shown.join(", "),
        best.score_db,
        best.n_diverged
    );
    Ok(())
}

fn cmd_batch(a: &BatchArgs) -> Result<()> {
    let mut flags = KeyValues::new();
    problem_list(&mut flags, &a.problems);
    put(&mut flags, "out", &a.out.as_ref().map(|p| p.display()));
    a.solver.overrides(&mut flags);
    let given = gather("batch", &a.config, flags)?;

    let mut r = Resolver::new(&given);
    let problems: String = r.required("problems")?;
    let out = PathBuf::from(r.required::<String>("out")?);
    let cfg = solver_from(&mut r)?;
    let mut manifest = r.finish()?;
    header(&mut manifest, "batch", &a.config);
    let images = load_problems(&problems)?;
    if images.is_empty() {
        return Err(Error::invalid("no problems given"));
    }
    create_dir(&out)?;
    manifest.write(out.join(MANIFEST))?;

    let result = batch_run(&images, &cfg)?;
    result.write_aggregate_csv(fs::File::create(out.join(AGGREGATE_FILE))?)?;
    let mut runs = csv::Writer::from_path(out.join(RUNS_FILE))?;
    runs.write_record(["problem", "status", "iterations", "final_nmse_db", "reason"])?;
    for (dir, run) in problems
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .zip(&result.runs)
    {
        let (status, reason) = match &run.status {
            RunStatus::Completed => ("completed", String::new()),
            RunStatus::Diverged { reason, .. } => ("diverged", reason.clone()),
            RunStatus::Failed(e) => ("failed", e.clone()),
        };
        let fin = run.trace.final_nmse_db().map(|v| v.to_string()).unwrap_or_default();
        runs.write_record([dir, status, &run.trace.len().to_string(), &fin, &reason])?;
    }
    runs.flush()?;
    manifest.set("info.n_diverged", result.n_diverged);
    manifest.write(out.join(MANIFEST))?;
    println!("{} runs, {} diverged", result.runs.len(), result.n_diverged);
    if result.runs.iter().all(|r| !r.completed()) {
        return Err(Error::AllDiverged);
    }
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let mut flags = KeyValues::new();
    put(&mut flags, "denoiser", &a.denoiser);
    put(&mut flags, "lambda", &a.lambda);
    put(&mut flags, "sigma", &a.sigma);
    put(&mut flags, "complex_policy", &a.complex_policy);
    put(&mut flags, "socket", &a.socket.as_ref().map(|p| p.display()));
    put(&mut flags, "max_pixels", &a.max_pixels);
    let mut given = gather("serve", &a.config, flags)?;
    if given.get("denoiser").is_none() {
        given.set("denoiser", "identity");
    }

    let mut r = Resolver::new(&given);
    let denoiser: Arc<dyn Denoiser> = Arc::new(denoiser_from(&mut r, false)?);
    let socket = r.optional::<String>("socket")?.map(PathBuf::from);
    let max_pixels: usize = r.value("max_pixels", 1 << 24)?;
    r.finish()?;

    match socket {
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            external::serve(stdin.lock(), stdout.lock(), denoiser.as_ref(), max_pixels)
        }
        Some(path) => serve_socket(&path, denoiser, max_pixels),
    }
}

#[cfg(unix)]
fn serve_socket(path: &Path, denoiser: Arc<dyn Denoiser>, max_pixels: usize) -> Result<()> {
    use std::os::unix::net::UnixListener;
    let listener = UnixListener::bind(path)?;
    eprintln!("pnprecon: serving on {}", path.display());
    for stream in listener.incoming() {
        let stream = stream?;
        let den = Arc::clone(&denoiser);
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => s,
                Err(e) => return eprintln!("pnprecon: {e}"),
            };
            if let Err(e) = external::serve(reader, stream, den.as_ref(), max_pixels) {
                eprintln!("pnprecon: session ended: {e}");
            }
        });
    }
    Ok(())
}

#[cfg(not(unix))]
fn serve_socket(_path: &Path, _denoiser: Arc<dyn Denoiser>, _max_pixels: usize) -> Result<()> {
    Err(Error::invalid("unix sockets are unavailable on this platform"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("pnprecon").chain(args.iter().copied()))
            .unwrap()
            .command
    }

    #[test]
    fn flags_override_config_values() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("run.conf");
        fs::write(&conf, "alg = admm\ngamma = 3\niters = 7\n").unwrap();
        let Command::Recon(a) = parse(&["recon", "--config", conf.to_str().unwrap(), "--gamma", "5"]) else {
            panic!()
        };
        let mut flags = KeyValues::new();
        a.solver.overrides(&mut flags);
        let given = gather("recon", &a.config, flags).unwrap();
        let mut r = Resolver::new(&given);
        let cfg = solver_from(&mut r).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Admm);
        assert_eq!(cfg.admm_gamma, 5.0);
        assert_eq!(cfg.max_iters, 7);
        assert_eq!(cfg.vamp_theta, 0.5);
        let resolved = r.finish().unwrap();
        assert_eq!(resolved.get("gamma"), Some("5"));
        assert_eq!(resolved.get("theta"), Some("0.5"));
        assert_eq!(resolved.get("beta"), Some("auto"));
    }

    #[test]
    fn unknown_settings_are_usage_errors() {
        let given = KeyValues::parse("gamma = 1\ngamam = 2\ninfo.version = x\n").unwrap();
        let mut r = Resolver::new(&given);
        solver_from(&mut r).unwrap();
        let err = r.finish().unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
        assert!(err.to_string().contains("gamam"));
    }

    #[test]
    fn manifest_from_another_command_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("manifest.txt");
        fs::write(&conf, "info.command = simulate\n").unwrap();
        assert!(gather("recon", &Some(conf), KeyValues::new()).is_err());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::invalid("x")), EXIT_USAGE);
        assert_eq!(exit_code(&Error::AllDiverged), EXIT_DIVERGED);
        assert_eq!(exit_code(&Error::Format("x".into())), EXIT_IO);
        assert_eq!(exit_code(&Error::Protocol("x".into())), EXIT_IO);
    }

    #[test]
    fn external_denoiser_needs_an_endpoint() {
        let given = KeyValues::parse("denoiser = external\n").unwrap();
        assert!(solver_from(&mut Resolver::new(&given)).is_err());
        let given = KeyValues::parse("denoiser = external\nendpoint = cat\ntimeout = 2\n").unwrap();
        let cfg = solver_from(&mut Resolver::new(&given)).unwrap();
        assert!(matches!(cfg.denoiser.kind, DenoiserKind::External(_)));
    }

    #[test]
    fn unpaired_grid_flags_are_rejected() {
        let Command::Tune(a) = parse(&["tune", "--param", "gamma", "--out", "x"]) else {
            panic!()
        };
        assert_eq!(exit_code(&cmd_tune(&a).unwrap_err()), EXIT_USAGE);
    }
}
