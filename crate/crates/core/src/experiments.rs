//! Grid tuning, batch runs over several problems and trajectory aggregation.
//!
//! Tuning score of a parameter assignment: for each training problem, the
//! linear NMSE averaged over iterations `t_meas..=t_max`; then the lower
//! median across problems, reported in dB. A run that diverges scores `+inf`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::denoiser::DenoiserKind;
use crate::error::{Error, Result};
use crate::forward::Problem;
use crate::image::ComplexImage;
use crate::metrics::{db_to_linear, linear_to_db, lower_median, nmse, ssim};
use crate::solvers::{solve, Recon, SolverConfig, SolverTrace, ZetaRule};

/// Environment variable capping worker threads for batch and tuning runs.
pub const THREADS_ENV: &str = "PNPRECON_THREADS";

/// One grid point: parameter names with values, in the order given.
pub type Assignment = Vec<(String, f64)>;

/// Parameter names understood by [`apply_assignment`].
pub const TUNABLE: [&str; 9] = [
    "gamma",
    "gamma2_init",
    "t_switch",
    "beta",
    "theta",
    "zeta",
    "lambda",
    "sigma",
    "probes",
];

#[derive(Clone, Debug)]
pub struct TuningSpec {
    pub grid: Vec<Assignment>,
    pub t_meas: usize,
    pub t_max: usize,
    pub images: Vec<Problem>,
}

impl TuningSpec {
    pub fn new(grid: Vec<Assignment>, images: Vec<Problem>) -> Self {
        Self {
            grid,
            t_meas: 35,
            t_max: 150,
            images,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("tuning grid is empty"));
        }
        if self.images.is_empty() {
            return Err(Error::invalid("no training problems"));
        }
        if !(1 <= self.t_meas && self.t_meas <= self.t_max) {
            return Err(Error::invalid(format!(
                "need 1 <= t_meas <= t_max, got t_meas={} t_max={}",
                self.t_meas, self.t_max
            )));
        }
        Ok(())
    }
}

/// Cartesian product of per-parameter value lists, first parameter slowest.
pub fn grid_product(params: &[(String, Vec<f64>)]) -> Vec<Assignment> {
    let mut out: Vec<Assignment> = vec![Vec::new()];
    for (name, values) in params {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut a = prefix.clone();
                    a.push((name.clone(), v));
                    a
                })
            })
            .collect();
    }
    if params.is_empty() {
        Vec::new()
    } else {
        out
    }
}

/// Returns a copy of `cfg` with the named parameters overridden.
pub fn apply_assignment(cfg: &SolverConfig, assignment: &[(String, f64)]) -> Result<SolverConfig> {
    let mut c = cfg.clone();
    for (name, v) in assignment {
        let v = *v;
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!(
                    "{name} must be a non-negative integer, got {v}"
                )))
            }
        };
        match name.as_str() {
            "gamma" => c.admm_gamma = v,
            "gamma2_init" => c.vamp_gamma2_init = v,
            "t_switch" => c.t_switch = as_count(v)?,
            "beta" => c.amp_beta = Some(v),
            "theta" => c.vamp_theta = v,
            "zeta" => c.vamp_zeta_rule = ZetaRule::Fixed(v),
            "probes" => c.probes = as_count(v)?,
            "lambda" => match &mut c.denoiser.kind {
                DenoiserKind::WaveletSoft { lambda }
                | DenoiserKind::WaveletProx { lambda }
                | DenoiserKind::SoftThreshold { lambda } => *lambda = v,
                other => return Err(Error::invalid(format!("denoiser {other:?} has no lambda"))),
            },
            "sigma" => match &mut c.denoiser.kind {
                DenoiserKind::GaussianSmooth { sigma } => *sigma = v,
                other => return Err(Error::invalid(format!("denoiser {other:?} has no sigma"))),
            },
            other => {
                return Err(Error::invalid(format!(
                    "unknown tuning parameter `{other}` (expected one of {})",
                    TUNABLE.join(", ")
                )))
            }
        }
    }
    c.validate()?;
    Ok(c)
}

/// Mean linear NMSE over iterations `t_meas..=t_max` (1-based) of a
/// completed trace; `None` if the trace has no NMSE there.
pub fn mean_linear_nmse(trace: &SolverTrace, t_meas: usize, t_max: usize) -> Option<f64> {
    let vals: Vec<f64> = trace
        .records
        .iter()
        .filter(|r| r.iteration >= t_meas && r.iteration <= t_max)
        .filter_map(|r| r.nmse_db.map(db_to_linear))
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TuningRow {
    pub assignment: Assignment,
    /// Per-problem score in linear scale; `+inf` for divergent runs.
    pub per_image: Vec<f64>,
    pub score_db: f64,
    pub n_diverged: usize,
}

#[derive(Clone, Debug)]
pub struct TuningReport {
    pub rows: Vec<TuningRow>,
    pub best: usize,
    pub t_meas: usize,
    pub t_max: usize,
}

impl TuningReport {
    pub fn best_row(&self) -> &TuningRow {
        &self.rows[self.best]
    }

    pub fn best_assignment(&self) -> &Assignment {
        &self.best_row().assignment
    }

    /// Grid columns, then `score_db`, `n_diverged` and `selected` (0/1).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let names: Vec<&str> = self.rows[0].assignment.iter().map(|(n, _)| n.as_str()).collect();
        let mut header: Vec<&str> = names.clone();
        header.extend(["score_db", "n_diverged", "selected"]);
        out.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = row.assignment.iter().map(|(_, v)| v.to_string()).collect();
            rec.push(row.score_db.to_string());
            rec.push(row.n_diverged.to_string());
            rec.push(u8::from(i == self.best).to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Runs `f` on a pool capped by `PNPRECON_THREADS` when it is set.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got `{s}`")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Grid search: every assignment is run on every problem for `t_max`
/// iterations. Ties go to the earliest grid point.
pub fn tune(spec: &TuningSpec, template: &SolverConfig) -> Result<TuningReport> {
    spec.validate()?;
    if spec.images.iter().any(|p| p.x0.is_none()) {
        return Err(Error::invalid("tuning needs ground truth for every problem"));
    }
    let configs = spec
        .grid
        .iter()
        .map(|a| {
            let mut c = apply_assignment(template, a)?;
            c.max_iters = spec.t_max;
            c.keep_iterates = false;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_img = spec.images.len();
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|g| (0..n_img).map(move |i| (g, i)))
        .collect();
    let scores: Vec<Result<f64>> = with_thread_pool(|| {
        jobs.par_iter()
            .map(|&(g, i)| match solve(&spec.images[i], &configs[g]) {
                Ok(r) => Ok(mean_linear_nmse(&r.trace, spec.t_meas, spec.t_max).unwrap_or(f64::INFINITY)),
                Err(Error::Diverged(_)) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            })
            .collect()
    })?;

    let mut rows = Vec::with_capacity(configs.len());
    let mut it = scores.into_iter();
    for a in &spec.grid {
        let per_image = (0..n_img)
            .map(|_| it.next().expect("one score per job"))
            .collect::<Result<Vec<_>>>()?;
        let n_diverged = per_image.iter().filter(|s| s.is_infinite()).count();
        let med = lower_median(&per_image).expect("non-empty");
        let score_db = if med.is_finite() {
            linear_to_db(med)
        } else {
            f64::INFINITY
        };
        rows.push(TuningRow {
            assignment: a.clone(),
            per_image,
            score_db,
            n_diverged,
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.score_db < rows[best].score_db {
            best = i;
        }
    }
    if !rows[best].score_db.is_finite() {
        return Err(Error::AllDiverged);
    }
    Ok(TuningReport {
        rows,
        best,
        t_meas: spec.t_meas,
        t_max: spec.t_max,
    })
}

#[derive(Clone, Debug)]
pub enum RunStatus {
    Completed,
    Diverged { iteration: usize, reason: String },
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Full trace for completed runs, the partial one otherwise.
    pub trace: SolverTrace,
    pub estimate: Option<ComplexImage>,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        matches!(self.status, RunStatus::Completed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub iteration: usize,
    pub median_nmse_db: f64,
    /// Runs that reached this iteration.
    pub n_alive: usize,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub runs: Vec<RunOutcome>,
    pub aggregate: Vec<AggregateRow>,
    pub n_diverged: usize,
}

impl BatchResult {
    pub fn write_aggregate_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "median_nmse_db", "n_alive"])?;
        for r in &self.aggregate {
            out.write_record([
                r.iteration.to_string(),
                r.median_nmse_db.to_string(),
                r.n_alive.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn outcome(res: Result<Recon>) -> RunOutcome {
    match res {
        Ok(r) => RunOutcome {
            status: RunStatus::Completed,
            trace: r.trace,
            estimate: Some(r.estimate),
        },
        Err(Error::Diverged(d)) => RunOutcome {
            status: RunStatus::Diverged {
                iteration: d.iteration,
                reason: d.reason,
            },
            trace: d.trace,
            estimate: d.last_estimate,
        },
        Err(e) => RunOutcome {
            status: RunStatus::Failed(e.to_string()),
            trace: SolverTrace::default(),
            estimate: None,
        },
    }
}

/// Per-iteration lower median of NMSE over the runs that reached that
/// iteration.
pub fn aggregate_traces(traces: &[&SolverTrace]) -> Vec<AggregateRow> {
    let longest = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    (0..longest)
        .filter_map(|k| {
            let vals: Vec<f64> = traces
                .iter()
                .filter_map(|t| t.records.get(k).and_then(|r| r.nmse_db))
                .collect();
            let alive = traces.iter().filter(|t| t.records.len() > k).count();
            lower_median(&vals).map(|m| AggregateRow {
                iteration: k + 1,
                median_nmse_db: m,
                n_alive: alive,
            })
        })
        .collect()
}

/// Runs `cfg` on every problem in parallel. Failing runs are reported in
/// their [`RunOutcome`] and do not stop the others.
pub fn batch_run(problems: &[Problem], cfg: &SolverConfig) -> Result<BatchResult> {
    cfg.validate()?;
    let runs: Vec<RunOutcome> =
        with_thread_pool(|| problems.par_iter().map(|p| outcome(solve(p, &cfg.clone()))).collect())?;
    let traces: Vec<&SolverTrace> = runs.iter().map(|r| &r.trace).collect();
    let aggregate = aggregate_traces(&traces);
    let n_diverged = runs
        .iter()
        .filter(|r| matches!(r.status, RunStatus::Diverged { .. }))
        .count();
    Ok(BatchResult {
        runs,
        aggregate,
        n_diverged,
    })
}

#[derive(Clone, Debug)]
pub struct MetricReport {
    /// Lower medians over the images.
    pub nmse_db: f64,
    pub ssim: f64,
    /// `(nmse_db, ssim)` per image.
    pub per_image: Vec<(f64, f64)>,
}

pub fn evaluate(estimates: &[ComplexImage], truths: &[ComplexImage]) -> Result<MetricReport> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::invalid("need matching, non-empty estimate and truth lists"));
    }
    let per_image = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| Ok((nmse(e, t)?, ssim(e, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let n: Vec<f64> = per_image.iter().map(|p| p.0).collect();
    let s: Vec<f64> = per_image.iter().map(|p| p.1).collect();
    Ok(MetricReport {
        nmse_db: lower_median(&n).expect("non-empty"),
        ssim: lower_median(&s).expect("non-empty"),
        per_image,
    })
}
