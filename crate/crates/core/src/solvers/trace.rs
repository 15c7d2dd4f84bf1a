use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::image::ComplexImage;

pub const TRACE_CSV_HEADER: [&str; 11] = [
    "iteration",
    "nmse_db",
    "gamma1",
    "gamma2",
    "alpha1",
    "alpha2",
    "zeta",
    "tau",
    "seconds",
    "denoiser_calls",
    "event",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    /// First DD-VAMP++ iteration with free-running precisions.
    Switch,
}

/// One completed iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceRecord {
    /// 1-based.
    pub iteration: usize,
    pub nmse_db: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub zeta: Option<f64>,
    /// `2 min(alpha1, alpha2)`, kept next to the precision-ratio damping
    /// factor for comparison only.
    pub zeta_alpha_form: Option<f64>,
    pub tau: Option<f64>,
    /// Mean squared error per pixel of the denoiser input against the
    /// ground truth: the effective noise variance `tau` is meant to track.
    pub input_mse: Option<f64>,
    /// Wall time since the start of the run.
    pub seconds: f64,
    pub denoiser_calls: usize,
    /// A sensitivity had to be clamped into `(0, 1)` this iteration.
    pub alpha_clamped: bool,
    pub event: Option<TraceEvent>,
    pub estimate: Option<ComplexImage>,
}

impl TraceRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_values(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.seconds = other.seconds;
        a == *other
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn final_nmse_db(&self) -> Option<f64> {
        self.last().and_then(|r| r.nmse_db)
    }

    pub fn nmse_db(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.nmse_db).collect()
    }

    pub fn switch_iteration(&self) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.event == Some(TraceEvent::Switch))
            .map(|r| r.iteration)
    }

    pub fn total_denoiser_calls(&self) -> usize {
        self.records.iter().map(|r| r.denoiser_calls).sum()
    }

    /// True when both traces agree on everything except timing.
    pub fn same_values(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_values(b))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRACE_CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.write_record([
                r.iteration.to_string(),
                opt(r.nmse_db),
                opt(r.gamma1),
                opt(r.gamma2),
                opt(r.alpha1),
                opt(r.alpha2),
                opt(r.zeta),
                opt(r.tau),
                format!("{:.6}", r.seconds),
                r.denoiser_calls.to_string(),
                match r.event {
                    Some(TraceEvent::Switch) => "switch".into(),
                    None => String::new(),
                },
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

impl From<csv::Error> for crate::error::Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => crate::error::Error::Io(io),
            other => crate::error::Error::Format(format!("csv: {other:?}")),
        }
    }
}
