//! Per-step spectral diagnostics of factorized layers.
//!
//! Norms here come from the SVD oracle, never from the optimizer's own
//! estimates, so recording a step cannot perturb training.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::matrix::{rms_vec, DenseMatrix};
use crate::optim::{composite_update, FactorizedWeight};
use crate::rng::Rng;
use crate::spectral::exact_spectral_norm;

/// Column order of the telemetry CSV.
pub const CSV_HEADER: [&str; 9] = [
    "step",
    "layer_id",
    "dw_spec",
    "w_spec",
    "dy_rms",
    "dy_rms_bound",
    "rho",
    "sigma_a",
    "sigma_b",
];

/// Diagnostics for one layer at one step.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct TelemetryRecord {
    pub step: u64,
    pub layer_id: String,
    /// `‖ΔW‖₂` of the composite update.
    pub dw_spec: f64,
    /// `‖W‖₂` after the step.
    pub w_spec: f64,
    /// Mean over probes of `rms(ΔW·x)`.
    pub dy_rms: f64,
    /// `sqrt(n/m)·‖ΔW‖₂`, the largest rms amplification for unit-rms inputs.
    pub dy_rms_bound: f64,
    /// Realized factor step size `max(‖ΔA‖₂, ‖ΔB‖₂)`.
    pub rho: f64,
    /// `‖A‖₂` before the step.
    pub sigma_a: f64,
    /// `‖B‖₂` before the step.
    pub sigma_b: f64,
}

impl TelemetryRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.dw_spec,
            self.w_spec,
            self.dy_rms,
            self.dy_rms_bound,
            self.rho,
            self.sigma_a,
            self.sigma_b,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Fixed probe inputs, one unit-rms vector per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBatch {
    inputs: DenseMatrix,
}

impl ProbeBatch {
    pub const DEFAULT_COUNT: usize = 64;

    /// `count` Gaussian directions in `R^n`, rescaled to unit rms.
    pub fn random(n: usize, count: usize, rng: &mut Rng) -> Self {
        let mut inputs = rng.gaussian_matrix(count, n, 1.0);
        for r in 0..count {
            let row = inputs.row_mut(r);
            let rms = (row.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
            row.iter_mut().for_each(|x| *x /= rms);
        }
        Self { inputs }
    }

    /// Uses the rows of `inputs` as probes; each must already have unit rms.
    pub fn from_rows(inputs: DenseMatrix) -> Result<Self> {
        for r in 0..inputs.rows() {
            let rms = rms_vec(inputs.row(r))?;
            if (rms - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "probe {r} has rms {rms}, expected 1"
                )));
            }
        }
        Ok(Self { inputs })
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Spectral norm that survives extreme magnitudes: the matrix is rescaled by
/// a power of two (exact) before the SVD, and overflowed input reports infinity.
fn spec_or_inf(m: &DenseMatrix) -> Result<f64> {
    if !m.is_finite() {
        return Ok(f64::INFINITY);
    }
    let peak = m.max_abs();
    if peak == 0.0 {
        return Ok(0.0);
    }
    let shift = peak.log2().floor() as i32;
    let scale = 2f64.powi(-shift);
    Ok(exact_spectral_norm(&m.scale(scale))? / scale)
}

/// Measures one optimizer step of a factorized layer from its states before and after.
pub fn record(
    step: u64,
    layer_id: &str,
    before: &FactorizedWeight,
    after: &FactorizedWeight,
    probes: &ProbeBatch,
) -> Result<TelemetryRecord> {
    if before.a.shape() != after.a.shape() || before.b.shape() != after.b.shape() {
        return Err(Error::DimensionMismatch {
            op: "telemetry::record",
            lhs: (before.out_dim(), before.in_dim()),
            rhs: (after.out_dim(), after.in_dim()),
        });
    }
    let (m, n) = (before.out_dim(), before.in_dim());
    if probes.dim() != n {
        return Err(Error::DimensionMismatch {
            op: "telemetry probes",
            lhs: (m, n),
            rhs: (probes.len(), probes.dim()),
        });
    }
    let da = after.a.sub(&before.a)?;
    let db = after.b.sub(&before.b)?;
    let dw = composite_update(&before.a, &before.b, &da, &db)?;
    let dw_spec = spec_or_inf(&dw)?;
    // Row r of X·ΔWᵀ is ΔW·x_r.
    let dy = probes.inputs.matmul_t(&dw)?;
    let mut dy_rms = 0.0;
    for r in 0..dy.rows() {
        dy_rms += rms_vec(dy.row(r))?;
    }
    dy_rms /= dy.rows().max(1) as f64;
    Ok(TelemetryRecord {
        step,
        layer_id: layer_id.to_string(),
        dw_spec,
        w_spec: spec_or_inf(&after.materialize())?,
        dy_rms,
        dy_rms_bound: (n as f64 / m as f64).sqrt() * dw_spec,
        rho: spec_or_inf(&da)?.max(spec_or_inf(&db)?),
        sigma_a: spec_or_inf(&before.a)?,
        sigma_b: spec_or_inf(&before.b)?,
    })
}

pub(crate) fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Incremental telemetry CSV: the header is written once on creation and
/// each appended batch is sorted by `(step, layer_id)`.
#[derive(Debug)]
pub struct TelemetryWriter {
    path: PathBuf,
    out: csv::Writer<File>,
}

impl TelemetryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = csv::Writer::from_writer(file);
        out.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
        })
    }

    pub fn append(&mut self, records: &[TelemetryRecord]) -> Result<()> {
        let mut sorted: Vec<&TelemetryRecord> = records.iter().collect();
        sorted.sort_by(|a, b| (a.step, &a.layer_id).cmp(&(b.step, &b.layer_id)));
        for r in sorted {
            self.out
                .write_record([
                    r.step.to_string(),
                    r.layer_id.clone(),
                    fmt_float(r.dw_spec),
                    fmt_float(r.w_spec),
                    fmt_float(r.dy_rms),
                    fmt_float(r.dy_rms_bound),
                    fmt_float(r.rho),
                    fmt_float(r.sigma_a),
                    fmt_float(r.sigma_b),
                ])
                .map_err(|e| csv_error(&self.path, e))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `records` (sorted by step, then layer) to a fresh CSV at `path`.
pub fn write_csv(records: &[TelemetryRecord], path: &Path) -> Result<()> {
    let mut w = TelemetryWriter::create(path)?;
    w.append(records)?;
    w.finish()
}

/// Parses a file produced by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<TelemetryRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!(
            "{}: unexpected telemetry header {:?}",
            path.display(),
            header
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        out.push(row.map_err(|e: csv::Error| {
            Error::Parse(format!("{} row {}: {e}", path.display(), i + 2))
        })?);
    }
    Ok(out)
}

/// Writes any displayable rows under a header; used for small run summaries.
pub(crate) fn write_plain_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
