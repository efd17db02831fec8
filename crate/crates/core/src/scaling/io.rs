//! Run tables in, fit documents out.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{IsoflopCurve, PowerLaw, RunPoint, ScalingFit};

/// Reads a CSV with columns `n_params, tokens, loss` (any order, extra
/// columns ignored). Errors name the offending row, counting the header as row 1.
pub fn read_points_csv(path: &Path) -> Result<Vec<RunPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn parse_points(text: &str) -> Result<Vec<RunPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse("empty input; expected columns n_params,tokens,loss".into()));
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}` in header {:?}", headers)))
    };
    let (ni, di, li) = (col("n_params")?, col("tokens")?, col("loss")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = rec.get(idx).unwrap_or("");
            raw.parse::<f64>()
                .map_err(|_| Error::Parse(format!("row {row}: column `{name}` is not a number: {raw:?}")))
        };
        let p = RunPoint::new(field(ni, "n_params")?, field(di, "tokens")?, field(li, "loss")?)
            .map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok(out)
}

/// IsoFLOP route: one parabola per budget and the power law through their optima.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoflopReport {
    pub curves: Vec<IsoflopCurve>,
    /// `N_opt ≈ prefactor · C^exponent`
    pub n_opt_law: PowerLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResidual {
    pub n_params: f64,
    pub tokens: f64,
    pub flops: f64,
    pub loss: f64,
    pub predicted: f64,
    /// `ln predicted − ln loss`
    pub log_residual: f64,
}

/// Parametric route: fitted surface, derived allocation exponents, residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricReport {
    pub fit: ScalingFit,
    pub n_exponent: f64,
    pub d_exponent: f64,
    pub residuals: Vec<PointResidual>,
}

/// JSON document written by the `fit` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub mode: String,
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isoflop: Option<IsoflopReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parametric: Option<ParametricReport>,
}

impl ParametricReport {
    pub fn new(fit: ScalingFit, points: &[RunPoint]) -> Result<Self> {
        let (n_exponent, d_exponent) = super::compute_optimal(fit.alpha, fit.beta)?;
        let residuals = fit
            .log_residuals(points)
            .into_iter()
            .zip(points)
            .map(|(r, p)| PointResidual {
                n_params: p.n_params,
                tokens: p.tokens,
                flops: p.flops,
                loss: p.loss,
                predicted: fit.predict(p.n_params, p.tokens),
                log_residual: r,
            })
            .collect();
        Ok(Self {
            fit,
            n_exponent,
            d_exponent,
            residuals,
        })
    }
}
