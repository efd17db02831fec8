//! File-producing commands behind the `spectron` binary.
//!
//! Every command writes into one output directory and is deterministic given
//! its inputs, down to the bytes of each CSV, JSON and SVG file.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::net::Model;
use crate::optim::OptimizerVariant;
use crate::rng::Rng;
use crate::scaling::{
    group_by_budget, isoflop_fit, parametric_fit, powerlaw_fit, read_points_csv, start_grid, FitDocument,
    IsoflopReport, ParametricReport, RunPoint,
};
use crate::svg::{self, Panel, Series};
use crate::telemetry::{self, fmt_float, write_plain_csv};
use crate::train::{resolve_layers, train, TrainOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_invalid_input() {
        EXIT_INVALID
    } else {
        EXIT_RUNTIME
    }
}

/// Learning rates swept by [`cmd_ablate`].
pub const ABLATION_ETAS: [f64; 2] = [0.001, 0.01];

/// Loads a config and applies command-line overrides.
pub fn load_config(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_text(path, &s)
}

/// Headline numbers of one training run, written as `results.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub variant: OptimizerVariant,
    pub eta: f64,
    pub steps_completed: usize,
    pub initial_eval_loss: f64,
    /// `null` when the run diverged.
    pub final_eval_loss: Option<f64>,
    pub diverged_at: Option<usize>,
    pub max_dw_spec: Option<f64>,
    pub param_count: usize,
    pub dense_param_count: usize,
}

impl TrainSummary {
    fn new(cfg: &RunConfig, out: &TrainOutcome) -> Self {
        let finite = |x: f64| x.is_finite().then_some(x);
        Self {
            variant: cfg.optimizer.variant,
            eta: cfg.optimizer.eta,
            steps_completed: out.losses.len(),
            initial_eval_loss: out.initial_eval,
            final_eval_loss: finite(out.final_eval),
            diverged_at: out.diverged_at,
            max_dw_spec: (!out.telemetry.is_empty()).then(|| out.max_dw_spec()).and_then(finite),
            param_count: out.model.param_count(),
            dense_param_count: out.model.dense_param_count(),
        }
    }
}

fn write_losses(path: &Path, out: &TrainOutcome) -> Result<()> {
    let rows: Vec<Vec<String>> = out
        .losses
        .iter()
        .map(|r| vec![r.step.to_string(), fmt_float(r.loss), fmt_float(r.lr)])
        .collect();
    write_plain_csv(path, &["step", "loss", "lr"], &rows)
}

/// Trains one model and writes `loss.csv`, `telemetry.csv`, `checkpoint.bin`,
/// `manifest.json` and `results.json` into `cfg.output_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let out = train(cfg)?;
    write_losses(&dir.join("loss.csv"), &out)?;
    telemetry::write_csv(&out.telemetry, &dir.join("telemetry.csv"))?;
    checkpoint::save(&out.model, &dir.join("checkpoint.bin"))?;
    write_text(&dir.join("manifest.json"), &cfg.to_json())?;
    let summary = TrainSummary::new(cfg, &out);
    write_json(&dir.join("results.json"), &summary)?;
    Ok(summary)
}

/// One cell of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: OptimizerVariant,
    pub eta: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub diverged: bool,
    pub max_dw_spec: f64,
}

/// Ascending final loss; diverged cells last. Ties keep input order.
fn rank(rows: &mut [AblationRow]) {
    rows.sort_by(|a, b| {
        a.diverged
            .cmp(&b.diverged)
            .then(a.final_loss.total_cmp(&b.final_loss))
    });
}

fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.variant.name().to_string(),
                r.eta.to_string(),
                fmt_float(r.initial_loss),
                fmt_float(r.final_loss),
                r.diverged.to_string(),
                fmt_float(r.max_dw_spec),
            ]
        })
        .collect();
    write_plain_csv(
        path,
        &["rank", "variant", "eta", "initial_loss", "final_loss", "diverged", "max_dw_spec"],
        &body,
    )
}

/// Factorial grid and baseline rows, each ranked by final held-out loss.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub grid: Vec<AblationRow>,
    pub baselines: Vec<AblationRow>,
}

impl AblationReport {
    /// The lowest final loss a variant reached over the swept learning rates.
    pub fn best_loss(&self, variant: OptimizerVariant) -> Option<f64> {
        self.grid
            .iter()
            .chain(&self.baselines)
            .filter(|r| r.variant == variant)
            .map(|r| r.final_loss)
            .min_by(f64::total_cmp)
    }

    pub fn row(&self, variant: OptimizerVariant, eta: f64) -> Option<&AblationRow> {
        self.grid.iter().chain(&self.baselines).find(|r| r.variant == variant && r.eta == eta)
    }
}

/// Runs every cell in parallel. All cells share the model initialization and
/// data order of `cfg`, so they differ only in the optimizer.
pub fn run_ablation(cfg: &RunConfig) -> Result<AblationReport> {
    cfg.validate()?;
    if cfg.telemetry_layers.is_empty() {
        return Err(Error::Config("ablation needs at least one telemetry layer for max_dw_spec".into()));
    }
    let cells: Vec<(OptimizerVariant, f64)> = OptimizerVariant::GRID
        .into_iter()
        .chain([OptimizerVariant::AdaptiveMoments])
        .flat_map(|v| ABLATION_ETAS.map(|eta| (v, eta)))
        .collect();
    let results: Vec<Result<AblationRow>> = cells
        .par_iter()
        .map(|&(variant, eta)| {
            let mut c = cfg.clone();
            c.optimizer.variant = variant;
            c.optimizer.eta = eta;
            let out = train(&c)?;
            Ok(AblationRow {
                variant,
                eta,
                initial_loss: out.initial_eval,
                final_loss: out.final_eval,
                diverged: out.diverged(),
                max_dw_spec: out.max_dw_spec(),
            })
        })
        .collect();
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (mut grid, mut baselines): (Vec<_>, Vec<_>) =
        rows.into_iter().partition(|r| r.variant != OptimizerVariant::AdaptiveMoments);
    rank(&mut grid);
    rank(&mut baselines);
    Ok(AblationReport { grid, baselines })
}

/// Runs the ablation and writes `summary.csv` (factorial grid), `baselines.csv`
/// and `manifest.json`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    let report = run_ablation(cfg)?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    write_ablation(&dir.join("summary.csv"), &report.grid)?;
    write_ablation(&dir.join("baselines.csv"), &report.baselines)?;
    write_text(&dir.join("manifest.json"), &cfg.to_json())?;
    Ok(report)
}

/// Scaling-law fitting route.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    Isoflop,
    Parametric,
}

impl std::str::FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isoflop" => Ok(Self::Isoflop),
            "parametric" => Ok(Self::Parametric),
            other => Err(Error::Config(format!("unknown fit mode `{other}`; expected isoflop or parametric"))),
        }
    }
}

impl FitMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Isoflop => "isoflop",
            Self::Parametric => "parametric",
        }
    }
}

/// `count` geometrically spaced sizes spanning the samples.
fn size_sweep(samples: &[(f64, f64)], count: usize) -> Vec<f64> {
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min).ln();
    let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max).ln();
    (0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Fits `points` and returns the document plus one SVG per budget.
pub fn fit_points(points: &[RunPoint], mode: FitMode) -> Result<(FitDocument, Vec<String>)> {
    let groups = group_by_budget(points);
    let mut figures = Vec::new();
    let mut doc = FitDocument {
        mode: mode.name().into(),
        points: points.len(),
        isoflop: None,
        parametric: None,
    };
    match mode {
        FitMode::Isoflop => {
            let curves = groups
                .iter()
                .map(|(c, s)| isoflop_fit(*c, s))
                .collect::<Result<Vec<_>>>()?;
            let n_opt_law = powerlaw_fit(&curves.iter().map(|c| (c.budget, c.n_opt)).collect::<Vec<_>>())?;
            for c in &curves {
                let fit: Vec<(f64, f64)> = size_sweep(&c.samples, 64).into_iter().map(|n| (n, c.predict(n))).collect();
                figures.push(budget_figure(c.budget, &c.samples, fit, "quadratic fit"));
            }
            doc.isoflop = Some(IsoflopReport { curves, n_opt_law });
        }
        FitMode::Parametric => {
            let fit = parametric_fit(points, &start_grid())?;
            for (c, s) in &groups {
                let curve = size_sweep(s, 64)
                    .into_iter()
                    .map(|n| (n, fit.predict(n, c / (6.0 * n))))
                    .collect();
                figures.push(budget_figure(*c, s, curve, "parametric fit"));
            }
            doc.parametric = Some(ParametricReport::new(fit, points)?);
        }
    }
    Ok((doc, figures))
}

fn budget_figure(budget: f64, samples: &[(f64, f64)], fit: Vec<(f64, f64)>, fit_label: &str) -> String {
    let mut panel = Panel::new(format!("C = {budget:.3e}"), "parameters N", "loss")
        .with(Series::scatter("runs", samples.to_vec()))
        .with(Series::line(fit_label, fit));
    panel.log_x = true;
    svg::render(&format!("loss vs. size at C = {budget:.3e}"), &[panel])
}

/// Reads run points from `input`, writes `fit.json` and `fit_budget_<i>.svg`
/// (budgets in ascending order) into `out`.
pub fn cmd_fit(input: &Path, mode: FitMode, out: &Path) -> Result<FitDocument> {
    let points = read_points_csv(input)?;
    let (doc, figures) = fit_points(&points, mode)?;
    ensure_dir(out)?;
    write_json(&out.join("fit.json"), &doc)?;
    for (i, f) in figures.iter().enumerate() {
        write_text(&out.join(format!("fit_budget_{i}.svg")), f)?;
    }
    Ok(doc)
}

/// Variants compared by [`cmd_spectral_trace`].
pub const TRACE_VARIANTS: [OptimizerVariant; 4] = OptimizerVariant::GRID;

/// One row of the trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub variant: OptimizerVariant,
    pub loss: f64,
    pub dw_spec: f64,
    pub dy_rms: f64,
    pub w_spec: f64,
    pub rho: f64,
}

pub const TRACE_HEADER: [&str; 7] = ["step", "variant", "loss", "dw_spec", "dy_rms", "w_spec", "rho"];

/// Trains each trace variant with telemetry on `layer` every step.
pub fn run_trace(cfg: &RunConfig, layer: &str) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let probe = Model::new(cfg.model.clone(), &Rng::new(cfg.seed).split("model"))?;
    resolve_layers(&probe, &[layer.to_string()])?;
    let runs: Vec<Result<Vec<TraceRow>>> = TRACE_VARIANTS
        .par_iter()
        .map(|&variant| {
            let mut c = cfg.clone();
            c.optimizer.variant = variant;
            c.telemetry_layers = vec![layer.to_string()];
            let out = train(&c)?;
            Ok(out
                .telemetry
                .iter()
                .map(|r| TraceRow {
                    step: r.step,
                    variant,
                    loss: out.losses[r.step as usize].loss,
                    dw_spec: r.dw_spec,
                    dy_rms: r.dy_rms,
                    w_spec: r.w_spec,
                    rho: r.rho,
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in runs {
        rows.extend(r?);
    }
    rows.sort_by_key(|r| (r.step, TRACE_VARIANTS.iter().position(|v| *v == r.variant)));
    Ok(rows)
}

/// Three panels (`‖ΔW‖₂`, output-change rms, `‖W‖₂` against step), one line per variant.
pub fn trace_figure(rows: &[TraceRow], layer: &str) -> String {
    let metrics: [(&str, fn(&TraceRow) -> f64); 3] = [
        ("update spectral norm", |r| r.dw_spec),
        ("output change rms", |r| r.dy_rms),
        ("weight spectral norm", |r| r.w_spec),
    ];
    let panels: Vec<Panel> = metrics
        .iter()
        .map(|(title, f)| {
            let mut p = Panel::new(*title, "step", *title);
            p.log_y = true;
            for v in TRACE_VARIANTS {
                let pts = rows.iter().filter(|r| r.variant == v).map(|r| (r.step as f64, f(r))).collect();
                p = p.with(Series::line(v.name(), pts));
            }
            p
        })
        .collect();
    svg::render(&format!("spectral trace of {layer}"), &panels)
}

/// Writes `trace.csv`, `trace.svg` and `manifest.json` into `cfg.output_dir`.
pub fn cmd_spectral_trace(cfg: &RunConfig, layer: &str) -> Result<Vec<TraceRow>> {
    let rows = run_trace(cfg, layer)?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.variant.name().to_string(),
                fmt_float(r.loss),
                fmt_float(r.dw_spec),
                fmt_float(r.dy_rms),
                fmt_float(r.w_spec),
                fmt_float(r.rho),
            ]
        })
        .collect();
    write_plain_csv(&dir.join("trace.csv"), &TRACE_HEADER, &body)?;
    write_text(&dir.join("trace.svg"), &trace_figure(&rows, layer))?;
    write_text(&dir.join("manifest.json"), &cfg.to_json())?;
    Ok(rows)
}
