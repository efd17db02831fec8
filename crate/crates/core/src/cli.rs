//! Command-line interface of the `spectron` binary.
//!
//! Exit codes: 0 on success, 1 on runtime failure (I/O, divergence), 2 on
//! invalid input (bad config, CSV, arguments).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Result;
use crate::run::{self, FitMode};

#[derive(Parser, Debug)]
#[command(name = "spectron", version, about = "Train and analyze low-rank factorized networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model and write loss, telemetry, checkpoint and manifest files.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the optimizer ablation grid and rank final losses.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a scaling law to a CSV of runs (columns n_params, tokens, loss).
    Fit {
        input: PathBuf,
        #[arg(long, default_value = "parametric")]
        mode: String,
        #[arg(long, default_value = "fit")]
        out: PathBuf,
    },
    /// Record per-step spectral telemetry of one layer across optimizer variants.
    SpectralTrace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        layer: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Runs one command, printing a short summary to stdout.
pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, out, seed } => {
            let cfg = run::load_config(&config, seed, out.as_deref())?;
            let s = run::cmd_train(&cfg)?;
            match s.final_eval_loss {
                Some(l) => println!("eval loss {:.4} -> {l:.4} in {} steps", s.initial_eval_loss, s.steps_completed),
                None => println!("diverged at step {}", s.diverged_at.unwrap_or_default()),
            }
        }
        Command::Ablate { config, out, seed } => {
            let cfg = run::load_config(&config, seed, out.as_deref())?;
            let report = run::cmd_ablate(&cfg)?;
            for r in report.grid.iter().chain(&report.baselines) {
                println!("{:<18} eta={:<6} final={:.4} diverged={}", r.variant.name(), r.eta, r.final_loss, r.diverged);
            }
        }
        Command::Fit { input, mode, out } => {
            let mode: FitMode = mode.parse()?;
            let doc = run::cmd_fit(&input, mode, &out)?;
            if let Some(p) = &doc.parametric {
                println!(
                    "alpha={:.4} beta={:.4} E={:.4} a_N={:.4}",
                    p.fit.alpha, p.fit.beta, p.fit.irreducible, p.n_exponent
                );
            }
            if let Some(i) = &doc.isoflop {
                println!("N_opt exponent {:.4} over {} budgets", i.n_opt_law.exponent, i.curves.len());
            }
        }
        Command::SpectralTrace { config, layer, out, seed } => {
            let cfg = run::load_config(&config, seed, out.as_deref())?;
            let rows = run::cmd_spectral_trace(&cfg, &layer)?;
            println!("{} trace rows written to {}", rows.len(), cfg.output_dir.display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => run::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            run::exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use quick_xml::events::Event;
    use quick_xml::Reader;

    use super::*;
    use crate::checkpoint;
    use crate::config::RunConfig;
    use crate::error::Error;
    use crate::net::{Model, ModelConfig};
    use crate::rng::Rng;
    use crate::scaling::{FitDocument, ScalingFit};
    use crate::telemetry;

    fn small_config(steps: usize, out: &Path) -> RunConfig {
        let mut c = RunConfig::desk();
        c.model = ModelConfig {
            vocab: 16,
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            seq_len: 8,
            ..ModelConfig::default()
        };
        c.steps = steps;
        c.batch = 4;
        c.corpus_len = 4000;
        c.eval_batches = 2;
        c.output_dir = out.to_path_buf();
        c
    }

    fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
        std::fs::create_dir_all(dir).unwrap();
        let p = dir.join("config.json");
        std::fs::write(&p, cfg.to_json()).unwrap();
        p
    }

    fn cmd(args: &[&str]) -> Result<()> {
        let cli = Cli::try_parse_from(std::iter::once("spectron").chain(args.iter().copied()))
            .unwrap_or_else(|e| panic!("{e}"));
        execute(cli.command)
    }

    fn invalid(r: Result<()>) -> Error {
        let e = r.expect_err("command should fail");
        assert_eq!(run::exit_code(&e), run::EXIT_INVALID, "{e}");
        e
    }

    fn p(path: &Path) -> &str {
        path.to_str().unwrap()
    }

    fn read(path: &Path) -> Vec<u8> {
        std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
    }

    fn planted_csv(path: &Path) {
        let planted = ScalingFit::planted(1000.0, 1000.0, 1.777, 0.398, 0.332);
        let pts = planted
            .sample_grid(&[2.2e18, 6.0e18, 1.5e19, 3.57e19], &[10, 10, 10, 9], 1.2)
            .unwrap();
        let mut text = String::from("n_params,tokens,loss\n");
        for q in pts {
            text.push_str(&format!("{:e},{:e},{:e}\n", q.n_params, q.tokens, q.loss));
        }
        std::fs::write(path, text).unwrap();
    }

    /// Strictly parses an SVG and returns each panel's declared `(x, y)` ranges.
    fn panel_axes(svg: &str) -> Vec<((f64, f64), (f64, f64))> {
        let mut reader = Reader::from_str(svg);
        reader.config_mut().check_end_names = true;
        let (mut depth, mut saw_root, mut panels) = (0i64, false, Vec::new());
        loop {
            match reader.read_event().expect("well-formed svg") {
                Event::Start(e) => {
                    depth += 1;
                    saw_root |= e.name().as_ref() == b"svg";
                    if e.name().as_ref() == b"g" {
                        let get = |k: &str| -> f64 {
                            let a = e.try_get_attribute(k).unwrap().unwrap_or_else(|| panic!("attribute {k}"));
                            a.unescape_value().unwrap().parse().unwrap()
                        };
                        panels.push(((get("data-x-min"), get("data-x-max")), (get("data-y-min"), get("data-y-max"))));
                    }
                }
                Event::End(_) => depth -= 1,
                Event::Eof => break,
                _ => {}
            }
        }
        assert!(saw_root && depth == 0);
        panels
    }

    #[test]
    fn argument_errors_use_exit_2_and_help_exits_0() {
        assert_eq!(main_with_args(["spectron", "train"]), 2);
        assert_eq!(main_with_args(["spectron", "frobnicate"]), 2);
        assert_eq!(main_with_args(["spectron", "--help"]), 0);
    }

    #[test]
    fn train_with_zero_steps_writes_headers_and_the_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = small_config(0, &out);
        let path = write_config(dir.path(), &cfg);
        assert_eq!(main_with_args(["spectron", "train", "--config", p(&path)]), 0);
        assert_eq!(std::fs::read_to_string(out.join("loss.csv")).unwrap(), "step,loss,lr\n");
        assert_eq!(
            std::fs::read_to_string(out.join("telemetry.csv")).unwrap(),
            format!("{}\n", telemetry::CSV_HEADER.join(","))
        );
        let init = Model::new(cfg.model.clone(), &Rng::new(cfg.seed).split("model")).unwrap();
        let saved = checkpoint::decode(&read(&out.join("checkpoint.bin"))).unwrap();
        let expected: Vec<_> = init.parameters().into_iter().map(|(n, m)| (n, m.clone())).collect();
        assert_eq!(saved, expected);
    }

    #[test]
    fn train_outputs_have_the_documented_shape() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let path = write_config(dir.path(), &small_config(6, &out));
        cmd(&["train", "--config", p(&path)]).unwrap();
        let loss = std::fs::read_to_string(out.join("loss.csv")).unwrap();
        assert_eq!(loss.lines().count(), 7);
        let recs = telemetry::read_csv(&out.join("telemetry.csv")).unwrap();
        assert_eq!(recs.len(), 6);
        assert!(recs.iter().all(|r| r.layer_id == "blocks.0.attn.o" && r.is_finite()));
        let results: serde_json::Value = serde_json::from_slice(&read(&out.join("results.json"))).unwrap();
        assert_eq!(results["steps_completed"], 6);
    }

    #[test]
    fn manifest_reproduces_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("first");
        let path = write_config(dir.path(), &small_config(4, &first));
        cmd(&["train", "--config", p(&path)]).unwrap();
        let second = dir.path().join("second");
        cmd(&["train", "--config", p(&first.join("manifest.json")), "--out", p(&second)]).unwrap();
        for f in ["loss.csv", "telemetry.csv", "checkpoint.bin"] {
            assert_eq!(read(&first.join(f)), read(&second.join(f)), "{f}");
        }
        let m = RunConfig::load(&second.join("manifest.json")).unwrap();
        assert_eq!(m.output_dir, second);
    }

    #[test]
    fn seed_flag_overrides_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &small_config(2, &dir.path().join("a")));
        let b = dir.path().join("b");
        cmd(&["train", "--config", p(&path)]).unwrap();
        cmd(&["train", "--config", p(&path), "--seed", "9", "--out", p(&b)]).unwrap();
        assert_ne!(read(&dir.path().join("a/loss.csv")), read(&b.join("loss.csv")));
        assert_eq!(RunConfig::load(&b.join("manifest.json")).unwrap().seed, 9);
    }

    #[test]
    fn invalid_config_reports_its_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\n  \"seed\": 1,\n  \"stepz\": 3\n}\n").unwrap();
        let err = invalid(cmd(&["train", "--config", p(&path)])).to_string();
        assert!(err.contains("line 3") && err.contains("stepz"), "{err}");
    }

    #[test]
    fn missing_config_file_is_a_runtime_failure() {
        let e = cmd(&["train", "--config", "/nonexistent/config.json"]).unwrap_err();
        assert_eq!(run::exit_code(&e), run::EXIT_RUNTIME);
        assert_eq!(main_with_args(["spectron", "train", "--config", "/nonexistent/config.json"]), 1);
    }

    #[test]
    fn fit_rejects_empty_and_malformed_csvs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("f");
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        invalid(cmd(&["fit", p(&empty), "--mode", "isoflop", "--out", p(&out)]));
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "n_params,tokens,loss\n1e8,1e9,3\n1e8,oops,3\n").unwrap();
        let err = invalid(cmd(&["fit", p(&bad), "--out", p(&out)])).to_string();
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn unknown_fit_mode_is_invalid_input() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("grid.csv");
        planted_csv(&csv);
        invalid(cmd(&["fit", p(&csv), "--mode", "chinchilla", "--out", p(&dir.path().join("f"))]));
    }

    #[test]
    fn fit_on_the_planted_grid_writes_json_and_well_formed_svgs() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("grid.csv");
        planted_csv(&csv);
        for mode in ["isoflop", "parametric"] {
            let out = dir.path().join(mode);
            cmd(&["fit", p(&csv), "--mode", mode, "--out", p(&out)]).unwrap();
            let doc: FitDocument = serde_json::from_slice(&read(&out.join("fit.json"))).unwrap();
            assert_eq!(doc.points, 39);
            match mode {
                "isoflop" => assert!((doc.isoflop.unwrap().n_opt_law.exponent - 0.4548).abs() <= 0.03),
                _ => {
                    let f = doc.parametric.unwrap().fit;
                    assert!((f.alpha - 0.398).abs() <= 0.02 && (f.beta - 0.332).abs() <= 0.02);
                    assert!((f.irreducible - 1.777).abs() <= 0.01);
                }
            }
            for i in 0..4 {
                let svg = std::fs::read_to_string(out.join(format!("fit_budget_{i}.svg"))).unwrap();
                assert_eq!(panel_axes(&svg).len(), 1);
            }
            assert!(!out.join("fit_budget_4.svg").exists());
        }
    }

    #[test]
    fn spectral_trace_has_one_row_per_step_and_variant() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("trace");
        let path = write_config(dir.path(), &small_config(5, &out));
        cmd(&["spectral-trace", "--config", p(&path), "--layer", "blocks.0.ffn.up"]).unwrap();
        let text = std::fs::read_to_string(out.join("trace.csv")).unwrap();
        let mut keys: Vec<(&str, &str)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let mut f = l.split(',');
                (f.next().unwrap(), f.next().unwrap())
            })
            .collect();
        assert_eq!(keys.len(), 5 * 4);
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 20);

        let svg = std::fs::read_to_string(out.join("trace.svg")).unwrap();
        let panels = panel_axes(&svg);
        assert_eq!(panels.len(), 3);
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 1).map(|(_, v)| v.parse().unwrap()).collect())
            .collect();
        // columns after dropping the variant: step, loss, dw_spec, dy_rms, w_spec, rho
        for (&(x, y), col) in panels.iter().zip([2, 3, 4]) {
            for r in &rows {
                assert!(x.0 <= r[0] && r[0] <= x.1);
                assert!(y.0 <= r[col] && r[col] <= y.1, "{y:?} {}", r[col]);
            }
        }
    }

    #[test]
    fn spectral_trace_rejects_unknown_layers_listing_valid_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &small_config(1, &dir.path().join("t")));
        let err = invalid(cmd(&["spectral-trace", "--config", p(&path), "--layer", "blocks.7.attn.q"])).to_string();
        assert!(err.contains("blocks.0.attn.q") && err.contains("blocks.0.ffn.down"), "{err}");
    }

    #[test]
    fn ablate_writes_eight_grid_rows_and_the_baselines() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("abl");
        let path = write_config(dir.path(), &small_config(3, &out));
        cmd(&["ablate", "--config", p(&path)]).unwrap();
        let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], "rank,variant,eta,initial_loss,final_loss,diverged,max_dw_spec");
        assert_eq!(lines.len(), 9);
        let finals: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
        assert!(finals.windows(2).all(|w| w[0] <= w[1]));
        let baselines = std::fs::read_to_string(out.join("baselines.csv")).unwrap();
        assert_eq!(baselines.lines().count(), 3);
        assert!(baselines.lines().skip(1).all(|l| l.contains("adaptive_moments")));
    }
}
