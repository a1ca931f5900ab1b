use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cursor_attn::commands::{self, CompareBy, Representation, TrainArgs};
use cursor_attn::error::{CliError, Result};
use cursor_attn::exec::with_jobs;
use cursor_attn_core::raster::RenderStyle;
use cursor_attn_core::session::SplitRatios;
use cursor_attn_core::synth::SynthConfig;

#[derive(Debug, Parser)]
#[command(
    name = "cursor-attn",
    version,
    args_override_self = true,
    about = "Predict ad attention from mouse-cursor sessions"
)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "CURSOR_ATTN_JOBS", default_value_t = 0)]
    jobs: usize,
    /// JSON object of flag defaults, e.g. {"seed": 7, "budget": 5}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
#[command(args_override_self = true)]
enum Cmd {
    /// Clean raw session logs into a labeled dataset.
    Ingest {
        input: PathBuf,
        #[arg(long, default_value = "dataset.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_events: usize,
    },
    /// Generate raw synthetic session logs with a planted attention signal.
    Synth {
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        positive_fraction: f64,
        #[arg(long, default_value_t = 0.0)]
        neutral_fraction: f64,
        #[arg(long, default_value_t = 0.0)]
        short_fraction: f64,
        #[arg(long, default_value_t = 6.0)]
        noise_px: f64,
        #[arg(long, default_value = "sessions.jsonl")]
        out: PathBuf,
    },
    /// Render sessions to PNG.
    Render {
        dataset: PathBuf,
        #[arg(long, default_value = "traj")]
        style: String,
        /// Overlay the ad placeholder.
        #[arg(long)]
        ad: bool,
        /// All five styles with and without the placeholder.
        #[arg(long)]
        all_styles: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write the 50-step coordinate sequences as CSV.
    Encode {
        dataset: PathBuf,
        #[arg(long, default_value = "timeseries.csv")]
        out: PathBuf,
    },
    /// Split, search hyperparameters, train and evaluate on the test split.
    Train {
        dataset: PathBuf,
        /// simplernn, lstm, blstm, gru or cnn
        #[arg(long)]
        arch: String,
        /// timeseries, or a render style such as traj or heatmap-ad
        #[arg(long)]
        repr: String,
        #[arg(long, default_value_t = 20)]
        budget: usize,
        /// Repeated fits per trial.
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// train,val,test fractions
        #[arg(long, default_value = "0.6,0.1,0.3")]
        ratios: String,
        /// Stratify per `ad_format` or over the whole set (`none`).
        #[arg(long, default_value = "none")]
        by: String,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Significance tests over evaluation reports.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// sample, representation or model
        #[arg(long, default_value = "sample")]
        by: String,
        /// auc, precision, recall or f1 (ignored with --by sample)
        #[arg(long, default_value = "auc")]
        metric: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every valid architecture x representation pair of a manifest, then compare.
    Run { manifest: PathBuf },
}

const GLOBAL_VALUE_FLAGS: [&str; 2] = ["--jobs", "--config"];

/// Position of the subcommand token in `args` (program name excluded).
fn subcommand_index(args: &[String]) -> Option<usize> {
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        if GLOBAL_VALUE_FLAGS.contains(&a.as_str()) {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut found = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            found = args.get(i + 1).map(PathBuf::from);
        } else if let Some(v) = a.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        }
    }
    found
}

fn config_flags(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let map: serde_json::Map<String, serde_json::Value> = cursor_attn::formats::read_json(path)?;
    let (mut global, mut local) = (Vec::new(), Vec::new());
    for (key, value) in map {
        let flag = format!("--{}", key.trim_start_matches('-').replace('_', "-"));
        let target = if flag == "--jobs" { &mut global } else { &mut local };
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        match &value {
            serde_json::Value::Bool(true) => target.push(flag),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar).collect();
                target.extend([flag, joined.join(",")]);
            }
            v => target.extend([flag, scalar(v)]),
        }
    }
    Ok((global, local))
}

/// Command line with config-file flags spliced in ahead of the user's own,
/// so explicit flags win.
fn effective_args() -> Result<Vec<String>> {
    let mut args: Vec<String> = std::env::args().collect();
    let prog = args.remove(0);
    let Some(path) = config_path(&args) else {
        return Ok([vec![prog], args].concat());
    };
    let (global, local) = config_flags(&path)?;
    let mut out = vec![prog];
    out.extend(global);
    match subcommand_index(&args) {
        Some(i) => {
            out.extend_from_slice(&args[..=i]);
            out.extend(local);
            out.extend_from_slice(&args[i + 1..]);
        }
        None => out.extend(args),
    }
    Ok(out)
}

fn parse_ratios(s: &str) -> Result<SplitRatios> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::invalid(format!("ratios {s:?} are not numbers")))?;
    let arr: [f64; 3] = parts.try_into().map_err(|_| CliError::invalid(format!("ratios {s:?} need three values")))?;
    let r = SplitRatios(arr);
    r.validate()?;
    Ok(r)
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Ingest { input, out, min_events } => {
            let s = commands::ingest(&input, &out, min_events)?;
            if s.read == 0 {
                eprintln!("warning: no sessions found in {}", input.display());
            }
            println!("{}", s.render());
            println!("wrote {}", out.display());
        }
        Cmd::Synth { count, seed, positive_fraction, neutral_fraction, short_fraction, noise_px, out } => {
            let cfg = SynthConfig { count, seed, positive_fraction, neutral_fraction, short_fraction, noise_px };
            let n = commands::synth(&cfg, &out)?;
            println!("wrote {n} sessions to {}", out.display());
        }
        Cmd::Render { dataset, style, ad, all_styles, out } => {
            let styles = if all_styles { RenderStyle::all() } else { vec![commands::parse_style(&style, ad)?] };
            let m = commands::render(&dataset, &styles, &out)?;
            println!("wrote {} images to {}", m.entries.len(), out.join("renders").display());
        }
        Cmd::Encode { dataset, out } => {
            let n = commands::encode(&dataset, &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
        Cmd::Train { dataset, arch, repr, budget, k, seed, ratios, by, max_epochs, patience, out } => {
            let by_ad_format = match by.as_str() {
                "ad_format" | "ad-format" => true,
                "none" => false,
                other => return Err(CliError::invalid(format!("unknown --by {other:?}; expected ad_format or none"))),
            };
            let args = TrainArgs {
                dataset,
                arch: commands::parse_arch(&arch)?,
                repr: Representation::parse(&repr)?,
                budget,
                k,
                seed,
                ratios: parse_ratios(&ratios)?,
                by_ad_format,
                max_epochs,
                patience,
                out,
            };
            let t = commands::train(&args)?;
            let r = &t.report;
            println!(
                "{}: test auc {:.4}  weighted P/R/F1 {:.4}/{:.4}/{:.4}  (n = {})",
                t.run_id,
                r.auc,
                r.weighted_precision,
                r.weighted_recall,
                r.weighted_f1,
                r.scores.len()
            );
            println!(
                "model  {}\ntrials {}\nreport {}",
                t.model_path.display(),
                t.log_path.display(),
                t.report_path.display()
            );
        }
        Cmd::Compare { reports, by, metric, out } => {
            let c = commands::compare(&reports, CompareBy::parse(&by)?, &metric, out.as_deref())?;
            print!("{}", c.table());
        }
        Cmd::Run { manifest } => {
            let r = commands::run(&manifest)?;
            for t in &r.trained {
                println!("{}: test auc {:.4}", t.run_id, t.report.auc);
            }
            for s in &r.skipped {
                println!("skipped {s} (architecture does not take this representation)");
            }
            if let Some(c) = &r.comparison {
                print!("{}", c.table());
            }
        }
    }
    Ok(())
}

fn fail(kind: &str, msg: impl std::fmt::Display) -> ExitCode {
    let msg = msg.to_string();
    eprintln!("error:{kind}: {}", msg.trim_end().replace('\n', " "));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let args = match effective_args() {
        Ok(a) => a,
        Err(e) => return fail(e.kind(), e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.render()),
    };
    match with_jobs(cli.jobs, || dispatch(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e),
    }
}
