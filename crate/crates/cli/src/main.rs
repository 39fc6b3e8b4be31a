use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use promptlens_cli::report::{render_ansi, render_html, ReportDocument};
use promptlens_core::gateway::{BackendKind, Gateway, GeneratorSpec};
use promptlens_core::metrics::{att_accuracy, AccuracyReport, FidelityReport};
use promptlens_core::pipeline::{
    compare_methods, default_matrix, evaluate_consistency, evaluate_stability, explain,
    load_prompt_batch, sweep_perturbations, DistanceKind, ExplainConfig, MethodCell, PipelineError,
};
use promptlens_core::surrogate::SurrogateMethod;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "promptlens",
    version,
    about = "Token attributions for black-box text generators"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for reports and heatmaps.
    #[arg(long, global = true, default_value = "promptlens-out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Number of perturbed prompts per explanation.
    #[arg(long, global = true)]
    perturbations: Option<usize>,
    /// Heatmap output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Html)]
    format: Format,
    /// Bootstrap filtering of perturbations. `auto` turns it off for the mock
    /// backend unless the config file sets it.
    #[arg(long, global = true, value_enum, default_value_t = Toggle::Auto)]
    significance: Toggle,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    #[value(name = "openai_completions", alias = "openai")]
    OpenaiCompletions,
    #[value(name = "anthropic_messages", alias = "anthropic")]
    AnthropicMessages,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::OpenaiCompletions => BackendKind::OpenaiCompletions,
            BackendArg::AnthropicMessages => BackendKind::AnthropicMessages,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Html,
    Ansi,
    Both,
    None,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    Auto,
    On,
    Off,
}

#[derive(Args)]
struct PromptInput {
    #[arg(
        long,
        required_unless_present = "prompt_file",
        conflicts_with = "prompt_file"
    )]
    prompt: Option<String>,
    /// Read the prompt from a file.
    #[arg(long)]
    prompt_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Attribute the output shift of one prompt to its tokens.
    Explain(PromptInput),
    /// Compare important tokens with and without an inert trailing sentinel.
    Stability {
        #[command(flatten)]
        input: PromptInput,
        #[arg(long, default_value = "***")]
        sentinel: String,
    },
    /// Score variance across repeated explanations.
    Consistency {
        #[command(flatten)]
        input: PromptInput,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Reuse the same perturbations in every run.
        #[arg(long)]
        shared_seed: bool,
    },
    /// Fidelity as a function of the perturbation count.
    Sweep {
        #[command(flatten)]
        input: PromptInput,
        #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128, 256])]
        counts: Vec<usize>,
    },
    /// Fidelity across distance and surrogate choices.
    Compare {
        #[command(flatten)]
        input: PromptInput,
        /// Cells as input:output:method, e.g. wmd:cosine:bayes_ridge.
        /// Defaults to the full ten-cell matrix.
        #[arg(long, value_delimiter = ',')]
        cells: Vec<String>,
    },
    /// Re-render heatmaps from a saved report.
    Render {
        #[arg(long)]
        report: PathBuf,
    },
    /// Attribution accuracy against labeled prompts (JSON lines with
    /// "prompt" and "labels").
    Accuracy {
        #[arg(long)]
        ground_truth: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime { kind: String, message: String },
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Runtime {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime {
        kind: "io".into(),
        message: format!("{}: {e}", path.display()),
    }
}

const CONFIG_KEYS: &[&str] = &[
    "n_perturbations",
    "seed",
    "edit_mode",
    "input_distance",
    "output_distance",
    "top_k",
    "tokenizer",
    "embedding",
    "transport",
    "significance",
    "surrogate",
    "gateway",
    "generator",
];

#[derive(Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    #[serde(flatten)]
    explain: ExplainConfig,
    generator: GeneratorSpec,
}

struct Setup {
    cfg: ExplainConfig,
    gateway: Gateway,
}

fn setup(cli: &Cli) -> Result<Setup, Failure> {
    let mut significance_set = false;
    let mut file = FileConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        if let Some(bad) = table.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Failure::Usage(format!(
                "{}: unknown key {bad:?}",
                path.display()
            )));
        }
        significance_set = table
            .get("significance")
            .and_then(|s| s.get("enabled"))
            .is_some();
        file = FileConfig::deserialize(table)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    let FileConfig {
        explain: mut cfg,
        generator: mut spec,
    } = file;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.perturbations {
        cfg.n_perturbations = n;
    }
    if let Some(b) = cli.backend {
        spec.backend = b.into();
    }
    if let Some(m) = &cli.model {
        spec.model_id = m.clone();
    }
    if spec.backend != BackendKind::Mock && spec.model_id == GeneratorSpec::default().model_id {
        return Err(Failure::Usage(format!(
            "--model is required for the {} backend",
            spec.backend
        )));
    }
    cfg.significance.enabled = match cli.significance {
        Toggle::On => true,
        Toggle::Off => false,
        Toggle::Auto if significance_set => cfg.significance.enabled,
        Toggle::Auto => spec.backend != BackendKind::Mock,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let gateway = Gateway::new(spec, &cfg.gateway).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(Setup { cfg, gateway })
}

fn read_prompt(input: &PromptInput) -> Result<String, Failure> {
    match (&input.prompt, &input.prompt_file) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(path)) => Ok(fs::read_to_string(path)
            .map_err(|e| io_failure(path, e))?
            .trim()
            .to_string()),
        (None, None) => Err(Failure::Usage("a prompt is required".into())),
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_failure(&path, e))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Failure> {
    write_out(
        dir,
        name,
        &serde_json::to_string_pretty(value).expect("serializable"),
    )
}

fn emit_heatmaps(cli: &Cli, doc: &ReportDocument) -> Result<(), Failure> {
    if matches!(cli.format, Format::Html | Format::Both) {
        let path = write_out(&cli.out_dir, "heatmap.html", &render_html(doc))?;
        println!("heatmap: {}", path.display());
    }
    if matches!(cli.format, Format::Ansi | Format::Both) {
        print!("{}", render_ansi(doc));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn fidelity_line(f: &Option<FidelityReport>) -> String {
    match f {
        Some(f) => format!(
            "{:>9.5} {:>8} {:>9.5} {:>9.5} {:>9.5} {:>8}",
            f.wmse,
            fmt_opt(f.r2_w),
            f.wmae,
            f.mean_l1,
            f.mean_l2,
            fmt_opt(f.r2_w_adj)
        ),
        None => "fidelity not available".into(),
    }
}

const FIDELITY_HEADER: &str = "     WMSE     R2_w      WMAE        L1        L2  adjR2_w";

fn parse_cell(s: &str) -> Result<MethodCell, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Failure::Usage(format!("cell {s:?} must look like input:output:method"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let method = match parts[2] {
        "wls" => SurrogateMethod::Wls,
        "bayes_ridge" => SurrogateMethod::BayesRidge,
        _ => return Err(bad()),
    };
    Ok(MethodCell {
        input_distance: parts[0].parse::<DistanceKind>().map_err(|_| bad())?,
        output_distance: parts[1].parse::<DistanceKind>().map_err(|_| bad())?,
        method,
    })
}

#[derive(Serialize)]
struct AccuracyRow {
    prompt: String,
    #[serde(flatten)]
    report: Option<AccuracyReport>,
    error: Option<String>,
}

#[derive(Serialize)]
struct AccuracySummary {
    rows: Vec<AccuracyRow>,
    mean: Option<AccuracyReport>,
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Command::Render { report } = &cli.command {
        let text = fs::read_to_string(report).map_err(|e| io_failure(report, e))?;
        let doc = ReportDocument::from_json(&text).map_err(|e| Failure::Runtime {
            kind: "schema_mismatch".into(),
            message: e.to_string(),
        })?;
        return emit_heatmaps(cli, &doc);
    }

    let Setup { cfg, gateway } = setup(cli)?;
    match &cli.command {
        Command::Render { .. } => unreachable!(),
        Command::Explain(input) => {
            let prompt = read_prompt(input)?;
            let doc = ReportDocument::new(explain(&prompt, &gateway, &cfg)?);
            let path = write_out(&cli.out_dir, "report.json", &doc.to_json())?;
            println!("report: {}", path.display());
            emit_heatmaps(cli, &doc)?;
            let e = &doc.explanation;
            println!(
                "perturbations used: {}/{} (sigma {:.4})",
                e.diagnostics.rows_used, e.diagnostics.rows_total, e.diagnostics.sigma
            );
            println!("{FIDELITY_HEADER}\n{}", fidelity_line(&e.fidelity));
            for w in &e.diagnostics.warnings {
                warn!("{w}");
            }
            let mut ranked: Vec<_> = e.attributions.iter().collect();
            ranked.sort_by(|a, b| {
                b.score
                    .abs()
                    .total_cmp(&a.score.abs())
                    .then(a.token_index.cmp(&b.token_index))
            });
            for (rank, a) in ranked.iter().enumerate() {
                println!("{:>3}. {:<20} {:>+.6}", rank + 1, a.text, a.score);
            }
        }
        Command::Stability { input, sentinel } => {
            let r = evaluate_stability(&read_prompt(input)?, &gateway, &cfg, sentinel)?;
            let path = write_json(&cli.out_dir, "stability.json", &r)?;
            println!("report: {}", path.display());
            println!(
                "sentinel {:?}, top-{}: {:?} vs {:?}",
                r.sentinel, r.top_k, r.base_top, r.sentinel_top
            );
            println!("jaccard {:.4}", r.jaccard);
        }
        Command::Consistency {
            input,
            runs,
            shared_seed,
        } => {
            let r =
                evaluate_consistency(&read_prompt(input)?, &gateway, &cfg, *runs, *shared_seed)?;
            let path = write_json(&cli.out_dir, "consistency.json", &r)?;
            println!("report: {}", path.display());
            println!("{:<20} {:>12} {:>12}", "token", "variance", "std");
            for ((t, v), s) in r.tokens.iter().zip(&r.stats.variance).zip(&r.stats.std) {
                println!("{t:<20} {v:>12.3e} {s:>12.3e}");
            }
            println!(
                "{:<20} {:>12.3e} {:>12.3e}",
                "mean", r.stats.mean_variance, r.stats.mean_std
            );
        }
        Command::Sweep { input, counts } => {
            let rows = sweep_perturbations(&read_prompt(input)?, &gateway, &cfg, counts)?;
            let path = write_json(&cli.out_dir, "sweep.json", &rows)?;
            println!("report: {}", path.display());
            println!("    N  used {FIDELITY_HEADER}");
            for r in &rows {
                println!(
                    "{:>5} {:>5} {}",
                    r.n_perturbations,
                    r.rows_used,
                    fidelity_line(&r.fidelity)
                );
            }
            println!("smaller counts reuse a prefix of the larger counts' perturbations");
        }
        Command::Compare { input, cells } => {
            let matrix = if cells.is_empty() {
                default_matrix()
            } else {
                cells
                    .iter()
                    .map(|c| parse_cell(c))
                    .collect::<Result<_, _>>()?
            };
            let rows = compare_methods(&read_prompt(input)?, &gateway, &cfg, &matrix)?;
            let path = write_json(&cli.out_dir, "compare.json", &rows)?;
            println!("report: {}", path.display());
            println!(
                "{:<8} {:<8} {:<12} {FIDELITY_HEADER}",
                "input", "output", "method"
            );
            for r in &rows {
                let c = r.cell;
                println!(
                    "{:<8} {:<8} {:<12} {}",
                    c.input_distance.to_string(),
                    c.output_distance.to_string(),
                    c.method.to_string(),
                    fidelity_line(&r.fidelity)
                );
            }
        }
        Command::Accuracy { ground_truth } => {
            let records = load_prompt_batch(ground_truth)?;
            let mut rows = Vec::new();
            for rec in records {
                let Some(labels) = rec.labels else {
                    warn!("skipping unlabeled prompt {:?}", rec.prompt);
                    continue;
                };
                let outcome = explain(&rec.prompt, &gateway, &cfg)
                    .map_err(|e| e.to_string())
                    .and_then(|e| {
                        let magnitudes: Vec<f64> = e.fit.theta.iter().map(|t| t.abs()).collect();
                        att_accuracy(&magnitudes, &labels).map_err(|e| e.to_string())
                    });
                let (report, error) = match outcome {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e)),
                };
                rows.push(AccuracyRow {
                    prompt: rec.prompt,
                    report,
                    error,
                });
            }
            if rows.is_empty() {
                return Err(Failure::Runtime {
                    kind: "invalid".into(),
                    message: "no labeled prompts".into(),
                });
            }
            let ok: Vec<AccuracyReport> = rows.iter().filter_map(|r| r.report).collect();
            let mean = (!ok.is_empty()).then(|| {
                let n = ok.len() as f64;
                AccuracyReport {
                    acc: ok.iter().map(|r| r.acc).sum::<f64>() / n,
                    f1: ok.iter().map(|r| r.f1).sum::<f64>() / n,
                    auroc: ok.iter().map(|r| r.auroc).sum::<f64>() / n,
                }
            });
            let summary = AccuracySummary { rows, mean };
            let path = write_json(&cli.out_dir, "accuracy.json", &summary)?;
            println!("report: {}", path.display());
            for r in &summary.rows {
                match (&r.report, &r.error) {
                    (Some(a), _) => {
                        println!(
                            "acc {:.3}  f1 {:.3}  auroc {:.3}  {}",
                            a.acc, a.f1, a.auroc, r.prompt
                        )
                    }
                    (_, Some(e)) => println!("error: {e}  {}", r.prompt),
                    _ => {}
                }
            }
            if let Some(m) = summary.mean {
                println!(
                    "mean: acc {:.3}  f1 {:.3}  auroc {:.3}",
                    m.acc, m.f1, m.auroc
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime { kind, message }) => {
            let mut block = serde_json::json!({ "kind": kind, "message": message });
            if kind == "all_perturbations_filtered" {
                block["hint"] =
                    "no perturbation passed the bootstrap filter; retry with --significance off"
                        .into();
            }
            eprintln!("{}", serde_json::json!({ "error": block }));
            ExitCode::from(1)
        }
    }
}
