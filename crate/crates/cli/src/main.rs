use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use clues_core::datio::{export_benchmark, import_benchmark, import_tasks, BENCHMARK_FILE};
use clues_core::entail::BackendSpec;
use clues_core::explang::{parse_explanation, render_explanation, ParseContext};
use clues_core::fat::{linearize, scramble};
use clues_core::harness::{
    ablation_from_evals, evaluate_tasks, format_ablation, format_evals, scrambling_experiment, task_permutation, write_csv,
    Axis, ExEntPredictor,
};
use clues_core::rules::Rule;
use clues_core::schema::load_schema;
use clues_core::taskgen::{generate_benchmark, BenchmarkConfig, Split, Task};

#[derive(Parser)]
#[command(name = "clues", version, about = "Generate and evaluate classification tasks specified by explanations")]
struct Cli {
    /// Output format for reports.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark: N tasks for each of the 48 task types.
    Generate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        tasks_per_type: usize,
        #[arg(long)]
        out: PathBuf,
        /// Keep the first sampled rule set even if one label dominates.
        #[arg(long)]
        no_guard: bool,
    },
    /// Render rules (a rules.json file) as explanations.
    RenderExpl {
        #[arg(long)]
        rules: PathBuf,
    },
    /// Parse a templated explanation against a schema document.
    ParseExpl {
        #[arg(long)]
        text: String,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Print task rows as features-as-text, optionally with scrambled column names.
    Linearize {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        scramble_seed: Option<u64>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Zero-shot accuracy of ExEnt on each task.
    Evaluate {
        #[arg(long)]
        tasks: PathBuf,
        /// symbolic, strict, external:HOST:PORT, or external:exec:COMMAND
        #[arg(long, default_value = "symbolic")]
        backend: BackendSpec,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Accuracy and relative gain over the majority baseline, grouped by task-type axis.
    Ablate {
        #[arg(long)]
        tasks: PathBuf,
        /// Axes to report; all four when omitted.
        #[arg(long, value_delimiter = ',')]
        axis: Vec<Axis>,
        #[arg(long, default_value = "symbolic")]
        backend: BackendSpec,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Accuracy with column names permuted, over several seeds.
    ScrambleExp {
        #[arg(long)]
        tasks: PathBuf,
        /// Inclusive range `A..B` or a comma-separated list.
        #[arg(long, default_value = "42..46")]
        seeds: String,
        #[arg(long, default_value = "symbolic")]
        backend: BackendSpec,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Use every task, not only the novel ones of a generated benchmark.
        #[arg(long)]
        all_tasks: bool,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim_start_matches('=').trim().parse()?);
        if a > b {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().with_context(|| format!("bad seed `{x}`"))).collect()
}

fn predictor(spec: &BackendSpec) -> Result<ExEntPredictor> {
    if let Some(mode) = spec.oracle_mode() {
        return Ok(ExEntPredictor::Symbolic(mode));
    }
    let backend = spec.open_external().context("opening external backend")?.expect("external spec");
    Ok(ExEntPredictor::Backend(Box::new(backend)))
}

fn load_tasks(dir: &Path) -> Result<Vec<Task>> {
    let tasks = import_tasks(dir)?;
    if tasks.is_empty() {
        bail!("no tasks found under {}", dir.display());
    }
    Ok(tasks)
}

fn emit_rows<R: serde::Serialize>(format: Format, rows: &[R], text: impl FnOnce() -> String) -> Result<()> {
    let mut out = io::stdout().lock();
    match format {
        Format::Text => out.write_all(text().as_bytes())?,
        Format::Csv => write_csv(&mut out, rows)?,
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(rows)?)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let format = cli.format;
    match cli.command {
        Command::Generate { seed, tasks_per_type, out, no_guard } => {
            let start = Instant::now();
            let config = BenchmarkConfig { seed, tasks_per_type, degenerate_guard: !no_guard, ..Default::default() };
            let bench = generate_benchmark(&config)?;
            export_benchmark(&bench, &out)?;
            let expl = bench.tasks.iter().map(|t| t.explanations.len()).sum::<usize>() as f64 / bench.tasks.len() as f64;
            eprintln!(
                "wrote {} tasks ({} novel) to {} in {:.2?}; {:.2} explanations/task",
                bench.tasks.len(),
                bench.novel_tasks().count(),
                out.display(),
                start.elapsed(),
                expl
            );
        }
        Command::RenderExpl { rules } => {
            let text = fs::read_to_string(&rules).with_context(|| format!("reading {}", rules.display()))?;
            let parsed: Vec<Rule> = match serde_json::from_str(&text) {
                Ok(v) => v,
                Err(_) => vec![serde_json::from_str(&text).with_context(|| format!("{}: not a rule list", rules.display()))?],
            };
            let explanations: Vec<_> = parsed.iter().map(render_explanation).collect();
            let mut out = io::stdout().lock();
            for e in &explanations {
                match format {
                    Format::Json => writeln!(out, "{}", serde_json::to_string(e)?)?,
                    _ => writeln!(out, "{}", e.text)?,
                }
            }
        }
        Command::ParseExpl { text, schema } => {
            let doc = fs::read_to_string(&schema).with_context(|| format!("reading {}", schema.display()))?;
            let schema = load_schema(&doc).with_context(|| format!("{}", schema.display()))?;
            let ctx = ParseContext::from_schema(&schema);
            let (rule, meta) = parse_explanation(&text, &ctx).map_err(|e| {
                let caret = format!("{}^", " ".repeat(e.offset().min(text.len())));
                anyhow::anyhow!("cannot parse explanation: {e}\n  {text}\n  {caret}")
            })?;
            let value = serde_json::json!({ "rule": rule, "meta": meta });
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
        Command::Linearize { task, scramble_seed, split } => {
            let tasks = load_tasks(&task)?;
            let mut out = io::stdout().lock();
            for t in &tasks {
                let perm = scramble_seed.map(|s| task_permutation(t, s));
                let rows: Vec<_> = match split {
                    Some(s) => t.split(s).collect(),
                    None => t.examples.iter().collect(),
                };
                for le in rows {
                    let ex = match &perm {
                        Some(p) => scramble(&le.example, p).with_context(|| format!("task {}", t.id))?,
                        None => le.example.clone(),
                    };
                    let fat = linearize(&ex).with_context(|| format!("task {}", t.id))?;
                    match format {
                        Format::Text => writeln!(out, "{fat}")?,
                        Format::Csv => writeln!(out, "{},\"{}\",{}", t.id, fat.replace('"', "\"\""), le.label)?,
                        Format::Json => writeln!(out, "{}", serde_json::json!({"task": t.id, "premise": fat, "label": le.label}))?,
                    }
                }
            }
        }
        Command::Evaluate { tasks, backend, split } => {
            let tasks = load_tasks(&tasks)?;
            let p = predictor(&backend)?;
            let rows = evaluate_tasks(&tasks, &p, split)?;
            emit_rows(format, &rows, || format_evals(&rows))?;
        }
        Command::Ablate { tasks, axis, backend, split } => {
            let tasks = load_tasks(&tasks)?;
            let axes = if axis.is_empty() { Axis::ALL.to_vec() } else { axis };
            let p = predictor(&backend)?;
            let evals = evaluate_tasks(&tasks, &p, split)?;
            let rows = ablation_from_evals(&tasks, &evals, &axes)?;
            emit_rows(format, &rows, || format_ablation(&rows))?;
        }
        Command::ScrambleExp { tasks, seeds, backend, split, all_tasks } => {
            let seeds = parse_seeds(&seeds)?;
            let pool = if !all_tasks && tasks.join(BENCHMARK_FILE).is_file() {
                let bench = import_benchmark(&tasks)?;
                bench.novel_tasks().cloned().collect()
            } else {
                load_tasks(&tasks)?
            };
            if pool.is_empty() {
                bail!("no novel tasks under {}", tasks.display());
            }
            let p = predictor(&backend)?;
            let report = scrambling_experiment(&pool, &p, &seeds, split)?;
            let rows: Vec<_> = report
                .seeds
                .iter()
                .zip(&report.per_seed)
                .map(|(s, a)| serde_json::json!({"seed": s, "accuracy": a}))
                .collect();
            let mut out = io::stdout().lock();
            match format {
                Format::Text => write!(out, "{report}")?,
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
                Format::Csv => {
                    writeln!(out, "seed,accuracy")?;
                    for r in &rows {
                        writeln!(out, "{},{}", r["seed"], r["accuracy"])?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
