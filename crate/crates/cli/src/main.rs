//! `vbscore` command-line interface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use vbscore::config::ToolkitConfig;
use vbscore::datamodel::{self, ModelResponse, PromptConfigKind, QARecord, VBScoreResult};
use vbscore::harness::{self, Generator, ResponseCache};
use vbscore::pipeline::{self, Backends, Evaluation, Scorer};
use vbscore::Error;

/// Process exit codes.
mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const VALIDATION: u8 = 3;
    pub const BACKEND: u8 = 4;
    pub const PARTIAL: u8 = 5;
    pub const NO_DATA: u8 = 6;
    pub const IO: u8 = 7;
}

#[derive(Parser, Debug)]
#[command(name = "vbscore", version, about = "Component-wise evaluation of medical question answering")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Dataset of reference QA records (JSONL).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Model responses (JSONL).
    #[arg(long, global = true)]
    responses: Option<PathBuf>,
    /// Previously written results (results.json).
    #[arg(long, global = true)]
    results: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Weight scheme for VB-Scores.
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for scoring and generation.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Scoring backend endpoint, `entity|embedding|nli=URL`; repeatable.
    #[arg(long = "backend", global = true, value_parser = parse_backend)]
    backends: Vec<(String, String)>,
    /// Use the deterministic offline backends and synthetic models.
    #[arg(long, global = true)]
    reference_backends: bool,
    /// Prompt configuration to analyse (compare, sensitivity).
    #[arg(long, global = true, value_parser = parse_prompt_config)]
    prompt_config: Option<PromptConfigKind>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score responses against references.
    Evaluate,
    /// Compare models statistically.
    Compare,
    /// Rank models under every weight scheme.
    Sensitivity,
    /// Generate responses for every prompt configuration and model, then score them.
    Sweep {
        /// Restrict to these prompt configurations.
        #[arg(long = "configs", value_delimiter = ',', value_parser = parse_prompt_config)]
        configs: Vec<PromptConfigKind>,
    },
    /// Write the narrative report and chart data.
    Report,
    /// Token usage, cost and scaling projections.
    Cost,
}

fn parse_backend(s: &str) -> Result<(String, String), String> {
    let (name, url) = s.split_once('=').ok_or_else(|| format!("expected NAME=URL, got `{s}`"))?;
    if !pipeline::BACKEND_NAMES.contains(&name) {
        return Err(format!("unknown backend `{name}` (expected one of {})", pipeline::BACKEND_NAMES.join(", ")));
    }
    if url.is_empty() {
        return Err("empty URL".into());
    }
    Ok((name.to_string(), url.to_string()))
}

fn parse_prompt_config(s: &str) -> Result<PromptConfigKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => exit::IO,
            Error::NoData(_) | Error::EmptyInput => exit::NO_DATA,
            Error::Config(_) | Error::UnknownScheme(_) => exit::USAGE,
            e if e.is_backend() => exit::BACKEND,
            _ => exit::VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: exit::USAGE,
        message: message.into(),
    }
}

type Outcome = Result<u8, Failure>;

struct Context {
    global: Global,
    config: ToolkitConfig,
}

impl Context {
    fn new(global: Global) -> Result<Self, Failure> {
        let mut config = match &global.config {
            Some(p) => ToolkitConfig::load(p)?,
            None => ToolkitConfig::default(),
        };
        if let Some(s) = &global.scheme {
            config.scheme = s.clone();
        }
        if let Some(p) = global.parallel {
            if p == 0 {
                return Err(usage("--parallel must be at least 1"));
            }
            config.parallel = p;
        }
        config.validate()?;
        if global.reference_backends && !global.backends.is_empty() {
            return Err(usage("--backend cannot be combined with --reference-backends"));
        }
        Ok(Self { global, config })
    }

    fn dataset(&self) -> Result<Vec<QARecord>, Failure> {
        let p = self.global.dataset.as_ref().ok_or_else(|| usage("--dataset is required"))?;
        Ok(datamodel::load_dataset(p)?)
    }

    fn responses(&self, dataset: &[QARecord]) -> Result<Vec<ModelResponse>, Failure> {
        let p = self.global.responses.as_ref().ok_or_else(|| usage("--responses is required"))?;
        Ok(datamodel::load_responses(p, dataset)?)
    }

    fn backends(&self) -> Result<Backends, Failure> {
        if self.global.reference_backends {
            return Ok(Backends::reference(&self.config)?);
        }
        let overrides: BTreeMap<String, String> = self.global.backends.iter().cloned().collect();
        Ok(Backends::from_config(&self.config, &overrides)?)
    }

    fn scorer(&self) -> Result<Scorer, Failure> {
        let scheme = self.config.resolve_scheme(&self.config.scheme)?;
        Ok(Scorer::new(&self.config, self.backends()?, scheme)?)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.global.out.join(name)
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf, Failure> {
        let dir = &self.global.out;
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::io(dir, e)))?;
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::from(Error::Validation(e.to_string())))?;
        bytes.push(b'\n');
        let path = self.out(name);
        datamodel::write_atomic(&path, &bytes)?;
        Ok(path)
    }

    /// Results from `--results`, or scored from `--responses` on the fly.
    fn results(&self, dataset: &[QARecord]) -> Result<Vec<VBScoreResult>, Failure> {
        if let Some(p) = &self.global.results {
            return Ok(datamodel::load_results_json(p)?);
        }
        if self.global.responses.is_none() {
            return Err(usage("either --results or --responses is required"));
        }
        let responses = self.responses(dataset)?;
        let eval = pipeline::evaluate(&self.scorer()?, dataset, &responses, self.config.parallel)?;
        if !eval.failures.is_empty() {
            log::warn!("{} responses could not be scored and are excluded", eval.failures.len());
        }
        Ok(eval.results)
    }
}

fn evaluation_code(eval: &Evaluation) -> u8 {
    if eval.failures.is_empty() {
        exit::OK
    } else if eval.results.is_empty() && eval.failures.iter().all(|f| f.backend_failure) {
        exit::BACKEND
    } else {
        exit::PARTIAL
    }
}

fn print_evaluation(eval: &Evaluation, out: &Path) -> Result<(), Failure> {
    println!(
        "scored {} responses, {} not scored; outputs in {}",
        eval.results.len(),
        eval.failures.len(),
        out.display()
    );
    if eval.results.is_empty() {
        return Ok(());
    }
    println!("{:<24} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8}", "model", "n", "entity", "semantic", "factual", "struct", "vb");
    for s in pipeline::summaries(&eval.results)? {
        let c = |k: &str| s.components[k].mean;
        println!(
            "{:<24} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            s.group,
            s.n,
            c("entity_f1"),
            c("semantic_similarity"),
            c("factual_consistency"),
            c("structured_overlap"),
            s.vb_score.mean
        );
    }
    Ok(())
}

fn cmd_evaluate(ctx: &Context) -> Outcome {
    let dataset = ctx.dataset()?;
    let responses = ctx.responses(&dataset)?;
    let eval = pipeline::evaluate(&ctx.scorer()?, &dataset, &responses, ctx.config.parallel)?;
    pipeline::write_evaluation(&eval, &ctx.global.out, &ctx.config)?;
    print_evaluation(&eval, &ctx.global.out)?;
    Ok(evaluation_code(&eval))
}

fn cmd_compare(ctx: &Context) -> Outcome {
    let dataset = ctx.dataset()?;
    let results = ctx.results(&dataset)?;
    let report = pipeline::compare(&results, &dataset, &ctx.config, ctx.global.prompt_config)?;
    let path = ctx.write_json("comparison.json", &report)?;
    println!(
        "{} models, {} samples ({}); ANOVA F = {:.4}, p = {:.4}",
        report.models.len(),
        report.samples,
        report.prompt_config,
        report.anova.statistic,
        report.anova.p_value
    );
    for p in &report.pairwise {
        println!(
            "  {} vs {}: t = {:.4}, p = {:.4} (alpha {:.6}){}, d = {}",
            p.a,
            p.b,
            p.test.statistic,
            p.test.p_value,
            p.test.applicable_alpha(),
            if p.test.significant { " significant" } else { "" },
            p.effect.map(|e| format!("{:.4} ({})", e.d, e.band)).unwrap_or_else(|| "n/a".into())
        );
    }
    println!("ranking: {}", report.ranking.model_order().join(" > "));
    println!("written {}", path.display());
    Ok(exit::OK)
}

fn cmd_sensitivity(ctx: &Context) -> Outcome {
    let dataset = ctx.dataset()?;
    let results = ctx.results(&dataset)?;
    if results.is_empty() {
        return Err(Error::NoData("no results".into()).into());
    }
    let config = pipeline::select_config(&results, ctx.global.prompt_config)?;
    let report = pipeline::sensitivity(&pipeline::model_means(&results, config), &pipeline::ordered_schemes(&ctx.config)?)?;
    let path = ctx.write_json("sensitivity.json", &report)?;
    for (i, scheme) in report.schemes.iter().enumerate() {
        println!("{:<20} {}", scheme, report.rankings[i].model_order().join(" > "));
    }
    if report.stable {
        println!("stable under all {} schemes", report.schemes.len());
    } else {
        println!("order changes under: {}", report.flips.join(", "));
    }
    println!("written {}", path.display());
    Ok(exit::OK)
}

fn cmd_sweep(ctx: &Context, configs: &[PromptConfigKind]) -> Outcome {
    let dataset = ctx.dataset()?;
    let reference = ctx.global.reference_backends;
    let models = pipeline::build_models(&ctx.config, &dataset, reference)?;
    let configs = if configs.is_empty() { ctx.config.harness.configs.clone() } else { configs.to_vec() };
    let cache_path = if ctx.config.harness.cache.is_absolute() {
        ctx.config.harness.cache.clone()
    } else {
        ctx.out(&ctx.config.harness.cache.to_string_lossy())
    };
    std::fs::create_dir_all(&ctx.global.out).map_err(|e| Failure::from(Error::io(&ctx.global.out, e)))?;
    let cache = ResponseCache::open(&cache_path)?;
    if cache.skipped() > 0 {
        log::warn!("{}: skipped {} unreadable cache lines", cache_path.display(), cache.skipped());
    }
    let mut generator = Generator::new(Arc::new(cache));
    generator.retry = ctx.config.harness.retry;
    if reference {
        generator.clock = Arc::new(harness::epoch);
    }
    let run = pipeline::run_sweep(&dataset, &models, &configs, &ctx.config, &generator, ctx.config.parallel)?;
    datamodel::save_responses(&run.responses, ctx.out("responses.jsonl"))?;
    ctx.write_json("sweep_failures.json", &run.failures)?;
    println!(
        "generated {} responses ({} from cache, {} backend calls, {} failed)",
        run.responses.len(),
        run.cache_hits,
        run.backend_calls,
        run.failures.len()
    );
    if run.responses.is_empty() {
        return Ok(if run.failures.is_empty() { exit::NO_DATA } else { exit::BACKEND });
    }
    let eval = pipeline::evaluate(&ctx.scorer()?, &dataset, &run.responses, ctx.config.parallel)?;
    pipeline::write_evaluation(&eval, &ctx.global.out, &ctx.config)?;
    let deltas = pipeline::prompt_sensitivity(&eval.results, ctx.config.stats.alpha)?;
    ctx.write_json("prompt_sensitivity.json", &deltas)?;
    print_evaluation(&eval, &ctx.global.out)?;
    for d in &deltas {
        println!(
            "  {} {}: delta {:+.4}{}",
            d.model_id,
            d.prompt_config,
            d.delta,
            d.test
                .as_ref()
                .map(|t| format!(", p = {:.4}{}", t.p_value, if t.significant { " significant" } else { "" }))
                .unwrap_or_default()
        );
    }
    let code = evaluation_code(&eval);
    Ok(if code == exit::OK && !run.failures.is_empty() { exit::PARTIAL } else { code })
}

fn cmd_report(ctx: &Context) -> Outcome {
    let dataset = ctx.dataset()?;
    let results = ctx.results(&dataset)?;
    let responses = match &ctx.global.responses {
        Some(_) => ctx.responses(&dataset)?,
        None => Vec::new(),
    };
    let report = pipeline::build_report(&results, &dataset, &responses, &ctx.config)?;
    pipeline::write_report(&report, &ctx.global.out)?;
    println!("report written to {}", ctx.out(pipeline::REPORT_MD).display());
    Ok(exit::OK)
}

fn cmd_cost(ctx: &Context) -> Outcome {
    let dataset = ctx.dataset()?;
    let responses = ctx.responses(&dataset)?;
    if responses.is_empty() {
        return Err(Error::NoData("no responses".into()).into());
    }
    let costs = pipeline::cost_report(&responses, &ctx.config);
    let path = ctx.write_json("cost.json", &costs)?;
    for c in &costs {
        let total = c.total_usd.map(|t| format!("${t:.4}")).unwrap_or_else(|| "unpriced".into());
        println!(
            "{:<24} {:>5} queries {:>9} in {:>9} out  {}",
            c.model_id, c.samples, c.input_tokens, c.output_tokens, total
        );
        for (q, usd) in &c.projections {
            println!("    {q:>9} queries: ${usd:.2}");
        }
    }
    println!("written {}", path.display());
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let run = || -> Outcome {
        let ctx = Context::new(cli.global)?;
        match &cli.command {
            Command::Evaluate => cmd_evaluate(&ctx),
            Command::Compare => cmd_compare(&ctx),
            Command::Sensitivity => cmd_sensitivity(&ctx),
            Command::Sweep { configs } => cmd_sweep(&ctx, configs),
            Command::Report => cmd_report(&ctx),
            Command::Cost => cmd_cost(&ctx),
        }
    };
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
