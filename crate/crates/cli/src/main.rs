use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use attrbench_core::backend::{fit_reference, FitOptions, SEP_TOKEN};
use attrbench_core::bench::{self, BackendSpec, BenchmarkConfig, BenchmarkReport, TableFormat};
use attrbench_core::datasets::{convert, fixtures, load_canonical};
use attrbench_core::explainers::{self, check_supported};
use attrbench_core::verbalizer::{self, LlmConfig, VerbalizationRequest};
use attrbench_core::{
    explain, Attribution, Dataset, Error, ExplainerParams, Method, Metric, ModelBackend,
    RemoteBackend,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "attrbench",
    version,
    about = "Explain text classifiers and benchmark the explanations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attribute one input with one or more methods; writes JSONL to stdout.
    Explain(ExplainArgs),
    /// Run explainers and metrics over a dataset and write all artifacts.
    Benchmark(BenchmarkArgs),
    /// Re-render a saved report.
    Report(ReportArgs),
    /// Convert a raw corpus to canonical JSONL.
    Convert(ConvertArgs),
    /// Describe attributions or a metric table in natural language.
    Verbalize(VerbalizeArgs),
    /// Print what a backend supports.
    CheckBackend(CheckBackendArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Reference,
    Remote,
}

#[derive(Args)]
struct BackendArgs {
    /// Defaults to remote when --cmd or --endpoint is given.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Canonical dataset the reference model is fitted on (default: bundled movie reviews).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    fit_seed: u64,
    /// HTTP endpoint of a model server.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// Sidecar command line; consumes the remaining arguments.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    cmd: Option<Vec<String>>,
}

impl BackendArgs {
    fn is_remote(&self) -> Result<bool, Error> {
        let wired = self.cmd.is_some() || self.endpoint.is_some();
        match self.backend {
            Some(BackendKind::Reference) if wired => Err(Error::Config(
                "--cmd and --endpoint only apply to the remote backend".into(),
            )),
            Some(BackendKind::Remote) if !wired => Err(Error::Config(
                "remote backend needs --cmd or --endpoint".into(),
            )),
            _ => Ok(wired),
        }
    }

    fn spec(&self) -> Result<Option<BackendSpec>, Error> {
        if !self.is_remote()? {
            return Ok(None);
        }
        if self.cmd.is_some() && self.endpoint.is_some() {
            return Err(Error::Config(
                "give either --cmd or --endpoint, not both".into(),
            ));
        }
        Ok(Some(BackendSpec::Remote {
            command: self.cmd.clone(),
            endpoint: self.endpoint.clone(),
            timeout_secs: self.timeout_secs,
        }))
    }

    fn build(&self) -> anyhow::Result<Box<dyn ModelBackend>> {
        if self.is_remote()? {
            if let Some(cmd) = &self.cmd {
                if self.endpoint.is_some() {
                    bail!(Error::Config(
                        "give either --cmd or --endpoint, not both".into()
                    ));
                }
                return Ok(Box::new(RemoteBackend::spawn(cmd)?));
            }
            if let Some(url) = &self.endpoint {
                let timeout = Duration::from_secs(self.timeout_secs);
                return Ok(Box::new(RemoteBackend::connect_http(url, timeout)?));
            }
        }
        let dataset = match &self.train {
            Some(path) => {
                load_canonical(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => fixtures::movies_mini(),
        };
        let fit = FitOptions {
            seed: self.fit_seed,
            ..FitOptions::default()
        };
        Ok(Box::new(fit_reference(&dataset, fit)?))
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<TableFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    text: String,
    /// Second segment for pair tasks, joined with [SEP].
    #[arg(long)]
    hypothesis: Option<String>,
    /// Repeat or comma-separate.
    #[arg(long = "method", required = true, value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<Method>,
    /// Class to explain (default: the predicted class).
    #[arg(long)]
    target: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write an HTML heatmap here as well.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_metric)]
    metrics: Option<Vec<Metric>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Table printed to stdout.
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: TableFormat,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ReportArgs {
    report: PathBuf,
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: TableFormat,
    /// Rewrite all artifacts (table, attributions, heatmaps) into this directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Corpus {
    Movies,
    Hatexplain,
    Esnli,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(value_enum)]
    corpus: Corpus,
    /// Raw directory (movies) or file (hatexplain, esnli).
    raw: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct VerbalizeArgs {
    /// A report.json written by `benchmark`.
    report: PathBuf,
    /// Describe this instance's attributions instead of the metric table.
    #[arg(long)]
    instance: Option<String>,
    /// Restrict to one method (with --instance).
    #[arg(long, value_parser = parse_method, requires = "instance")]
    method: Option<Method>,
    /// Use the template only; no network.
    #[arg(long)]
    offline: bool,
    /// JSON file with LLM settings; flags below override it.
    #[arg(long)]
    llm_config: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    template_dir: Option<PathBuf>,
    /// Fail instead of falling back to the template when the API errors.
    #[arg(long)]
    no_fallback: bool,
    /// Print the full result (text, fallback flag, prompt) as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CheckBackendArgs {
    #[command(flatten)]
    backend: BackendArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for failures on the model or API side, 1 for everything the user can fix.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err)
            if err.is_backend_error() || matches!(err, Error::Api { .. } | Error::Timeout) =>
        {
            2
        }
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Explain(args) => cmd_explain(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Report(args) => cmd_report(args),
        Command::Convert(args) => cmd_convert(args),
        Command::Verbalize(args) => cmd_verbalize(args),
        Command::CheckBackend(args) => cmd_check_backend(args),
    }
}

fn cmd_explain(args: ExplainArgs) -> anyhow::Result<()> {
    let backend = args.backend.build()?;
    for m in &args.methods {
        check_supported(backend.as_ref(), *m).map_err(|e| Error::Config(format!("{m}: {e}")))?;
    }
    let text = match &args.hypothesis {
        Some(h) => format!("{} {SEP_TOKEN} {h}", args.text),
        None => args.text.clone(),
    };
    let seq = backend.tokenize(&text)?;
    let target = match args.target {
        Some(t) => t,
        None => backend
            .predict(std::slice::from_ref(&seq))?
            .first()
            .context("backend returned no prediction")?
            .argmax(),
    };
    let params = ExplainerParams {
        seed: args.seed,
        ..ExplainerParams::default()
    };
    let attributions = args
        .methods
        .iter()
        .map(
            |m| Ok(explain(backend.as_ref(), &seq, target, *m, &params)?.with_instance_id("input")),
        )
        .collect::<anyhow::Result<Vec<Attribution>>>()?;
    io::stdout().write_all(explainers::to_jsonl(&attributions)?.as_bytes())?;
    if let Some(path) = &args.heatmap {
        let html = bench::render_heatmap_html(&text, &seq.tokens, &attributions)?;
        fs::write(path, html).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Defaults, then the config file, then flags.
fn benchmark_config(args: &BenchmarkArgs) -> anyhow::Result<BenchmarkConfig> {
    let mut config = match (&args.config, &args.dataset) {
        (Some(path), _) => BenchmarkConfig::load(path)?,
        (None, Some(dataset)) => BenchmarkConfig::new(dataset),
        (None, None) => bail!(Error::Config(
            "benchmark needs --config or --dataset".into()
        )),
    };
    if let Some(d) = &args.dataset {
        config.dataset = d.clone();
    } else if let Some(path) = &args.config {
        // A relative dataset path in a config file is relative to that file.
        if config.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                config.dataset = dir.join(&config.dataset);
            }
        }
    }
    if let Some(m) = &args.methods {
        config.methods = m.clone();
    }
    if let Some(m) = &args.metrics {
        config.metrics = m.clone();
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    if let Some(d) = &args.output_dir {
        config.output_dir = d.clone();
    }
    if let Some(spec) = args.backend.spec()? {
        config.backend = spec;
    } else if args.backend.train.is_some() {
        bail!(Error::Config(
            "--train is not used by benchmark; the reference model is fitted on the benchmark dataset".into()
        ));
    }
    Ok(config)
}

fn cmd_benchmark(args: BenchmarkArgs) -> anyhow::Result<()> {
    let config = benchmark_config(&args)?;
    let report = bench::run_benchmark(&config)?;
    report
        .write_artifacts(&config.output_dir)
        .with_context(|| format!("writing artifacts to {}", config.output_dir.display()))?;
    print!("{}", bench::render_table(&report.table, args.format)?);
    if !report.errors.is_empty() {
        eprintln!(
            "{} cell error(s); see errors in {}",
            report.errors.len(),
            config.output_dir.join("report.json").display()
        );
    }
    Ok(())
}

fn load_report(path: &Path) -> anyhow::Result<BenchmarkReport> {
    BenchmarkReport::load(path)
        .map_err(|e| Error::Config(format!("cannot read report {}: {e}", path.display())).into())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let report = load_report(&args.report)?;
    if let Some(dir) = &args.output_dir {
        report.write_artifacts(dir)?;
    }
    print!("{}", bench::render_table(&report.table, args.format)?);
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> anyhow::Result<()> {
    let dataset: Dataset = match args.corpus {
        Corpus::Movies => convert::convert_movies(&args.raw)?,
        Corpus::Hatexplain => convert::convert_hatexplain(&args.raw)?,
        Corpus::Esnli => convert::convert_esnli(&args.raw)?,
    };
    match &args.output {
        Some(path) => {
            let file =
                fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            dataset.write(io::BufWriter::new(file))?;
            eprintln!(
                "wrote {} instances to {}",
                dataset.instances.len(),
                path.display()
            );
        }
        None => dataset.write(io::stdout().lock())?,
    }
    Ok(())
}

fn llm_config(args: &VerbalizeArgs) -> anyhow::Result<LlmConfig> {
    let mut config = match &args.llm_config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad LLM config: {e}")))?
        }
        None => LlmConfig::default(),
    };
    if let Some(v) = &args.endpoint {
        config.endpoint = v.clone();
    }
    if let Some(v) = &args.model {
        config.model = v.clone();
    }
    if let Some(v) = &args.api_key_env {
        config.api_key_env = v.clone();
    }
    if let Some(v) = &args.template_dir {
        config.template_dir = Some(v.clone());
    }
    if args.no_fallback {
        config.fallback = false;
    }
    Ok(config)
}

fn cmd_verbalize(args: VerbalizeArgs) -> anyhow::Result<()> {
    let config = llm_config(&args)?;
    let report = load_report(&args.report)?;
    let requests = match &args.instance {
        None => vec![VerbalizationRequest::metrics(report.table.clone())],
        Some(id) => {
            let record = report
                .instances
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| Error::Config(format!("no instance {id:?} in the report")))?;
            let predicted = record
                .predicted
                .and_then(|p| report.dataset.label_names.get(p).cloned())
                .unwrap_or_else(|| "unknown".into());
            let text = record.tokens.join(" ");
            let requests: Vec<_> = report
                .attributions
                .iter()
                .filter(|a| &a.instance_id == id && args.method.is_none_or(|m| m == a.method))
                .map(|a| {
                    VerbalizationRequest::attribution(a.clone(), text.clone(), predicted.clone())
                })
                .collect();
            if requests.is_empty() {
                bail!(Error::Config(format!(
                    "no matching attributions for instance {id:?}"
                )));
            }
            requests
        }
    };
    let results: Vec<_> = if args.offline {
        requests
            .iter()
            .map(|r| {
                Ok(verbalizer::Verbalization {
                    text: verbalizer::template_fallback(r)?,
                    fallback: true,
                    prompt: verbalizer::render_prompt(r, &config)?,
                })
            })
            .collect()
    } else {
        verbalizer::verbalize_many(&requests, &config)
    };
    let mut out = io::stdout().lock();
    for (request, result) in requests.iter().zip(results) {
        let v = result?;
        if args.json {
            writeln!(out, "{}", serde_json::to_string(&v)?)?;
        } else {
            if let verbalizer::Payload::Attribution { attribution, .. } = &request.payload {
                writeln!(out, "[{}]", attribution.method)?;
            }
            writeln!(out, "{}", v.text.trim_end())?;
        }
    }
    Ok(())
}

fn cmd_check_backend(args: CheckBackendArgs) -> anyhow::Result<()> {
    let backend = args.backend.build()?;
    let info = backend.info();
    info.validate()?;
    println!("{}", serde_json::to_string_pretty(info)?);
    let unsupported: Vec<_> = Method::ALL
        .into_iter()
        .filter(|m| check_supported(backend.as_ref(), *m).is_err())
        .map(|m| m.as_str())
        .collect();
    if !unsupported.is_empty() {
        eprintln!(
            "methods this backend cannot run: {}",
            unsupported.join(", ")
        );
    }
    Ok(())
}
