//! Command-line driver for the federated-memorization audit pipeline.
//!
//! Stages run as independent subcommands over documented file formats, so a
//! partition, a trained model dump, or a generation cache produced by one
//! invocation feeds the next. Exit codes: 0 success, 2 config error,
//! 3 backend failure, 4 data error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fedmem::corpus::{
    self, apply_template, group_into_clients, partition, PartitionConfig, PartitionMode, Sample,
    TemplateTask,
};
use fedmem::error::Error;
use fedmem::flsim::{train_federated, Algorithm};
use fedmem::harness::{
    emit_report, load_config, run_audit, run_generate, run_sweep, write_report_tables, AuditConfig,
    AuditOutput, AuditSink, BackendSpec, RegimeChoice, ReportFormat, RunReport, SweepFactor,
    SweepSpec,
};
use fedmem::metrics::Regime;

#[derive(Parser)]
#[command(
    name = "fedmem",
    about = "Audit training-data memorization of models trained under simulated federated learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a corpus across clients (by group or Dirichlet over labels).
    Partition(PartitionArgs),
    /// Train the reference model and write a versioned model dump.
    Train(TrainArgs),
    /// Run only the sample + generate stages, writing the generation cache.
    Generate(RunArgs),
    /// Run the full audit: train, sample, generate, retrieve, discriminate.
    Audit(RunArgs),
    /// One audit per factor value, sharing the generation cache when valid.
    Sweep(SweepArgs),
    /// Render a report.json as a table, CSV tables, or canonical JSON.
    Report(ReportArgs),
}

#[derive(Args)]
struct PartitionArgs {
    /// Input corpus: one JSON record per line.
    #[arg(long)]
    input: PathBuf,
    /// Output path for the partitioned corpus (client field rewritten).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Partition mode: by_group or dirichlet.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Record field holding the group value ("label" uses the label).
    #[arg(long)]
    group_key: Option<String>,
    /// Render each record's text through a chat template first
    /// (summarization, dialog, qa, classification).
    #[arg(long)]
    template: Option<String>,
    /// Replace each record's text with one named field instead.
    #[arg(long, conflicts_with = "template")]
    text_field: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Partitioned corpus path.
    #[arg(long)]
    clients: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Partitioned corpus path.
    #[arg(long)]
    clients: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Generation backend: builtin or http (with --url).
    #[arg(long, default_value = "builtin")]
    backend: String,
    #[arg(long)]
    url: Option<String>,
    /// Which model to audit: fl, cl, or both.
    #[arg(long, default_value = "fl")]
    regime: String,
    /// Load this model dump instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Factor to vary: decoding, prefix_len, algorithm, rounds, model_order.
    #[arg(long)]
    factor: String,
    /// Comma-separated factor values.
    #[arg(long)]
    values: String,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json produced by `audit` or `sweep`.
    #[arg(long)]
    input: PathBuf,
    /// table, csv, or structured.
    #[arg(long, default_value = "table")]
    format: String,
    /// Required for csv: directory receiving the flat tables.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Partition(args) => cmd_partition(args),
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(err.exit_code());
    }
}

fn load_run_config(args: &RunArgs) -> Result<AuditConfig, Error> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_clients(path: &Path) -> Result<Vec<fedmem::corpus::ClientDataset>, Error> {
    let samples = corpus::read_samples_from_path(path)?;
    group_into_clients(samples, None)
}

fn backend_spec(args: &RunArgs) -> Result<BackendSpec, Error> {
    BackendSpec::parse(&args.backend, args.url.as_deref())
}

fn cmd_partition(args: PartitionArgs) -> Result<(), Error> {
    let mut records = corpus::read_samples_from_path(&args.input)?;
    if let Some(task) = &args.template {
        let task = TemplateTask::parse(task)?;
        for record in &mut records {
            record.text = apply_template(record, task)?;
        }
    } else if let Some(field) = &args.text_field {
        for record in &mut records {
            record.text = record
                .fields
                .as_ref()
                .and_then(|f| f.get(field))
                .cloned()
                .ok_or_else(|| Error::MissingField(field.clone()))?;
        }
    }
    let base = load_config(args.config.as_deref())?;
    let mut pcfg: PartitionConfig = base.partition;
    if let Some(mode) = &args.mode {
        pcfg.mode = match mode.as_str() {
            "by_group" => PartitionMode::ByGroup,
            "dirichlet" => PartitionMode::Dirichlet,
            other => return Err(Error::Config(format!("unknown partition mode `{other}`"))),
        };
    }
    if let Some(clients) = args.clients {
        pcfg.num_clients = clients;
    }
    if let Some(alpha) = args.alpha {
        pcfg.alpha = alpha;
    }
    if let Some(seed) = args.seed {
        pcfg.seed = seed;
    }
    if let Some(key) = &args.group_key {
        pcfg.group_key = key.clone();
    }
    let datasets = partition(&records, &pcfg)?;
    let flat: Vec<Sample> = datasets.into_iter().flat_map(|d| d.samples).collect();
    let file = std::fs::File::create(&args.out)?;
    corpus::write_samples(std::io::BufWriter::new(file), &flat)?;
    println!(
        "partitioned {} records across {} clients -> {}",
        flat.len(),
        pcfg.num_clients,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(algorithm) = &args.algorithm {
        cfg.train.algorithm = match algorithm.as_str() {
            "fedavg" => Algorithm::Fedavg,
            "fedprox" => Algorithm::Fedprox,
            "centralized" => Algorithm::Centralized,
            other => return Err(Error::Config(format!("unknown algorithm `{other}`"))),
        };
    }
    if let Some(rounds) = args.rounds {
        cfg.train.rounds = rounds;
    }
    cfg.train.validate().map_err(|e| Error::Config(e.to_string()))?;
    let clients = load_clients(&args.clients)?;
    let model = train_federated(&clients, &cfg.train)?;
    model.save(&args.out)?;
    println!(
        "trained {:?} model (order {}, vocab {}) -> {}",
        cfg.train.algorithm,
        model.order(),
        model.vocab_size(),
        args.out.display()
    );
    println!("fingerprint {}", model.fingerprint());
    Ok(())
}

fn cmd_generate(args: RunArgs) -> Result<(), Error> {
    let cfg = load_run_config(&args)?;
    let clients = load_clients(&args.clients)?;
    let spec = backend_spec(&args)?;
    let regime = RegimeChoice::parse(&args.regime)?;
    let sink = AuditSink::under(&args.out_dir);
    let written = run_generate(&cfg, &clients, regime, &spec, args.model.as_deref(), &sink)?;
    for path in written {
        println!("cache {}", path.display());
    }
    Ok(())
}

fn cmd_audit(args: RunArgs) -> Result<(), Error> {
    let cfg = load_run_config(&args)?;
    let clients = load_clients(&args.clients)?;
    let spec = backend_spec(&args)?;
    let regime = RegimeChoice::parse(&args.regime)?;
    let sink = AuditSink::under(&args.out_dir);
    let output = run_audit(&cfg, &clients, regime, &spec, args.model.as_deref(), Some(&sink))?;
    write_output_tables(&output, &sink.report_dir.join("tables"))?;
    for run in [output.fl.as_ref(), output.cl.as_ref()].into_iter().flatten() {
        print_run_summary(run);
    }
    println!("report {}", sink.report_dir.join("report.json").display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let cfg = load_run_config(&args.run)?;
    let clients = load_clients(&args.run.clients)?;
    let spec = backend_spec(&args.run)?;
    let regime = RegimeChoice::parse(&args.run.regime)?;
    let sweep = SweepSpec {
        factor: SweepFactor::parse(&args.factor)?,
        values: args
            .values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect(),
    };
    let sink = AuditSink::under(&args.run.out_dir);
    let outputs = run_sweep(&cfg, &sweep, &clients, regime, &spec, Some(&sink))?;
    for (label, output) in &outputs {
        for run in [output.fl.as_ref(), output.cl.as_ref()].into_iter().flatten() {
            println!(
                "{}={} regime {} MR_intra {:.3}% MR_inter {:.3}% MR_total {:.3}%",
                args.factor,
                label,
                run.regime.name(),
                run.mean.mr_intra * 100.0,
                run.mean.mr_inter * 100.0,
                run.mean.mr_total * 100.0
            );
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Error> {
    let bytes = std::fs::read(&args.input)?;
    let output: AuditOutput = serde_json::from_slice(&bytes).map_err(Error::from)?;
    let format = ReportFormat::parse(&args.format)?;
    match format {
        ReportFormat::Structured => {
            let mut stdout = std::io::stdout().lock();
            use std::io::Write;
            stdout.write_all(&serde_json::to_vec_pretty(&output).map_err(Error::from)?)?;
            stdout.write_all(b"\n")?;
        }
        ReportFormat::Table => {
            for run in [output.fl.as_ref(), output.cl.as_ref()].into_iter().flatten() {
                for (t, report) in run.trials.iter().enumerate() {
                    println!("--- regime {} trial {t} ---", run.regime.name());
                    print!("{}", String::from_utf8_lossy(&emit_report(report, format)?));
                }
                print_run_summary(run);
            }
        }
        ReportFormat::Csv => {
            let dir = args
                .out_dir
                .ok_or_else(|| Error::Config("csv format needs --out-dir".into()))?;
            write_output_tables(&output, &dir)?;
            println!("tables written under {}", dir.display());
        }
    }
    Ok(())
}

fn write_output_tables(output: &AuditOutput, dir: &Path) -> Result<(), Error> {
    for run in [output.fl.as_ref(), output.cl.as_ref()].into_iter().flatten() {
        for (t, report) in run.trials.iter().enumerate() {
            let prefix = format!("{}_t{t}", run.regime.name().to_lowercase());
            write_report_tables(report, dir, &prefix)?;
        }
    }
    Ok(())
}

fn print_run_summary(run: &RunReport) {
    let tag = match run.regime {
        Regime::Fl => "FL",
        Regime::Cl => "CL",
    };
    println!(
        "regime {tag}: trials {}  mean MR_intra {:.3}%  MR_inter {:.3}%  MR_total {:.3}%  filtered {:.1}  failed {:.1}",
        run.trials.len(),
        run.mean.mr_intra * 100.0,
        run.mean.mr_inter * 100.0,
        run.mean.mr_total * 100.0,
        run.mean.filtered_generations,
        run.mean.failed_generations
    );
    for (t, report) in run.trials.iter().enumerate() {
        println!(
            "  trial {t}: MR_intra {:.3}%  MR_inter {:.3}%  MR_total {:.3}%",
            report.mr_intra * 100.0,
            report.mr_inter * 100.0,
            report.mr_total * 100.0
        );
    }
}
