use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dris_core::broker::MergeMode;
use dris_core::corpus::{generate_corpus, read_corpus, write_corpus, CorpusConfig};
use dris_core::federation::Snapshot;
use dris_core::model::{Document, Level};
use dris_core::report::{cmd_compare, cmd_ingest, cmd_query, cmd_run, corpus_stimuli, format_hits};
use dris_core::simnet::{read_scenario, SimConfig, Stimulus, Topology, TopologySpec};

#[derive(Parser)]
#[command(
    name = "dris",
    version,
    about = "Hierarchical federated search simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus into a topology and print per-organization counts.
    Ingest {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run a scenario through the simulated network and report metrics.
    Run(RunArgs),
    /// Search a snapshot left by `run --snapshot`.
    Query {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, value_enum, default_value_t = ModeArg::Global)]
        merge_mode: ModeArg,
        /// Query text.
        #[arg(required = true)]
        text: Vec<String>,
    },
    /// Write a seeded synthetic corpus for the organizations of a topology.
    GenCorpus {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        docs_per_org: usize,
        #[arg(long, default_value_t = 5_000)]
        vocab_size: usize,
        /// Plant a token unique to each document this many times.
        #[arg(long, default_value_t = 0)]
        unique_tokens: usize,
        #[arg(long, default_value_t = 0)]
        rare_terms: usize,
        /// Grow every n-th document toward 1 MiB.
        #[arg(long, default_value_t = 0)]
        large_every: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario under both merge modes and compare with the oracles.
    Compare(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    topology: PathBuf,
    /// Documents to upsert at their modified times.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// JSON Lines stimuli.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Simulation settings as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sim-seconds.
    #[arg(long)]
    harvest_period: Option<u64>,
    /// Sim-seconds.
    #[arg(long)]
    push_period: Option<u64>,
    /// Sim-seconds.
    #[arg(long)]
    end_time: Option<u64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, value_enum)]
    merge_mode: Option<ModeArg>,
    #[arg(long)]
    drop_prob: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the event trace (JSON Lines) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the final root and union state here.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Raw,
    Global,
}

impl From<ModeArg> for MergeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => MergeMode::Raw,
            ModeArg::Global => MergeMode::Global,
        }
    }
}

/// Bad input (exit 1) versus our own failure (exit 2).
enum Failure {
    Validation(anyhow::Error),
    Internal(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn invalid(self) -> Outcome<T>;
    fn internal(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn internal(self) -> Outcome<T> {
        self.map_err(|e| Failure::Internal(e.into()))
    }
}

fn open(path: &Path) -> Outcome<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("cannot open {}", path.display()))
        .invalid()
}

fn load_topology(path: &Path) -> Outcome<(TopologySpec, Topology)> {
    let spec: TopologySpec = serde_json::from_reader(open(path)?)
        .with_context(|| format!("{}: bad topology", path.display()))
        .invalid()?;
    let topology = spec
        .build()
        .with_context(|| format!("{}: bad topology", path.display()))
        .invalid()?;
    Ok((spec, topology))
}

fn load_corpus(path: &Path) -> Outcome<Vec<Document>> {
    read_corpus(open(path)?)
        .with_context(|| format!("{}", path.display()))
        .invalid()
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome<()> {
    fs::write(path, bytes)
        .with_context(|| format!("cannot write {}", path.display()))
        .internal()
}

fn sim_config(args: &RunArgs) -> Outcome<SimConfig> {
    let mut config: SimConfig = match &args.config {
        Some(p) => serde_json::from_reader(open(p)?)
            .with_context(|| format!("{}: bad config", p.display()))
            .invalid()?,
        None => SimConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(p) = args.harvest_period {
        config.harvest_period = p;
    }
    if let Some(p) = args.push_period {
        config.description_push_period = p;
    }
    if let Some(t) = args.end_time {
        config.end_time = t;
    }
    if let Some(w) = args.width {
        config.query_width = Some(w);
    }
    if let Some(m) = args.merge_mode {
        config.merge_mode = m.into();
    }
    if let Some(p) = args.drop_prob {
        config.drop_probability = p;
    }
    config.validate().invalid()?;
    Ok(config)
}

fn stimuli(args: &RunArgs, topology: &Topology) -> Outcome<Vec<Stimulus>> {
    let scenario = match &args.scenario {
        Some(p) => read_scenario(open(p)?)
            .with_context(|| format!("{}", p.display()))
            .invalid()?,
        None => Vec::new(),
    };
    let docs = match &args.corpus {
        Some(p) => load_corpus(p)?,
        None => Vec::new(),
    };
    corpus_stimuli(&docs, topology, scenario).invalid()
}

fn run(cli: Cli) -> Outcome<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Ingest { topology, corpus } => {
            let (spec, topo) = load_topology(&topology)?;
            let docs = load_corpus(&corpus)?;
            let fed = cmd_ingest(&docs, &spec).invalid()?;
            for org in topo.with_level(Level::Org) {
                let n = fed.org(org).map_or(0, |o| o.doc_count());
                writeln!(out, "{org}\t{n}").internal()?;
            }
        }
        Command::Run(args) => {
            let (_, topo) = load_topology(&args.topology)?;
            let config = sim_config(&args)?;
            let stimuli = stimuli(&args, &topo)?;
            let result = cmd_run(&topo, config, stimuli).invalid()?;
            if let Some(p) = &args.report {
                write_file(p, result.report.to_json().as_bytes())?;
            }
            if let Some(p) = &args.trace {
                let f = File::create(p)
                    .with_context(|| format!("cannot write {}", p.display()))
                    .internal()?;
                let mut w = BufWriter::new(f);
                result.sim.trace().write_jsonl(&mut w).internal()?;
                w.flush().internal()?;
            }
            if let Some(p) = &args.snapshot {
                let json = serde_json::to_vec(&result.sim.snapshot()).internal()?;
                write_file(p, &json)?;
            }
            write!(out, "{}", result.report.to_table()).internal()?;
        }
        Command::Query {
            snapshot,
            k,
            width,
            merge_mode,
            text,
        } => {
            let snap: Snapshot = serde_json::from_reader(open(&snapshot)?)
                .with_context(|| format!("{}: bad snapshot", snapshot.display()))
                .invalid()?;
            let hits = cmd_query(&snap, &text.join(" "), k, width, merge_mode.into()).invalid()?;
            write!(out, "{}", format_hits(&hits)).internal()?;
        }
        Command::GenCorpus {
            topology,
            seed,
            docs_per_org,
            vocab_size,
            unique_tokens,
            rare_terms,
            large_every,
            out: path,
        } => {
            let (_, topo) = load_topology(&topology)?;
            let orgs: Vec<_> = topo.with_level(Level::Org).cloned().collect();
            let config = CorpusConfig {
                seed,
                docs_per_org,
                vocab_size,
                unique_token_repeats: unique_tokens,
                rare_terms_per_org: rare_terms,
                large_doc_every: large_every,
                ..CorpusConfig::default()
            };
            let corpus = generate_corpus(&config, &orgs).invalid()?;
            let mut buf = Vec::new();
            write_corpus(&corpus.docs, &mut buf).internal()?;
            match path {
                Some(p) => write_file(&p, &buf)?,
                None => out.write_all(&buf).internal()?,
            }
        }
        Command::Compare(args) => {
            let (_, topo) = load_topology(&args.topology)?;
            let config = sim_config(&args)?;
            let stimuli = stimuli(&args, &topo)?;
            let report = cmd_compare(&topo, config, stimuli).invalid()?;
            let mut json = serde_json::to_string_pretty(&report).internal()?;
            json.push('\n');
            if let Some(p) = &args.report {
                write_file(p, json.as_bytes())?;
            }
            out.write_all(json.as_bytes()).internal()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}
