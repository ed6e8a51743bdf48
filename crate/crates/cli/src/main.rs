//! `gcl`: plan sessions, run methods, emit prompts, audit task-ID leakage,
//! and merge reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gcl_core::config::{run_experiment, RunConfig};
use gcl_core::eval::{curve_csv, leakage_diagnostic, read_results, write_report, ReportFormat, RunResult};
use gcl_core::proto::HeadConfig;
use gcl_core::prompt::emit_instruction_jsonl;
use gcl_core::session::{EvalEdges, EvalMode, Scenario};
use gcl_core::testkit::{write_synth, SynthConfig};
use gcl_core::Exec;

#[derive(Parser)]
#[command(
    name = "gcl",
    version,
    about = "Graph continual-learning benchmark harness",
    after_help = "Environment:\n  EMBEDDINGS_API_KEY  bearer token for the http embedding provider"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a session plan; writes plan.json and plan_digest.txt.
    Plan(Common),
    /// Run methods; writes results.json and one run manifest per run.
    Run(Common),
    /// Emit instruction-tuning JSONL for one session's train nodes.
    Prompts {
        #[command(flatten)]
        common: Common,
        /// 0-based session index.
        #[arg(long, default_value_t = 0)]
        session: usize,
    },
    /// Task-ID leakage audit under local testing.
    DiagnoseLeakage {
        #[command(flatten)]
        common: Common,
        /// Smoothing steps to compare, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 8, 16])]
        k: Vec<usize>,
    },
    /// Merge results files into results.json, results.csv, results.md and curves.csv.
    Report {
        /// results.json files to merge.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Generate a synthetic dataset directory.
    Synth {
        /// JSON file with synthetic-graph settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Ncil,
    Fsncil,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Local,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgesArg {
    #[value(name = "intra_only")]
    IntraOnly,
    #[value(name = "full_union")]
    FullUnion,
}

/// Flags shared by the dataset-driven subcommands; each overrides the
/// matching key of the config file.
#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (nodes.jsonl, edges.tsv, class_names.json, features.bin).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Method id; repeat for several.
    #[arg(long = "method")]
    methods: Vec<String>,
    /// Seed; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum)]
    eval_edges: Option<EdgesArg>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
            cfg.synth = None;
        }
        if let Some(s) = self.scenario {
            cfg.scenario = match s {
                ScenarioArg::Ncil => Scenario::Ncil,
                ScenarioArg::Fsncil => Scenario::Fsncil,
            };
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Local => EvalMode::Local,
                ModeArg::Global => EvalMode::Global,
            };
        }
        if let Some(e) = self.eval_edges {
            cfg.eval_edges = match e {
                EdgesArg::IntraOnly => EvalEdges::IntraOnly,
                EdgesArg::FullUnion => EvalEdges::FullUnion,
            };
        }
        if !self.methods.is_empty() {
            cfg.methods = self.methods.clone();
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn cmd_plan(c: &Common) -> Result<()> {
    let cfg = c.resolve()?;
    let g = cfg.load_graph()?;
    let out = c.out_dir()?;
    let multi = cfg.seeds.len() > 1;
    for &seed in &cfg.seeds {
        let plan = cfg.plan(&g, seed)?;
        let suffix = if multi { format!("_seed{seed}") } else { String::new() };
        write(&out.join(format!("plan{suffix}.json")), serde_json::to_vec_pretty(&plan.to_json())?)?;
        let digest = plan.digest(&g);
        write(&out.join(format!("plan_digest{suffix}.txt")), &digest)?;
        print!("{digest}");
    }
    Ok(())
}

fn cmd_run(c: &Common) -> Result<()> {
    let cfg = c.resolve()?;
    let results = run_experiment(&cfg, Exec::default())?;
    let out = c.out_dir()?;
    let runs = out.join("runs");
    fs::create_dir_all(&runs)?;
    for (k, r) in results.iter().enumerate() {
        let name = format!("{:03}_{}_seed{}.json", k, r.run.method, r.run.seed);
        write(&runs.join(name), serde_json::to_vec_pretty(&r.run)?)?;
        let s = &r.summary;
        let local = match (s.aa, s.af) {
            (Some(aa), Some(af)) => format!(" AA={:.1} AF={:.1}", 100.0 * aa, 100.0 * af),
            _ => String::new(),
        };
        println!(
            "{} seed={} mean_acc={:.1} final_acc={:.1}{local}",
            r.run.method,
            r.run.seed,
            100.0 * s.mean_acc,
            100.0 * s.final_acc
        );
    }
    write_report(&results, &out.join("results.json"), ReportFormat::Json)?;
    Ok(())
}

fn cmd_prompts(c: &Common, session: usize) -> Result<()> {
    let cfg = c.resolve()?;
    let g = cfg.load_graph()?;
    let template = cfg.prompt_template();
    let out = c.out_dir()?;
    for &seed in &cfg.seeds {
        let plan = cfg.plan(&g, seed)?;
        let path = out.join(format!("instructions_s{session}_seed{seed}.jsonl"));
        let n = emit_instruction_jsonl(&plan, session, &template, &cfg.hop, &path, seed)?;
        println!("{} records -> {}", n, path.display());
    }
    Ok(())
}

fn cmd_leakage(c: &Common, k: &[usize]) -> Result<()> {
    let cfg = c.resolve()?;
    let g = cfg.load_graph()?;
    let out = c.out_dir()?;
    let hyper = cfg.expand().into_iter().next().expect("at least one grid point");
    let head = HeadConfig {
        hidden_dim: hyper.hidden_dim,
        epochs: hyper.epochs,
        lr: hyper.lr,
        dropout: hyper.dropout,
    };
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let plan = cfg.plan(&g, seed)?;
        let rep = leakage_diagnostic(&g, &plan, k, cfg.smooth_self_loops, &head, seed)?;
        println!("seed {seed}");
        print!("{}", rep.table());
        reports.push(serde_json::json!({ "seed": seed, "report": rep }));
    }
    write(&out.join("leakage.json"), serde_json::to_vec_pretty(&reports)?)?;
    Ok(())
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut all: Vec<RunResult> = Vec::new();
    for p in inputs {
        all.extend(read_results(p).with_context(|| format!("reading {}", p.display()))?);
    }
    if all.is_empty() {
        bail!("no runs found in the given results files");
    }
    fs::create_dir_all(out)?;
    write_report(&all, &out.join("results.json"), ReportFormat::Json)?;
    write_report(&all, &out.join("results.csv"), ReportFormat::Csv)?;
    write_report(&all, &out.join("results.md"), ReportFormat::Md)?;
    write(&out.join("curves.csv"), curve_csv(&all))?;
    print!("{}", gcl_core::eval::results_markdown(&all));
    Ok(())
}

fn cmd_synth(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let g = write_synth(&cfg, out)?;
    println!(
        "{} nodes, {} edges, {} classes -> {}",
        g.node_count(),
        g.edge_count(),
        g.num_classes(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan(c) => cmd_plan(c),
        Command::Run(c) => cmd_run(c),
        Command::Prompts { common, session } => cmd_prompts(common, *session),
        Command::DiagnoseLeakage { common, k } => cmd_leakage(common, k),
        Command::Report { inputs, out } => cmd_report(inputs, out),
        Command::Synth { config, seed, out } => cmd_synth(config.as_deref(), *seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
