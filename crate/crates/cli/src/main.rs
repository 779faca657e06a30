//! `emoflow` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use emoflow_core::backends::{BackendClient, MockScript, MockServer};
use emoflow_core::config::{EngineConfig, BACKEND_URL_ENV};
use emoflow_core::editing::ToolRegistry;
use emoflow_core::knowledge::{build_tree, load_tree, save_tree, EmotionFactorTree, ExemplarItem};
use emoflow_core::{evaluate_runs, inspect, resume, run_job, Engine, JobSpec, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "emoflow", version, about = "Multi-agent affective image manipulation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML engine configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the job and the deterministic mock backends.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Backend profile name (`mock`, `local` or one defined in the config).
    #[arg(long, global = true)]
    backend_profile: Option<String>,
    /// Output location: tree directory, run directory or report directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the profile base URL.
    #[arg(long, global = true, env = BACKEND_URL_ENV, hide_env_values = true)]
    backend_url: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster an exemplars file (JSON array or JSON lines) into tree files.
    BuildKb { exemplars: PathBuf },
    /// Execute a job file into a run directory, or resume one.
    Run {
        /// JobSpec JSON file; omit with --resume.
        job: Option<PathBuf>,
        /// Directory holding the emotion factor tree.
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Continue the run directory given by --out.
        #[arg(long)]
        resume: bool,
        /// Branches processed concurrently.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Score completed run directories.
    Metrics {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Print a readable trace of a run directory.
    Inspect { run: PathBuf },
    /// Serve the deterministic mock backends over HTTP.
    MockServer {
        #[arg(long, default_value_t = 8700)]
        port: u16,
        /// Mock script (JSON); defaults to the config's script.
        #[arg(long)]
        script: Option<PathBuf>,
    },
}

struct Session {
    config: EngineConfig,
    global: Global,
}

impl Session {
    fn load(global: Global) -> Result<Self> {
        let config = match &global.config {
            Some(path) => EngineConfig::load(path)?,
            None => EngineConfig::default(),
        };
        Ok(Self { config, global })
    }

    fn script(&self, explicit: Option<&Path>) -> Result<MockScript> {
        let path = explicit.map(Path::to_path_buf).or_else(|| self.config.mock_script.clone());
        let mut script = match path {
            Some(p) => {
                let text = fs::read_to_string(&p).with_context(|| format!("reading mock script {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing mock script {}", p.display()))?
            }
            None => MockScript::default(),
        };
        if let Some(seed) = self.global.seed {
            script.seed = seed;
        }
        Ok(script)
    }

    fn client(&self, fallback_profile: &str) -> Result<BackendClient> {
        let name = self.global.backend_profile.as_deref().unwrap_or(fallback_profile);
        let profile = self.config.profile(name, self.global.backend_url.as_deref())?;
        log::info!("backend profile {name} at {}", profile.base_url);
        Ok(BackendClient::connect(profile, self.script(None)?)?)
    }

    fn out(&self, what: &str) -> Result<&Path> {
        match &self.global.out {
            Some(p) => Ok(p),
            None => bail!("--out <dir> is required for {what}"),
        }
    }
}

fn read_exemplars(path: &Path) -> Result<Vec<ExemplarItem>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn build_kb(ctx: &Session, exemplars: &Path) -> Result<()> {
    let out = ctx.out("build-kb")?;
    let items = read_exemplars(exemplars)?;
    let client = ctx.client("mock")?;
    let tree = build_tree(&items, &ctx.config.cluster, &client)?;
    save_tree(&tree, out)?;
    println!("{} exemplars -> {} factor nodes in {}", items.len(), tree.nodes().len(), out.display());
    Ok(())
}

fn run(ctx: &Session, job: Option<&Path>, kb: Option<&Path>, resume_run: bool, parallelism: Option<usize>) -> Result<()> {
    let out = ctx.out("run")?;
    let tree = match kb {
        Some(dir) => load_tree(dir).with_context(|| format!("loading knowledge base {}", dir.display()))?,
        None => EmotionFactorTree::empty(0, ctx.config.cluster),
    };
    let registry = ToolRegistry::default_table();
    let opts = RunOptions {
        settings: ctx.config.run.settings,
        parallelism: parallelism.unwrap_or(ctx.config.run.parallelism).max(1),
        halt_after: None,
    };

    let record = if resume_run {
        if job.is_some() {
            bail!("--resume continues the job stored in the run directory; drop the job file");
        }
        let spec: JobSpec = serde_json::from_str(
            &fs::read_to_string(out.join("job.json")).with_context(|| format!("{} is not a run directory", out.display()))?,
        )?;
        let client = ctx.client(&spec.backend_profile)?;
        let engine = Engine { tree: &tree, registry: &registry, backends: &client };
        resume(out, engine, opts)?
    } else {
        let Some(job) = job else { bail!("a job file is required unless --resume is given") };
        let mut spec: JobSpec = serde_json::from_str(&fs::read_to_string(job).with_context(|| format!("reading {}", job.display()))?)
            .with_context(|| format!("parsing {}", job.display()))?;
        if let Some(seed) = ctx.global.seed {
            spec.seed = seed;
        }
        if let Some(p) = &ctx.global.backend_profile {
            spec.backend_profile = p.clone();
        }
        // relative source paths are taken relative to the job file
        let source = Path::new(&spec.source_image);
        if source.is_relative() {
            if let Some(dir) = job.parent() {
                spec.source_image = dir.join(source).display().to_string();
            }
        }
        let client = ctx.client(&spec.backend_profile)?;
        let engine = Engine { tree: &tree, registry: &registry, backends: &client };
        run_job(&spec, engine, out, opts)?
    };

    let accepted = record.accepted().count();
    println!("{}: {accepted} of {} branches accepted", out.display(), record.branches.len());
    for o in &record.outputs {
        println!("  branch {}: {}", o.branch, out.join(&o.image.uri).display());
    }
    Ok(())
}

fn metrics(ctx: &Session, runs: &[PathBuf], json: bool) -> Result<()> {
    let client = ctx.client("mock")?;
    let report = evaluate_runs(runs, &client)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = &ctx.global.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), format!("{text}\n"))?;
    }
    if json {
        println!("{text}");
    } else {
        print!("{}", report.render_table());
    }
    Ok(())
}

fn mock_server(ctx: &Session, port: u16, script: Option<&Path>) -> Result<()> {
    let server = MockServer::start(ctx.script(script)?, port)?;
    println!("mock backends listening on {}", server.url());
    server.run_forever();
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let ctx = Session::load(cli.global)?;
    match cli.command {
        Command::BuildKb { exemplars } => build_kb(&ctx, &exemplars),
        Command::Run { job, kb, resume, parallelism } => run(&ctx, job.as_deref(), kb.as_deref(), resume, parallelism),
        Command::Metrics { runs, json } => metrics(&ctx, &runs, json),
        Command::Inspect { run } => {
            print!("{}", inspect(&run)?);
            Ok(())
        }
        Command::MockServer { port, script } => mock_server(&ctx, port, script.as_deref()),
    }
}
