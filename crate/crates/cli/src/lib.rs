//! Command implementations behind the `policyguard` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use policyguard_core::config::{BackendConfig, Config};
use policyguard_core::enhancement::{extract_text, DocumentKind};
use policyguard_core::evaluation::Strategy;
use policyguard_core::harness::{self, RoundReport, Suite};
use policyguard_core::llm::{LlmClient, MockBackend, MockScript};
use policyguard_core::metrics::ReportFormat;
use policyguard_core::policy::{PolicyDatabase, PolicyStore};
use policyguard_core::session::SessionManager;

#[derive(Debug, Parser)]
#[command(name = "policyguard", version, about = "Step-wise guardrail for LLM web agents")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract policies from a document into the database.
    Ingest {
        path: PathBuf,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        db: Option<PathBuf>,
        /// `mock:<script.json>`; defaults to the configured backend.
        #[arg(long)]
        backend: Option<String>,
    },
    /// Replay a fixture suite under one strategy.
    Replay {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Replay a fixture suite under several strategies.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated strategy names, or `all`.
        #[arg(long, default_value = "all")]
        strategies: String,
    },
    /// Replay a fixture suite over several rounds of one database.
    Rounds {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Render a saved report.
    Report {
        /// `report.json` written by replay, compare or rounds.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub fixtures: PathBuf,
    /// Database file; in memory when absent.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// `mock:<script.json>`; the suite's embedded script when absent.
    #[arg(long)]
    pub backend: Option<String>,
    /// Directory for report.json and verdicts.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "table")]
    pub format: String,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn mock_client(path: &Path) -> Result<LlmClient> {
    let script = MockScript::load(path)?;
    Ok(LlmClient::scripted(Arc::new(MockBackend::new(script)?)))
}

/// Client from an explicit `--backend`, else from the suite, else the config.
fn client_for(spec: Option<&str>, suite: Option<&Suite>, cfg: &Config) -> Result<LlmClient> {
    match spec {
        Some(s) => match s.strip_prefix("mock:") {
            Some(path) => mock_client(Path::new(path)),
            None if s == "config" => Ok(cfg.build_client()?),
            None => bail!("unsupported backend `{s}`; use mock:<script.json> or config"),
        },
        None => match suite {
            Some(suite) if suite.mock_script.is_some() => Ok(suite.mock_client()?),
            _ => Ok(cfg.build_client()?),
        },
    }
}

fn parse_strategy(name: Option<&str>, cfg: &Config) -> Result<Strategy> {
    match name {
        Some(n) => n.parse().map_err(anyhow::Error::msg),
        None => Ok(cfg.evaluation.strategy),
    }
}

fn open_store(db: Option<&Path>, cfg: &Config) -> Result<Arc<PolicyStore>> {
    Ok(Arc::new(match db {
        Some(p) => PolicyStore::open(p, cfg.queue_capacity)?,
        None => PolicyStore::in_memory(PolicyDatabase::new(cfg.queue_capacity)),
    }))
}

fn emit(reports: &[RoundReport], by_strategy: bool, run: &RunArgs) -> Result<ExitCode> {
    let format: ReportFormat = run.format.parse().map_err(anyhow::Error::msg)?;
    print!("{}", harness::render(reports, by_strategy, format));
    if let Some(dir) = &run.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(reports)? + "\n")?;
        fs::write(dir.join("verdicts.jsonl"), harness::verdict_log_jsonl(reports))?;
    }
    let failures: Vec<_> = reports.iter().flat_map(|r| &r.invariant_failures).collect();
    for f in &failures {
        eprintln!("invariant violated: {f}");
    }
    Ok(if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(cli.config.as_deref())?;
    let update = cfg.update_config()?;
    match cli.command {
        Command::Ingest {
            path,
            kind,
            db,
            backend,
        } => {
            let kind = kind.map(|k| k.parse::<DocumentKind>()).transpose()?;
            let doc = extract_text(&path, kind)?;
            let client = client_for(backend.as_deref(), None, &cfg)?;
            let store = open_store(Some(db.as_deref().unwrap_or(&cfg.db_path)), &cfg)?;
            let manager = SessionManager::new(store.clone(), client, update)
                .with_ingestion(cfg.organization.clone(), cfg.enhancement.dedup_threshold);
            let report = manager.ingest(&doc)?;
            store.persist()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { run, strategy } => {
            let suite = Suite::load(&run.fixtures)?;
            let client = client_for(run.backend.as_deref(), Some(&suite), &cfg)?;
            let store = open_store(run.db.as_deref(), &cfg)?;
            let strategy = parse_strategy(strategy.as_deref(), &cfg)?;
            let report = harness::replay(&suite, &store, &client, strategy, &update)?;
            emit(&[report], false, &run)
        }
        Command::Compare { run, strategies } => {
            let suite = Suite::load(&run.fixtures)?;
            let strategies: Vec<Strategy> = if strategies == "all" {
                Strategy::ALL.to_vec()
            } else {
                strategies
                    .split(',')
                    .map(|s| s.parse().map_err(anyhow::Error::msg))
                    .collect::<Result<_>>()?
            };
            let start = match &run.db {
                Some(p) if p.exists() => PolicyDatabase::load(p)?,
                _ => PolicyDatabase::new(cfg.queue_capacity),
            };
            let backend = run.backend.clone();
            let make = || {
                client_for(backend.as_deref(), Some(&suite), &cfg)
                    .map_err(|e| harness::HarnessError::Invalid(e.to_string()))
            };
            let reports = harness::compare(&suite, &start, &make, &strategies, &update)?;
            emit(&reports, true, &run)
        }
        Command::Rounds { run, n, strategy } => {
            let suite = Suite::load(&run.fixtures)?;
            let client = client_for(run.backend.as_deref(), Some(&suite), &cfg)?;
            let store = open_store(run.db.as_deref(), &cfg)?;
            let strategy = parse_strategy(strategy.as_deref(), &cfg)?;
            let reports = harness::multi_round(&suite, &store, &client, strategy, &update, n)?;
            emit(&reports, false, &run)
        }
        Command::Report { input, format } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let reports: Vec<RoundReport> = serde_json::from_str(&text)?;
            let format: ReportFormat = format.parse().map_err(anyhow::Error::msg)?;
            let by_strategy = reports.windows(2).any(|w| w[0].strategy != w[1].strategy);
            print!("{}", harness::render(&reports, by_strategy, format));
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { listen } => serve(cfg, listen),
    }
}

fn serve(cfg: Config, listen: Option<String>) -> Result<ExitCode> {
    if let BackendConfig::Remote(r) = &cfg.backend {
        log::info!("remote backend at {}", r.endpoint);
    }
    // The blocking HTTP client must be created and dropped outside the runtime.
    let client = cfg.build_client()?;
    let store = open_store(Some(&cfg.db_path), &cfg)?;
    let manager = Arc::new(
        SessionManager::new(store, client, cfg.update_config()?)
            .with_flush_mode(cfg.update.flush)
            .with_default_strategy(cfg.evaluation.strategy)
            .with_ingestion(cfg.organization.clone(), cfg.enhancement.dedup_threshold),
    );
    let addr = listen.unwrap_or_else(|| cfg.listen.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let state = policyguard_gateway::AppState::new(manager.clone());
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        policyguard_gateway::serve(listener, state).await?;
        anyhow::Ok(())
    })?;
    drop(runtime);
    drop(manager);
    Ok(ExitCode::SUCCESS)
}
