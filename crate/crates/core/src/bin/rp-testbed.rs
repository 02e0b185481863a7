//! Operator-facing command line for the testbed.
//!
//! Starts the attack server, mints test instances for external relying
//! parties, runs the built-in mini relying party against instances, and
//! writes suite reports. Instances minted with `new-instance` are persisted
//! to a state directory that `serve` watches, so an external relying party
//! can be pointed at a long-running server.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use rp_testbed::harness::{Harness, Profile};
use rp_testbed::rp::{self, ResourceBudget};
use rp_testbed::scenario::{Engine, TestId, TestParams};
use rp_testbed::server::{self, AttackServer, ObservationLog};
use rp_testbed::tal::Tal;

//------------ Command line --------------------------------------------------

#[derive(Parser)]
#[command(name = "rp-testbed", version, about = "Adversarial RPKI repository testbed")]
struct Cli {
    /// Directory shared between `new-instance` and `serve`.
    #[arg(long, global = true, default_value = "rp-testbed-state")]
    state_dir: PathBuf,

    /// Base domain under which instance hostnames are minted.
    #[arg(long, global = true, default_value = "rpki.test")]
    domain: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the attack server.
    Serve {
        /// Listen address.
        #[arg(long, default_value = "127.0.0.1:8443")]
        listen: SocketAddr,
        /// PEM certificate chain; self-signed when omitted.
        #[arg(long, requires = "tls_key")]
        tls_cert: Option<String>,
        /// PEM private key.
        #[arg(long, requires = "tls_cert")]
        tls_key: Option<String>,
        /// Directory for persisted observation logs.
        #[arg(long)]
        obs_dir: Option<PathBuf>,
    },
    /// Mint a test instance and print its hostname and TAL path.
    NewInstance {
        /// Test letter, A through O.
        test: TestId,
        /// Parameter override, repeatable (e.g. width=3, depth=4,
        /// control=true).
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Run one test against the built-in mini relying party.
    Run {
        #[arg(long)]
        test: TestId,
        #[arg(long)]
        profile: Profile,
    },
    /// Run all fifteen tests and write a report.
    Suite {
        #[arg(long)]
        profile: Profile,
        /// Report file; defaults to report.json in the state directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the last suite report.
    Report {
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Report file; defaults to report.json in the state directory.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Print the persisted observation log of one instance.
    Observe {
        /// Instance UUID.
        uuid: String,
        /// Directory the server persists observations into.
        #[arg(long)]
        obs_dir: Option<PathBuf>,
    },
    /// Validate a TAL with the mini relying party.
    ///
    /// Exit code 0 on a clean run, 2 when a budget violation was recorded,
    /// 1 on operational errors.
    Validate {
        /// Trust anchor locator file.
        #[arg(long)]
        tal: PathBuf,
        /// Start from the undefended (all limits off) profile instead of
        /// the defended defaults.
        #[arg(long)]
        undefended: bool,
        /// Budget override, repeatable (e.g. max_depth=12, max_vrps=off).
        #[arg(long = "limit", value_name = "KEY=VALUE")]
        limits: Vec<String>,
        /// Budget file with one key=value per line; applied before --limit.
        #[arg(long)]
        budget_file: Option<PathBuf>,
        /// Connect to this address instead of resolving TAL hostnames.
        #[arg(long)]
        connect: SocketAddr,
        /// Write the VRP CSV here instead of stdout.
        #[arg(long)]
        vrps_out: Option<PathBuf>,
        /// Write the structured outcome record (JSON) here.
        #[arg(long)]
        outcome_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

//------------ Persistent instance state -------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct InstanceRecord {
    test: TestId,
    uuid: String,
    params: TestParams,
}

fn instances_dir(state_dir: &Path) -> PathBuf {
    state_dir.join("instances")
}

/// Loads every persisted instance into the engine. Returns how many were
/// newly registered.
fn load_instances(engine: &Engine, state_dir: &Path) -> anyhow::Result<usize> {
    let dir = instances_dir(state_dir);
    if !dir.is_dir() {
        return Ok(0);
    }
    let mut loaded = 0;
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let record: InstanceRecord = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        let hostname = format!(
            "{}-{}.{}",
            record.test.letter().to_ascii_lowercase(),
            record.uuid,
            engine.base_domain()
        );
        if engine.lookup(&hostname).is_none() {
            engine.new_instance_with_uuid(record.test, record.params, record.uuid);
            loaded += 1;
        }
    }
    Ok(loaded)
}

fn parse_params(test: TestId, overrides: &[String]) -> anyhow::Result<TestParams> {
    let mut params = TestParams::defaults_for(test);
    for pair in overrides {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--param takes KEY=VALUE, got {pair:?}"))?;
        params.set(key, value).map_err(anyhow::Error::msg)?;
    }
    Ok(params)
}

//------------ Subcommands ---------------------------------------------------

fn serve(
    cli: &Cli,
    listen: SocketAddr,
    tls_cert: Option<&str>,
    tls_key: Option<&str>,
    obs_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let engine = Arc::new(Engine::new(cli.domain.clone()));
    let loaded = load_instances(&engine, &cli.state_dir)?;
    if let Some(dir) = &obs_dir {
        std::fs::create_dir_all(dir)?;
    }
    let observations = Arc::new(ObservationLog::new(obs_dir));
    let tls = match (tls_cert, tls_key) {
        (Some(cert), Some(key)) => server::tls_from_files(cert, key)?,
        _ => server::self_signed_tls(&cli.domain)?,
    };
    let attack = Arc::new(AttackServer::new(engine.clone(), observations, tls));

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    // pick up instances minted while the server runs
    let watcher_engine = engine.clone();
    let state_dir = cli.state_dir.clone();
    runtime.spawn(async move {
        loop {
            tokio::time::sleep(std::time::Duration::from_secs(2)).await;
            if let Err(err) = load_instances(&watcher_engine, &state_dir) {
                log::warn!("instance reload failed: {err:#}");
            }
        }
    });
    eprintln!(
        "serving {} instance(s) for *.{} on https://{listen}",
        loaded, cli.domain
    );
    runtime.block_on(attack.serve(listen))
}

fn new_instance(cli: &Cli, test: TestId, overrides: &[String]) -> anyhow::Result<()> {
    let params = parse_params(test, overrides)?;
    let engine = Engine::new(cli.domain.clone());
    let instance = engine.new_instance(test, params.clone());
    let tal = engine.tal_for(&instance);

    let dir = instances_dir(&cli.state_dir);
    std::fs::create_dir_all(&dir)?;
    let record = InstanceRecord {
        test,
        uuid: instance.uuid.clone(),
        params,
    };
    std::fs::write(
        dir.join(format!("{}.json", instance.uuid)),
        serde_json::to_string_pretty(&record)?,
    )?;
    let tal_path = dir.join(format!("{}.tal", instance.uuid));
    std::fs::write(&tal_path, tal.encode())?;

    println!("{}", instance.hostname);
    println!("{}", tal_path.display());
    Ok(())
}

fn run(cli: &Cli, test: TestId, profile: Profile) -> anyhow::Result<()> {
    let harness = Harness::start(&cli.domain)?;
    let verdict = harness.run_test(test, profile);
    println!(
        "{}  {}  ({:.1}s)",
        verdict.test,
        verdict.status.mark(),
        verdict.elapsed_secs
    );
    for line in &verdict.evidence {
        println!("    {line}");
    }
    Ok(())
}

fn suite(cli: &Cli, profile: Profile, out: Option<PathBuf>) -> anyhow::Result<()> {
    let harness = Harness::start(&cli.domain)?;
    let report = harness.run_suite(profile);
    let out = out.unwrap_or_else(|| cli.state_dir.join("report.json"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.text_matrix());
    eprintln!("report written to {}", out.display());
    Ok(())
}

fn report(cli: &Cli, format: ReportFormat, file: Option<PathBuf>) -> anyhow::Result<()> {
    let file = file.unwrap_or_else(|| cli.state_dir.join("report.json"));
    let data = std::fs::read_to_string(&file)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", file.display()))?;
    let report: rp_testbed::harness::Report = serde_json::from_str(&data)?;
    match format {
        ReportFormat::Text => print!("{}", report.text_matrix()),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn observe(uuid: &str, obs_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let dir = obs_dir.unwrap_or_else(|| PathBuf::from("."));
    let path = dir.join(format!("{uuid}.jsonl"));
    match std::fs::read_to_string(&path) {
        Ok(lines) => print!("{lines}"),
        // a fresh instance has no log yet; that is an empty result, not
        // an error
        Err(err) if err.kind() == std::io::ErrorKind::NotFound => {}
        Err(err) => return Err(anyhow::anyhow!("cannot read {}: {err}", path.display())),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn validate(
    tal_path: &Path,
    undefended: bool,
    limits: &[String],
    budget_file: Option<&Path>,
    connect: SocketAddr,
    vrps_out: Option<&Path>,
    outcome_out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let tal_data = std::fs::read(tal_path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", tal_path.display()))?;
    let tal = Tal::decode(&tal_data).map_err(|e| anyhow::anyhow!("bad TAL: {e}"))?;

    let mut budget = if undefended {
        ResourceBudget::undefended()
    } else {
        ResourceBudget::defended()
    };
    let mut apply = |pair: &str| -> anyhow::Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("budget entries take KEY=VALUE, got {pair:?}"))?;
        budget
            .set(key.trim(), value.trim())
            .map_err(anyhow::Error::msg)
    };
    if let Some(file) = budget_file {
        for line in std::fs::read_to_string(file)?.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            apply(line)?;
        }
    }
    for pair in limits {
        apply(pair)?;
    }

    let outcome = rp::validate_https(&tal, &budget, &[], connect);

    let csv = outcome.vrps_csv();
    match vrps_out {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    let record = serde_json::json!({
        "vrps": outcome.vrps.len(),
        "warnings": outcome.warnings,
        "violations": outcome.violations
            .iter()
            .map(|(name, measured)| serde_json::json!({
                "limit": name,
                "measured": measured,
            }))
            .collect::<Vec<_>>(),
        "repos_visited": outcome.repos_visited,
        "bytes_fetched": outcome.bytes_fetched,
        "elapsed_secs": outcome.elapsed.as_secs_f64(),
        "partial": outcome.partial,
    });
    match outcome_out {
        Some(path) => std::fs::write(path, serde_json::to_string_pretty(&record)?)?,
        None => eprintln!("{record}"),
    }
    Ok(if outcome.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

//------------ Entry point ---------------------------------------------------

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Serve {
            listen,
            tls_cert,
            tls_key,
            obs_dir,
        } => serve(
            &cli,
            *listen,
            tls_cert.as_deref(),
            tls_key.as_deref(),
            obs_dir.clone(),
        )
        .map(|()| ExitCode::SUCCESS),
        Command::NewInstance { test, params } => {
            new_instance(&cli, *test, params).map(|()| ExitCode::SUCCESS)
        }
        Command::Run { test, profile } => run(&cli, *test, *profile).map(|()| ExitCode::SUCCESS),
        Command::Suite { profile, out } => {
            suite(&cli, *profile, out.clone()).map(|()| ExitCode::SUCCESS)
        }
        Command::Report { format, file } => {
            report(&cli, *format, file.clone()).map(|()| ExitCode::SUCCESS)
        }
        Command::Observe { uuid, obs_dir } => {
            observe(uuid, obs_dir.clone()).map(|()| ExitCode::SUCCESS)
        }
        Command::Validate {
            tal,
            undefended,
            limits,
            budget_file,
            connect,
            vrps_out,
            outcome_out,
        } => validate(
            tal,
            *undefended,
            limits,
            budget_file.as_deref(),
            *connect,
            vrps_out.as_deref(),
            outcome_out.as_deref(),
        ),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
