//! `showctl`: run a live show, replay a recorded one, benchmark the queues in
//! virtual time, or score a pose recording offline.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or input,
//! 3 determinism check failed.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use shrine_core::oracle::{builtin_library, score_against, MoveLibrary, PoseSequence, ScoreConfig};
use shrine_core::orchestrator::sim::{run_bench, BenchConfig, BenchError, Workload};
use shrine_core::show::{replay, ShowConfig, ShowError, ShowOptions, ShowRecording, ShowSeeds};
use shrine_service::{BackendChoice, Service, ServiceConfig};

#[derive(Parser)]
#[command(
    name = "showctl",
    version,
    about = "Show control for a generative live performance"
)]
struct Cli {
    /// Show config (run), recording (replay), bench config (bench) or
    /// scoring config (score).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; every seed the show uses is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accepted for symmetry: replay and bench always run in virtual time,
    /// run never does.
    #[arg(long, global = true)]
    virtual_time: bool,
    /// Orchestrator journal; queued jobs survive a restart.
    #[arg(long, global = true)]
    journal: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a live show on the wall clock.
    Run {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Backend bindings, `{"kind":"mock"}` or `{"kind":"remote",...}`.
        #[arg(long)]
        backends: Option<PathBuf>,
        /// Real seconds slept per reported backend second (mock rehearsals).
        #[arg(long, default_value_t = 0.0)]
        latency_scale: f64,
        #[arg(long)]
        operator_token: Option<String>,
        /// Where `{show_id}.manifest.jsonl` goes; defaults next to the journal.
        #[arg(long)]
        manifest_dir: Option<PathBuf>,
    },
    /// Replay a recorded show and report its fingerprint.
    Replay {
        /// The recording; `--config` works too.
        recording: Option<PathBuf>,
        /// Golden fingerprint file. Written if missing, compared otherwise.
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Replay this many times; all fingerprints must agree.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Also write the manifest as JSON lines.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Simulate the generation queues under load.
    Bench {
        /// Include every sampled job and its completion time.
        #[arg(long)]
        detail: bool,
    },
    /// Score an audience pose recording against reference choreography.
    Score {
        audience: PathBuf,
        /// Reference pose recording.
        #[arg(long, conflicts_with = "moves")]
        reference: Option<PathBuf>,
        /// Three move ids, comma separated, rendered from the move library.
        #[arg(long, value_delimiter = ',')]
        moves: Vec<String>,
        /// Move library JSON; the built-in twelve moves when unset.
        #[arg(long)]
        library: Option<PathBuf>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Determinism(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("showctl: config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Determinism(msg)) => {
            eprintln!("showctl: determinism check failed: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("showctl: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run {
            listen,
            backends,
            latency_scale,
            operator_token,
            manifest_dir,
        } => {
            if cli.virtual_time {
                return Err(config_err(anyhow::anyhow!(
                    "run is live and uses the wall clock; use replay or bench for virtual time"
                )));
            }
            run(
                cli,
                listen,
                backends.as_deref(),
                *latency_scale,
                operator_token.clone(),
                manifest_dir.clone(),
            )
        }
        Command::Replay {
            recording,
            golden,
            runs,
            manifest,
        } => {
            let path = recording
                .as_ref()
                .or(cli.config.as_ref())
                .ok_or_else(|| config_err(anyhow::anyhow!("replay needs a recording")))?;
            let report = replay_cmd(cli, path, golden.as_deref(), *runs, manifest.as_deref())?;
            emit(cli, &report)
        }
        Command::Bench { detail } => emit(cli, &bench_cmd(cli, *detail)?),
        Command::Score {
            audience,
            reference,
            moves,
            library,
        } => emit(
            cli,
            &score_cmd(
                cli,
                audience,
                reference.as_deref(),
                moves,
                library.as_deref(),
            )?,
        ),
    }
}

fn emit(cli: &Cli, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serializing report")? + "\n";
    match &cli.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
            {
                // a closed pipe (`| head`) is the reader's choice, not a failure
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(anyhow::Error::from(e).context("writing report").into())
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::Config)
}

fn show_error(e: ShowError) -> Failure {
    match e {
        ShowError::Config(_) | ShowError::MalformedRecording(_) => config_err(e),
        other => Failure::Runtime(other.into()),
    }
}

fn run(
    cli: &Cli,
    listen: &str,
    backends: Option<&Path>,
    latency_scale: f64,
    operator_token: Option<String>,
    manifest_dir: Option<PathBuf>,
) -> Result<(), Failure> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let show = match &cli.config {
        Some(path) => ShowConfig::load(path).map_err(show_error)?,
        None => ShowConfig::default(),
    };
    let backends: BackendChoice = match backends {
        Some(path) => read_json(path)?,
        None => BackendChoice::Mock,
    };
    let asset_dir = cli
        .config
        .as_ref()
        .and_then(|p| p.parent())
        .map(Path::to_path_buf);
    let manifest_dir = manifest_dir.or_else(|| {
        cli.journal
            .as_ref()
            .map(|j| j.parent().map(Path::to_path_buf).unwrap_or_default())
    });
    let mut config = ServiceConfig::new(show, ShowSeeds::from_base(cli.seed.unwrap_or(0)));
    config.options = ShowOptions {
        journal: cli.journal.clone(),
        manifest_dir,
        asset_dir,
        keep_previews: true,
    };
    config.backends = backends;
    config.latency_scale = latency_scale;
    config.operator_token = operator_token;

    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async {
        let service = Service::start(config).map_err(show_error)?;
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        eprintln!(
            "showctl: show {:?} listening on http://{}",
            service.live.lock().show_id(),
            listener.local_addr().context("local addr")?
        );
        service.serve(listener).await.context("serving")?;
        Ok(())
    })
}

fn replay_cmd(
    cli: &Cli,
    path: &Path,
    golden: Option<&Path>,
    runs: usize,
    manifest_out: Option<&Path>,
) -> Result<Value, Failure> {
    let mut rec = ShowRecording::load(path).map_err(show_error)?;
    if let Some(seed) = cli.seed {
        rec.seeds = ShowSeeds::from_base(seed);
    }
    let mut fingerprints = Vec::new();
    let mut last = None;
    for _ in 0..runs.max(1) {
        let out = replay(&rec).map_err(show_error)?;
        fingerprints.push(out.fingerprint.clone());
        last = Some(out);
    }
    let out = last.expect("at least one run");
    if fingerprints.iter().any(|f| *f != out.fingerprint) {
        return Err(Failure::Determinism(format!(
            "fingerprints differ between runs: {fingerprints:?}"
        )));
    }
    if let Some(m) = manifest_out {
        std::fs::write(m, out.manifest.to_jsonl())
            .with_context(|| format!("writing {}", m.display()))?;
    }
    let golden_status = match golden {
        None => Value::Null,
        Some(g) if g.exists() => {
            let expected =
                std::fs::read_to_string(g).with_context(|| format!("reading {}", g.display()))?;
            if expected.trim() != out.fingerprint {
                return Err(Failure::Determinism(format!(
                    "fingerprint {} does not match golden {} in {}",
                    out.fingerprint,
                    expected.trim(),
                    g.display()
                )));
            }
            json!("match")
        }
        Some(g) => {
            std::fs::write(g, format!("{}\n", out.fingerprint))
                .with_context(|| format!("writing {}", g.display()))?;
            json!("written")
        }
    };
    Ok(json!({
        "show_id": out.show_id,
        "fingerprint": out.fingerprint,
        "runs": fingerprints.len(),
        "golden": golden_status,
        "entries": out.entries,
        "end_ms": out.end_ms,
        "latency": out.latency,
        "tickets": out.tickets.len(),
        "substitutions": out.substitutions.len(),
        "cue": out.cue,
        "scores": out.scores,
        "audit_verified": out.audit_verified,
        "refused_submissions": out.refused_submissions,
        "late_decisions": out.late_decisions,
    }))
}

fn bench_cmd(cli: &Cli, detail: bool) -> Result<Value, Failure> {
    let mut config = match &cli.config {
        Some(path) => read_json::<BenchConfig>(path)?,
        None => BenchConfig::production_scale(cli.seed.unwrap_or(1)),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let bench_err = |e: BenchError| match e {
        BenchError::BadConfig(_) => config_err(e),
        other => Failure::Runtime(other.into()),
    };
    let outcome = run_bench(&config).map_err(bench_err)?;
    let mut report = json!({
        "config": config,
        "report": outcome.report,
        "publishes": outcome.publishes,
        "dead_letters": outcome.dead_letters,
        "peak_in_flight": outcome.peak_in_flight,
        "wall_ms": outcome.wall_ms,
    });
    if detail {
        report["workload"] = json!(Workload::generate(&config).map_err(bench_err)?);
        report["completions"] = json!(outcome.completions);
    }
    Ok(report)
}

fn score_cmd(
    cli: &Cli,
    audience: &Path,
    reference: Option<&Path>,
    moves: &[String],
    library: Option<&Path>,
) -> Result<Value, Failure> {
    let config = match &cli.config {
        Some(path) => read_json::<ScoreConfig>(path)?,
        None => ScoreConfig::default(),
    };
    let load = |p: &Path| -> Result<PoseSequence, Failure> {
        let text = std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(Failure::Config)?;
        PoseSequence::from_jsonl(&text)
            .with_context(|| format!("parsing {}", p.display()))
            .map_err(Failure::Config)
    };
    let audience = load(audience)?;
    let reference = match (reference, moves.is_empty()) {
        (Some(r), true) => load(r)?,
        (None, false) => {
            let library = match library {
                Some(p) => MoveLibrary::load(p).map_err(config_err)?,
                None => builtin_library(),
            };
            library
                .reference_for(moves, config.rest_gap_s)
                .map_err(config_err)?
        }
        _ => {
            return Err(config_err(anyhow::anyhow!(
                "give either --reference or --moves"
            )))
        }
    };
    let report = score_against(&audience, &reference, &config).map_err(config_err)?;
    Ok(json!(report))
}
