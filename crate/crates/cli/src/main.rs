use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use gary_cli::config::{resolve_profile, CrossoverConfig};
use gary_cli::serve::{serve, ServeOptions};
use gary_core::engine::Mode;
use gary_core::gaze::write_trace;
use gary_core::harness::{calibrate_pace, run_crossover, run_session, CrossoverOptions, Passage, RunOptions};
use gary_core::layout::Viewport;
use gary_core::session::{verify, SessionError, Verdict};
use gary_core::simulator::{make_profile, DYSLEXIC_TARGET_SPEED, TYPICAL_TARGET_SPEED};
use gary_core::text::{segment_text, MAX_PHRASE_WORDS};

#[derive(Parser)]
#[command(name = "gary", version, about = "Gaze-gated read-aloud pacing: simulation, replay and live sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a text into phrases and print the result as JSON.
    Segment {
        input: PathBuf,
        #[arg(long, default_value_t = MAX_PHRASE_WORDS)]
        max_words: usize,
    },
    /// Run one simulated reading session and print its metrics.
    RunSim {
        text: PathBuf,
        /// Preset name (typical, dyslexic, dyslexic_inaccurate) or profile JSON file.
        #[arg(long)]
        profile: String,
        #[arg(long, default_value = "gary")]
        mode: Mode,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Session log file; defaults to a file in $GARY_LOG_DIR when that is set.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the raw gaze trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the counterbalanced crossover described by a config file.
    Crossover {
        config: PathBuf,
        /// Overrides the config: use seeds 1..=N.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Re-execute a session log and check it reproduces exactly.
    Replay { session: PathBuf },
    /// Serve live sessions over WebSocket.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        text: PathBuf,
        #[arg(long, default_value = "gary")]
        mode: Mode,
        #[arg(long, default_value_t = 16)]
        max_sessions: usize,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Re-derive the preset decoding paces by bisection.
    CalibratePresets {
        text_a: PathBuf,
        text_b: PathBuf,
        #[arg(long, default_value_t = 15)]
        seeds: u64,
    },
}

/// Exit status 2 for bad input, 1 for everything else.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, err: e.into() }
    }
}

fn bad_input(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

type CliResult = Result<ExitCode, Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(bad_input)
}

/// Writes to stdout, treating a closed pipe (`gary ... | head`) as success.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn log_dir() -> Option<PathBuf> {
    std::env::var_os("GARY_LOG_DIR").filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn segment(input: &Path, max_words: usize) -> CliResult {
    let raw = read_text(input)?;
    let seg = segment_text(&raw, max_words)?;
    emit(&(serde_json::to_string_pretty(&seg)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn run_sim(text: &Path, profile: &str, mode: Mode, seed: u64, out: Option<PathBuf>, trace: Option<PathBuf>) -> CliResult {
    let profile = resolve_profile(profile).map_err(bad_input)?;
    let passage = Passage::from_text(&read_text(text)?)?;
    let run = run_session(&profile, &passage, mode, seed, &RunOptions::default())?;
    let out = out.or_else(|| log_dir().map(|d| d.join(format!("{}-{}-{}.jsonl", profile.name, mode, seed))));
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, run.record().to_bytes()).with_context(|| format!("cannot write {}", path.display()))?;
        eprintln!("session log: {}", path.display());
    }
    if let Some(path) = trace {
        let file = std::fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        write_trace(file, &run.trace)?;
    }
    emit(&(serde_json::to_string_pretty(&run.metrics)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn crossover(config: &Path, seeds: Option<u64>, out_dir: &Path) -> CliResult {
    let cfg = CrossoverConfig::load(config).map_err(bad_input)?;
    let profiles = cfg.resolve_profiles().map_err(bad_input)?;
    if profiles.len() < 2 {
        return Err(bad_input(anyhow!("a crossover needs at least two profiles")));
    }
    let seeds: Vec<u64> = match seeds {
        Some(n) => (1..=n).collect(),
        None => cfg.seeds.to_vec(),
    };
    if seeds.is_empty() {
        return Err(bad_input(anyhow!("no seeds to run")));
    }
    let a = Passage::new(&read_text(&cfg.text_a)?, cfg.max_words, Viewport::default())?;
    let b = Passage::new(&read_text(&cfg.text_b)?, cfg.max_words, Viewport::default())?;
    let report = run_crossover(&profiles, &a, &b, &seeds, &CrossoverOptions::default())?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("sessions.csv"), report.to_csv()?)?;
    std::fs::write(out_dir.join("summary.json"), report.summary_json())?;
    emit(&report.summary_json())?;
    Ok(ExitCode::SUCCESS)
}

fn replay(path: &Path) -> CliResult {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(bad_input)?;
    match verify(&bytes) {
        Ok(Verdict::Pass) => {
            println!("PASS");
            Ok(ExitCode::SUCCESS)
        }
        Ok(Verdict::Fail(why)) => {
            println!("FAIL: {why}");
            Ok(ExitCode::from(1))
        }
        Err(e @ SessionError::CorruptLog(_)) => Err(bad_input(e)),
        Err(e) => Err(e.into()),
    }
}

fn calibrate_presets(text_a: &Path, text_b: &Path, seeds: u64) -> CliResult {
    let a = Passage::from_text(&read_text(text_a)?)?;
    let b = Passage::from_text(&read_text(text_b)?)?;
    let seeds: Vec<u64> = (100..100 + seeds).collect();
    for (preset, target) in [("typical", TYPICAL_TARGET_SPEED), ("dyslexic", DYSLEXIC_TARGET_SPEED)] {
        let profile = make_profile(preset)?;
        let (pace, speed) = calibrate_pace(&profile, &[&a, &b], target, 0.01, &seeds, &RunOptions::default())?;
        emit(&format!("{preset}: pace_syll_s = {pace:.4} (closed-loop speed {speed:.3}, target {target})\n"))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Segment { input, max_words } => segment(&input, max_words),
        Command::RunSim { text, profile, mode, seed, out, trace } => run_sim(&text, &profile, mode, seed, out, trace),
        Command::Crossover { config, seeds, out_dir } => crossover(&config, seeds, &out_dir),
        Command::Replay { session } => replay(&session),
        Command::Serve { port, text, mode, max_sessions, host } => {
            let passage = Passage::from_text(&read_text(&text)?)?;
            let opts = ServeOptions { mode, max_sessions: max_sessions.max(1), log_dir: log_dir() };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(SocketAddr::new(host, port), passage, opts))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::CalibratePresets { text_a, text_b, seeds } => calibrate_presets(&text_a, &text_b, seeds),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(Failure { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
