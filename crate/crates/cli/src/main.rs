use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use congait_core::cas::Ratings;
use congait_core::contest::{ArgumentType, Decision, Verdict};
use congait_core::ingest::{to_vgrf_text, Cohort, RecordMeta};
use congait_core::synth::{synthetic_record, GaitProfile};
use congait_core::trend::MedicationEvent;
use congait_core::{Stage, Verification};
use congait_server::config::{Config, Principal, CONFIG_FILE_NAME};
use congait_server::service::IngestRequest;
use congait_server::{Service, ServiceError};
use serde::Serialize;

/// Exit status when the store's audit chain does not verify.
const EXIT_STORE_CORRUPT: u8 = 3;

#[derive(Parser)]
#[command(name = "congait", version, about = "Contestable gait staging service and tools")]
struct Cli {
    /// TOML config file; `congait.toml` in the working directory when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store root, overriding the config file and CONGAIT_STORE.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Principal id to act as; defaults to the first principal with the needed role.
    #[arg(long = "as", global = true)]
    principal: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        allow_unverified: bool,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Ingest a 19-column VGRF recording.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        session: String,
        #[arg(long, value_parser = parse_cohort)]
        cohort: Cohort,
        #[arg(long)]
        date: Option<NaiveDate>,
    },
    /// Predict and explain every window of a session.
    Run { session: String },
    /// Compute the contestability score from a ratings file.
    Cas { ratings: PathBuf },
    Audit {
        #[command(subcommand)]
        action: AuditAction,
    },
    /// Write entries `from..=to` with their anchor hash as JSON.
    ExportAudit {
        from: u64,
        to: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Contest {
        #[command(subcommand)]
        action: ContestAction,
    },
    /// Session series, forecast and medication overlay for a patient.
    Trend {
        patient: String,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
    },
    /// Record medication events from a JSON array of `{date, label, note?}`.
    Medications { patient: String, file: PathBuf },
    /// Write a synthetic VGRF recording for demos.
    Synth {
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Parkinsonian)]
        profile: Profile,
        #[arg(long, default_value_t = 60.0)]
        seconds: f64,
        #[arg(long, default_value_t = 100.0)]
        rate: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum AuditAction {
    /// Recompute the hash chain; exits 3 on the first bad entry.
    Verify,
}

#[derive(Subcommand)]
enum ContestAction {
    Open {
        prediction: String,
        #[arg(long)]
        argument: String,
        #[arg(long)]
        note: String,
    },
    Decide {
        case: String,
        #[arg(value_enum)]
        decision: DecisionArg,
        #[arg(long, default_value = "")]
        note: String,
        #[arg(long)]
        expected_version: u64,
    },
    Resolve {
        case: String,
        #[arg(value_enum)]
        verdict: VerdictArg,
        /// Corrected stage for `amended`.
        #[arg(long)]
        stage: Option<f64>,
        #[arg(long)]
        expected_version: Option<u64>,
    },
    Show {
        case: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DecisionArg {
    Accept,
    Recontest,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerdictArg {
    Upheld,
    Overturned,
    Amended,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Healthy,
    Parkinsonian,
}

fn parse_cohort(s: &str) -> Result<Cohort, String> {
    match s.to_ascii_lowercase().as_str() {
        "pd" => Ok(Cohort::PD),
        "control" | "co" => Ok(Cohort::Control),
        _ => Err(format!("unknown cohort {s:?}; expected PD or Control")),
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let file = match &cli.config {
        Some(p) => Some(p.clone()),
        None => Some(PathBuf::from(CONFIG_FILE_NAME)).filter(|p| p.exists()),
    };
    let mut config = Config::from_environment(file.as_deref())?;
    if let Some(store) = &cli.store {
        config.store_root = store.clone();
    }
    Ok(config)
}

fn acting_as(cli: &Cli, service: &Service, role: congait_core::Role) -> anyhow::Result<Principal> {
    match &cli.principal {
        Some(id) => Ok(service.principal(id)?),
        None => service
            .config()
            .principals
            .iter()
            .find(|p| p.role == role)
            .cloned()
            .with_context(|| format!("no principal with role {role} is configured")),
    }
}

fn print<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    use congait_core::Role;

    if let Command::Synth { out, profile, seconds, rate, seed } = &cli.command {
        let profile = match profile {
            Profile::Healthy => GaitProfile::healthy(),
            Profile::Parkinsonian => GaitProfile::parkinsonian(),
        };
        let meta = RecordMeta { patient_id: "synthetic".into(), session_id: "synthetic".into(), cohort: Cohort::PD };
        let record = synthetic_record(meta, &profile, *seconds, *rate, *seed)?;
        std::fs::write(out, to_vgrf_text(&record))?;
        return Ok(ExitCode::SUCCESS);
    }

    let config = load_config(&cli)?;
    let allow_unverified = matches!(
        cli.command,
        Command::Serve { allow_unverified: true, .. } | Command::Audit { action: AuditAction::Verify }
    );
    let mut service = Service::open(config, allow_unverified)?;

    match &cli.command {
        Command::Serve { port, .. } => {
            let config = service.config();
            let addr = format!("{}:{}", config.bind, port.unwrap_or(config.port));
            let verification = service.audit_log().verify()?;
            tracing::info!(?verification, "audit log checked");
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener =
                    tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("cannot listen on {addr}"))?;
                tracing::info!(%addr, model_id = service.model().model_id(), "serving");
                congait_server::serve(listener, service).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Ingest { file, patient, session, cohort, date } => {
            let who = acting_as(&cli, &service, Role::Admin)?;
            let meta = service.ingest_session(
                &who,
                IngestRequest {
                    patient_id: patient.clone(),
                    session_id: session.clone(),
                    cohort: *cohort,
                    date: *date,
                    vgrf: read(file)?,
                },
            )?;
            print(&meta)?;
        }
        Command::Run { session } => {
            let who = acting_as(&cli, &service, Role::Clinician)?;
            print(&service.run_session(&who, session)?)?;
        }
        Command::Cas { ratings } => {
            let who = acting_as(&cli, &service, Role::Admin)?;
            let ratings = Ratings::from_json(&read(ratings)?)?;
            print(&service.compute_cas(&who, &ratings)?)?;
        }
        Command::Audit { action: AuditAction::Verify } => {
            let who = acting_as(&cli, &service, Role::Reviewer)?;
            let verification = service.audit_verify(&who)?;
            print(&verification)?;
            if let Verification::FirstBadIndex { .. } = verification {
                return Ok(ExitCode::from(EXIT_STORE_CORRUPT));
            }
        }
        Command::ExportAudit { from, to, out } => {
            let who = acting_as(&cli, &service, Role::Reviewer)?;
            let bundle = service.audit_export(&who, *from, *to)?;
            match out {
                Some(path) => std::fs::write(path, serde_json::to_string_pretty(&bundle)?)?,
                None => print(&bundle)?,
            }
        }
        Command::Contest { action } => match action {
            ContestAction::Open { prediction, argument, note } => {
                let who = acting_as(&cli, &service, Role::Clinician)?;
                let argument: ArgumentType = argument.parse().map_err(anyhow::Error::msg)?;
                print(&service.open_contest(&who, prediction, argument, note)?)?;
            }
            ContestAction::Decide { case, decision, note, expected_version } => {
                let who = acting_as(&cli, &service, Role::Clinician)?;
                let decision = match decision {
                    DecisionArg::Accept => Decision::Accept,
                    DecisionArg::Recontest => Decision::ReContest { note: note.clone() },
                };
                print(&service.decide(&who, case, decision, *expected_version)?)?;
            }
            ContestAction::Resolve { case, verdict, stage, expected_version } => {
                let who = acting_as(&cli, &service, Role::Reviewer)?;
                let verdict = match (verdict, stage) {
                    (VerdictArg::Upheld, _) => Verdict::Upheld,
                    (VerdictArg::Overturned, _) => Verdict::Overturned,
                    (VerdictArg::Amended, Some(s)) => Verdict::Amended { new_stage: Stage::from(*s) },
                    (VerdictArg::Amended, None) => bail!("--stage is required for an amended verdict"),
                };
                print(&service.resolve(&who, case, verdict, *expected_version)?)?;
            }
            ContestAction::Show { case } => {
                let who = acting_as(&cli, &service, Role::Reviewer)?;
                print(&service.get_contest(&who, case)?)?;
            }
        },
        Command::Trend { patient, horizon } => {
            let who = acting_as(&cli, &service, Role::Clinician)?;
            print(&service.trend(&who, patient, *horizon)?)?;
        }
        Command::Medications { patient, file } => {
            let who = acting_as(&cli, &service, Role::Admin)?;
            let events: Vec<MedicationEvent> = serde_json::from_str(&read(file)?)?;
            let mut all = Vec::new();
            for event in events {
                all = service.add_medication(&who, patient, event)?;
            }
            print(&all)?;
        }
        Command::Synth { .. } => unreachable!("handled before the store is opened"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<ServiceError>() {
                Some(ServiceError::StoreCorrupt(_)) => ExitCode::from(EXIT_STORE_CORRUPT),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
