//! Command dispatch for the `pseudonym` binary. Kept in a library so
//! integration tests can drive the exact code path `main` runs.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error. Diagnostics go to
//! stderr and never include entity strings, only counts.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use pseudonym::pipeline::{pseudonymize, restore_output, MappingSession};
use pseudonym_gateway::{AppConfig, AppState, HttpChatClient};
use pseudonym_metrics::eval::{run_eval, EvalBackends};
use pseudonym_metrics::FallbackEmbedder;

#[derive(Parser)]
#[command(
    name = "pseudonym",
    version,
    about = "Pseudonymization gateway: detect privacy entities, replace them, restore them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pseudonymize a text file and write the mapping session next to it.
    Pseudonymize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Where to write the session JSON needed for restoration.
        #[arg(long)]
        session: PathBuf,
    },
    /// Apply a stored session's inverse mapping to a text file.
    Restore {
        #[arg(long)]
        session: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Run the HTTP gateway until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Override the listen address from the config file.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Evaluate pipeline quality over a JSONL dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Where to write the report JSON.
        #[arg(long)]
        report: PathBuf,
    },
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Pseudonymize {
            config,
            input,
            output,
            session,
        } => cmd_pseudonymize(&config, &input, &output, &session),
        Command::Restore {
            session,
            input,
            output,
        } => cmd_restore(&session, &input, &output),
        Command::Serve { config, listen } => cmd_serve(&config, listen),
        Command::Eval {
            config,
            dataset,
            report,
        } => cmd_eval(&config, &dataset, &report),
    }
}

fn cmd_pseudonymize(
    config_path: &std::path::Path,
    input: &std::path::Path,
    output: &std::path::Path,
    session_path: &std::path::Path,
) -> anyhow::Result<()> {
    let config = AppConfig::load(config_path)?;
    let backends = config.build_backends()?;
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read {}", input.display()))?;
    let (result, session) = pseudonymize(&text, &config.pipeline, &backends)?;
    std::fs::write(output, &result.text)
        .with_context(|| format!("cannot write {}", output.display()))?;
    let session_json = serde_json::to_string_pretty(&session)?;
    std::fs::write(session_path, session_json)
        .with_context(|| format!("cannot write {}", session_path.display()))?;
    eprintln!(
        "pseudonymized: {} replaced span(s), {} mapping pair(s), session {}",
        result.offset_map.len(),
        session.mapping.len(),
        session.session_id
    );
    Ok(())
}

fn cmd_restore(
    session_path: &std::path::Path,
    input: &std::path::Path,
    output: &std::path::Path,
) -> anyhow::Result<()> {
    let session_json = std::fs::read_to_string(session_path)
        .with_context(|| format!("cannot read {}", session_path.display()))?;
    let session: MappingSession =
        serde_json::from_str(&session_json).context("session file is corrupt")?;
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read {}", input.display()))?;
    let restored = restore_output(&text, &session);
    std::fs::write(output, restored)
        .with_context(|| format!("cannot write {}", output.display()))?;
    eprintln!("restored with {} mapping pair(s)", session.mapping.len());
    Ok(())
}

fn cmd_serve(config_path: &std::path::Path, listen: Option<String>) -> anyhow::Result<()> {
    let config = AppConfig::load(config_path)?;
    let addr = listen.unwrap_or_else(|| config.gateway.listen.clone());
    let state = AppState::from_config(&config)?;
    let _ = tracing_subscriber::fmt().with_target(false).try_init();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("cannot bind {addr}"))?;
        eprintln!("listening on {addr}");
        tokio::select! {
            result = pseudonym_gateway::serve(state, listener) => result.map_err(Into::into),
            _ = tokio::signal::ctrl_c() => {
                eprintln!("shutting down");
                Ok(())
            }
        }
    })
}

fn cmd_eval(
    config_path: &std::path::Path,
    dataset: &std::path::Path,
    report_path: &std::path::Path,
) -> anyhow::Result<()> {
    let config = AppConfig::load(config_path)?;
    let pipeline_backends = config.build_backends()?;
    let upstream = HttpChatClient::new(
        &config.upstream.base_url,
        config.upstream.model.clone(),
        std::env::var("UPSTREAM_API_KEY").ok(),
    );
    let mut backends = EvalBackends::new(pipeline_backends, Arc::new(upstream));
    backends.embedder = Arc::new(FallbackEmbedder);
    if let Some(url) = &config.backend.completions_url {
        let url = url.clone();
        let model = config.backend.completions_model.clone();
        backends.scs_predictor = Some(Arc::new(move |_source: &str| {
            Box::new(pseudonym_gateway::HttpTokenPredictor::new(
                &url,
                model.clone(),
            )) as Box<dyn pseudonym::TokenPredictor>
        }));
    }
    let report = run_eval(dataset, &config.pipeline, &backends)?;
    report.validate().map_err(anyhow::Error::msg)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    std::fs::write(report_path, json)
        .with_context(|| format!("cannot write {}", report_path.display()))?;
    eprintln!("evaluated {} item(s)", report.items);
    Ok(())
}
