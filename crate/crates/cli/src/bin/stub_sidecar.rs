//! Serves the reference classifier over the stdio wire protocol, optionally
//! advertising fewer capabilities than it has.

use std::collections::BTreeSet;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use attrbench_core::backend::protocol::{serve, RestrictedBackend};
use attrbench_core::backend::{fit_reference, FitOptions};
use attrbench_core::datasets::{fixtures, load_canonical};
use attrbench_core::Capability;
use clap::Parser;

#[derive(Parser)]
#[command(
    name = "attrbench-stub-sidecar",
    about = "Reference model behind the wire protocol"
)]
struct Args {
    /// Comma-separated subset of gradients, embeddings, native_attribution.
    /// Pass an empty string for a predict-only backend.
    #[arg(long)]
    capabilities: Option<String>,
    /// Canonical dataset to fit on (default: bundled movie reviews).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_capabilities(list: &str) -> Result<BTreeSet<Capability>, String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            serde_json::from_value(serde_json::Value::String(s.into()))
                .map_err(|_| format!("unknown capability {s:?}"))
        })
        .collect()
}

fn main() -> ExitCode {
    let args = Args::parse();
    let dataset = match &args.train {
        Some(p) => match load_canonical(p) {
            Ok(d) => d,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => fixtures::movies_mini(),
    };
    let fit = FitOptions {
        seed: args.seed,
        ..FitOptions::default()
    };
    let model = match fit_reference(&dataset, fit) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match &args.capabilities {
        None => serve(&model, io::stdin().lock(), io::stdout().lock()),
        Some(list) => match parse_capabilities(list) {
            Ok(caps) => serve(
                &RestrictedBackend::new(model, caps),
                io::stdin().lock(),
                io::stdout().lock(),
            ),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
