use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::Cli;

#[derive(Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    argv: &'a [String],
    config: &'a Cli,
    jobs: usize,
    outputs: Vec<OutputFile>,
    started_at: String,
    finished_at: String,
}

fn digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `<subcommand>.manifest.json` next to the outputs.
pub fn write(cli: &Cli, argv: &[String], outputs: &[std::path::PathBuf], started_at: String) -> Result<()> {
    let outputs = outputs
        .iter()
        .map(|p| {
            Ok(OutputFile {
                file: p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: digest(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = Manifest {
        tool: "vidscale",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cli.command.name(),
        argv,
        config: cli,
        jobs: rayon::current_num_threads(),
        outputs,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    let path = cli.global.out.join(format!("{}.manifest.json", cli.command.name()));
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
