mod commands;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use css_dst::manifest::{ManifestBuilder, RunManifest};

use commands::Job;

#[derive(Parser, Debug)]
#[command(name = "css-dst", version, about = "Few-shot dialogue state tracking with self-training and dropout contrastive learning")]
struct Cli {
    /// Worker threads for parallel decoding; 1 makes every run bit-reproducible.
    #[arg(long, global = true, env = "CSS_DST_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    #[command(flatten)]
    Job(Job),
    /// Check or re-run a recorded command.
    #[command(subcommand)]
    Manifest(ManifestCommand),
}

#[derive(Subcommand, Debug)]
enum ManifestCommand {
    /// Recompute every input and output digest.
    Verify { manifest: PathBuf },
    /// Run the recorded command again into `--out` and compare outputs.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

/// Runs `job` and writes its manifest; returns the manifest.
fn execute(mut job: Job, threads: Option<usize>) -> Result<RunManifest> {
    job.absolutize()?;
    let invocation = serde_json::to_value(&job).context("serializing the invocation")?;
    let mut builder = ManifestBuilder::new(job.name(), invocation, job.seed(), threads);
    let outputs = job.run(&mut builder)?;
    let manifest = builder.finish(&outputs.root, &outputs.files)?;
    manifest
        .save(&outputs.manifest)
        .with_context(|| format!("writing {}", outputs.manifest.display()))?;
    log::info!("run {} recorded in {}", manifest.run_id, outputs.manifest.display());
    Ok(manifest)
}

fn verify(path: PathBuf) -> Result<()> {
    let manifest = RunManifest::load(&path)?;
    let mismatches = manifest.verify();
    if mismatches.is_empty() {
        println!(
            "ok {} ({} inputs, {} outputs)",
            manifest.run_id,
            manifest.inputs.len(),
            manifest.outputs.len()
        );
        return Ok(());
    }
    for m in &mismatches {
        eprintln!("mismatch {m}");
    }
    bail!("{} file(s) differ from {}", mismatches.len(), path.display())
}

fn replay(path: PathBuf, out: PathBuf, threads: Option<usize>) -> Result<()> {
    let recorded = RunManifest::load(&path)?;
    init_threads(threads.or(recorded.threads))?;
    let changed = recorded.verify_inputs();
    if !changed.is_empty() {
        for m in &changed {
            eprintln!("input changed {m}");
        }
        bail!("inputs of {} changed since it was recorded", path.display());
    }
    let mut job: Job = serde_json::from_value(recorded.invocation.clone()).context("decoding the recorded invocation")?;
    job.relocate(&out);
    let fresh = execute(job, threads.or(recorded.threads))?;
    let mismatches = recorded.compare_outputs(&fresh.output_root);
    if mismatches.is_empty() {
        println!("replay reproduced {} outputs", recorded.outputs.len());
        return Ok(());
    }
    for m in &mismatches {
        eprintln!("mismatch {m}");
    }
    bail!("replay differs from {} in {} file(s)", path.display(), mismatches.len())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Job(job) => {
            init_threads(cli.threads)?;
            execute(job, cli.threads).map(|_| ())
        }
        Command::Manifest(ManifestCommand::Verify { manifest }) => verify(manifest),
        Command::Manifest(ManifestCommand::Replay { manifest, out }) => replay(manifest, out, cli.threads),
    }
}
