//! Config-driven experiment runner behind the `difflab` binary.

pub mod config;
pub mod manifest;
pub mod plot;
pub mod presets;
pub mod run;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

pub use config::{Analysis, ExperimentConfig, Overrides};
pub use manifest::RunManifest;
pub use run::Stage;

#[derive(Debug, Parser)]
#[command(name = "difflab", version, about = "Diffraction of randomly perturbed point sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the unperturbed point set.
    Generate(RunArgs),
    /// Write one displacement field per seed.
    Perturb(RunArgs),
    /// Fourier sums over the radius schedule and their deviation from the prediction.
    Spectrum(RunArgs),
    /// Divide measured amplitudes by the characteristic function.
    Recover(RunArgs),
    /// Run every configured analysis and check it against its tolerances.
    Verify(RunArgs),
    /// Strong-law and Hellinger checks.
    Appendix(RunArgs),
    /// Render SVGs from a manifest or from CSV files.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Shipped configuration for an acceptance criterion (1-13, 9-gamma, 11-truncated).
    #[arg(long)]
    pub preset: Option<String>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cloak_threshold: Option<f64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, env = "DIFFLAB_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// `manifest.json` files or CSV outputs.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, env = "DIFFLAB_THREADS")]
    pub threads: Option<usize>,
}

impl RunArgs {
    pub fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => {
                let text = presets::find(name).ok_or_else(|| {
                    anyhow!("unknown preset {name:?}; available: {}", presets::names().collect::<Vec<_>>().join(", "))
                })?;
                ExperimentConfig::from_json(text, &format!("preset {name}"))?
            }
            (None, None) => bail!("either --config or --preset is required"),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            output_dir: self.out.clone(),
            cloak_threshold: self.cloak_threshold,
            plot: self.plot,
        })?;
        Ok(cfg)
    }
}

/// Sizes the global rayon pool; the first call wins.
pub fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

/// Writes an SVG for every plottable CSV named by `inputs`, expanding
/// manifests to their outputs. Returns the written files.
pub fn plot_inputs(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for input in inputs {
        if !input.exists() {
            bail!("{}: no such file", input.display());
        }
        if input.extension().and_then(|e| e.to_str()) == Some("json") {
            let m = RunManifest::read(input)?;
            let dir = input.parent().unwrap_or(Path::new("."));
            for rel in m.outputs.values().flatten() {
                let path = dir.join(rel);
                if !path.exists() {
                    bail!("{}: listed in {} but missing", path.display(), input.display());
                }
                written.extend(run::plot_file(&path)?);
            }
        } else {
            let svg = match run::plot_file(input)? {
                Some(svg) => svg,
                None => {
                    // Unrecognized or empty tables still get axes.
                    let svg = input.with_extension("svg");
                    let title = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
                    plot::line_plot(&svg, title, "x", "y", &[])?;
                    svg
                }
            };
            written.push(svg);
        }
    }
    Ok(written)
}

/// Executes a parsed command line; `Ok(false)` when a seed or check failed.
pub fn execute(cli: Cli) -> anyhow::Result<bool> {
    let (stage, args) = match cli.command {
        Command::Plot(p) => {
            init_threads(p.threads)?;
            for svg in plot_inputs(&p.inputs)? {
                println!("{}", svg.display());
            }
            return Ok(true);
        }
        Command::Generate(a) => (Stage::Generate, a),
        Command::Perturb(a) => (Stage::Perturb, a),
        Command::Spectrum(a) => (Stage::Spectrum, a),
        Command::Recover(a) => (Stage::Recover, a),
        Command::Verify(a) => (Stage::Verify, a),
        Command::Appendix(a) => (Stage::Appendix, a),
    };
    init_threads(args.threads)?;
    let cfg = args.load()?;
    let manifest = run::run(&cfg, stage)?;
    for s in manifest.seeds.iter().filter(|s| !s.ok) {
        for e in &s.errors {
            eprintln!("seed {}: {e}", s.seed);
        }
    }
    for c in &manifest.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.analysis, c.detail);
    }
    println!("manifest: {}", cfg.output_dir.join(manifest::MANIFEST_FILE).display());
    Ok(manifest.success())
}
