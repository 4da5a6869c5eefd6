//! Command-line surface: one `RunConfig` parsed by clap, dispatched onto
//! the [`crate::runner`] implementations inside a rayon pool of the
//! requested size. Stochastic subcommands require an explicit `--seed`;
//! together with the configuration and `--threads 1` this makes every
//! output byte-reproducible (the parallel drivers are in fact
//! index-ordered, so outputs do not depend on the thread count at all).

use crate::config;
use crate::emit::{Format, Report};
use crate::runner::{
    self, GramSource, KernelChoice, McOptions, ProfileChoice, RatioChoice, SmoothnessOptions,
    StabilityOptions,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

/// Exact tangent and fixed-feature kernels of ReLU networks, their sphere
/// spectra, smoothness probes, deformation-stability experiments, and
/// Monte Carlo validation.
#[derive(Debug, Parser)]
#[command(name = "ntk", version, about)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for parallel drivers (0 = one per core). Results are
    /// identical for every value.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Write the primary table here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    /// Encoding of the primary output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ArchArg {
    /// JSON architecture description; defaults to two 3x3 layers with
    /// Gaussian pooling subsampled by 2 then 5.
    #[arg(long)]
    pub arch: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Covariance and tangent kernel of a fully-connected deep ReLU
    /// network on one input pair, one row per depth.
    EvalFc {
        /// First input vector, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
        /// Second input vector, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        y: Vec<f64>,
        /// Hidden layers.
        #[arg(long, default_value_t = 1)]
        depth: usize,
    },
    /// Tangent and fixed-feature kernels of one image pair under a
    /// convolutional architecture.
    EvalConv {
        /// IDX file holding the first image.
        #[arg(long)]
        image_x: PathBuf,
        /// IDX file holding the second image.
        #[arg(long)]
        image_y: PathBuf,
        /// Index of the first image within its file.
        #[arg(long, default_value_t = 0)]
        index_x: usize,
        /// Index of the second image within its file.
        #[arg(long, default_value_t = 0)]
        index_y: usize,
        #[command(flatten)]
        arch: ArchArg,
        #[arg(long, value_enum, default_value_t = KernelChoice::Both)]
        kernel: KernelChoice,
    },
    /// Full symmetric Gram matrix over an image set, computed pairwise in
    /// parallel.
    Gram {
        /// IDX image file; omit to use the built-in synthetic digits
        /// (which then require --seed).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Number of images (defaults to the whole file; sizes the
        /// synthetic corpus).
        #[arg(long)]
        count: Option<usize>,
        /// Corpus seed for the synthetic source.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        arch: ArchArg,
        #[arg(long, value_enum, default_value_t = KernelChoice::Both)]
        kernel: KernelChoice,
    },
    /// Sphere spectrum of an angular kernel profile with decay fits and
    /// recurrence/quadrature audits.
    Spectrum {
        #[arg(long, value_enum, default_value_t = ProfileChoice::Ntk)]
        kernel: ProfileChoice,
        /// Ambient dimension of the sphere's Euclidean space (>= 3).
        #[arg(long, default_value_t = 3)]
        p: usize,
        /// Largest harmonic degree.
        #[arg(long, default_value_t = 100)]
        kmax: usize,
        /// Smallest degree entering the decay fits.
        #[arg(long, default_value_t = 20)]
        fit_min: usize,
    },
    /// Modulus-of-continuity probes and smoothness property sweeps.
    Smoothness {
        #[arg(long, value_enum, default_value_t = RatioChoice::Both)]
        ratio: RatioChoice,
        /// Random pairs in the whole-space bound sweeps.
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        /// Random signal quadruples in the paired-operator sweep.
        #[arg(long, default_value_t = 1_000)]
        quadruples: usize,
        /// Sweep seed (sweeps are stochastic, so it is required).
        #[arg(long)]
        seed: u64,
    },
    /// Deformation-stability experiment: relative feature distances from a
    /// reference image under smooth deformations, translations, and fixed
    /// comparison sets.
    Stability {
        /// IDX image file (with --labels); omit both for the built-in
        /// synthetic digits.
        #[arg(long, requires = "labels")]
        images: Option<PathBuf>,
        /// IDX label file (with --images).
        #[arg(long, requires = "images")]
        labels: Option<PathBuf>,
        /// Deformation-field seed (required: field generation is
        /// stochastic).
        #[arg(long)]
        seed: u64,
        /// Deformation scales, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.03,0.1,0.3,1,3")]
        alphas: Vec<f64>,
        /// Members per comparison set.
        #[arg(long, default_value_t = 20)]
        members: usize,
        /// Index of the reference image.
        #[arg(long, default_value_t = 0)]
        reference: usize,
        /// Exact bilinear warp instead of the first-order transport step.
        #[arg(long)]
        warp: bool,
        #[command(flatten)]
        arch: ArchArg,
        #[arg(long, value_enum, default_value_t = KernelChoice::Both)]
        kernel: KernelChoice,
    },
    /// Monte Carlo validation battery: analytic kernels against explicit
    /// random networks.
    McCheck {
        /// Battery seed (required: the battery is stochastic).
        #[arg(long)]
        seed: u64,
        /// Random input pairs in the two-layer battery.
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        /// Input dimension of the two-layer battery.
        #[arg(long, default_value_t = 10)]
        dim: usize,
        /// Hidden width of each sampled two-layer network.
        #[arg(long, default_value_t = 1 << 14)]
        width: usize,
        /// Networks averaged per estimate.
        #[arg(long, default_value_t = 32)]
        seeds: usize,
        /// Hidden width of each sampled convolutional network.
        #[arg(long, default_value_t = 1 << 12)]
        conv_width: usize,
        /// Networks averaged per convolutional estimate.
        #[arg(long, default_value_t = 16)]
        conv_seeds: usize,
    },
}

fn dispatch(command: Command) -> Result<Report> {
    match command {
        Command::EvalFc { x, y, depth } => runner::eval_fc(&x, &y, depth),
        Command::EvalConv { image_x, image_y, index_x, index_y, arch, kernel } => {
            let arch = config::resolve_arch(arch.arch.as_deref())?;
            runner::eval_conv(&image_x, index_x, &image_y, index_y, &arch, kernel)
        }
        Command::Gram { images, count, seed, arch, kernel } => {
            let arch = config::resolve_arch(arch.arch.as_deref())?;
            let source = match (&images, seed) {
                (Some(path), _) => GramSource::IdxFile(path),
                (None, Some(seed)) => {
                    GramSource::Synthetic { count: count.unwrap_or(10), seed }
                }
                (None, None) => {
                    bail!("the synthetic gram source is stochastic: provide --seed (or --images)")
                }
            };
            runner::gram_cmd(source, count, &arch, kernel)
        }
        Command::Spectrum { kernel, p, kmax, fit_min } => {
            runner::spectrum_cmd(kernel, p, kmax, fit_min)
        }
        Command::Smoothness { ratio, pairs, quadruples, seed } => {
            runner::smoothness_cmd(&SmoothnessOptions { ratio, pairs, quadruples, seed })
        }
        Command::Stability {
            images,
            labels,
            seed,
            alphas,
            members,
            reference,
            warp,
            arch,
            kernel,
        } => {
            let arch = config::resolve_arch(arch.arch.as_deref())?;
            runner::stability_cmd(&StabilityOptions {
                images,
                labels,
                arch,
                seed,
                alphas,
                members,
                reference,
                warp,
                kernel,
            })
        }
        Command::McCheck { seed, pairs, dim, width, seeds, conv_width, conv_seeds } => {
            runner::mc_check_cmd(&McOptions {
                seed,
                pairs,
                dim,
                width,
                seeds,
                conv_width,
                conv_seeds,
            })
        }
    }
}

/// Write a finished report: the table to `--output` or stdout, status
/// notes and warnings to stderr, plus a machine-readable failure document
/// when checks failed. Returns the process exit code: 0 on success, 1 when
/// a reported check failed.
pub fn finish(report: &Report, format: Format, output: Option<&std::path::Path>) -> Result<u8> {
    let payload = report.render(format);
    match output {
        Some(path) => std::fs::write(path, payload)
            .with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(payload.as_bytes())?;
        }
    }
    eprint!("{}", report.status_lines());
    if report.failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("{}", serde_json::json!({ "failures": report.failures }));
        Ok(1)
    }
}

/// Run a parsed configuration: set up the thread pool, dispatch, write the
/// result. Exit code 0 on success, 1 when a reported check failed; errors
/// bubble up (the binary maps them to exit code 2).
pub fn run(config: RunConfig) -> Result<u8> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .context("building the worker pool")?;
    let report = pool.install(|| dispatch(config.command))?;
    finish(&report, config.format, config.output.as_deref())
}

/// Binary entry point: parse, run, map errors to exit code 2 with a
/// machine-readable report on stderr.
pub fn cli_main() -> ExitCode {
    let config = RunConfig::parse();
    match run(config) {
        Ok(code) => ExitCode::from(code),
        Err(error) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{error:#}") }));
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_accepts_the_documented_invocations() {
        RunConfig::try_parse_from([
            "ntk", "eval-fc", "--x", "1,0", "--y", "0,1", "--depth", "1",
        ])
        .unwrap();
        RunConfig::try_parse_from([
            "ntk", "spectrum", "--kernel", "ntk", "--p", "3", "--kmax", "100",
        ])
        .unwrap();
        RunConfig::try_parse_from(["ntk", "stability", "--seed", "7", "--alphas", "0.01,0.1"])
            .unwrap();
        RunConfig::try_parse_from(["ntk", "mc-check", "--seed", "1", "--format", "json"]).unwrap();
        RunConfig::try_parse_from(["ntk", "smoothness", "--seed", "0", "--threads", "2"]).unwrap();
    }

    #[test]
    fn stochastic_subcommands_require_a_seed() {
        assert!(RunConfig::try_parse_from(["ntk", "stability"]).is_err());
        assert!(RunConfig::try_parse_from(["ntk", "mc-check"]).is_err());
        assert!(RunConfig::try_parse_from(["ntk", "smoothness"]).is_err());
    }

    #[test]
    fn stability_image_and_label_files_must_come_together() {
        assert!(RunConfig::try_parse_from([
            "ntk", "stability", "--seed", "1", "--images", "imgs.idx",
        ])
        .is_err());
        assert!(RunConfig::try_parse_from([
            "ntk", "stability", "--seed", "1", "--labels", "lbls.idx",
        ])
        .is_err());
    }

    #[test]
    fn exit_codes_track_reported_failures() {
        let dir = tempfile::tempdir().unwrap();
        let sink = dir.path().join("out.csv");
        let clean = Report::new(crate::emit::Table::new(&["x"]));
        assert_eq!(finish(&clean, Format::Csv, Some(&sink)).unwrap(), 0);
        let mut failed = clean.clone();
        failed.fail("bound exceeded");
        assert_eq!(finish(&failed, Format::Csv, Some(&sink)).unwrap(), 1);
    }

    #[test]
    fn negative_vector_entries_parse() {
        let config = RunConfig::try_parse_from([
            "ntk", "eval-fc", "--x", "-1,0.5", "--y", "0,-2",
        ])
        .unwrap();
        match config.command {
            Command::EvalFc { x, y, depth } => {
                assert_eq!(x, vec![-1.0, 0.5]);
                assert_eq!(y, vec![0.0, -2.0]);
                assert_eq!(depth, 1);
            }
            other => panic!("wrong command {other:?}"),
        }
    }
}
