//! Command implementations shared by the binary and the test suite. Every
//! command builds a [`Report`]: a primary table plus status notes and
//! failed-check messages. Heavy per-item work (Gram pairs, stability set
//! members, Monte Carlo batteries) runs through rayon with index-ordered
//! collection, so results are bit-identical for any thread count.

use crate::emit::{Cell, Report, Table};
use crate::idx::{self, MnistCorpus};
use crate::synth;
use anyhow::{anyhow, bail, Result};
use ntk_core::activation::{dual_gamma, smooth_lipschitz_bound, ExpShifted, Softplus};
use ntk_core::arccos::{kappa0, kappa1, kappa_ntk};
use ntk_core::conv::{cross_kernels, self_trace, ConvKernels, KernelKind, SelfTrace};
use ntk_core::deform::{
    generate_tau, member_relative_distances, realize_stability_members, small_alpha_slope,
    stats_from_distances, SetKind, StabilityRow, StabilitySet, TransformMode, TransformSet,
    GRAD_SUP_VALID_BOUND,
};
use ntk_core::fc::fc_state;
use ntk_core::mc::{conv_grad_kernel, gp_covariance_check, mc_estimate, mean_and_stderr, TinyConvNet};
use ntk_core::smoothness::{
    holder_bound_check, homogeneity_check, m_smoothness_check, ntk_nonlip_ratio, ratio_probe,
    RatioKind,
};
use ntk_core::spectral::{
    decay_fit, legendre_norm_check, ntk_recurrence_check, required_nodes, jacobi_rule, Parity,
    ProfileKind, SpectrumTable,
};
use ntk_core::{ArchitectureSpec, ImageSignal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Which kernel(s) a command reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KernelChoice {
    Ntk,
    Ckn,
    Both,
}

impl KernelChoice {
    pub fn kinds(self) -> &'static [KernelKind] {
        match self {
            KernelChoice::Ntk => &[KernelKind::Ntk],
            KernelChoice::Ckn => &[KernelKind::Ckn],
            KernelChoice::Both => &[KernelKind::Ntk, KernelKind::Ckn],
        }
    }
}

pub fn kernel_label(kind: KernelKind) -> &'static str {
    match kind {
        KernelKind::Ntk => "ntk",
        KernelKind::Ckn => "ckn",
    }
}

fn pick(kernels: ConvKernels, kind: KernelKind) -> f64 {
    match kind {
        KernelKind::Ntk => kernels.ntk,
        KernelKind::Ckn => kernels.ckn,
    }
}

/// Angular kernel profile selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProfileChoice {
    Ntk,
    Kappa0,
    Kappa1,
}

impl ProfileChoice {
    fn kind(self) -> ProfileKind {
        match self {
            ProfileChoice::Ntk => ProfileKind::Ntk,
            ProfileChoice::Kappa0 => ProfileKind::Kappa0,
            ProfileChoice::Kappa1 => ProfileKind::Kappa1,
        }
    }

    fn label(self) -> &'static str {
        match self {
            ProfileChoice::Ntk => "ntk",
            ProfileChoice::Kappa0 => "kappa0",
            ProfileChoice::Kappa1 => "kappa1",
        }
    }
}

/// Which modulus-of-continuity probe the smoothness command tabulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RatioChoice {
    Phi0Holder,
    NtkNonlip,
    Both,
}

impl RatioChoice {
    fn kinds(self) -> Vec<(RatioKind, &'static str)> {
        match self {
            RatioChoice::Phi0Holder => vec![(RatioKind::Phi0Holder, "phi0-holder")],
            RatioChoice::NtkNonlip => vec![(RatioKind::NtkNonLip, "ntk-nonlip")],
            RatioChoice::Both => vec![
                (RatioKind::Phi0Holder, "phi0-holder"),
                (RatioKind::NtkNonLip, "ntk-nonlip"),
            ],
        }
    }
}

/// Deterministic per-index derivation of an RNG stream from a base seed.
fn derived_seed(seed: u64, index: u64) -> u64 {
    let mut h = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|t| t / norm).collect();
        }
    }
}

// ---------------------------------------------------------------------------
// eval-fc
// ---------------------------------------------------------------------------

/// Covariance and tangent kernel of a fully-connected infinite-width ReLU
/// network evaluated on one input pair, reported for every hidden-layer
/// count up to `depth`.
pub fn eval_fc(x: &[f64], y: &[f64], depth: usize) -> Result<Report> {
    if x.is_empty() || x.len() != y.len() {
        bail!("inputs must be non-empty and share a dimension: {} vs {}", x.len(), y.len());
    }
    if depth < 1 {
        bail!("depth must be at least 1 hidden layer");
    }
    let mut table = Table::new(&["depth", "sigma", "ntk"]);
    for n in 1..=depth {
        let state = fc_state(x, y, n)?;
        table.push_row(vec![n.into(), state.sigma_xy.into(), state.ntk_xy.into()]);
    }
    let mut report = Report::new(table);
    report.note("dim", x.len());
    Ok(report)
}

// ---------------------------------------------------------------------------
// eval-conv
// ---------------------------------------------------------------------------

/// Tangent and fixed-feature kernels of one image pair under a
/// convolutional architecture.
pub fn eval_conv(
    image_x: &Path,
    index_x: usize,
    image_y: &Path,
    index_y: usize,
    arch: &ArchitectureSpec,
    choice: KernelChoice,
) -> Result<Report> {
    let pick_image = |path: &Path, index: usize| -> Result<ImageSignal> {
        let images = idx::read_idx_images(path)?;
        images.get(index).cloned().ok_or_else(|| {
            anyhow!("{} holds {} images, index {index} is out of range", path.display(), images.len())
        })
    };
    let a = pick_image(image_x, index_x)?;
    let b = pick_image(image_y, index_y)?;
    let trace_a = self_trace(&a, arch)?;
    let trace_b = self_trace(&b, arch)?;
    let kernels = cross_kernels(&a, &b, arch, &trace_a, &trace_b)?;
    let mut table = Table::new(&["kernel", "value", "self_x", "self_y"]);
    for &kind in choice.kinds() {
        table.push_row(vec![
            kernel_label(kind).into(),
            pick(kernels, kind).into(),
            pick(trace_a.kernels(), kind).into(),
            pick(trace_b.kernels(), kind).into(),
        ]);
    }
    let mut report = Report::new(table);
    report.note("shape_x", format!("{}x{}x{}", a.height(), a.width(), a.channels()));
    report.note("shape_y", format!("{}x{}x{}", b.height(), b.width(), b.channels()));
    report.note("depth", arch.depth());
    Ok(report)
}

// ---------------------------------------------------------------------------
// gram
// ---------------------------------------------------------------------------

/// Full symmetric Gram matrices over an image set, evaluated pairwise in
/// parallel. Traces are computed once per image; each upper-triangle pair
/// is an independent rayon task, and results are placed by index, so the
/// matrix is bit-identical to the sequential one for any thread count.
pub fn parallel_gram(
    images: &[ImageSignal],
    arch: &ArchitectureSpec,
) -> Result<Vec<ConvKernels>> {
    if images.is_empty() {
        bail!("gram needs at least one image");
    }
    let n = images.len();
    let traces: Vec<SelfTrace> = images
        .par_iter()
        .map(|im| self_trace(im, arch))
        .collect::<ntk_core::Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values: Vec<ConvKernels> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                Ok(traces[i].kernels())
            } else {
                cross_kernels(&images[i], &images[j], arch, &traces[i], &traces[j])
            }
        })
        .collect::<ntk_core::Result<Vec<_>>>()?;
    let mut matrix = vec![ConvKernels { ntk: 0.0, ckn: 0.0 }; n * n];
    for (&(i, j), &value) in pairs.iter().zip(&values) {
        matrix[i * n + j] = value;
        matrix[j * n + i] = value;
    }
    Ok(matrix)
}

/// Source of the image set for `gram`: an IDX file or the built-in
/// synthetic digits.
pub enum GramSource<'a> {
    IdxFile(&'a Path),
    Synthetic { count: usize, seed: u64 },
}

pub fn gram_cmd(source: GramSource, limit: Option<usize>, arch: &ArchitectureSpec, choice: KernelChoice) -> Result<Report> {
    let (mut images, source_note) = match source {
        GramSource::IdxFile(path) => {
            (idx::read_idx_images(path)?, format!("idx:{}", path.display()))
        }
        GramSource::Synthetic { count, seed } => {
            let (images, _) = synth::synthetic_corpus(count.div_ceil(10), seed);
            (images.into_iter().take(count).collect(), format!("synthetic:seed={seed}"))
        }
    };
    if let Some(limit) = limit {
        if limit == 0 {
            bail!("--count must be positive");
        }
        images.truncate(limit);
    }
    let n = images.len();
    let matrix = parallel_gram(&images, arch)?;
    let mut table = Table::new(&["kernel", "i", "j", "value"]);
    for &kind in choice.kinds() {
        for i in 0..n {
            for j in 0..n {
                table.push_row(vec![
                    kernel_label(kind).into(),
                    i.into(),
                    j.into(),
                    pick(matrix[i * n + j], kind).into(),
                ]);
            }
        }
    }
    let mut report = Report::new(table);
    report.note("images", n);
    report.note("source", source_note);
    for &kind in choice.kinds() {
        let min_diag = (0..n)
            .map(|i| pick(matrix[i * n + i], kind))
            .fold(f64::INFINITY, f64::min);
        report.note(&format!("min_diag_{}", kernel_label(kind)), format!("{min_diag:.6e}"));
        if min_diag < 0.0 {
            report.fail(format!("negative diagonal in {} gram: {min_diag:e}", kernel_label(kind)));
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// spectrum
// ---------------------------------------------------------------------------

/// Tolerance on the tangent-kernel spectral recurrence, checked over
/// degrees `k <= min(k_max, 30)`.
pub const RECURRENCE_REL_TOL: f64 = 1e-7;

/// Tolerance on the Gegenbauer norm identity used to audit the shared
/// quadrature rule, checked over `k <= min(k_max, 60)`.
pub const NORM_CHECK_REL_TOL: f64 = 1e-8;

/// Sphere spectrum of an angular kernel profile: one coefficient and
/// multiplicity per degree, plus parity-resolved power-law decay fits, the
/// tangent-kernel recurrence audit, and a quadrature norm audit.
pub fn spectrum_cmd(profile: ProfileChoice, p: usize, k_max: usize, fit_min: usize) -> Result<Report> {
    if p < 3 {
        bail!("sphere dimension p must be at least 3 (the circle has a different spectral layout)");
    }
    let kind = profile.kind();
    let spectrum = SpectrumTable::compute(|t| kind.eval(t), p, k_max)?;
    let mut table = Table::new(&["k", "mu", "multiplicity"]);
    for row in spectrum.rows() {
        let multiplicity = i64::try_from(row.multiplicity)
            .map(Cell::Int)
            .unwrap_or_else(|_| Cell::Text(row.multiplicity.to_string()));
        table.push_row(vec![row.k.into(), row.mu.into(), multiplicity]);
    }
    let mut report = Report::new(table);
    report.note("profile", profile.label());
    report.note("p", p);
    for (parity, name) in [(Parity::Even, "even"), (Parity::Odd, "odd")] {
        match decay_fit(&spectrum, fit_min, k_max, parity) {
            Ok(slope) => report.note(&format!("decay_slope_{name}"), format!("{slope:.6}")),
            Err(e) => report.note(&format!("decay_slope_{name}"), format!("n/a ({e})")),
        }
    }
    if k_max >= 2 {
        let recurrence = ntk_recurrence_check(p, k_max.min(30))?;
        report.note("recurrence_max_rel", format!("{recurrence:.3e}"));
        if recurrence > RECURRENCE_REL_TOL {
            report.fail(format!(
                "tangent-kernel recurrence violated: {recurrence:e} > {RECURRENCE_REL_TOL:e}"
            ));
        }
    }
    let rule = jacobi_rule(p, required_nodes(k_max))?;
    let mut norm_worst = 0.0_f64;
    for k in 0..=k_max.min(60) {
        norm_worst = norm_worst.max(legendre_norm_check(p, k, &rule)?);
    }
    report.note("norm_check_max_rel", format!("{norm_worst:.3e}"));
    if norm_worst > NORM_CHECK_REL_TOL {
        report.fail(format!(
            "Gegenbauer norm identity violated: {norm_worst:e} > {NORM_CHECK_REL_TOL:e}"
        ));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// smoothness
// ---------------------------------------------------------------------------

/// Largest tolerated gap `lhs - rhs` in the Holder-bound and paired-operator
/// sweeps (rounding allowance on sums of thousands of terms).
pub const SWEEP_GAP_TOL: f64 = 1e-10;

/// Largest tolerated relative homogeneity error of the two-layer kernel.
pub const HOMOGENEITY_REL_TOL: f64 = 1e-9;

/// Allowance over the analytic Lipschitz bound in the smooth-activation
/// sweep (finite sampling of the sup).
pub const LIP_SWEEP_SLACK: f64 = 1e-4;

/// Options of the smoothness command: which ratio profiles to tabulate and
/// how many random instances each property sweep draws.
pub struct SmoothnessOptions {
    pub ratio: RatioChoice,
    pub pairs: usize,
    pub quadruples: usize,
    pub seed: u64,
}

fn random_image(rng: &mut ChaCha8Rng, height: usize, width: usize, channels: usize) -> ImageSignal {
    let data: Vec<f64> =
        (0..height * width * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ImageSignal::new(height, width, channels, data).expect("shape is valid")
}

/// Modulus-of-continuity probes and property sweeps for the angular
/// factors of the two-layer kernels: the square-root Holder ratio of the
/// zeroth arc-cosine factor, the unbounded tangent-kernel ratio, the
/// whole-space Holder bound, the paired-operator smoothness bound,
/// homogeneity, and the Lipschitz bound for smooth activations.
pub fn smoothness_cmd(options: &SmoothnessOptions) -> Result<Report> {
    let mut table = Table::new(&["ratio", "u", "value"]);
    let mut report_notes: Vec<(String, String)> = Vec::new();
    let mut failures: Vec<String> = Vec::new();

    for (kind, label) in options.ratio.kinds() {
        let probe = ratio_probe(kind)?;
        for (&u, &value) in probe.u_grid().iter().zip(probe.values()) {
            table.push_row(vec![label.into(), u.into(), value.into()]);
        }
        report_notes.push((format!("sup_{label}"), format!("{:.12}", probe.sup())));
        match kind {
            RatioKind::Phi0Holder => {
                if probe.sup() > 1.0 + 1e-9 {
                    failures.push(format!(
                        "square-root Holder ratio exceeds 1: sup = {}",
                        probe.sup()
                    ));
                }
                let limit = *probe.values().last().expect("grid is non-empty");
                report_notes.push(("phi0_ratio_near_one".into(), format!("{limit:.12}")));
            }
            RatioKind::NtkNonLip => {
                let near_one = ntk_nonlip_ratio(1.0 - 1e-8)?;
                report_notes.push(("ntk_ratio_at_1e-8".into(), format!("{near_one:.6e}")));
                if near_one <= 1e3 {
                    failures.push(format!(
                        "tangent-kernel ratio fails to diverge: {near_one} at u = 1 - 1e-8"
                    ));
                }
            }
        }
    }

    // Whole-space Holder bound on random pairs across three decades of norms.
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(options.seed, 1));
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..options.pairs {
        let scale_x = 10f64.powf(rng.gen_range(-1.0..1.0));
        let scale_y = 10f64.powf(rng.gen_range(-1.0..1.0));
        let x: Vec<f64> = random_unit(&mut rng, 20).into_iter().map(|t| t * scale_x).collect();
        let y: Vec<f64> = random_unit(&mut rng, 20).into_iter().map(|t| t * scale_y).collect();
        let (lhs, rhs) = holder_bound_check(&x, &y)?;
        worst_gap = worst_gap.max(lhs - rhs);
    }
    report_notes.push(("holder_worst_gap".into(), format!("{worst_gap:.3e}")));
    if worst_gap > SWEEP_GAP_TOL {
        failures.push(format!("Holder bound violated by {worst_gap:e}"));
    }

    // Paired-operator smoothness on random signal quadruples.
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(options.seed, 2));
    let mut worst_m_gap = f64::NEG_INFINITY;
    for _ in 0..options.quadruples {
        let x = random_image(&mut rng, 4, 4, 3);
        let x_prime = random_image(&mut rng, 4, 4, 3);
        let y = random_image(&mut rng, 4, 4, 2);
        let y_prime = random_image(&mut rng, 4, 4, 2);
        let (lhs, rhs) = m_smoothness_check(&x, &y, &x_prime, &y_prime)?;
        worst_m_gap = worst_m_gap.max(lhs - rhs);
    }
    report_notes.push(("paired_operator_worst_gap".into(), format!("{worst_m_gap:.3e}")));
    if worst_m_gap > SWEEP_GAP_TOL {
        failures.push(format!("paired-operator bound violated by {worst_m_gap:e}"));
    }

    // Homogeneity of the two-layer tangent kernel under positive scaling.
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(options.seed, 3));
    let mut worst_hom = 0.0_f64;
    for _ in 0..options.pairs.min(2000) {
        let x = random_unit(&mut rng, 8);
        let x_prime = random_unit(&mut rng, 8);
        let a = 4f64.powf(rng.gen_range(-1.0..1.0));
        let b = 4f64.powf(rng.gen_range(-1.0..1.0));
        match homogeneity_check(&x, &x_prime, a, b) {
            Ok(err) => worst_hom = worst_hom.max(err),
            // Antipodal draws make the kernel vanish exactly; skip them.
            Err(ntk_core::Error::DegenerateInput { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    report_notes.push(("homogeneity_worst_rel".into(), format!("{worst_hom:.3e}")));
    if worst_hom > HOMOGENEITY_REL_TOL {
        failures.push(format!("homogeneity violated: {worst_hom:e}"));
    }

    // Lipschitz bound of tangent features for smooth activations.
    let exp_sup = ntk_core::smoothness::smooth_activation_lip_check(
        &ExpShifted,
        1000,
        derived_seed(options.seed, 4),
    )?;
    let exp_bound = 3f64.sqrt();
    report_notes.push(("exp_shifted_lip_sup".into(), format!("{exp_sup:.12}")));
    report_notes.push(("exp_shifted_lip_bound".into(), format!("{exp_bound:.12}")));
    if exp_sup > exp_bound + LIP_SWEEP_SLACK {
        failures.push(format!("smooth-activation Lipschitz bound violated: {exp_sup} > {exp_bound}"));
    }
    let softplus_sup = ntk_core::smoothness::smooth_activation_lip_check(
        &Softplus,
        1000,
        derived_seed(options.seed, 5),
    )?;
    let g0 = dual_gamma(&Softplus, 0, 256)?;
    let g1 = dual_gamma(&Softplus, 1, 256)?;
    let g2 = dual_gamma(&Softplus, 2, 256)?;
    let softplus_bound = smooth_lipschitz_bound(g0, g1, g2)?;
    report_notes.push(("softplus_lip_sup".into(), format!("{softplus_sup:.12}")));
    report_notes.push(("softplus_lip_bound".into(), format!("{softplus_bound:.12}")));
    if softplus_sup > softplus_bound + LIP_SWEEP_SLACK {
        failures.push(format!(
            "smooth-activation Lipschitz bound violated: {softplus_sup} > {softplus_bound}"
        ));
    }

    let mut report = Report::new(table);
    for (k, v) in report_notes {
        report.note(&k, v);
    }
    for f in failures {
        report.fail(f);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// stability
// ---------------------------------------------------------------------------

/// Options of the deformation-stability experiment.
pub struct StabilityOptions {
    /// IDX image/label files; when absent a synthetic digit corpus sized to
    /// the experiment is generated from the seed.
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub arch: ArchitectureSpec,
    pub seed: u64,
    pub alphas: Vec<f64>,
    /// Members per comparison set.
    pub members: usize,
    /// Index of the reference image in the corpus.
    pub reference: usize,
    /// Exact bilinear warp instead of the first-order transport step.
    pub warp: bool,
    pub kernel: KernelChoice,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            images: None,
            labels: None,
            arch: ntk_core::deform::default_stability_arch().expect("default architecture builds"),
            seed: 0,
            alphas: vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0],
            members: 20,
            reference: 0,
            warp: false,
            kernel: KernelChoice::Both,
        }
    }
}

/// Grid of the smoothed random displacement fields: coarse control points
/// and the interpolation scale, fixed so a seed fully determines a field.
const TAU_COARSE: (usize, usize) = (4, 4);
const TAU_SMOOTHING: f64 = 2.0;

/// Build the four comparison sets: smooth deformations of the reference,
/// the same deformations followed by 1-pixel translations, other images of
/// the reference's label, and other images of any label.
fn build_sets(
    corpus: &MnistCorpus,
    reference: usize,
    members: usize,
    seed: u64,
) -> Result<Vec<StabilitySet>> {
    let ref_image = &corpus.images()[reference];
    let fields = (0..members)
        .map(|i| {
            generate_tau(
                ref_image.height(),
                ref_image.width(),
                TAU_COARSE.0,
                TAU_COARSE.1,
                TAU_SMOOTHING,
                derived_seed(seed, i as u64),
            )
        })
        .collect::<ntk_core::Result<Vec<_>>>()?;
    let directions: Vec<usize> = (0..members).map(|i| i % 8).collect();

    let ref_label = corpus.labels()[reference];
    let mut same_label = Vec::new();
    let mut any_label = Vec::new();
    for (i, (image, &label)) in corpus.images().iter().zip(corpus.labels()).enumerate() {
        if i == reference {
            continue;
        }
        if label == ref_label && same_label.len() < members {
            same_label.push(image.clone());
        }
        if any_label.len() < members {
            any_label.push(image.clone());
        }
    }
    if same_label.len() < members {
        bail!(
            "corpus holds only {} other images of label {ref_label}, need {members}; \
             provide a larger corpus or fewer --members",
            same_label.len()
        );
    }
    if any_label.len() < members {
        bail!("corpus holds only {} other images, need {members}", any_label.len());
    }

    Ok(vec![
        StabilitySet::Deformed { fields: fields.clone() },
        StabilitySet::TranslatedDeformed { fields, directions },
        StabilitySet::Fixed(TransformSet::new(SetKind::SameLabel, same_label, ref_image)?),
        StabilitySet::Fixed(TransformSet::new(SetKind::AnyLabel, any_label, ref_image)?),
    ])
}

/// Parallel mirror of the core stability experiment: identical row order
/// (set, alpha, kernel) and identical arithmetic, with per-member distance
/// evaluations fanned out through rayon. Collection is index-ordered, so
/// rows are bit-identical to the sequential core for any thread count.
pub fn parallel_stability_rows(
    reference: &ImageSignal,
    sets: &[StabilitySet],
    arch: &ArchitectureSpec,
    alphas: &[f64],
    mode: TransformMode,
) -> Result<Vec<StabilityRow>> {
    if alphas.is_empty() || sets.is_empty() {
        bail!("experiment needs sets and scales");
    }
    let reference_trace = self_trace(reference, arch)?;
    let stats_for = |members: &[ImageSignal]| -> Result<[(f64, f64); 2]> {
        let distances = members
            .par_iter()
            .map(|member| member_relative_distances(reference, &reference_trace, member, arch))
            .collect::<ntk_core::Result<Vec<_>>>()?;
        Ok(stats_from_distances(&distances))
    };
    let mut rows = Vec::with_capacity(sets.len() * alphas.len() * 2);
    for set in sets {
        let fixed_stats = match set {
            StabilitySet::Fixed(_) => {
                let members = realize_stability_members(reference, set, 0.0, mode)?;
                Some((stats_for(&members)?, members.len()))
            }
            _ => None,
        };
        let fields: &[_] = match set {
            StabilitySet::Deformed { fields } => fields,
            StabilitySet::TranslatedDeformed { fields, .. } => fields,
            StabilitySet::Fixed(_) => &[],
        };
        for &alpha in alphas {
            let (stats, n_images) = match &fixed_stats {
                Some((stats, n)) => (*stats, *n),
                None => {
                    let members = realize_stability_members(reference, set, alpha, mode)?;
                    (stats_for(&members)?, members.len())
                }
            };
            let mut grad_sup = 0.0_f64;
            let mut tau_sup = 0.0_f64;
            for field in fields {
                grad_sup = grad_sup.max(alpha * field.grad_sup());
                tau_sup = tau_sup.max(alpha * field.tau_sup());
            }
            for (i, kind) in [KernelKind::Ntk, KernelKind::Ckn].into_iter().enumerate() {
                rows.push(StabilityRow {
                    kernel: kind,
                    set: set.kind(),
                    alpha,
                    mean_rel_dist: stats[i].0,
                    std_rel_dist: stats[i].1,
                    n_images,
                    grad_sup,
                    tau_sup,
                    grad_bound_exceeded: grad_sup > GRAD_SUP_VALID_BOUND,
                });
            }
        }
    }
    Ok(rows)
}

/// Run the deformation-stability experiment and tabulate one row per
/// (kernel, set, alpha): mean and spread of relative feature distances
/// from the reference, with the field magnitudes that parameterize the
/// stability bound. Rows whose scaled Jacobian exceeds the bound's
/// validity range are flagged on stderr, never dropped.
pub fn stability_cmd(options: &StabilityOptions) -> Result<Report> {
    if options.members == 0 {
        bail!("--members must be positive");
    }
    if options.alphas.is_empty() {
        bail!("--alphas must name at least one deformation scale");
    }
    let corpus = match (&options.images, &options.labels) {
        (Some(images), Some(labels)) => MnistCorpus::load(images, labels)?,
        (None, None) => {
            let (images, labels) = synth::synthetic_corpus(options.members + 1, options.seed);
            MnistCorpus::from_parts(images, labels)?
        }
        _ => bail!("--images and --labels must be given together"),
    };
    if options.reference >= corpus.len() {
        bail!("--reference {} is out of range for a corpus of {}", options.reference, corpus.len());
    }
    let sets = build_sets(&corpus, options.reference, options.members, options.seed)?;
    let mode = if options.warp { TransformMode::Warp } else { TransformMode::Tangent };
    let reference = &corpus.images()[options.reference];
    let rows = parallel_stability_rows(reference, &sets, &options.arch, &options.alphas, mode)?;

    let mut table = Table::new(&[
        "kernel",
        "set",
        "alpha",
        "mean_rel_dist",
        "std_rel_dist",
        "n_images",
        "grad_sup",
        "tau_sup",
    ]);
    let mut report = Report::new(Table::new(&[""]));
    let mut flagged = 0usize;
    for row in &rows {
        if !options.kernel.kinds().contains(&row.kernel) {
            continue;
        }
        table.push_row(vec![
            kernel_label(row.kernel).into(),
            row.set.label().into(),
            row.alpha.into(),
            row.mean_rel_dist.into(),
            row.std_rel_dist.into(),
            row.n_images.into(),
            row.grad_sup.into(),
            row.tau_sup.into(),
        ]);
        if row.grad_bound_exceeded && row.kernel == KernelKind::Ntk {
            flagged += 1;
            report.note(
                "warning",
                format!(
                    "set {} at alpha {} has grad_sup {:.3} > {GRAD_SUP_VALID_BOUND} \
                     (outside the bound's validity range; row kept)",
                    row.set.label(),
                    row.alpha,
                    row.grad_sup
                ),
            );
        }
    }
    report.table = table;
    report.note("mode", if options.warp { "warp" } else { "tangent" });
    report.note("reference_label", corpus.labels()[options.reference]);
    report.note("members", options.members);
    report.note("flagged_rows", flagged);
    // Slope notes fit the small-alpha regime: scales at or below 0.3 when
    // at least three are available, the whole positive grid otherwise.
    let positive_alphas: Vec<f64> =
        options.alphas.iter().copied().filter(|a| *a > 0.0).collect();
    let small_alphas: Vec<f64> =
        positive_alphas.iter().copied().filter(|a| *a <= 0.3).collect();
    let fit_range = if small_alphas.len() >= 3 { &small_alphas } else { &positive_alphas };
    if fit_range.len() >= 3 {
        let lo = fit_range.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = fit_range.iter().cloned().fold(0.0, f64::max);
        for &kind in options.kernel.kinds() {
            match small_alpha_slope(&rows, kind, SetKind::Deformations, lo, hi) {
                Ok(slope) => report.note(
                    &format!("deformation_slope_{}", kernel_label(kind)),
                    format!("{slope:.4}"),
                ),
                Err(e) => report.note(
                    &format!("deformation_slope_{}", kernel_label(kind)),
                    format!("n/a ({e})"),
                ),
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// mc-check
// ---------------------------------------------------------------------------

/// Options of the Monte Carlo validation battery.
pub struct McOptions {
    pub seed: u64,
    /// Random unit-vector pairs in the two-layer battery.
    pub pairs: usize,
    pub dim: usize,
    /// Hidden width of each sampled two-layer network.
    pub width: usize,
    /// Independent networks averaged per pair.
    pub seeds: usize,
    /// Hidden width of each sampled convolutional network.
    pub conv_width: usize,
    pub conv_seeds: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { seed: 0, pairs: 20, dim: 10, width: 1 << 14, seeds: 32, conv_width: 1 << 12, conv_seeds: 16 }
    }
}

/// Monte Carlo z-score above which a single battery entry counts as an
/// excursion.
pub const MC_Z_TOL: f64 = 3.0;

/// z tolerance of the wider-tailed pre-activation covariance checks.
pub const GP_Z_TOL: f64 = 4.0;

fn anchor_rows(table: &mut Table, failures: &mut Vec<String>) -> Result<()> {
    let anchors: [(&str, fn(f64) -> ntk_core::Result<f64>, f64, f64); 9] = [
        ("kappa0(-1)", kappa0, -1.0, 0.0),
        ("kappa0(0)", kappa0, 0.0, 0.5),
        ("kappa0(1)", kappa0, 1.0, 1.0),
        ("kappa1(-1)", kappa1, -1.0, 0.0),
        ("kappa1(0)", kappa1, 0.0, core::f64::consts::FRAC_1_PI),
        ("kappa1(1)", kappa1, 1.0, 1.0),
        ("ntk(-1)", kappa_ntk, -1.0, 0.0),
        ("ntk(0)", kappa_ntk, 0.0, core::f64::consts::FRAC_1_PI),
        ("ntk(1)", kappa_ntk, 1.0, 2.0),
    ];
    for (name, f, u, expected) in anchors {
        let value = f(u)?;
        let err = (value - expected).abs();
        let pass = err <= 1e-12;
        table.push_row(vec![
            name.into(),
            expected.into(),
            value.into(),
            0.0.into(),
            (err / 1e-12).into(),
            pass.into(),
        ]);
        if !pass {
            failures.push(format!("closed-form anchor {name}: {value} vs {expected}"));
        }
    }
    Ok(())
}

/// Validate the analytic kernels against explicit random networks: exact
/// closed-form anchors, a battery of finite-width two-layer gradient
/// kernels, a convolutional gradient kernel, and pre-activation
/// covariances at both stages of a two-layer convolutional architecture.
/// Every row reports analytic value, empirical mean, standard error, and a
/// z-score; one two-layer excursion above [`MC_Z_TOL`] is tolerated per
/// battery (unbiased estimators exceed 3 standard errors now and then).
pub fn mc_check_cmd(options: &McOptions) -> Result<Report> {
    if options.pairs < 2 || options.seeds < 2 || options.conv_seeds < 2 {
        bail!("the battery needs at least 2 pairs and 2 seeds per estimate");
    }
    let mut table = Table::new(&["check", "analytic", "empirical", "stderr", "z", "pass"]);
    let mut failures = Vec::new();
    anchor_rows(&mut table, &mut failures)?;

    // Two-layer battery: independent random pairs, each estimated from
    // `seeds` networks of the configured width.
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(options.seed, 0x7761));
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..options.pairs)
        .map(|_| (random_unit(&mut rng, options.dim), random_unit(&mut rng, options.dim)))
        .collect();
    let estimates: Vec<(f64, f64, f64)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (x, y))| -> Result<(f64, f64, f64)> {
            let analytic = ntk_core::arccos::two_layer_ntk(x, y)?;
            let (mean, stderr) = mc_estimate(
                x,
                y,
                options.width,
                options.seeds,
                derived_seed(options.seed, 0x6d63_0000 + i as u64),
            )?;
            Ok((analytic, mean, stderr))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut excursions = 0usize;
    for (i, (analytic, mean, stderr)) in estimates.iter().enumerate() {
        let z = (mean - analytic).abs() / stderr.max(1e-300);
        let pass = z <= MC_Z_TOL;
        if !pass {
            excursions += 1;
        }
        table.push_row(vec![
            format!("two-layer pair {i}").into(),
            (*analytic).into(),
            (*mean).into(),
            (*stderr).into(),
            z.into(),
            pass.into(),
        ]);
    }
    if excursions > 1 {
        failures.push(format!(
            "two-layer battery: {excursions} of {} pairs beyond {MC_Z_TOL} standard errors",
            options.pairs
        ));
    }

    // Convolutional gradient kernel on a small image pair under a one-layer
    // pooled architecture (the widest finite-width surface the explicit
    // network supports).
    let conv_arch = ArchitectureSpec::new(
        None,
        vec![ntk_core::conv::LayerSpec::boxed(3, 3, ntk_core::conv::Pooling::gaussian(2)?)?],
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(options.seed, 0x636f_6e76));
    let img_x = random_unit_image(&mut rng, 3, 3);
    let img_y = random_unit_image(&mut rng, 3, 3);
    let analytic_conv = ntk_core::conv::conv_ntk(&img_x, &img_y, &conv_arch)?;
    let samples: Vec<f64> = (0..options.conv_seeds)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let net = TinyConvNet::new(
                &conv_arch,
                3,
                3,
                1,
                options.conv_width,
                derived_seed(options.seed, 0x6e65_7400 + j as u64),
            )?;
            Ok(conv_grad_kernel(&net, &img_x, &img_y)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let (conv_mean, conv_stderr) = mean_and_stderr(&samples);
    let conv_z = (conv_mean - analytic_conv).abs() / conv_stderr.max(1e-300);
    let conv_pass = conv_z <= MC_Z_TOL;
    table.push_row(vec![
        "conv gradient kernel".into(),
        analytic_conv.into(),
        conv_mean.into(),
        conv_stderr.into(),
        conv_z.into(),
        conv_pass.into(),
    ]);
    if !conv_pass {
        failures.push(format!(
            "convolutional gradient kernel off by {conv_z:.2} standard errors"
        ));
    }

    // Pre-activation covariance at both stages of a two-layer architecture.
    let gp_arch = ArchitectureSpec::new(
        None,
        vec![
            ntk_core::conv::LayerSpec::boxed(3, 3, ntk_core::conv::Pooling::gaussian(2)?)?,
            ntk_core::conv::LayerSpec::boxed(3, 3, ntk_core::conv::Pooling::dirac(1)?)?,
        ],
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(options.seed, 0x6770));
    let gp_x = random_unit_image(&mut rng, 4, 4);
    let gp_y = random_unit_image(&mut rng, 4, 4);
    for (stage, u, u_prime) in [(1usize, (0usize, 0usize), (0usize, 1usize)), (2, (0, 0), (1, 1))] {
        let check = gp_covariance_check(
            &gp_x,
            &gp_y,
            &gp_arch,
            stage,
            u,
            u_prime,
            options.conv_width,
            options.conv_seeds,
            derived_seed(options.seed, 0x6770_0000 + stage as u64),
        )?;
        let pass = check.z_score.abs() <= GP_Z_TOL;
        table.push_row(vec![
            format!("gp covariance stage {stage}").into(),
            check.analytic.into(),
            check.empirical.into(),
            check.stderr.into(),
            check.z_score.abs().into(),
            pass.into(),
        ]);
        if !pass {
            failures.push(format!(
                "stage-{stage} pre-activation covariance off by {:.2} standard errors",
                check.z_score.abs()
            ));
        }
    }

    let mut report = Report::new(table);
    report.note("width", options.width);
    report.note("seeds", options.seeds);
    report.note("pairs", options.pairs);
    report.note("excursions", excursions);
    for f in failures {
        report.fail(f);
    }
    Ok(report)
}

fn random_unit_image(rng: &mut ChaCha8Rng, height: usize, width: usize) -> ImageSignal {
    let data = random_unit(rng, height * width);
    ImageSignal::from_gray(height, width, data).expect("shape is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ntk_core::conv::{gram, LayerSpec, Pooling};
    use ntk_core::deform::stability_experiment;

    fn tiny_arch() -> ArchitectureSpec {
        ArchitectureSpec::new(
            None,
            vec![
                LayerSpec::boxed(3, 3, Pooling::gaussian(2).unwrap()).unwrap(),
                LayerSpec::boxed(3, 3, Pooling::gaussian(2).unwrap()).unwrap(),
            ],
        )
        .unwrap()
    }

    fn blobs(n: usize, side: usize, seed: u64) -> Vec<ImageSignal> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let data = (0..side * side).map(|_| rng.gen_range(0.0..1.0)).collect();
                ImageSignal::from_gray(side, side, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn parallel_gram_matches_sequential_core_bitwise() {
        let images = blobs(6, 8, 11);
        let arch = tiny_arch();
        let matrix = parallel_gram(&images, &arch).unwrap();
        for kind in [KernelKind::Ntk, KernelKind::Ckn] {
            let core = gram(&images, &arch, kind).unwrap();
            let ours: Vec<f64> = matrix.iter().map(|k| pick(*k, kind)).collect();
            assert_eq!(core.len(), ours.len());
            for (a, b) in core.iter().zip(&ours) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn parallel_stability_matches_sequential_core_bitwise() {
        let images = blobs(1, 8, 3);
        let reference = &images[0];
        let fields: Vec<_> = (0..4)
            .map(|i| generate_tau(8, 8, 3, 3, 1.5, 100 + i).unwrap())
            .collect();
        let sets = vec![
            StabilitySet::Deformed { fields: fields.clone() },
            StabilitySet::TranslatedDeformed { fields, directions: vec![0, 2, 4, 6] },
            StabilitySet::Fixed(
                TransformSet::new(SetKind::AnyLabel, blobs(4, 8, 7), reference).unwrap(),
            ),
        ];
        let arch = tiny_arch();
        let alphas = [0.0, 0.05, 0.2];
        for mode in [TransformMode::Tangent, TransformMode::Warp] {
            let core_rows =
                stability_experiment(reference, &sets, &arch, &alphas, mode).unwrap();
            let ours =
                parallel_stability_rows(reference, &sets, &arch, &alphas, mode).unwrap();
            assert_eq!(core_rows.len(), ours.len());
            for (a, b) in core_rows.iter().zip(&ours) {
                assert_eq!(a.kernel, b.kernel);
                assert_eq!(a.set, b.set);
                assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
                assert_eq!(a.mean_rel_dist.to_bits(), b.mean_rel_dist.to_bits());
                assert_eq!(a.std_rel_dist.to_bits(), b.std_rel_dist.to_bits());
                assert_eq!(a.n_images, b.n_images);
                assert_eq!(a.grad_sup.to_bits(), b.grad_sup.to_bits());
                assert_eq!(a.tau_sup.to_bits(), b.tau_sup.to_bits());
                assert_eq!(a.grad_bound_exceeded, b.grad_bound_exceeded);
            }
        }
    }

    #[test]
    fn parallel_runs_are_bit_identical_across_thread_counts() {
        let images = blobs(5, 8, 21);
        let arch = tiny_arch();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| parallel_gram(&images, &arch).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| parallel_gram(&images, &arch).unwrap());
        for (a, b) in single.iter().zip(&many) {
            assert_eq!(a.ntk.to_bits(), b.ntk.to_bits());
            assert_eq!(a.ckn.to_bits(), b.ckn.to_bits());
        }
    }

    #[test]
    fn eval_fc_reports_orthogonal_pair_anchor() {
        let report = eval_fc(&[1.0, 0.0], &[0.0, 1.0], 2).unwrap();
        let rows = report.table.rows();
        assert_eq!(rows.len(), 2);
        match (&rows[0][1], &rows[0][2]) {
            (Cell::Float(sigma), Cell::Float(ntk)) => {
                assert!((sigma - core::f64::consts::FRAC_1_PI).abs() < 1e-15);
                assert!((ntk - core::f64::consts::FRAC_1_PI).abs() < 1e-15);
            }
            other => panic!("unexpected cells {other:?}"),
        }
    }

    #[test]
    fn stability_cmd_rows_are_deterministic_and_flag_free_at_small_alpha() {
        let options = StabilityOptions {
            members: 3,
            alphas: vec![0.01, 0.1],
            seed: 5,
            ..StabilityOptions::default()
        };
        let a = stability_cmd(&options).unwrap();
        let b = stability_cmd(&options).unwrap();
        assert_eq!(a.table.to_csv(), b.table.to_csv());
        // 4 sets x 2 alphas x 2 kernels
        assert_eq!(a.table.rows().len(), 16);
    }

    #[test]
    fn mc_anchor_rows_pass_exactly() {
        let mut table = Table::new(&["check", "analytic", "empirical", "stderr", "z", "pass"]);
        let mut failures = Vec::new();
        anchor_rows(&mut table, &mut failures).unwrap();
        assert!(failures.is_empty(), "{failures:?}");
        assert_eq!(table.rows().len(), 9);
    }
}
