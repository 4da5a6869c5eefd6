//! Finite-width Monte Carlo oracles: explicit gradient inner products of
//! randomly initialized networks and pre-activation covariance checks,
//! validating the analytic kernels by statistical agreement (never by
//! exact comparison — the tolerance is always a multiple of the standard
//! error).

use crate::conv::{covariance_stage_planes, ArchitectureSpec, ImageSignal, Pooling};
use crate::error::{Error, Result};
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn standard_normals(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| StandardNormal.sample(rng)).collect()
}

/// A finite-width two-layer ReLU network
/// `f(x) = sqrt(2/m) sum_j v_j relu(w_j . x)` with all weights i.i.d.
/// standard normal. Regeneration from the same seed is bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// `m x p` row-major hidden weights.
    weights: Vec<f64>,
    /// `m` head weights.
    head: Vec<f64>,
    width: usize,
    dim: usize,
    seed: u64,
}

impl TwoLayerNet {
    pub fn new(width: usize, dim: usize, seed: u64) -> Result<Self> {
        if width == 0 || dim == 0 {
            return Err(Error::InvalidArgument { context: "network needs positive width and dimension" });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = standard_normals(&mut rng, width * dim);
        let head = standard_normals(&mut rng, width);
        Ok(TwoLayerNet { weights, head, width, dim, seed })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Exact gradient inner product `<grad_theta f(x), grad_theta f(x')>` of a
/// finite two-layer network:
/// `(2/m) sum_j [ v_j^2 1{w_j.x>0} 1{w_j.x'>0} <x,x'> + (w_j.x)_+ (w_j.x')_+ ]`,
/// with the ReLU derivative at exactly 0 taken as 0. As the width grows
/// this converges to the closed-form two-layer tangent kernel.
pub fn two_layer_grad_kernel(net: &TwoLayerNet, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != net.dim || y.len() != net.dim {
        return Err(Error::ShapeMismatch { context: "inputs must match the network dimension" });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "gradient kernel input" });
    }
    let dot_xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let mut acc = 0.0;
    for j in 0..net.width {
        let row = &net.weights[j * net.dim..(j + 1) * net.dim];
        let ax: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
        let ay: f64 = row.iter().zip(y).map(|(w, v)| w * v).sum();
        let v = net.head[j];
        if ax > 0.0 && ay > 0.0 {
            acc += v * v * dot_xy + ax * ay;
        }
    }
    Ok(2.0 * acc / net.width as f64)
}

/// Mean and standard error of [`two_layer_grad_kernel`] over `n_seeds`
/// independently initialized networks (seeds `base_seed..base_seed +
/// n_seeds`). Deterministic in the base seed.
pub fn mc_estimate(
    x: &[f64],
    y: &[f64],
    width: usize,
    n_seeds: usize,
    base_seed: u64,
) -> Result<(f64, f64)> {
    if n_seeds < 2 {
        return Err(Error::InvalidArgument { context: "standard error needs at least 2 seeds" });
    }
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::ShapeMismatch { context: "inputs must share a positive dimension" });
    }
    let mut samples = Vec::with_capacity(n_seeds);
    for s in 0..n_seeds {
        let net = TwoLayerNet::new(width, x.len(), base_seed.wrapping_add(s as u64))?;
        samples.push(two_layer_grad_kernel(&net, x, y)?);
    }
    Ok(mean_and_stderr(&samples))
}

/// Sample mean and its standard error (sample standard deviation over
/// `sqrt(n)`).
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var / n))
}

/// A finite-width one-convolutional-layer ReLU network with a linear head
/// over pooled positions:
/// `f(x) = sqrt(2/m) sum_j sum_u v_j[u] (A relu(W P x))_j[u]`.
///
/// Patch extraction `P` and pooling `A` come from the architecture's
/// single layer; weights `W` (`m x patch_len`) and `v`
/// (`m x pooled positions`) are i.i.d. standard normal from the seed. The
/// gradient inner products of this network converge to the analytic
/// convolutional tangent kernel of the same architecture.
#[derive(Debug, Clone)]
pub struct TinyConvNet {
    conv: Vec<f64>,
    head: Vec<f64>,
    width: usize,
    patch: Vec<(i64, i64)>,
    patch_len: usize,
    height: usize,
    image_width: usize,
    channels: usize,
    pooled_rows: usize,
    pooled_cols: usize,
    /// Dense pooling matrix, `pooled positions x input positions`
    /// row-major, reconstructed from the pooling spec so the network and
    /// the analytic kernel share one operator bit for bit.
    pooling_matrix: Vec<f64>,
    seed: u64,
}

impl TinyConvNet {
    pub fn new(
        arch: &ArchitectureSpec,
        height: usize,
        image_width: usize,
        channels: usize,
        net_width: usize,
        seed: u64,
    ) -> Result<Self> {
        if arch.depth() != 1 {
            return Err(Error::Unsupported {
                context: "explicit gradients cover single-convolutional-layer networks only",
            });
        }
        if arch.initial_pool().is_some() {
            return Err(Error::Unsupported {
                context: "explicit gradients do not model an initial pooling stage",
            });
        }
        if height == 0 || image_width == 0 || channels == 0 || net_width == 0 {
            return Err(Error::InvalidArgument { context: "network shape must be positive" });
        }
        let layer = &arch.layers()[0];
        let patch = layer.patch().to_vec();
        let patch_len = channels * patch.len();
        let pooling = layer.pooling();
        let pooled_rows = pooling.output_len(height);
        let pooled_cols = pooling.output_len(image_width);
        let pooling_matrix = dense_pooling_matrix(height, image_width, pooling);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = standard_normals(&mut rng, net_width * patch_len);
        let head = standard_normals(&mut rng, net_width * pooled_rows * pooled_cols);
        Ok(TinyConvNet {
            conv,
            head,
            width: net_width,
            patch,
            patch_len,
            height,
            image_width,
            channels,
            pooled_rows,
            pooled_cols,
            pooling_matrix,
            seed,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Normalized patch vectors, one `patch_len` column per position,
    /// row-major `[position][patch entry]`.
    fn patch_vectors(&self, x: &ImageSignal) -> Vec<f64> {
        let scale = 1.0 / libm::sqrt(self.patch.len() as f64);
        let positions = self.height * self.image_width;
        let mut out = Vec::with_capacity(positions * self.patch_len);
        for r in 0..self.height as i64 {
            for c in 0..self.width_i64() {
                for &(vr, vc) in &self.patch {
                    match x.get(r + vr, c + vc) {
                        Some(slice) => out.extend(slice.iter().map(|v| v * scale)),
                        None => out.extend(core::iter::repeat(0.0).take(self.channels)),
                    }
                }
            }
        }
        out
    }

    fn width_i64(&self) -> i64 {
        self.image_width as i64
    }
}

/// Materialize the separable 2-D pooling operator as a dense matrix by
/// pooling indicator images, `pooled positions x input positions`.
fn dense_pooling_matrix(height: usize, width: usize, pooling: &Pooling) -> Vec<f64> {
    let n_in = height * width;
    let n_out = pooling.output_len(height) * pooling.output_len(width);
    let mut matrix = alloc::vec![0.0; n_out * n_in];
    for p in 0..n_in {
        let mut data = alloc::vec![0.0; n_in];
        data[p] = 1.0;
        let image = ImageSignal::new(height, width, 1, data).expect("indicator image");
        let pooled = image.pool(pooling);
        for (q, v) in pooled.data().iter().enumerate() {
            matrix[q * n_in + p] = *v;
        }
    }
    matrix
}

/// Exact gradient inner product of [`TinyConvNet`] on two images, with
/// respect to both the convolutional weights and the head:
/// head part `(2/m) sum_j sum_u abar_j[u] abar'_j[u]`, convolutional part
/// `(2/m) sum_j <B_j, B'_j>` where
/// `B_j = sum_p (A^T v_j)[p] relu'(atilde_j[p]) (P x)(p)`.
pub fn conv_grad_kernel(net: &TinyConvNet, x: &ImageSignal, y: &ImageSignal) -> Result<f64> {
    for image in [x, y] {
        if image.height() != net.height
            || image.width() != net.image_width
            || image.channels() != net.channels
        {
            return Err(Error::ShapeMismatch { context: "images must match the network input shape" });
        }
    }
    let positions = net.height * net.image_width;
    let pooled_positions = net.pooled_rows * net.pooled_cols;
    let px = net.patch_vectors(x);
    let py = net.patch_vectors(y);
    let mut acc = 0.0;
    let mut pre_x = alloc::vec![0.0; positions];
    let mut pre_y = alloc::vec![0.0; positions];
    let mut backprojected = alloc::vec![0.0; positions];
    let mut bx = alloc::vec![0.0; net.patch_len];
    let mut by = alloc::vec![0.0; net.patch_len];
    for j in 0..net.width {
        let w = &net.conv[j * net.patch_len..(j + 1) * net.patch_len];
        for p in 0..positions {
            pre_x[p] = dot(w, &px[p * net.patch_len..(p + 1) * net.patch_len]);
            pre_y[p] = dot(w, &py[p * net.patch_len..(p + 1) * net.patch_len]);
        }
        let v = &net.head[j * pooled_positions..(j + 1) * pooled_positions];

        // Head gradients: pooled activations of each image.
        let mut head_part = 0.0;
        for q in 0..pooled_positions {
            let row = &net.pooling_matrix[q * positions..(q + 1) * positions];
            let ax: f64 = row.iter().zip(&pre_x).map(|(a, z)| a * relu(*z)).sum();
            let ay: f64 = row.iter().zip(&pre_y).map(|(a, z)| a * relu(*z)).sum();
            head_part += ax * ay;
        }

        // Convolutional gradients: backproject the head through the
        // pooling adjoint, gate by the ReLU derivative, and accumulate
        // patch vectors.
        for value in backprojected.iter_mut() {
            *value = 0.0;
        }
        for q in 0..pooled_positions {
            let row = &net.pooling_matrix[q * positions..(q + 1) * positions];
            for (b, a) in backprojected.iter_mut().zip(row) {
                *b += v[q] * a;
            }
        }
        for value in bx.iter_mut() {
            *value = 0.0;
        }
        for value in by.iter_mut() {
            *value = 0.0;
        }
        for p in 0..positions {
            let gate_x = if pre_x[p] > 0.0 { backprojected[p] } else { 0.0 };
            let gate_y = if pre_y[p] > 0.0 { backprojected[p] } else { 0.0 };
            if gate_x != 0.0 {
                for (b, patch_entry) in
                    bx.iter_mut().zip(&px[p * net.patch_len..(p + 1) * net.patch_len])
                {
                    *b += gate_x * patch_entry;
                }
            }
            if gate_y != 0.0 {
                for (b, patch_entry) in
                    by.iter_mut().zip(&py[p * net.patch_len..(p + 1) * net.patch_len])
                {
                    *b += gate_y * patch_entry;
                }
            }
        }
        acc += head_part + dot(&bx, &by);
    }
    Ok(2.0 * acc / net.width as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Result of a pre-activation covariance check: the Monte Carlo estimate,
/// the analytic covariance-plane entry, and the z-score of their
/// difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceCheck {
    pub empirical: f64,
    pub analytic: f64,
    pub stderr: f64,
    pub z_score: f64,
}

/// Compare the empirical covariance of pre-activation channels
/// `atilde^k_i[u] atilde'^k_i[u']` of random finite-width networks against
/// the analytic covariance plane of the same architecture at stage `k`
/// (1-based). Channels within a seed and seeds are averaged; the z-score
/// uses the across-seed standard error. Stage 1 is the linear patch layer;
/// stage 2 applies ReLU, pooling, and the second patch extraction with
/// variance-2 weight scaling.
pub fn gp_covariance_check(
    x: &ImageSignal,
    y: &ImageSignal,
    arch: &ArchitectureSpec,
    stage: usize,
    u: (usize, usize),
    u_prime: (usize, usize),
    width: usize,
    n_seeds: usize,
    base_seed: u64,
) -> Result<CovarianceCheck> {
    if stage == 0 || stage > 2 {
        return Err(Error::Unsupported {
            context: "forward simulation covers pre-activation stages 1 and 2",
        });
    }
    if stage > arch.depth() {
        return Err(Error::InvalidArgument { context: "stage exceeds architecture depth" });
    }
    if n_seeds < 2 {
        return Err(Error::InvalidArgument { context: "standard error needs at least 2 seeds" });
    }
    if width < 2 {
        return Err(Error::InvalidArgument { context: "covariance needs at least 2 channels" });
    }
    let planes = covariance_stage_planes(x, y, arch)?;
    let plane = &planes[stage - 1];
    let analytic = plane.entry(u, u_prime);

    let layer0 = &arch.layers()[0];
    let probe = TinyConvNet::new(
        &ArchitectureSpec::new(None, alloc::vec![layer0.clone()])?,
        x.height(),
        x.width(),
        x.channels(),
        1,
        0,
    )?;
    let px = probe.patch_vectors(x);
    let py = probe.patch_vectors(y);
    let positions = x.height() * x.width();
    let patch_len = probe.patch_len;
    let index_of = |pos: (usize, usize), width_: usize| pos.0 * width_ + pos.1;

    let mut samples = Vec::with_capacity(n_seeds);
    for s in 0..n_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(s as u64));
        let estimate = match stage {
            1 => {
                let ux = index_of(u, x.width());
                let uy = index_of(u_prime, x.width());
                let mut acc = 0.0;
                for _ in 0..width {
                    let w = standard_normals(&mut rng, patch_len);
                    let ax = dot(&w, &px[ux * patch_len..(ux + 1) * patch_len]);
                    let ay = dot(&w, &py[uy * patch_len..(uy + 1) * patch_len]);
                    acc += ax * ay;
                }
                acc / width as f64
            }
            _ => {
                second_stage_covariance(
                    arch, &px, &py, positions, patch_len, x.height(), x.width(), u, u_prime, width,
                    &mut rng,
                )?
            }
        };
        samples.push(estimate);
    }
    let (empirical, stderr) = mean_and_stderr(&samples);
    let z_score = (empirical - analytic) / stderr.max(1e-300);
    Ok(CovarianceCheck { empirical, analytic, stderr, z_score })
}

/// One seed's estimate of the stage-2 pre-activation covariance: simulate
/// `width` first-layer channels, apply ReLU and pooling, extract the
/// second-layer patches, and contract with `width` second-layer filters
/// scaled by `sqrt(2/width)`.
#[allow(clippy::too_many_arguments)]
fn second_stage_covariance(
    arch: &ArchitectureSpec,
    px: &[f64],
    py: &[f64],
    positions: usize,
    patch_len: usize,
    height: usize,
    image_width: usize,
    u: (usize, usize),
    u_prime: (usize, usize),
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if arch.depth() < 2 {
        return Err(Error::InvalidArgument { context: "stage 2 needs a second layer" });
    }
    let pooling = arch.layers()[0].pooling();
    let patch2 = arch.layers()[1].patch();
    let pooled_rows = pooling.output_len(height);
    let pooled_cols = pooling.output_len(image_width);

    // First layer: activations per channel, laid out channel-innermost so
    // pooling reuses the image machinery.
    let mut act_x = alloc::vec![0.0; positions * width];
    let mut act_y = alloc::vec![0.0; positions * width];
    for j in 0..width {
        let w = standard_normals(rng, patch_len);
        for p in 0..positions {
            act_x[p * width + j] = relu(dot(&w, &px[p * patch_len..(p + 1) * patch_len]));
            act_y[p * width + j] = relu(dot(&w, &py[p * patch_len..(p + 1) * patch_len]));
        }
    }
    let pooled_x = ImageSignal::new(height, image_width, width, act_x)?.pool(pooling);
    let pooled_y = ImageSignal::new(height, image_width, width, act_y)?.pool(pooling);

    // Second-layer patch vectors at the two probed positions, with the
    // 1/sqrt(|S|) patch normalization.
    let patch_vec = |image: &ImageSignal, pos: (usize, usize)| -> Vec<f64> {
        let scale = 1.0 / libm::sqrt(patch2.len() as f64);
        let mut out = Vec::with_capacity(patch2.len() * width);
        for &(vr, vc) in patch2 {
            match image.get(pos.0 as i64 + vr, pos.1 as i64 + vc) {
                Some(slice) => out.extend(slice.iter().map(|v| v * scale)),
                None => out.extend(core::iter::repeat(0.0).take(width)),
            }
        }
        out
    };
    if u.0 >= pooled_rows || u.1 >= pooled_cols || u_prime.0 >= pooled_rows || u_prime.1 >= pooled_cols
    {
        return Err(Error::InvalidArgument { context: "probe position outside the pooled grid" });
    }
    let vec_x = patch_vec(&pooled_x, u);
    let vec_y = patch_vec(&pooled_y, u_prime);

    // Second layer: variance-2 filters; covariance averaged over channels.
    let scale = libm::sqrt(2.0 / width as f64);
    let mut acc = 0.0;
    for _ in 0..width {
        let w2 = standard_normals(rng, vec_x.len());
        let ax = scale * dot(&w2, &vec_x);
        let ay = scale * dot(&w2, &vec_y);
        acc += ax * ay;
    }
    Ok(acc / width as f64)
}
