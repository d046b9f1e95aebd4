//! Fully connected mean and precision networks trained by hand-written
//! reverse-mode differentiation.
//!
//! A mean-variance model is a pair of independent MLPs: the mean net `μ̂_θ`
//! (identity head) and the precision net `Λ̂_φ` (softplus head). Inputs are
//! batches stored row-major as `n × d` slices.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::optim::{clip_in_place, Adam, CyclicLr};
use crate::rng::{stream, Stream};

static TOKENS: AtomicU64 = AtomicU64::new(1);

fn fresh_token() -> u64 {
    TOKENS.fetch_add(1, Ordering::Relaxed)
}

/// Output nonlinearity of the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Identity,
    Softplus,
}

impl Head {
    fn name(self) -> &'static str {
        match self {
            Head::Identity => "identity",
            Head::Softplus => "softplus",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Head::Identity => z,
            Head::Softplus => softplus(z).max(f64::MIN_POSITIVE),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Head::Identity => 1.0,
            Head::Softplus => sigmoid(z),
        }
    }

    /// Pre-activation that makes the head output `v`.
    fn inverse(self, v: f64) -> f64 {
        match self {
            Head::Identity => v,
            Head::Softplus => v + (-(-v).exp_m1()).ln(),
        }
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Multilayer perceptron with leaky-ReLU hidden layers.
///
/// Parameters live in one flat vector; layer `l` stores its `out × in`
/// weight matrix row-major followed by its `out` biases.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    slope: f64,
    head: Head,
    token: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.params == other.params && self.slope == other.slope && self.head == other.head
    }
}

impl Mlp {
    /// All-zero network with the given layer sizes (input first, output last).
    pub fn zeros(sizes: &[usize], slope: f64, head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!("bad layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::InvalidParameter("networks have a single output".into()));
        }
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::InvalidParameter(format!("leaky slope must lie in (0, 1), got {slope}")));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for w in sizes.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        offsets.push(total);
        Ok(Self {
            sizes: sizes.to_vec(),
            offsets,
            params: vec![0.0; total],
            slope,
            head,
            token: fresh_token(),
        })
    }

    /// He initialization: weights `Normal(0, 2/fan_in)`, biases 0.
    pub fn he(sizes: &[usize], slope: f64, head: Head, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes, slope, head)?;
        for l in 0..net.num_layers() {
            let normal = Normal::new(0.0, (2.0 / sizes[l] as f64).sqrt()).expect("positive fan-in");
            let w = net.weight_range(l);
            for v in &mut net.params[w] {
                *v = normal.sample(rng);
            }
        }
        Ok(net)
    }

    /// Zero weights with the final bias chosen so every input maps to `value`.
    pub fn constant(sizes: &[usize], slope: f64, head: Head, value: f64) -> Result<Self> {
        if head == Head::Softplus && !(value > 0.0) {
            return Err(Error::InvalidParameter(format!("softplus output must be positive, got {value}")));
        }
        let mut net = Self::zeros(sizes, slope, head)?;
        let b = net.bias_range(net.num_layers() - 1);
        net.params[b][0] = head.inverse(value);
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters. Any activation cache taken before this call
    /// becomes stale.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.token = fresh_token();
        &mut self.params
    }

    pub fn weight_range(&self, l: usize) -> Range<usize> {
        let start = self.offsets[l];
        start..start + self.sizes[l] * self.sizes[l + 1]
    }

    pub fn bias_range(&self, l: usize) -> Range<usize> {
        let end = self.offsets[l + 1];
        end - self.sizes[l + 1]..end
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        &self.params[self.weight_range(l)]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.params[self.bias_range(l)]
    }

    /// 1 for parameters in the L2 penalty, 0 otherwise. The final-layer bias
    /// is never penalized.
    pub fn penalty_mask(&self, hidden_biases: bool) -> Vec<f64> {
        let mut mask = vec![1.0; self.params.len()];
        let last = self.num_layers() - 1;
        for l in 0..=last {
            if l == last || !hidden_biases {
                mask[self.bias_range(l)].iter_mut().for_each(|m| *m = 0.0);
            }
        }
        mask
    }

    /// `‖θ‖²` over the penalized parameters.
    pub fn l2_norm_sq(&self, hidden_biases: bool) -> f64 {
        self.params
            .iter()
            .zip(self.penalty_mask(hidden_biases))
            .map(|(p, m)| m * p * p)
            .sum()
    }

    fn check_input(&self, x: &[f64], n: usize) -> Result<()> {
        let d = self.input_dim();
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        if x.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len() / n,
            });
        }
        Ok(())
    }

    /// Batched forward pass over `n` rows of `x`.
    pub fn forward(&self, x: &[f64], n: usize) -> Result<ForwardCache> {
        self.check_input(x, n)?;
        let layers = self.num_layers();
        let mut acts = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        acts.push(x.to_vec());
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut z = vec![0.0; n * fan_out];
            for row in z.chunks_exact_mut(fan_out) {
                row.copy_from_slice(self.bias(l));
            }
            // Z += A · Wᵀ
            gemm(
                n,
                fan_in,
                fan_out,
                (&acts[l], fan_in, 1),
                (self.weight(l), 1, fan_in),
                &mut z,
                1.0,
            );
            if l + 1 < layers {
                let slope = self.slope;
                acts.push(z.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect());
            }
            pre.push(z);
        }
        let out = pre[layers - 1].iter().map(|&z| self.head.apply(z)).collect();
        Ok(ForwardCache {
            token: self.token,
            n,
            acts,
            pre,
            out,
        })
    }

    /// Outputs for a list of covariate rows.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let x = flatten(rows, self.input_dim())?;
        Ok(self.forward(&x, rows.len())?.out)
    }

    /// Parameter gradient of `Σ_i upstream_i · f(x_i)`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.params.len()];
        self.backward_into(cache, upstream, &mut g, false)?;
        Ok(g)
    }

    /// Gradient of `Σ_i upstream_i · f(x_i)` with respect to the inputs,
    /// row-major `n × d`.
    pub fn input_gradient(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.params.len()];
        Ok(self.backward_into(cache, upstream, &mut g, true)?.unwrap_or_default())
    }

    fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grad: &mut [f64],
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        if cache.token != self.token {
            return Err(Error::StaleCache);
        }
        let n = cache.n;
        if upstream.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: upstream.len(),
            });
        }
        let layers = self.num_layers();
        let mut dz: Vec<f64> = cache.pre[layers - 1]
            .iter()
            .zip(upstream)
            .map(|(&z, &u)| u * self.head.derivative(z))
            .collect();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (wr, br) = (self.weight_range(l), self.bias_range(l));
            // dW = dZᵀ · A
            gemm(
                fan_out,
                n,
                fan_in,
                (&dz, 1, fan_out),
                (&cache.acts[l], fan_in, 1),
                &mut grad[wr],
                0.0,
            );
            let db = &mut grad[br];
            db.iter_mut().for_each(|v| *v = 0.0);
            for row in dz.chunks_exact(fan_out) {
                for (b, d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if l == 0 && !want_input {
                break;
            }
            // dA = dZ · W
            let mut da = vec![0.0; n * fan_in];
            gemm(n, fan_out, fan_in, (&dz, fan_out, 1), (self.weight(l), fan_in, 1), &mut da, 0.0);
            if l == 0 {
                return Ok(Some(da));
            }
            let slope = self.slope;
            for (d, &z) in da.iter_mut().zip(&cache.pre[l - 1]) {
                if z <= 0.0 {
                    *d *= slope;
                }
            }
            dz = da;
        }
        Ok(None)
    }
}

/// Activations of one forward pass, tied to the exact parameters that made them.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    token: u64,
    n: usize,
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.out
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// `C = A·B + beta·C` for row-major `C` (`m × n`); `A` and `B` are given as
/// `(data, row stride, column stride)`.
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], usize, usize), b: (&[f64], usize, usize), c: &mut [f64], beta: f64) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.0.len() > (m - 1) * a.1 + (k - 1) * a.2);
    debug_assert!(k == 0 || n == 0 || b.0.len() > (k - 1) * b.1 + (n - 1) * b.2);
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major copy of equally long rows.
pub fn flatten(rows: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

/// Single-row forward pass.
pub fn mlp_forward(net: &Mlp, x: &[f64]) -> Result<(f64, ForwardCache)> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: x.len(),
        });
    }
    let cache = net.forward(x, 1)?;
    Ok((cache.out[0], cache))
}

/// Parameter gradients for the upstream derivatives of a cached pass.
pub fn mlp_backward(net: &Mlp, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
    net.backward(cache, upstream)
}

/// Penalty weights `(α, β) = (ρ̄γ/ρ, ρ̄γ̄/ρ)` equivalent to `(ρ, γ)`.
pub fn map_rho_gamma(rho: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {rho}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let s = (1.0 - rho) / rho;
    Ok((s * gamma, s * (1.0 - gamma)))
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `ρ ℓ + ρ̄ [γ‖θ‖² + γ̄‖φ‖²]`.
    RhoGamma { rho: f64, gamma: f64 },
    /// `ℓ + α‖θ‖² + β‖φ‖²`.
    AlphaBeta { alpha: f64, beta: f64 },
    /// Per-point likelihood weighted by the detached `σ̂^{2β}`.
    BetaNll { beta: f64 },
    /// Unregularized Gaussian likelihood.
    PlainMle,
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::RhoGamma { rho, gamma } => crate::ft::check_rho_gamma(rho, gamma),
            LossKind::AlphaBeta { alpha, beta } if !(alpha >= 0.0 && beta >= 0.0) => Err(Error::InvalidParameter(
                format!("penalties must be non-negative, got ({alpha}, {beta})"),
            )),
            LossKind::BetaNll { beta } if !(0.0..=1.0).contains(&beta) => {
                Err(Error::InvalidParameter(format!("beta must lie in [0, 1], got {beta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::RhoGamma { .. } => "rho_gamma",
            LossKind::AlphaBeta { .. } => "alpha_beta",
            LossKind::BetaNll { .. } => "beta_nll",
            LossKind::PlainMle => "plain_mle",
        }
    }

    /// Data-term scale and the `(θ, φ)` penalty coefficients.
    fn coefficients(&self) -> (f64, f64, f64) {
        match *self {
            LossKind::RhoGamma { rho, gamma } => (rho, (1.0 - rho) * gamma, (1.0 - rho) * (1.0 - gamma)),
            LossKind::AlphaBeta { alpha, beta } => (1.0, alpha, beta),
            LossKind::BetaNll { .. } | LossKind::PlainMle => (1.0, 0.0, 0.0),
        }
    }
}

/// Covariates (row-major) and responses of one batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Loss value with gradients for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_mean: Vec<f64>,
    pub grad_prec: Vec<f64>,
}

/// Evaluates `kind` on `batch`. `hidden_biases` selects whether hidden-layer
/// biases enter the L2 penalty.
pub fn loss(kind: &LossKind, mean: &Mlp, prec: &Mlp, batch: Batch<'_>, hidden_biases: bool) -> Result<LossValue> {
    kind.validate()?;
    let (value, gm, gp) = evaluate(kind, mean, prec, batch, hidden_biases, None, true, 0)?;
    Ok(LossValue {
        value,
        grad_mean: gm,
        grad_prec: gp.unwrap_or_default(),
    })
}

/// The `(ρ, γ)` or `(α, β)` regularized likelihood.
pub fn loss_mvr(kind: &LossKind, mean: &Mlp, prec: &Mlp, batch: Batch<'_>) -> Result<LossValue> {
    match kind {
        LossKind::RhoGamma { .. } | LossKind::AlphaBeta { .. } => loss(kind, mean, prec, batch, true),
        other => Err(Error::InvalidParameter(format!("{} is not a regularized MVR loss", other.name()))),
    }
}

/// β-NLL baseline.
pub fn loss_beta_nll(mean: &Mlp, prec: &Mlp, batch: Batch<'_>, beta: f64) -> Result<LossValue> {
    loss(&LossKind::BetaNll { beta }, mean, prec, batch, true)
}

/// Shared loss kernel. `lam_fixed` replaces the precision forward pass (the
/// network is frozen); `prec_grad` toggles the precision backward pass.
#[allow(clippy::too_many_arguments)]
fn evaluate(
    kind: &LossKind,
    mean: &Mlp,
    prec: &Mlp,
    batch: Batch<'_>,
    hidden_biases: bool,
    lam_fixed: Option<&[f64]>,
    prec_grad: bool,
    batch_index: usize,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
    let n = batch.len();
    let mc = mean.forward(batch.x, n)?;
    let pc = match lam_fixed {
        Some(_) => None,
        None => Some(prec.forward(batch.x, n)?),
    };
    let lam = lam_fixed.unwrap_or_else(|| pc.as_ref().unwrap().output());
    let (scale, a_theta, a_phi) = kind.coefficients();
    let inv_n = 1.0 / n as f64;

    let mut data = 0.0;
    let mut up_mu = vec![0.0; n];
    let mut up_lam = vec![0.0; n];
    for i in 0..n {
        let r = mc.out[i] - batch.y[i];
        let l = lam[i];
        let w = match *kind {
            LossKind::BetaNll { beta } => l.powf(-beta),
            _ => 1.0,
        };
        data += w * (l * r * r - l.ln());
        up_mu[i] = scale * w * l * r * inv_n;
        up_lam[i] = 0.5 * scale * w * (r * r - 1.0 / l) * inv_n;
    }
    let mut value = 0.5 * scale * data * inv_n;

    let mut gm = mean.backward(&mc, &up_mu)?;
    if a_theta != 0.0 {
        let mask = mean.penalty_mask(hidden_biases);
        for ((g, p), m) in gm.iter_mut().zip(mean.params()).zip(&mask) {
            value += a_theta * m * p * p;
            *g += 2.0 * a_theta * m * p;
        }
    }
    if a_phi != 0.0 {
        value += a_phi * prec.l2_norm_sq(hidden_biases);
    }
    let gp = match (&pc, prec_grad) {
        (Some(pc), true) => {
            let mut gp = prec.backward(pc, &up_lam)?;
            if a_phi != 0.0 {
                let mask = prec.penalty_mask(hidden_biases);
                for ((g, p), m) in gp.iter_mut().zip(prec.params()).zip(&mask) {
                    *g += 2.0 * a_phi * m * p;
                }
            }
            Some(gp)
        }
        _ => None,
    };
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { batch: batch_index });
    }
    Ok((value, gm, gp))
}

/// Pointwise predictive means and standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mu: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Gaussian moment-matching of an equally weighted mixture:
/// `μ* = mean μ_m`, `σ*² = mean(σ_m² + μ_m²) − μ*²`.
pub fn mle_ensemble_predict(members: &[Prediction]) -> Result<Prediction> {
    let first = members.first().ok_or(Error::Empty("ensemble"))?;
    let n = first.mu.len();
    for m in members {
        if m.mu.len() != n || m.sd.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: m.mu.len().min(m.sd.len()),
            });
        }
    }
    let k = members.len() as f64;
    let mut mu = vec![0.0; n];
    let mut sd = vec![0.0; n];
    for i in 0..n {
        let m = members.iter().map(|p| p.mu[i]).sum::<f64>() / k;
        let second = members.iter().map(|p| p.sd[i] * p.sd[i] + p.mu[i] * p.mu[i]).sum::<f64>() / k;
        mu[i] = m;
        sd[i] = (second - m * m).max(0.0).sqrt();
    }
    Ok(Prediction { mu, sd })
}

/// A mean net and a precision net.
#[derive(Debug, Clone, PartialEq)]
pub struct MvrModel {
    pub mean: Mlp,
    pub prec: Mlp,
}

impl MvrModel {
    /// Seeded He-initialized pair with the hidden layout of `cfg`.
    pub fn init(input_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        Ok(Self {
            mean: Mlp::he(&sizes, cfg.slope, Head::Identity, &mut stream(cfg.seed, Stream::MeanInit))?,
            prec: Mlp::he(&sizes, cfg.slope, Head::Softplus, &mut stream(cfg.seed, Stream::PrecisionInit))?,
        })
    }

    /// `μ̂` and `σ̂ = Λ̂^{−1/2}` at each row.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Prediction> {
        let mu = self.mean.predict(rows)?;
        let sd = self.prec.predict(rows)?.into_iter().map(|l| 1.0 / l.sqrt()).collect();
        Ok(Prediction { mu, sd })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_text(path.as_ref(), &write_checkpoint(&[("mean", &self.mean), ("precision", &self.prec)]))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut nets = read_checkpoint(&text)?;
        let pick = |nets: &mut Vec<(String, Mlp)>, name: &str| {
            let i = nets
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing network '{name}'")))?;
            Ok::<_, Error>(nets.swap_remove(i).1)
        };
        let mean = pick(&mut nets, "mean")?;
        let prec = pick(&mut nets, "precision")?;
        Ok(Self { mean, prec })
    }
}

/// Training settings shared by both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    /// Fraction of epochs in which only the mean net trains.
    pub phase_split: f64,
    /// Minibatch size; 0 trains on the full dataset every step.
    pub batch_size: usize,
    pub schedule: CyclicLr,
    pub clip_threshold: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub slope: f64,
    pub penalize_hidden_biases: bool,
}

impl TrainConfig {
    /// 3×128 networks, 600k epochs with 250k mean-only epochs.
    pub fn paper(loss: LossKind) -> Self {
        Self {
            loss,
            epochs: 600_000,
            phase_split: 250_000.0 / 600_000.0,
            batch_size: 0,
            schedule: CyclicLr {
                min_lr: 1e-4,
                max_lr: 1e-2,
                cycle_len: 50_000,
            },
            clip_threshold: 1000.0,
            seed: 0,
            hidden: vec![128, 128, 128],
            slope: 0.01,
            penalize_hidden_biases: true,
        }
    }

    /// 3×64 networks, 50k epochs split evenly, 5k-epoch cycles.
    pub fn desk(loss: LossKind) -> Self {
        Self {
            epochs: 50_000,
            phase_split: 0.5,
            schedule: CyclicLr {
                min_lr: 1e-4,
                max_lr: 1e-2,
                cycle_len: 5_000,
            },
            hidden: vec![64, 64, 64],
            ..Self::paper(loss)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.schedule.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.phase_split) {
            return Err(Error::InvalidParameter(format!(
                "phase split must lie in [0, 1], got {}",
                self.phase_split
            )));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(Error::InvalidParameter("clip threshold must be positive".into()));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::InvalidParameter(format!("leaky slope must lie in (0, 1), got {}", self.slope)));
        }
        Ok(())
    }

    pub fn phase1_epochs(&self) -> usize {
        (self.phase_split * self.epochs as f64).round() as usize
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean batch loss of each completed epoch.
    pub loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub phase1_epochs: usize,
    pub clip_events: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: MvrModel,
    pub history: TrainHistory,
    /// Epoch at which the loss stopped being finite, if it did.
    pub diverged_at: Option<usize>,
}

impl TrainedModel {
    pub fn converged(&self) -> bool {
        self.diverged_at.is_none()
    }
}

/// Two-phase training: for the first `phase_split` of epochs the precision
/// net is frozen and only the mean net learns; afterwards both learn jointly.
/// The learning rate follows the cyclic schedule per epoch.
pub fn train_two_phase(model: MvrModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let dim = model.mean.input_dim();
    if data.input_dim() != dim || model.prec.input_dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: data.input_dim(),
        });
    }
    let MvrModel { mut mean, mut prec } = model;
    let n = data.len();
    let x = flatten(&data.x, dim)?;
    let batch_size = if cfg.batch_size == 0 || cfg.batch_size >= n {
        n
    } else {
        cfg.batch_size
    };
    let full_batch = batch_size == n;
    let phase1 = cfg.phase1_epochs();
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut bx, mut by) = (Vec::new(), Vec::new());

    // frozen precision outputs for phase 1
    let lam_all = prec.forward(&x, n)?.out;
    let mut lam_batch = Vec::new();

    let mut adam_mean = Adam::new(mean.num_params());
    let mut adam_prec = Adam::new(prec.num_params());
    let mut history = TrainHistory {
        phase1_epochs: phase1,
        ..TrainHistory::default()
    };
    let mut diverged_at = None;
    let mut grad = Vec::with_capacity(mean.num_params() + prec.num_params());

    'epochs: for epoch in 0..cfg.epochs {
        let joint = epoch >= phase1;
        let lr = cfg.schedule.at(epoch);
        if !full_batch {
            order.shuffle(&mut shuffle_rng);
        }
        let mut total = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let batch = if full_batch {
                Batch { x: &x, y: &data.y }
            } else {
                bx.clear();
                by.clear();
                for &i in idx {
                    bx.extend_from_slice(&x[i * dim..(i + 1) * dim]);
                    by.push(data.y[i]);
                }
                Batch { x: &bx, y: &by }
            };
            let fixed = if joint {
                None
            } else if full_batch {
                Some(lam_all.as_slice())
            } else {
                lam_batch.clear();
                lam_batch.extend(idx.iter().map(|&i| lam_all[i]));
                Some(lam_batch.as_slice())
            };
            let (value, gm, gp) = match evaluate(
                &cfg.loss,
                &mean,
                &prec,
                batch,
                cfg.penalize_hidden_biases,
                fixed,
                joint,
                b,
            ) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { .. }) => {
                    diverged_at = Some(epoch);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            total += value;
            batches += 1;

            grad.clear();
            grad.extend_from_slice(&gm);
            if let Some(gp) = &gp {
                grad.extend_from_slice(gp);
            }
            if clip_in_place(&mut grad, cfg.clip_threshold) {
                history.clip_events += 1;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                diverged_at = Some(epoch);
                break 'epochs;
            }
            let (g_mean, g_prec) = grad.split_at(gm.len());
            adam_mean.step(mean.params_mut(), g_mean, lr);
            if joint {
                adam_prec.step(prec.params_mut(), g_prec, lr);
            }
        }
        history.loss.push(total / batches as f64);
        history.lr.push(lr);
    }

    Ok(TrainedModel {
        model: MvrModel { mean, prec },
        history,
        diverged_at,
    })
}

/// `(1/N) Σ_i ‖∂f/∂x (x_i)‖²`.
pub fn geometric_complexity(net: &Mlp, rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    let x = flatten(rows, net.input_dim())?;
    let cache = net.forward(&x, n)?;
    let g = net.input_gradient(&cache, &vec![1.0; n])?;
    Ok(g.iter().map(|v| v * v).sum::<f64>() / n as f64)
}

const CHECKPOINT_TAG: &str = "mvr-checkpoint v1";

/// Text checkpoint: a version line, then per network its settings and one
/// `name shape…` header line plus one line of row-major values per tensor.
pub fn write_checkpoint(nets: &[(&str, &Mlp)]) -> String {
    let mut s = String::new();
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    writeln!(s, "{CHECKPOINT_TAG}").unwrap();
    for (name, net) in nets {
        writeln!(s, "net {name}").unwrap();
        writeln!(s, "slope {}", net.slope).unwrap();
        writeln!(s, "head {}", net.head.name()).unwrap();
        let sizes: Vec<String> = net.sizes.iter().map(usize::to_string).collect();
        writeln!(s, "sizes {}", sizes.join(" ")).unwrap();
        for l in 0..net.num_layers() {
            writeln!(s, "{name}.layer{l}.weight {} {}", net.sizes[l + 1], net.sizes[l]).unwrap();
            writeln!(s, "{}", join(net.weight(l))).unwrap();
            writeln!(s, "{name}.layer{l}.bias {}", net.sizes[l + 1]).unwrap();
            writeln!(s, "{}", join(net.bias(l))).unwrap();
        }
    }
    s
}

/// Parses [`write_checkpoint`] output.
pub fn read_checkpoint(text: &str) -> Result<Vec<(String, Mlp)>> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CHECKPOINT_TAG) {
        return Err(bad(format!("expected '{CHECKPOINT_TAG}' header")));
    }
    fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Vec<String>> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("truncated before '{key}'")))?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.map(String::from).collect()),
            other => Err(Error::Checkpoint(format!(
                "expected '{key}', found '{}'",
                other.unwrap_or("")
            ))),
        }
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number '{s}'")));
    let count = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad size '{s}'")));

    let mut nets = Vec::new();
    loop {
        let name = match field(&mut lines, "net") {
            Ok(v) if v.len() == 1 => v[0].clone(),
            Ok(_) => return Err(bad("net line needs one name".into())),
            Err(_) if !nets.is_empty() => break,
            Err(e) => return Err(e),
        };
        let slope = num(field(&mut lines, "slope")?.first().map(String::as_str).unwrap_or(""))?;
        let head = match field(&mut lines, "head")?.first().map(String::as_str) {
            Some("identity") => Head::Identity,
            Some("softplus") => Head::Softplus,
            other => return Err(bad(format!("unknown head {other:?}"))),
        };
        let sizes = field(&mut lines, "sizes")?.iter().map(|s| count(s)).collect::<Result<Vec<_>>>()?;
        let mut net = Mlp::zeros(&sizes, slope, head)?;
        for l in 0..net.num_layers() {
            for (kind, shape, range) in [
                ("weight", vec![sizes[l + 1], sizes[l]], net.weight_range(l)),
                ("bias", vec![sizes[l + 1]], net.bias_range(l)),
            ] {
                let key = format!("{name}.layer{l}.{kind}");
                let got = field(&mut lines, &key)?.iter().map(|s| count(s)).collect::<Result<Vec<_>>>()?;
                if got != shape {
                    return Err(bad(format!("{key} has shape {got:?}, expected {shape:?}")));
                }
                let values = lines.next().ok_or_else(|| bad(format!("missing values for {key}")))?;
                let values = values.split_whitespace().map(num).collect::<Result<Vec<_>>>()?;
                if values.len() != range.len() {
                    return Err(bad(format!("{key} has {} values, expected {}", values.len(), range.len())));
                }
                net.params_mut()[range].copy_from_slice(&values);
            }
        }
        nets.push((name, net));
    }
    Ok(nets)
}

/// Predictions with columns `<covariates>…, mu_hat, sd_hat`.
pub fn write_predictions_csv(
    rows: &[Vec<f64>],
    columns: &[String],
    pred: &Prediction,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::io::csv_writer(path)?;
    let mut header: Vec<&str> = columns.iter().map(String::as_str).collect();
    header.extend(["mu_hat", "sd_hat"]);
    w.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec: Vec<String> = r.iter().map(f64::to_string).collect();
        rec.push(pred.mu[i].to_string());
        rec.push(pred.sd[i].to_string());
        w.write_record(&rec)?;
    }
    crate::io::finish(w, path)
}
