//! The reconstructor `g_theta`: a dense autoencoder or VAE with
//! hand-written backpropagation, the training objective and plain SGD.
//!
//! The encoder sees the image with the remaining mask appended as a fourth
//! channel. Both halves have one `tanh` hidden layer; the decoder output is
//! clamped into `[0, 1]` and passes no gradient where the clamp is active.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use std::ops::Range;

use crate::error::{check_dims, Error, Result};
use crate::image::{Image, MaskPlane};
use crate::pipeline::SlotDecomposition;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IRGS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMode {
    Autoencoder,
    Vae,
}

impl ReconMode {
    fn byte(self) -> u8 {
        match self {
            ReconMode::Autoencoder => 0,
            ReconMode::Vae => 1,
        }
    }
}

/// Layer sizes. The input width is `4·H·W` and the output width `3·H·W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub latent_dim: usize,
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.height * self.width * 4
    }

    pub fn output_dim(&self) -> usize {
        self.height * self.width * 3
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.hidden == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidValue {
                what: "architecture",
                reason: format!("{self:?} has a zero dimension"),
            });
        }
        Ok(())
    }
}

/// Offsets of every parameter array inside the flat parameter vector, in
/// checkpoint order.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    enc_w: Range<usize>,
    enc_b: Range<usize>,
    mu_w: Range<usize>,
    mu_b: Range<usize>,
    lv_w: Range<usize>,
    lv_b: Range<usize>,
    dec_w1: Range<usize>,
    dec_b1: Range<usize>,
    dec_w2: Range<usize>,
    dec_b2: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture, mode: ReconMode) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (i, h, l, o) = (arch.input_dim(), arch.hidden, arch.latent_dim, arch.output_dim());
        let enc_w = take(h * i);
        let enc_b = take(h);
        let mu_w = take(l * h);
        let mu_b = take(l);
        let (lv_w, lv_b) = match mode {
            ReconMode::Vae => (take(l * h), take(l)),
            ReconMode::Autoencoder => (0..0, 0..0),
        };
        let dec_w1 = take(h * l);
        let dec_b1 = take(h);
        let dec_w2 = take(o * h);
        let dec_b2 = take(o);
        Layout {
            enc_w,
            enc_b,
            mu_w,
            mu_b,
            lv_w,
            lv_b,
            dec_w1,
            dec_b1,
            dec_w2,
            dec_b2,
            total: at,
        }
    }
}

/// Latent statistics of one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    /// Posterior mean (VAE) or the deterministic code (autoencoder).
    pub mean: Vec<f64>,
    pub log_var: Option<Vec<f64>>,
    /// Standard-normal draw used for the reparameterized sample.
    pub noise: Option<Vec<f64>>,
}

/// Anything that turns `(x, s)` into a reconstruction.
pub trait Reconstructor {
    fn reconstruct(&self, x: &Image, s: &MaskPlane, seed: u64) -> Result<(Image, LatentStats)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconModel {
    arch: Architecture,
    mode: ReconMode,
    layout: Layout,
    theta: Vec<f64>,
}

/// Gradient of the objective, laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

struct Forward {
    input: Vec<f64>,
    h1: Vec<f64>,
    mean: Vec<f64>,
    log_var: Option<Vec<f64>>,
    noise: Option<Vec<f64>>,
    z: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// Accumulates `dW += dy ⊗ x`, `db += dy` and returns `Wᵀ dy` when asked.
fn affine_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64], want_dx: bool) -> Vec<f64> {
    let n = x.len();
    let mut dx = if want_dx { vec![0.0; n] } else { Vec::new() };
    for (r, &g) in dy.iter().enumerate() {
        db[r] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[r * n..(r + 1) * n];
        let drow = &mut dw[r * n..(r + 1) * n];
        for k in 0..n {
            drow[k] += g * x[k];
        }
        if want_dx {
            for k in 0..n {
                dx[k] += g * row[k];
            }
        }
    }
    dx
}

impl ReconModel {
    /// Xavier-uniform weights, zero biases except the output bias at 0.5.
    pub fn new(arch: Architecture, mode: ReconMode, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch, mode);
        let mut theta = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: &Range<usize>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
            for v in &mut theta[range.clone()] {
                *v = dist.sample(&mut rng);
            }
        };
        let (i, h, l, o) = (arch.input_dim(), arch.hidden, arch.latent_dim, arch.output_dim());
        fill(&layout.enc_w, i, h);
        fill(&layout.mu_w, h, l);
        if mode == ReconMode::Vae {
            fill(&layout.lv_w, h, l);
        }
        fill(&layout.dec_w1, l, h);
        fill(&layout.dec_w2, h, o);
        theta[layout.dec_b2.clone()].iter_mut().for_each(|v| *v = 0.5);
        Ok(Self {
            arch,
            mode,
            layout,
            theta,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn mode(&self) -> ReconMode {
        self.mode
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn check_input(&self, x: &Image, s: &MaskPlane) -> Result<()> {
        check_dims((self.arch.height, self.arch.width), x.dims())?;
        check_dims(x.dims(), s.dims())
    }

    fn forward(&self, x: &Image, s: &MaskPlane, noise: Option<&[f64]>) -> Forward {
        let t = &self.theta;
        let ly = &self.layout;
        let mut input = Vec::with_capacity(self.arch.input_dim());
        for (rgb, &sv) in x.as_slice().chunks_exact(3).zip(s.as_slice()) {
            input.extend_from_slice(rgb);
            input.push(sv);
        }
        let h1: Vec<f64> = affine(&t[ly.enc_w.clone()], &t[ly.enc_b.clone()], &input)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let mean = affine(&t[ly.mu_w.clone()], &t[ly.mu_b.clone()], &h1);
        let (log_var, noise, z) = match self.mode {
            ReconMode::Autoencoder => (None, None, mean.clone()),
            ReconMode::Vae => {
                let lv = affine(&t[ly.lv_w.clone()], &t[ly.lv_b.clone()], &h1);
                let eps = noise.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; lv.len()]);
                let z = mean
                    .iter()
                    .zip(&lv)
                    .zip(&eps)
                    .map(|((m, l), e)| m + (0.5 * l).exp() * e)
                    .collect();
                (Some(lv), Some(eps), z)
            }
        };
        let h2: Vec<f64> = affine(&t[ly.dec_w1.clone()], &t[ly.dec_b1.clone()], &z)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let out = affine(&t[ly.dec_w2.clone()], &t[ly.dec_b2.clone()], &h2);
        Forward {
            input,
            h1,
            mean,
            log_var,
            noise,
            z,
            h2,
            out,
        }
    }

    fn sample_noise(&self, seed: u64) -> Option<Vec<f64>> {
        match self.mode {
            ReconMode::Autoencoder => None,
            ReconMode::Vae => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Some(
                    (0..self.arch.latent_dim)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect(),
                )
            }
        }
    }

    /// Reconstruction with an explicit noise vector (ignored in autoencoder mode).
    pub fn reconstruct_with_noise(
        &self,
        x: &Image,
        s: &MaskPlane,
        noise: Option<&[f64]>,
    ) -> Result<(Image, LatentStats)> {
        self.check_input(x, s)?;
        if let (ReconMode::Vae, Some(n)) = (self.mode, noise) {
            if n.len() != self.arch.latent_dim {
                return Err(Error::InvalidValue {
                    what: "latent noise",
                    reason: format!("length {}", n.len()),
                });
            }
        }
        let fw = self.forward(x, s, noise);
        Ok(finish(x, fw))
    }

    /// Adds the gradient of one slot's objective to `grads`, given the
    /// derivative of the objective with respect to the clamped output
    /// (`d_recon`) and the KL weight.
    fn accumulate_slot(&self, fw: &Forward, d_recon: &[f64], gamma: f64, grads: &mut [f64]) {
        let t = &self.theta;
        let ly = &self.layout;
        let d_out: Vec<f64> = fw
            .out
            .iter()
            .zip(d_recon)
            .map(|(&o, &g)| if (0.0..=1.0).contains(&o) { g } else { 0.0 })
            .collect();
        let (gw, gb) = split_pair(grads, &ly.dec_w2, &ly.dec_b2);
        let dh2 = affine_backward(&t[ly.dec_w2.clone()], &fw.h2, &d_out, gw, gb, true);
        let da2: Vec<f64> = dh2.iter().zip(&fw.h2).map(|(g, h)| g * (1.0 - h * h)).collect();
        let (gw, gb) = split_pair(grads, &ly.dec_w1, &ly.dec_b1);
        let dz = affine_backward(&t[ly.dec_w1.clone()], &fw.z, &da2, gw, gb, true);
        let mut dh1;
        match (&fw.log_var, &fw.noise) {
            (Some(lv), Some(eps)) => {
                let dmu: Vec<f64> = dz.iter().zip(&fw.mean).map(|(g, m)| g + gamma * m).collect();
                let dlv: Vec<f64> = dz
                    .iter()
                    .zip(lv)
                    .zip(eps)
                    .map(|((g, l), e)| g * e * 0.5 * (0.5 * l).exp() + gamma * 0.5 * (l.exp() - 1.0))
                    .collect();
                let (gw, gb) = split_pair(grads, &ly.mu_w, &ly.mu_b);
                dh1 = affine_backward(&t[ly.mu_w.clone()], &fw.h1, &dmu, gw, gb, true);
                let (gw, gb) = split_pair(grads, &ly.lv_w, &ly.lv_b);
                let extra = affine_backward(&t[ly.lv_w.clone()], &fw.h1, &dlv, gw, gb, true);
                dh1.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
            }
            _ => {
                let (gw, gb) = split_pair(grads, &ly.mu_w, &ly.mu_b);
                dh1 = affine_backward(&t[ly.mu_w.clone()], &fw.h1, &dz, gw, gb, true);
            }
        }
        let da1: Vec<f64> = dh1.iter().zip(&fw.h1).map(|(g, h)| g * (1.0 - h * h)).collect();
        let (gw, gb) = split_pair(grads, &ly.enc_w, &ly.enc_b);
        affine_backward(&t[ly.enc_w.clone()], &fw.input, &da1, gw, gb, false);
    }

    /// Serializes to the `IRGS` checkpoint layout (parameters as `f32`).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25 + 4 * self.theta.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.mode.byte());
        for d in [
            self.arch.height,
            self.arch.width,
            self.arch.hidden,
            self.arch.latent_dim,
        ] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.theta {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 25 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing IRGS magic"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let mode = match bytes[8] {
            0 => ReconMode::Autoencoder,
            1 => ReconMode::Vae,
            b => return Err(bad(&format!("unknown mode byte {b}"))),
        };
        let arch = Architecture {
            height: word(9) as usize,
            width: word(13) as usize,
            hidden: word(17) as usize,
            latent_dim: word(21) as usize,
        };
        arch.validate()?;
        let layout = Layout::new(&arch, mode);
        let body = &bytes[25..];
        if body.len() != 4 * layout.total {
            return Err(bad(&format!(
                "expected {} parameter bytes, found {}",
                4 * layout.total,
                body.len()
            )));
        }
        let theta: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(Self {
            arch,
            mode,
            layout,
            theta,
        })
    }
}

fn split_pair<'a>(g: &'a mut [f64], w: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    // weights always precede their bias
    let (head, tail) = g.split_at_mut(b.start);
    (&mut head[w.clone()], &mut tail[..b.len()])
}

fn finish(x: &Image, fw: Forward) -> (Image, LatentStats) {
    let data = fw.out.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let img = Image::from_raw_unchecked(x.height(), x.width(), data);
    (
        img,
        LatentStats {
            mean: fw.mean,
            log_var: fw.log_var,
            noise: fw.noise,
        },
    )
}

impl Reconstructor for ReconModel {
    fn reconstruct(&self, x: &Image, s: &MaskPlane, seed: u64) -> Result<(Image, LatentStats)> {
        let noise = self.sample_noise(seed);
        self.reconstruct_with_noise(x, s, noise.as_deref())
    }
}

/// Weights of the three objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the prior term on masked-out pixels.
    pub beta: f64,
    /// Weight of the KL term; has no effect for the autoencoder.
    pub gamma: f64,
    /// Constant target for masked-out pixels.
    pub zeta: f64,
    /// Let the reconstruction term's masks depend on `Q` (and so on `theta`).
    pub grad_through_q: bool,
    /// Compare `m * x_re` rather than `x_re` against the target.
    pub mask_weighted_recon: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.5,
            zeta: 0.0,
            grad_through_q: true,
            mask_weighted_recon: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidValue {
                what: "beta",
                reason: format!("{} must be nonnegative", self.beta),
            });
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidValue {
                what: "gamma",
                reason: format!("{} must be nonnegative", self.gamma),
            });
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::InvalidValue {
                what: "zeta",
                reason: format!("{} must lie in [0, 1]", self.zeta),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub recon: f64,
    pub prior: f64,
    pub kl: f64,
    pub total: f64,
}

/// `0.5 * sum_d (mean_d^2 + var_d - ln var_d - 1)`; zero for an autoencoder code.
pub fn kl_term(stats: &LatentStats) -> f64 {
    match &stats.log_var {
        None => 0.0,
        Some(lv) => {
            0.5 * stats
                .mean
                .iter()
                .zip(lv)
                .map(|(m, l)| m * m + l.exp() - l - 1.0)
                .sum::<f64>()
        }
    }
}

fn check_slots(d: &SlotDecomposition, x: &Image) -> Result<()> {
    if d.slots.is_empty() {
        return Err(Error::InvalidValue {
            what: "decomposition",
            reason: "no slots".into(),
        });
    }
    for slot in &d.slots {
        check_dims(x.dims(), slot.mask.dims())?;
        check_dims(x.dims(), slot.recon.dims())?;
        check_dims(x.dims(), slot.quality.dims())?;
        check_dims(x.dims(), slot.location.dims())?;
        check_dims(x.dims(), slot.remaining_before.dims())?;
    }
    Ok(())
}

/// Masks as functions of per-slot quality planes: `m_k = s_{k-1} Q_k L_k`,
/// with slot 1 replaced by the clamped complement when the background was
/// adjusted.
fn masks_from_quality(d: &SlotDecomposition, qualities: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut masks: Vec<Vec<f64>> = d
        .slots
        .iter()
        .zip(qualities)
        .map(|(slot, q)| {
            slot.remaining_before
                .as_slice()
                .iter()
                .zip(q)
                .zip(slot.location.as_slice())
                .map(|((s, q), l)| s * q * l)
                .collect()
        })
        .collect();
    if d.background_adjusted {
        let n = masks[0].len();
        for p in 0..n {
            let objects: f64 = masks[1..].iter().map(|m| m[p]).sum();
            masks[0][p] = (1.0 - objects).clamp(0.0, 1.0);
        }
    }
    masks
}

fn evaluate(
    x: &Image,
    recons: &[&[f64]],
    recon_masks: &[&[f64]],
    prior_masks: &[&[f64]],
    kl: f64,
    w: &LossWeights,
) -> LossBreakdown {
    let mut recon = 0.0;
    let mut prior = 0.0;
    for ((r, m1), m2) in recons.iter().zip(recon_masks).zip(prior_masks) {
        for (p, xp) in x.as_slice().chunks_exact(3).enumerate() {
            let scale = if w.mask_weighted_recon { m1[p] } else { 1.0 };
            let mut e1 = 0.0;
            let mut e2 = 0.0;
            for c in 0..3 {
                let rv = r[3 * p + c];
                let d1 = scale * rv - xp[c];
                let d2 = rv - w.zeta;
                e1 += d1 * d1;
                e2 += d2 * d2;
            }
            recon += m1[p] * e1;
            prior += (1.0 - m2[p]) * e2;
        }
    }
    let prior = w.beta * prior;
    let kl = w.gamma * kl;
    LossBreakdown {
        recon,
        prior,
        kl,
        total: recon + prior + kl,
    }
}

/// Evaluates the training objective on a finished decomposition, with
/// `x` as the target of every slot.
pub fn loss(d: &SlotDecomposition, x: &Image, w: &LossWeights) -> Result<LossBreakdown> {
    check_slots(d, x)?;
    let recons: Vec<&[f64]> = d.slots.iter().map(|s| s.recon.as_slice()).collect();
    let masks: Vec<&[f64]> = d.slots.iter().map(|s| s.mask.as_slice()).collect();
    let kl: f64 = d.slots.iter().map(|s| kl_term(&s.latent)).sum();
    Ok(evaluate(x, &recons, &masks, &masks, kl, w))
}

/// The objective as a function of `theta` with every no-gradient quantity
/// of `d` (remaining masks, location masks, latent noise, prior-term masks)
/// held fixed. Equals [`loss`] at the parameters that produced `d`;
/// [`backward`] is its exact gradient.
pub fn objective(model: &ReconModel, x: &Image, d: &SlotDecomposition, w: &LossWeights) -> Result<LossBreakdown> {
    check_slots(d, x)?;
    let mut recons = Vec::with_capacity(d.slots.len());
    let mut kl = 0.0;
    for slot in &d.slots {
        let (img, stats) = model.reconstruct_with_noise(x, &slot.remaining_before, slot.latent.noise.as_deref())?;
        kl += kl_term(&stats);
        recons.push(img);
    }
    let stored: Vec<&[f64]> = d.slots.iter().map(|s| s.mask.as_slice()).collect();
    let recon_slices: Vec<&[f64]> = recons.iter().map(|r| r.as_slice()).collect();
    let recon_masks = if w.grad_through_q && !d.quality_fixed {
        let qs: Vec<Vec<f64>> = d
            .slots
            .iter()
            .zip(&recons)
            .map(|(slot, r)| quality_values(x, r.as_slice(), slot.remaining_before.as_slice(), d.sigma1))
            .collect();
        masks_from_quality(d, &qs)
    } else {
        stored.iter().map(|m| m.to_vec()).collect()
    };
    let recon_mask_slices: Vec<&[f64]> = recon_masks.iter().map(Vec::as_slice).collect();
    Ok(evaluate(x, &recon_slices, &recon_mask_slices, &stored, kl, w))
}

fn quality_values(x: &Image, r: &[f64], s: &[f64], sigma1: f64) -> Vec<f64> {
    x.as_slice()
        .chunks_exact(3)
        .zip(r.chunks_exact(3))
        .zip(s)
        .map(|((a, b), sv)| {
            let err: f64 = a.iter().zip(b).map(|(u, v)| (v - u) * (v - u)).sum();
            (-sv * err / (2.0 * sigma1)).exp()
        })
        .collect()
}

/// Gradient of [`objective`] with respect to every model parameter.
pub fn backward(model: &ReconModel, x: &Image, d: &SlotDecomposition, w: &LossWeights) -> Result<Gradients> {
    check_slots(d, x)?;
    let n_px = x.height() * x.width();
    let k = d.slots.len();
    let mut forwards = Vec::with_capacity(k);
    for slot in &d.slots {
        model.check_input(x, &slot.remaining_before)?;
        forwards.push(model.forward(x, &slot.remaining_before, slot.latent.noise.as_deref()));
    }
    let recons: Vec<Vec<f64>> = forwards
        .iter()
        .map(|f| f.out.iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .collect();
    let through_q = w.grad_through_q && !d.quality_fixed;
    let qs: Vec<Vec<f64>> = d
        .slots
        .iter()
        .zip(&recons)
        .map(|(slot, r)| quality_values(x, r, slot.remaining_before.as_slice(), d.sigma1))
        .collect();
    let recon_masks: Vec<Vec<f64>> = if through_q {
        masks_from_quality(d, &qs)
    } else {
        d.slots.iter().map(|s| s.mask.as_slice().to_vec()).collect()
    };
    let xs = x.as_slice();

    // direct derivatives with respect to the clamped outputs
    let mut d_recon: Vec<Vec<f64>> = vec![vec![0.0; 3 * n_px]; k];
    // derivative of the reconstruction term with respect to each mask value
    let mut d_mask: Vec<Vec<f64>> = vec![vec![0.0; n_px]; k];
    for j in 0..k {
        let r = &recons[j];
        let m = &recon_masks[j];
        let prior_m = d.slots[j].mask.as_slice();
        for p in 0..n_px {
            let scale = if w.mask_weighted_recon { m[p] } else { 1.0 };
            let mut sq = 0.0;
            let mut cross = 0.0;
            for c in 0..3 {
                let i = 3 * p + c;
                let diff = scale * r[i] - xs[i];
                sq += diff * diff;
                cross += 2.0 * diff * r[i];
                d_recon[j][i] += m[p] * 2.0 * diff * scale + 2.0 * w.beta * (1.0 - prior_m[p]) * (r[i] - w.zeta);
            }
            d_mask[j][p] = sq + if w.mask_weighted_recon { m[p] * cross } else { 0.0 };
        }
    }

    if through_q {
        for p in 0..n_px {
            let objects: f64 = (1..k)
                .map(|i| {
                    let s = &d.slots[i];
                    s.remaining_before.as_slice()[p] * qs[i][p] * s.location.as_slice()[p]
                })
                .sum();
            let background_free = d.background_adjusted && (0.0..=1.0).contains(&(1.0 - objects));
            for i in 0..k {
                let slot = &d.slots[i];
                let a = slot.remaining_before.as_slice()[p] * slot.location.as_slice()[p];
                // d(recon term)/dQ_i at pixel p
                let mut d_q = if i == 0 && d.background_adjusted {
                    0.0
                } else {
                    d_mask[i][p] * a
                };
                if i > 0 && background_free {
                    d_q -= d_mask[0][p] * a;
                }
                if d_q == 0.0 {
                    continue;
                }
                let s_prev = slot.remaining_before.as_slice()[p];
                let factor = -d_q * qs[i][p] * s_prev / d.sigma1;
                for c in 0..3 {
                    let idx = 3 * p + c;
                    d_recon[i][idx] += factor * (recons[i][idx] - xs[idx]);
                }
            }
        }
    }

    let mut grads = vec![0.0; model.num_params()];
    for (fw, dr) in forwards.iter().zip(&d_recon) {
        model.accumulate_slot(fw, dr, w.gamma, &mut grads);
    }
    Ok(Gradients(grads))
}

/// `theta <- theta - lr * grads`.
pub fn sgd_step(model: &ReconModel, grads: &Gradients, lr: f64) -> Result<ReconModel> {
    if grads.0.len() != model.theta.len() {
        return Err(Error::InvalidValue {
            what: "gradients",
            reason: format!("{} entries for {} parameters", grads.0.len(), model.theta.len()),
        });
    }
    if grads.0.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }
    let mut next = model.clone();
    next.theta.iter_mut().zip(&grads.0).for_each(|(t, g)| *t -= lr * g);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture {
            height: 3,
            width: 4,
            hidden: 5,
            latent_dim: 2,
        }
    }

    fn image() -> Image {
        Image::from_fn(3, 4, |i, j| [i as f64 / 3.0, j as f64 / 4.0, 0.5]).unwrap()
    }

    #[test]
    fn output_in_range_and_deterministic() {
        for mode in [ReconMode::Autoencoder, ReconMode::Vae] {
            let m = ReconModel::new(arch(), mode, 9).unwrap();
            let s = MaskPlane::filled(3, 4, 0.4).unwrap();
            let (a, sa) = m.reconstruct(&image(), &s, 5).unwrap();
            let (b, sb) = m.reconstruct(&image(), &s, 5).unwrap();
            assert!(a.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(a, b);
            assert_eq!(sa, sb);
            assert_eq!(sa.log_var.is_some(), mode == ReconMode::Vae);
        }
    }

    #[test]
    fn vae_seed_changes_sample() {
        let m = ReconModel::new(arch(), ReconMode::Vae, 9).unwrap();
        let s = MaskPlane::ones(3, 4);
        let (_, a) = m.reconstruct(&image(), &s, 1).unwrap();
        let (_, b) = m.reconstruct(&image(), &s, 2).unwrap();
        assert_ne!(a.noise, b.noise);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = ReconModel::new(arch(), ReconMode::Autoencoder, 0).unwrap();
        let x = Image::filled(4, 4, [0.1; 3]).unwrap();
        assert!(m.reconstruct(&x, &MaskPlane::ones(4, 4), 0).is_err());
    }

    #[test]
    fn kl_closed_form_values() {
        let prior = LatentStats {
            mean: vec![0.0, 0.0],
            log_var: Some(vec![0.0, 0.0]),
            noise: None,
        };
        assert_eq!(kl_term(&prior), 0.0);
        let shifted = LatentStats {
            mean: vec![1.0],
            log_var: Some(vec![0.0]),
            noise: None,
        };
        assert!((kl_term(&shifted) - 0.5).abs() < 1e-15);
        let code = LatentStats {
            mean: vec![3.0],
            log_var: None,
            noise: None,
        };
        assert_eq!(kl_term(&code), 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        for mode in [ReconMode::Autoencoder, ReconMode::Vae] {
            let m = ReconModel::new(arch(), mode, 3).unwrap();
            let bytes = m.to_bytes();
            assert_eq!(&bytes[..4], b"IRGS");
            assert_eq!(bytes.len(), 25 + 4 * m.num_params());
            let back = ReconModel::from_bytes(&bytes).unwrap();
            assert_eq!(back.architecture(), m.architecture());
            assert_eq!(back.mode(), mode);
            for (a, b) in back.params().iter().zip(m.params()) {
                assert_eq!(*a, *b as f32 as f64);
            }
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(ReconModel::from_bytes(b"nope").is_err());
        let mut bytes = ReconModel::new(arch(), ReconMode::Vae, 3).unwrap().to_bytes();
        bytes[4] = 9;
        assert!(ReconModel::from_bytes(&bytes).is_err());
        let mut bytes = ReconModel::new(arch(), ReconMode::Vae, 3).unwrap().to_bytes();
        bytes.pop();
        assert!(ReconModel::from_bytes(&bytes).is_err());
    }

    #[test]
    fn sgd_with_zero_rate_is_identity() {
        let m = ReconModel::new(arch(), ReconMode::Vae, 3).unwrap();
        let g = Gradients(vec![1.0; m.num_params()]);
        assert_eq!(sgd_step(&m, &g, 0.0).unwrap(), m);
        let bad = Gradients(vec![f64::NAN; m.num_params()]);
        assert_eq!(sgd_step(&m, &bad, 0.1).unwrap_err(), Error::NonFinite("gradients"));
    }
}
