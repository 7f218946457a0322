//! Contrastive tone encoder: maps a short wet clip to a unit-norm tone
//! embedding in which clips of the same amp cluster regardless of what
//! was played.
//!
//! Architecture: log-mel frontend, four strided 1-D conv blocks over
//! time (stride 2, ReLU), global average pooling, a two-layer trunk to
//! the 512-dim embedding (L2-normalized), plus a two-layer projection
//! head used only by the contrastive loss.
//!
//! Training follows the two-view recipe: each batch holds `B` distinct
//! tones, two differently played clips per tone, each view cropped at a
//! random offset and lightly noised. The normalized-temperature
//! cross-entropy (NT-Xent) loss pulls the two views of a tone together
//! against the `2B - 2` other views in the batch.
//!
//! [`ToneEncoder::encode`] peak-normalizes its input before analysis,
//! so embeddings are exactly invariant to playback level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::audio::TARGET_DBFS;
use crate::error::{Error, Result};
use crate::mel::{MelBank, MelConfig, MelSpec};
use crate::nn::{relu_backward, relu_inplace, Adam, Conv1d, Linear, Param, Scoped, Visitable};
use crate::scalar::Scalar;

// ── Configuration ───────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub mel: MelConfig,
    /// Output channels of the four strided conv blocks.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    /// Hidden width between pooling and the embedding.
    pub trunk_hidden: usize,
    /// Tone embedding width (the public representation).
    pub embed_dim: usize,
    /// Projection head hidden width and output width (loss space).
    pub proj_hidden: usize,
    pub proj_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            conv_channels: vec![64, 64, 128, 128],
            kernel: 3,
            stride: 2,
            trunk_hidden: 256,
            embed_dim: 512,
            proj_hidden: 256,
            proj_dim: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config("encoder: conv_channels must be positive".into()));
        }
        if self.kernel < 2 || self.stride == 0 {
            return Err(Error::Config("encoder: kernel >= 2 and stride >= 1 required".into()));
        }
        if self.trunk_hidden == 0 || self.embed_dim == 0 || self.proj_hidden == 0 || self.proj_dim == 0
        {
            return Err(Error::Config("encoder: widths must be positive".into()));
        }
        Ok(())
    }

    /// Fewest mel frames the conv stack accepts.
    pub fn min_frames(&self) -> usize {
        // Work backwards: each block needs (t_out-1)*stride + kernel inputs.
        let mut t = 1;
        for _ in 0..self.conv_channels.len() {
            t = (t - 1) * self.stride + self.kernel;
        }
        t
    }

    /// Fewest waveform samples [`ToneEncoder::encode`] accepts.
    pub fn min_samples(&self) -> usize {
        self.mel.win_len + (self.min_frames() - 1) * self.mel.hop
    }
}

// ── Model ───────────────────────────────────────────────────────────────

pub struct ToneEncoder<S: Scalar> {
    pub cfg: EncoderConfig,
    mel_bank: MelBank<S>,
    convs: Vec<Conv1d<S>>,
    fc1: Linear<S>,
    fc2: Linear<S>,
    proj1: Linear<S>,
    proj2: Linear<S>,
}

/// Activations retained for one view's backward pass.
pub struct EncCache<S> {
    /// Inputs to each conv block (index 0 is the mel grid), plus lengths.
    conv_in: Vec<(Vec<S>, usize)>,
    /// Post-ReLU output of the last conv block and its length.
    top: Vec<S>,
    top_len: usize,
    pooled: Vec<S>,
    trunk_hidden: Vec<S>,
    raw_norm: f64,
    embedding: Vec<S>,
    proj_hidden: Vec<S>,
}

impl<S: Scalar> ToneEncoder<S> {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(cfg.conv_channels.len());
        let mut in_ch = cfg.mel.n_mels;
        for &out_ch in &cfg.conv_channels {
            convs.push(Conv1d::with_stride(&mut rng, in_ch, out_ch, cfg.kernel, 1, cfg.stride));
            in_ch = out_ch;
        }
        let fc1 = Linear::new(&mut rng, in_ch, cfg.trunk_hidden);
        let fc2 = Linear::new(&mut rng, cfg.trunk_hidden, cfg.embed_dim);
        let proj1 = Linear::new(&mut rng, cfg.embed_dim, cfg.proj_hidden);
        let proj2 = Linear::new(&mut rng, cfg.proj_hidden, cfg.proj_dim);
        let mel_bank = MelBank::new(cfg.mel)?;
        Ok(Self { cfg, mel_bank, convs, fc1, fc2, proj1, proj2 })
    }

    /// Embedding (and cache) from a mel grid.
    fn embed_spec_cached(&self, spec: &MelSpec<S>) -> Result<(Vec<S>, EncCache<S>)> {
        let mut cur = spec.data.clone();
        let mut t_len = spec.n_frames;
        let mut conv_in = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let t_next = conv.out_len(t_len).map_err(|_| {
                Error::Invalid(format!(
                    "encoder: clip too short ({} mel frames, need at least {})",
                    spec.n_frames,
                    self.cfg.min_frames()
                ))
            })?;
            let mut next = conv.forward(&cur, t_len)?;
            relu_inplace(&mut next);
            conv_in.push((cur, t_len));
            cur = next;
            t_len = t_next;
        }
        let top = cur;
        let top_len = t_len;
        let ch = *self.cfg.conv_channels.last().expect("non-empty");
        let inv = S::from_f(1.0 / top_len as f64);
        let pooled: Vec<S> = (0..ch)
            .map(|c| top[c * top_len..(c + 1) * top_len].iter().copied().sum::<S>() * inv)
            .collect();
        let mut hidden = self.fc1.forward(&pooled);
        relu_inplace(&mut hidden);
        let raw = self.fc2.forward(&hidden);
        let norm = raw.iter().map(|v| v.to_f() * v.to_f()).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Numeric("encoder: zero-norm embedding".into()));
        }
        let embedding: Vec<S> = raw.iter().map(|&v| S::from_f(v.to_f() / norm)).collect();
        let cache = EncCache {
            conv_in,
            top,
            top_len,
            pooled,
            trunk_hidden: hidden,
            raw_norm: norm,
            embedding: embedding.clone(),
            proj_hidden: Vec::new(),
        };
        Ok((embedding, cache))
    }

    /// Tone embedding of a clip at the encoder rate. The input is
    /// peak-normalized first, so scaling a clip never moves its embedding.
    pub fn encode(&self, waveform: &[S]) -> Result<Vec<S>> {
        if waveform.len() < self.cfg.min_samples() {
            return Err(Error::Invalid(format!(
                "encoder: clip of {} samples shorter than minimum {}",
                waveform.len(),
                self.cfg.min_samples()
            )));
        }
        let normed = crate::audio::peak_normalize(waveform, TARGET_DBFS)?;
        let spec = self.mel_bank.compute(&normed)?;
        let (embedding, _) = self.embed_spec_cached(&spec)?;
        Ok(embedding)
    }

    /// Training-path forward: crop waveform to projection, with cache.
    /// Unlike [`Self::encode`] this does not re-normalize (augmentation
    /// has already set levels).
    pub fn forward_train(&self, crop: &[S]) -> Result<(Vec<S>, EncCache<S>)> {
        let spec = self.mel_bank.compute(crop)?;
        let (embedding, mut cache) = self.embed_spec_cached(&spec)?;
        let mut ph = self.proj1.forward(&embedding);
        relu_inplace(&mut ph);
        let z = self.proj2.forward(&ph);
        cache.proj_hidden = ph;
        Ok((z, cache))
    }

    /// Backward from a projection gradient; accumulates parameter grads.
    pub fn backward_train(&mut self, cache: &EncCache<S>, g_proj: &[S]) -> Result<()> {
        let mut g = self.proj2.backward(&cache.proj_hidden, g_proj);
        relu_backward(&cache.proj_hidden, &mut g);
        let g_emb = self.proj1.backward(&cache.embedding, &g);

        // Through the L2 normalization: if e = r/|r| then
        // dL/dr = (dL/de - (dL/de . e) e) / |r|.
        let dot: f64 = g_emb
            .iter()
            .zip(&cache.embedding)
            .map(|(a, b)| a.to_f() * b.to_f())
            .sum();
        let g_raw: Vec<S> = g_emb
            .iter()
            .zip(&cache.embedding)
            .map(|(&g, &e)| S::from_f((g.to_f() - dot * e.to_f()) / cache.raw_norm))
            .collect();

        let mut g = self.fc2.backward(&cache.trunk_hidden, &g_raw);
        relu_backward(&cache.trunk_hidden, &mut g);
        let g_pooled = self.fc1.backward(&cache.pooled, &g);

        // Un-pool: every time step shares the channel mean's gradient.
        let ch = g_pooled.len();
        let t = cache.top_len;
        let inv = S::from_f(1.0 / t as f64);
        let mut g_seq = vec![S::zero(); ch * t];
        for c in 0..ch {
            let gv = g_pooled[c] * inv;
            g_seq[c * t..(c + 1) * t].iter_mut().for_each(|v| *v = gv);
        }

        let mut g_cur = g_seq;
        let mut post = &cache.top;
        for (i, conv) in self.convs.iter_mut().enumerate().rev() {
            relu_backward(post, &mut g_cur);
            let (x, t_in) = &cache.conv_in[i];
            g_cur = conv.backward(x, *t_in, &g_cur)?;
            if i > 0 {
                post = &cache.conv_in[i].0;
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Visitable<S> for ToneEncoder<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            Scoped { prefix: &format!("conv{i}"), f }.visit(conv);
        }
        Scoped { prefix: "fc1", f }.visit(&mut self.fc1);
        Scoped { prefix: "fc2", f }.visit(&mut self.fc2);
        Scoped { prefix: "proj1", f }.visit(&mut self.proj1);
        Scoped { prefix: "proj2", f }.visit(&mut self.proj2);
    }
}

// ── NT-Xent loss ────────────────────────────────────────────────────────

/// Normalized-temperature cross entropy over `2B` projections laid out
/// as consecutive view pairs: entries `2k` and `2k+1` are positives.
/// Similarity is cosine, scaled by `1/tau`; every anchor contrasts its
/// positive against the other `2B - 2` views. Returns the mean loss.
pub fn nt_xent_loss<S: Scalar>(z: &[Vec<S>], tau: f64) -> Result<f64> {
    let (loss, _) = nt_xent_loss_grad(z, tau)?;
    Ok(loss)
}

/// Loss plus gradient with respect to every raw projection. The cosine
/// normalization is differentiated inside, so callers pass projections
/// as produced by the head, without normalizing first.
pub fn nt_xent_loss_grad<S: Scalar>(z: &[Vec<S>], tau: f64) -> Result<(f64, Vec<Vec<S>>)> {
    let n = z.len();
    if n < 4 || n % 2 != 0 {
        return Err(Error::Invalid(format!(
            "nt-xent needs an even batch of at least 4 views, got {n}"
        )));
    }
    if tau <= 0.0 {
        return Err(Error::Invalid(format!("nt-xent temperature {tau} must be positive")));
    }
    let d = z[0].len();
    if z.iter().any(|v| v.len() != d) {
        return Err(Error::Invalid("nt-xent projections differ in width".into()));
    }

    // Normalize once; cosine similarities are plain dot products after.
    let mut norms = vec![0.0f64; n];
    let mut unit = vec![vec![0.0f64; d]; n];
    for i in 0..n {
        let nn = z[i].iter().map(|v| v.to_f() * v.to_f()).sum::<f64>().sqrt();
        if nn < 1e-12 {
            return Err(Error::Numeric(format!("nt-xent: projection {i} has zero norm")));
        }
        norms[i] = nn;
        for j in 0..d {
            unit[i][j] = z[i][j].to_f() / nn;
        }
    }
    let mut cos = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let c: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            cos[i * n + j] = c;
            cos[j * n + i] = c;
        }
    }

    let positive = |i: usize| if i % 2 == 0 { i + 1 } else { i - 1 };
    let mut loss = 0.0;
    // g_cos[i*n + j]: d loss / d cos(i, j) taken over anchors i.
    let mut g_cos = vec![0.0f64; n * n];
    for i in 0..n {
        let mut m = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                m = m.max(cos[i * n + j] / tau);
            }
        }
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (cos[i * n + j] / tau - m).exp();
            }
        }
        let lse = m + denom.ln();
        let p = positive(i);
        loss += lse - cos[i * n + p] / tau;
        for j in 0..n {
            if j == i {
                continue;
            }
            let soft = (cos[i * n + j] / tau - lse).exp();
            let target = if j == p { 1.0 } else { 0.0 };
            g_cos[i * n + j] += (soft - target) / (tau * n as f64);
        }
    }
    loss /= n as f64;

    // Chain through cosine: d cos(i,j)/d z_i = (u_j - cos * u_i)/|z_i|.
    let mut grad = vec![vec![S::zero(); d]; n];
    for i in 0..n {
        let mut acc = vec![0.0f64; d];
        for j in 0..n {
            if j == i {
                continue;
            }
            let g = g_cos[i * n + j] + g_cos[j * n + i];
            if g == 0.0 {
                continue;
            }
            let c = cos[i * n + j];
            for k in 0..d {
                acc[k] += g * (unit[j][k] - c * unit[i][k]) / norms[i];
            }
        }
        for k in 0..d {
            grad[i][k] = S::from_f(acc[k]);
        }
    }
    Ok((loss, grad))
}

// ── Augmentation and batching ───────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// View length after cropping. [samples]
    pub crop_len: usize,
    /// Additive-noise SNR range relative to the crop's RMS. [dB]
    pub snr_db_lo: f64,
    pub snr_db_hi: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { crop_len: 16_000, snr_db_lo: 20.0, snr_db_hi: 40.0 }
    }
}

/// Crop at a random offset, then add white noise at a random SNR
/// relative to the crop's own RMS. Silent crops pass through unchanged.
pub fn augment_view<S: Scalar>(
    x: &[S],
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<S>> {
    if cfg.snr_db_lo > cfg.snr_db_hi {
        return Err(Error::Config("augment: snr_db_lo above snr_db_hi".into()));
    }
    if x.len() < cfg.crop_len {
        return Err(Error::Invalid(format!(
            "augment: clip of {} samples shorter than crop {}",
            x.len(),
            cfg.crop_len
        )));
    }
    let max_off = x.len() - cfg.crop_len;
    let off = if max_off == 0 { 0 } else { rng.gen_range(0..=max_off) };
    let mut crop: Vec<S> = x[off..off + cfg.crop_len].to_vec();

    let rms = (crop.iter().map(|v| v.to_f() * v.to_f()).sum::<f64>() / crop.len() as f64).sqrt();
    if rms > 1e-9 {
        let snr_db = rng.gen_range(cfg.snr_db_lo..=cfg.snr_db_hi);
        // Noise RMS sits snr_db below the crop RMS; U(-a, a) has RMS
        // a/sqrt(3), so a = noise_rms * sqrt(3).
        let noise_rms = rms / crate::audio::db_to_amp(snr_db);
        let amp = noise_rms * 3f64.sqrt();
        for v in crop.iter_mut() {
            *v += S::from_f(rng.gen_range(-amp..amp));
        }
    }
    Ok(crop)
}

/// One contrastive batch: `batch_tones` distinct tones, two views each,
/// laid out pairwise for [`nt_xent_loss_grad`]. Tones with a single clip
/// use two crops of it. Returns the selected tone indices alongside.
pub fn make_contrastive_batch<S: Scalar>(
    tones: &[(String, Vec<Vec<S>>)],
    batch_tones: usize,
    aug: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<Vec<S>>)> {
    if batch_tones < 2 {
        return Err(Error::Invalid("contrastive batch needs at least 2 tones".into()));
    }
    if batch_tones > tones.len() {
        return Err(Error::Invalid(format!(
            "batch of {batch_tones} tones exceeds corpus of {}",
            tones.len()
        )));
    }
    if let Some((id, _)) = tones.iter().find(|(_, clips)| clips.is_empty()) {
        return Err(Error::Invalid(format!("tone {id} has no clips")));
    }

    // Partial Fisher-Yates over tone indices.
    let mut order: Vec<usize> = (0..tones.len()).collect();
    for i in 0..batch_tones {
        let j = rng.gen_range(i..order.len());
        order.swap(i, j);
    }
    let chosen = &order[..batch_tones];

    let mut views = Vec::with_capacity(2 * batch_tones);
    for &ti in chosen {
        let clips = &tones[ti].1;
        let (c1, c2) = if clips.len() >= 2 {
            let a = rng.gen_range(0..clips.len());
            let mut b = rng.gen_range(0..clips.len() - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        } else {
            (0, 0)
        };
        views.push(augment_view(&clips[c1], aug, rng)?);
        views.push(augment_view(&clips[c2], aug, rng)?);
    }
    Ok((chosen.to_vec(), views))
}

// ── Training ────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderTrainConfig {
    pub steps: u64,
    pub batch_tones: usize,
    pub lr: f64,
    pub tau: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Evaluate on held-out batches every this many steps (0 disables).
    pub val_every: u64,
    pub val_batches: usize,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch_tones: 32,
            lr: 1e-3,
            tau: 0.1,
            augment: AugmentConfig::default(),
            seed: 7,
            val_every: 100,
            val_batches: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EncoderTrainReport {
    pub steps_run: u64,
    pub final_train_loss: f64,
    pub val_losses: Vec<(u64, f64)>,
}

/// Train in place on a per-tone clip corpus (clips at the encoder rate,
/// already level-normalized). Metrics stream as JSON lines when a path
/// is given; reruns with the same inputs produce identical bytes.
pub fn train_encoder<S: Scalar>(
    encoder: &mut ToneEncoder<S>,
    tones: &[(String, Vec<Vec<S>>)],
    cfg: &EncoderTrainConfig,
    metrics_path: Option<&Path>,
) -> Result<EncoderTrainReport> {
    if cfg.steps == 0 {
        return Err(Error::Config("encoder training needs at least one step".into()));
    }
    if cfg.tau <= 0.0 {
        return Err(Error::Config(format!("temperature {} must be positive", cfg.tau)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut metrics = match metrics_path {
        Some(p) => Some(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(Error::io(p))?,
        )),
        None => None,
    };

    let mut final_loss = 0.0;
    let mut val_losses = Vec::new();
    for step in 1..=cfg.steps {
        let (_, views) = make_contrastive_batch(tones, cfg.batch_tones, &cfg.augment, &mut rng)?;
        let mut projections = Vec::with_capacity(views.len());
        let mut caches = Vec::with_capacity(views.len());
        for view in &views {
            let (z, cache) = encoder.forward_train(view)?;
            projections.push(z);
            caches.push(cache);
        }
        let (loss, grads) = nt_xent_loss_grad(&projections, cfg.tau)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("encoder loss became {loss} at step {step}")));
        }
        crate::nn::zero_grads(encoder);
        for (cache, g) in caches.iter().zip(&grads) {
            encoder.backward_train(cache, g)?;
        }
        opt.step(encoder);
        final_loss = loss;

        let mut val: Option<f64> = None;
        if cfg.val_every > 0 && step % cfg.val_every == 0 {
            let mut vrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
            let mut acc = 0.0;
            for _ in 0..cfg.val_batches.max(1) {
                let (_, vviews) =
                    make_contrastive_batch(tones, cfg.batch_tones, &cfg.augment, &mut vrng)?;
                let zs: Result<Vec<_>> =
                    vviews.iter().map(|v| encoder.forward_train(v).map(|(z, _)| z)).collect();
                acc += nt_xent_loss(&zs?, cfg.tau)?;
            }
            let v = acc / cfg.val_batches.max(1) as f64;
            val_losses.push((step, v));
            val = Some(v);
        }
        if let Some(w) = metrics.as_mut() {
            let line = match val {
                Some(v) => format!(
                    "{{\"step\":{step},\"train_loss\":{loss:.6},\"val_loss\":{v:.6}}}\n"
                ),
                None => format!("{{\"step\":{step},\"train_loss\":{loss:.6}}}\n"),
            };
            w.write_all(line.as_bytes())
                .map_err(Error::io(metrics_path.expect("path present")))?;
        }
    }
    if let Some(mut w) = metrics {
        w.flush().map_err(Error::io(metrics_path.expect("path present")))?;
    }
    Ok(EncoderTrainReport { steps_run: cfg.steps, final_train_loss: final_loss, val_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            mel: MelConfig {
                n_mels: 16,
                win_len: 64,
                hop: 32,
                fft_len: 256,
                sample_rate: 16_000,
                fmin: 0.0,
                fmax: 8000.0,
            },
            conv_channels: vec![8, 8],
            kernel: 3,
            stride: 2,
            trunk_hidden: 12,
            embed_dim: 10,
            proj_hidden: 8,
            proj_dim: 6,
        }
    }

    fn tone_like(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = rng.gen_range(100.0..2000.0);
        let drive = rng.gen_range(1.0..8.0);
        (0..len)
            .map(|n| {
                let t = n as f64 / 16_000.0;
                (drive * (2.0 * std::f64::consts::PI * f * t).sin()).tanh() * 0.25
            })
            .collect()
    }

    #[test]
    fn test_nt_xent_orthogonal_pairs_reference_value() {
        // Two tones, identical views per tone, orthogonal across tones,
        // tau = 1: every anchor sees positive sim 1 and two negatives at
        // 0, so the loss is -ln(e / (e + 2)).
        let e1 = vec![1.0, 0.0, 0.0];
        let e2 = vec![0.0, 1.0, 0.0];
        let z = vec![e1.clone(), e1, e2.clone(), e2];
        let loss = nt_xent_loss(&z, 1.0).unwrap();
        let want = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((loss - want).abs() < 1e-9, "{loss} vs {want}");
        assert!((want - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn test_nt_xent_all_identical_is_log_2b_minus_1() {
        for b in [2usize, 3, 5] {
            let z: Vec<Vec<f64>> = (0..2 * b).map(|_| vec![0.3, -0.4, 0.2]).collect();
            for tau in [0.1, 0.5, 1.0] {
                let loss = nt_xent_loss(&z, tau).unwrap();
                let want = ((2 * b - 1) as f64).ln();
                assert!((loss - want).abs() < 1e-9, "B={b} tau={tau}: {loss} vs {want}");
            }
        }
    }

    #[test]
    fn test_nt_xent_matches_bruteforce_oracle() {
        // Direct textbook evaluation with explicit exp sums, no log-sum-exp.
        fn brute(z: &[Vec<f64>], tau: f64) -> f64 {
            let n = z.len();
            let cos = |a: &[f64], b: &[f64]| {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                dot / (na * nb)
            };
            let mut total = 0.0;
            for i in 0..n {
                let p = if i % 2 == 0 { i + 1 } else { i - 1 };
                let num = (cos(&z[i], &z[p]) / tau).exp();
                let mut den = 0.0;
                for j in 0..n {
                    if j != i {
                        den += (cos(&z[i], &z[j]) / tau).exp();
                    }
                }
                total += -(num / den).ln();
            }
            total / n as f64
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for b in [2usize, 4, 8] {
            let z: Vec<Vec<f64>> =
                (0..2 * b).map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let fast = nt_xent_loss(&z, 0.3).unwrap();
            let slow = brute(&z, 0.3);
            assert!((fast - slow).abs() < 1e-6, "B={b}: {fast} vs {slow}");
        }
    }

    #[test]
    fn test_nt_xent_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = 4;
        let mut z: Vec<Vec<f64>> =
            (0..2 * b).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let tau = 0.5;
        let (_, grad) = nt_xent_loss_grad(&z, tau).unwrap();
        let h = 1e-6;
        for i in 0..2 * b {
            for k in 0..5 {
                let orig = z[i][k];
                z[i][k] = orig + h;
                let lp = nt_xent_loss(&z, tau).unwrap();
                z[i][k] = orig - h;
                let lm = nt_xent_loss(&z, tau).unwrap();
                z[i][k] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grad[i][k];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!((fd - an).abs() / denom < 1e-3, "z[{i}][{k}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn test_nt_xent_validation() {
        let z: Vec<Vec<f64>> = vec![vec![1.0, 0.0]; 4];
        assert!(nt_xent_loss(&z, 0.0).is_err(), "zero temperature");
        assert!(nt_xent_loss(&z, -1.0).is_err(), "negative temperature");
        assert!(nt_xent_loss(&z[..2], 1.0).is_err(), "batch of one pair");
        assert!(nt_xent_loss(&z[..3], 1.0).is_err(), "odd view count");
        let ragged = vec![vec![1.0, 0.0], vec![1.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!(nt_xent_loss(&ragged, 1.0).is_err());
    }

    #[test]
    fn test_encoder_gradients_match_finite_differences() {
        // Full path: two-pair batch of real audio through mel, convs,
        // pooling, trunk, normalization, projection, and the loss.
        let cfg = tiny_cfg();
        let mut enc = ToneEncoder::<f64>::new(cfg, 5).unwrap();
        let views: Vec<Vec<f64>> =
            (0..4).map(|i| tone_like(100 + i / 2, 1200)).collect();
        let tau = 0.5;

        let loss_of = |enc: &ToneEncoder<f64>| -> f64 {
            let zs: Vec<Vec<f64>> =
                views.iter().map(|v| enc.forward_train(v).unwrap().0).collect();
            nt_xent_loss(&zs, tau).unwrap()
        };

        crate::nn::zero_grads(&mut enc);
        let mut caches = Vec::new();
        let mut zs = Vec::new();
        for v in &views {
            let (z, c) = enc.forward_train(v).unwrap();
            zs.push(z);
            caches.push(c);
        }
        let (_, grads) = nt_xent_loss_grad(&zs, tau).unwrap();
        for (c, g) in caches.iter().zip(&grads) {
            enc.backward_train(c, g).unwrap();
        }

        let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
        enc.visit_params(&mut |n, p| analytic.push((n.to_string(), p.g.clone())));
        let h = 1e-5;
        for (name, ga) in &analytic {
            let len = ga.len();
            for idx in [0, len / 3, len - 1] {
                let mut orig = 0.0;
                enc.visit_params(&mut |n, p| {
                    if n == name {
                        orig = p.w[idx];
                        p.w[idx] = orig + h;
                    }
                });
                let lp = loss_of(&enc);
                enc.visit_params(&mut |n, p| {
                    if n == name {
                        p.w[idx] = orig - h;
                    }
                });
                let lm = loss_of(&enc);
                enc.visit_params(&mut |n, p| {
                    if n == name {
                        p.w[idx] = orig;
                    }
                });
                let fd = (lp - lm) / (2.0 * h);
                let an = ga[idx];
                let denom = fd.abs().max(an.abs()).max(1e-7);
                assert!(
                    (fd - an).abs() / denom < 2e-3,
                    "{name}[{idx}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn test_encode_is_level_invariant_and_unit_norm() {
        let enc = ToneEncoder::<f64>::new(EncoderConfig::default(), 6).unwrap();
        let x = tone_like(42, 20_000);
        let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let e1 = enc.encode(&x).unwrap();
        let e2 = enc.encode(&half).unwrap();
        assert_eq!(e1.len(), 512);
        for (a, b) in e1.iter().zip(&e2) {
            assert_eq!(a, b, "scaling the waveform moved the embedding");
        }
        let norm: f64 = e1.iter().map(|v| v * v).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-9, "embedding norm^2 {norm}");
    }

    #[test]
    fn test_encode_rejects_short_and_silent() {
        let enc = ToneEncoder::<f64>::new(EncoderConfig::default(), 6).unwrap();
        assert!(enc.encode(&vec![0.1; 100]).is_err(), "too short");
        assert!(enc.encode(&vec![0.0; 20_000]).is_err(), "silence has no level");
    }

    #[test]
    fn test_augment_crops_then_noises() {
        let cfg = AugmentConfig { crop_len: 500, snr_db_lo: 20.0, snr_db_hi: 20.0 };
        let x = tone_like(3, 4000);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = augment_view(&x, &cfg, &mut rng).unwrap();
        assert_eq!(v.len(), 500);
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let off_probe = augment_view(&x, &cfg, &mut rng2).unwrap();
        assert_eq!(v, off_probe, "same seed must reproduce the same view");
        assert!(augment_view(&x[..100], &cfg, &mut rng).is_err(), "clip shorter than crop");

        let silent = vec![0.0f64; 1000];
        let s = augment_view(&silent, &cfg, &mut rng).unwrap();
        assert!(s.iter().all(|&v| v == 0.0), "silent crops stay silent");
    }

    #[test]
    fn test_augment_noise_level_statistics() {
        let cfg = AugmentConfig { crop_len: 4000, snr_db_lo: 20.0, snr_db_hi: 20.0 };
        let x = tone_like(9, 4000); // crop == clip, offset fixed to 0
        let sig_rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut acc = 0.0;
        let trials = 50;
        for _ in 0..trials {
            let v = augment_view(&x, &cfg, &mut rng).unwrap();
            let noise_rms = (v
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / x.len() as f64)
                .sqrt();
            acc += noise_rms;
        }
        let mean_noise = acc / trials as f64;
        // 20 dB SNR puts the noise RMS at 10% of the signal RMS.
        let want = sig_rms / crate::audio::db_to_amp(20.0);
        assert!(
            (mean_noise - want).abs() < 0.2 * want,
            "noise rms {mean_noise} vs expected {want}"
        );
    }

    #[test]
    fn test_batch_construction_rules() {
        let tones: Vec<(String, Vec<Vec<f64>>)> = (0..5)
            .map(|i| {
                let clips: Vec<Vec<f64>> =
                    (0..3).map(|j| tone_like(i * 10 + j, 2000)).collect();
                (format!("tone{i}"), clips)
            })
            .collect();
        let aug = AugmentConfig { crop_len: 800, ..AugmentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let (chosen, views) = make_contrastive_batch(&tones, 4, &aug, &mut rng).unwrap();
        assert_eq!(chosen.len(), 4);
        assert_eq!(views.len(), 8);
        let distinct: std::collections::BTreeSet<_> = chosen.iter().collect();
        assert_eq!(distinct.len(), 4, "tones must be distinct");
        assert!(views.iter().all(|v| v.len() == 800));

        assert!(make_contrastive_batch(&tones, 6, &aug, &mut rng).is_err(), "batch > tones");
        assert!(make_contrastive_batch(&tones, 1, &aug, &mut rng).is_err(), "degenerate batch");
    }

    #[test]
    fn test_training_reduces_loss_on_separable_tones() {
        // Four synthetic "tones" with very different spectra; a short run
        // must beat both its starting loss and the indifference level
        // ln(2B-1).
        let cfg = tiny_cfg();
        let mut enc = ToneEncoder::<f64>::new(cfg, 30).unwrap();
        let tones: Vec<(String, Vec<Vec<f64>>)> = (0..4)
            .map(|i| {
                let clips: Vec<Vec<f64>> =
                    (0..3).map(|j| tone_like(1000 + i * 7 + j, 3000)).collect();
                (format!("tone{i}"), clips)
            })
            .collect();
        let tcfg = EncoderTrainConfig {
            steps: 60,
            batch_tones: 4,
            lr: 2e-3,
            tau: 0.3,
            augment: AugmentConfig { crop_len: 1500, snr_db_lo: 30.0, snr_db_hi: 40.0 },
            seed: 31,
            val_every: 30,
            val_batches: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let metrics = dir.path().join("enc.jsonl");
        let report = train_encoder(&mut enc, &tones, &tcfg, Some(&metrics)).unwrap();
        assert_eq!(report.steps_run, 60);
        let indifference = (2.0 * 4.0 - 1.0f64).ln();
        assert!(
            report.final_train_loss < indifference,
            "loss {} did not beat indifference {indifference}",
            report.final_train_loss
        );
        assert_eq!(report.val_losses.len(), 2);
        let text = std::fs::read_to_string(&metrics).unwrap();
        assert_eq!(text.lines().count(), 60);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first["train_loss"].is_f64());
    }

    #[test]
    fn test_param_count_and_visit_names() {
        let mut enc = ToneEncoder::<f32>::new(EncoderConfig::default(), 7).unwrap();
        let mut names = Vec::new();
        enc.visit_params(&mut |n, _| names.push(n.to_string()));
        let set: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len(), "duplicate names");
        // Independent count: convs 128->64->64->128->128 k3 + biases,
        // trunk 128->256->512, projection 512->256->128.
        let expected = (128 * 64 * 3 + 64)
            + (64 * 64 * 3 + 64)
            + (64 * 128 * 3 + 128)
            + (128 * 128 * 3 + 128)
            + (128 * 256 + 256)
            + (256 * 512 + 512)
            + (512 * 256 + 256)
            + (256 * 128 + 128);
        assert_eq!(param_count(&mut enc), expected);
    }
}
