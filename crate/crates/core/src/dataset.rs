//! Corpus construction: synthetic clean guitar, rendered wet corpora,
//! content-based splits, training pairs, and reference sampling.
//!
//! Clean content is synthesized with Karplus-Strong plucked strings so
//! the corpus is fully reproducible from a seed, then peak-normalized and
//! rendered through every amp in a bank. Splits are made over *content*,
//! never over amps: a content index appears in exactly one of
//! train/val/test, so validation clips are unheard playing, not unheard
//! tones. Zero-shot tone generalization is exercised separately through
//! amps flagged unseen, which never enter any training corpus.
//!
//! The tone-encoder corpus widens the bank with randomly sampled amp
//! snapshots so the embedding space is trained on far more tones than
//! the generator ever sees; unseen bank amps are excluded there too.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::amps::{
    synthesize_cab_ir, AmpChainConfig, GainClass, ToneStackConfig, Waveshaper, PEAK_CEILING,
};
use crate::audio::{self, wav, ENCODER_RATE, RENDER_RATE, SILENCE_PEAK, TARGET_DBFS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lowest synthesized pitch, E2, as a semitone offset from A4. [semitones]
const SEMITONE_LO: i32 = -29;
/// Highest synthesized pitch, E5. [semitones]
const SEMITONE_HI: i32 = 7;
/// Per-sample feedback gain range of the string loop. [dimensionless]
const DECAY_LO: f64 = 0.995;
const DECAY_HI: f64 = 0.9995;
/// Longest single pluck rendered into a clip. [s]
const MAX_PLUCK_S: f64 = 1.8;

// ── Clean-signal synthesis ──────────────────────────────────────────────

/// One Karplus-Strong pluck: a noise-filled delay line of
/// `round(fs / f0)` samples fed back through the averaging lowpass
/// `y[n] = rho * (y[n-N] + y[n-N-1]) / 2`. The loop period is about
/// `N + 1/2` samples, and higher partials decay faster than the
/// fundamental, like a real string.
pub fn karplus_pluck(
    seed: u64,
    f0: f64,
    rho: f64,
    len: usize,
    sample_rate: u32,
) -> Result<Vec<f64>> {
    if sample_rate == 0 || len == 0 {
        return Err(Error::Invalid("karplus_pluck: empty request".into()));
    }
    if !(20.0..2000.0).contains(&f0) {
        return Err(Error::Invalid(format!("karplus_pluck: f0 {f0} Hz outside (20, 2000)")));
    }
    if !(0.9..1.0).contains(&rho) {
        return Err(Error::Invalid(format!("karplus_pluck: decay {rho} outside [0.9, 1)")));
    }
    let n_delay = (sample_rate as f64 / f0).round() as usize;
    if n_delay < 2 {
        return Err(Error::Invalid(format!(
            "karplus_pluck: f0 {f0} Hz too high for rate {sample_rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut line: Vec<f64> = (0..n_delay).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(len);
    let mut idx = 0usize;
    for _ in 0..len {
        let cur = line[idx];
        let nxt = line[(idx + 1) % n_delay];
        out.push(cur);
        line[idx] = rho * 0.5 * (cur + nxt);
        idx = (idx + 1) % n_delay;
    }
    Ok(out)
}

/// Deterministic pluck-phrase clip: a handful of overlapping plucks on
/// an equal-tempered grid between E2 and E5, peak-normalized to the
/// corpus level. The first pluck always starts at sample zero so no
/// clip opens with silence.
pub fn synth_clean(seed: u64, duration_s: f64, sample_rate: u32) -> Result<Vec<f64>> {
    if sample_rate == 0 {
        return Err(Error::Invalid("synth_clean: zero sample rate".into()));
    }
    if !(0.2..=30.0).contains(&duration_s) {
        return Err(Error::Invalid(format!(
            "synth_clean: duration {duration_s} s outside [0.2, 30]"
        )));
    }
    let fs = sample_rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plucks = ((duration_s * rng.gen_range(2.5..4.0)).round() as usize).max(2);
    let min_tail = (0.2 * fs) as usize;
    let mut buf = vec![0.0f64; n];
    for p in 0..plucks {
        let onset = if p == 0 {
            0
        } else {
            rng.gen_range(0..n.saturating_sub(min_tail).max(1))
        };
        let semis = rng.gen_range(SEMITONE_LO..=SEMITONE_HI);
        let f0 = 440.0 * 2f64.powf(semis as f64 / 12.0);
        let rho = rng.gen_range(DECAY_LO..DECAY_HI);
        let gain = rng.gen_range(0.4..1.0);
        let dur = (n - onset).min((MAX_PLUCK_S * fs) as usize);
        let pluck = karplus_pluck(rng.gen::<u64>(), f0, rho, dur, sample_rate)?;
        for (i, v) in pluck.iter().enumerate() {
            buf[onset + i] += gain * v;
        }
    }
    audio::peak_normalize(&buf, TARGET_DBFS)
}

/// Seed for one content's clean clip, derived so corpora with different
/// seeds never share content and content indices stay independent.
pub fn content_seed(corpus_seed: u64, content: usize) -> u64 {
    corpus_seed ^ (content as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

// ── Content splits ──────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

/// Disjoint content-index sets covering `0..n_contents`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn of(&self, content: usize) -> Option<SplitKind> {
        if self.train.contains(&content) {
            Some(SplitKind::Train)
        } else if self.val.contains(&content) {
            Some(SplitKind::Val)
        } else if self.test.contains(&content) {
            Some(SplitKind::Test)
        } else {
            None
        }
    }

    pub fn get(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }
}

/// Shuffle contents and split 80/10/10: val and test each get
/// `floor(n / 10)` contents, train keeps the rest (so small corpora may
/// have empty val/test). Each split is sorted for stable manifests.
pub fn split_contents(n_contents: usize, seed: u64) -> Result<Splits> {
    if n_contents == 0 {
        return Err(Error::Invalid("split_contents: empty corpus".into()));
    }
    let mut order: Vec<usize> = (0..n_contents).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_val = n_contents / 10;
    let n_test = n_contents / 10;
    let n_train = n_contents - n_val - n_test;
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Splits { train, val, test })
}

// ── Rendered corpus ─────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_contents: usize,
    /// Duration of every clip. [s]
    pub content_s: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { n_contents: 24, content_s: 3.5, seed: 11 }
    }
}

/// Identity of one amp in a rendered corpus (mirrors the bank order).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmpEntry {
    pub amp_id: String,
    pub gain_class: GainClass,
    pub seen: bool,
}

/// Everything needed to address a rendered corpus on disk. Paths are
/// relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub sample_rate: u32,
    pub clip_samples: usize,
    pub seed: u64,
    pub splits: Splits,
    pub amps: Vec<AmpEntry>,
    /// `clean[content]` path (16-bit PCM, peak at the corpus level).
    pub clean: Vec<String>,
    /// `wet[amp][content]` path (32-bit float; wet peaks may pass 1).
    pub wet: Vec<Vec<String>>,
}

impl CorpusManifest {
    pub fn n_contents(&self) -> usize {
        self.clean.len()
    }

    pub fn amp_index(&self, amp_id: &str) -> Result<usize> {
        self.amps
            .iter()
            .position(|a| a.amp_id == amp_id)
            .ok_or_else(|| Error::Invalid(format!("corpus has no amp {amp_id}")))
    }
}

/// Synthesize all contents, render them through every amp in `bank`, and
/// lay the corpus out under `out_dir`:
/// `clean/content_XXX.wav`, `wet/<amp_id>/content_XXX.wav`,
/// `manifest.json`, and a copy of the bank as `bank.json`.
pub fn render_corpus(
    out_dir: &Path,
    bank: &[AmpChainConfig],
    cfg: &CorpusConfig,
) -> Result<CorpusManifest> {
    if bank.is_empty() {
        return Err(Error::Invalid("render_corpus: empty amp bank".into()));
    }
    let splits = split_contents(cfg.n_contents, cfg.seed)?;
    let clean_dir = out_dir.join("clean");
    std::fs::create_dir_all(&clean_dir).map_err(Error::io(&clean_dir))?;
    for amp in bank {
        let dir = out_dir.join("wet").join(&amp.amp_id);
        std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    }

    let clip_samples = (cfg.content_s * RENDER_RATE as f64).round() as usize;
    let mut clean_paths = Vec::with_capacity(cfg.n_contents);
    let mut wet_paths: Vec<Vec<String>> = vec![Vec::with_capacity(cfg.n_contents); bank.len()];
    for c in 0..cfg.n_contents {
        let clean = synth_clean(content_seed(cfg.seed, c), cfg.content_s, RENDER_RATE)?;
        let rel = format!("clean/content_{c:03}.wav");
        wav::write_pcm16(&out_dir.join(&rel), &clean, RENDER_RATE)?;
        clean_paths.push(rel);
        for (a, amp) in bank.iter().enumerate() {
            let wet = crate::amps::render(&clean, RENDER_RATE, amp)?;
            let rel = format!("wet/{}/content_{c:03}.wav", amp.amp_id);
            wav::write_f32(&out_dir.join(&rel), &wet, RENDER_RATE)?;
            wet_paths[a].push(rel);
        }
    }

    let manifest = CorpusManifest {
        sample_rate: RENDER_RATE,
        clip_samples,
        seed: cfg.seed,
        splits,
        amps: bank
            .iter()
            .map(|a| AmpEntry {
                amp_id: a.amp_id.clone(),
                gain_class: a.gain_class,
                seen: a.seen,
            })
            .collect(),
        clean: clean_paths,
        wet: wet_paths,
    };
    save_manifest(&out_dir.join("manifest.json"), &manifest)?;
    crate::amps::save_bank(&out_dir.join("bank.json"), bank)?;
    Ok(manifest)
}

pub fn save_manifest(path: &Path, manifest: &CorpusManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    std::fs::write(path, json).map_err(Error::io(path))
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_checked<S: Scalar>(dir: &Path, rel: &str, manifest: &CorpusManifest) -> Result<Vec<S>> {
    let path = dir.join(rel);
    let clip = wav::read_mono::<S>(&path, audio::Role::Wet)?;
    if clip.sample_rate != manifest.sample_rate || clip.samples.len() != manifest.clip_samples {
        return Err(Error::Invalid(format!(
            "{}: got {} samples at {} Hz, manifest says {} at {} Hz",
            path.display(),
            clip.samples.len(),
            clip.sample_rate,
            manifest.clip_samples,
            manifest.sample_rate
        )));
    }
    Ok(clip.samples)
}

/// Load one clean content clip, shape-checked against the manifest.
pub fn load_clean<S: Scalar>(
    dir: &Path,
    manifest: &CorpusManifest,
    content: usize,
) -> Result<Vec<S>> {
    let rel = manifest
        .clean
        .get(content)
        .ok_or_else(|| Error::Invalid(format!("corpus has no content {content}")))?;
    load_checked(dir, rel, manifest)
}

/// Load one wet clip, shape-checked against the manifest.
pub fn load_wet<S: Scalar>(
    dir: &Path,
    manifest: &CorpusManifest,
    amp: usize,
    content: usize,
) -> Result<Vec<S>> {
    let rel = manifest
        .wet
        .get(amp)
        .and_then(|row| row.get(content))
        .ok_or_else(|| Error::Invalid(format!("corpus has no wet clip ({amp}, {content})")))?;
    load_checked(dir, rel, manifest)
}

// ── Pairs and reference sampling ────────────────────────────────────────

/// One (amp, content) training example address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub amp: usize,
    pub content: usize,
}

/// How the conditioning reference clip relates to the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefMode {
    /// Reference is the target clip itself.
    Paired,
    /// Reference is the same tone playing different content, so the
    /// model cannot copy the reference's content into its output.
    Unpaired,
}

/// All (amp, content) pairs over the given contents, amp-major.
pub fn build_pairs(manifest: &CorpusManifest, contents: &[usize], seen_only: bool) -> Vec<Pair> {
    let mut pairs = Vec::new();
    for (a, amp) in manifest.amps.iter().enumerate() {
        if seen_only && !amp.seen {
            continue;
        }
        for &c in contents {
            pairs.push(Pair { amp: a, content: c });
        }
    }
    pairs
}

/// Choose the reference clip for a pair. `Paired` returns the pair
/// itself. `Unpaired` picks a different content of the same amp,
/// uniformly from `contents`; when no other content exists it falls
/// back to paired and logs a warning.
pub fn sample_reference(
    pair: Pair,
    contents: &[usize],
    mode: RefMode,
    rng: &mut ChaCha8Rng,
) -> Pair {
    match mode {
        RefMode::Paired => pair,
        RefMode::Unpaired => {
            let candidates: Vec<usize> =
                contents.iter().copied().filter(|&c| c != pair.content).collect();
            if candidates.is_empty() {
                log::warn!(
                    "unpaired reference requested for amp {} but only one content available; \
                     falling back to paired",
                    pair.amp
                );
                return pair;
            }
            Pair { amp: pair.amp, content: candidates[rng.gen_range(0..candidates.len())] }
        }
    }
}

// ── Random amp snapshots (encoder corpus) ───────────────────────────────

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.gen_range(lo.log10()..hi.log10()))
}

/// Sample a random, valid amp snapshot. Used to widen the tone-encoder
/// corpus far beyond the bank; ids are `rand_NNN` and never collide with
/// bank ids. The output trim is solved from the structural peak bound,
/// so every snapshot passes validation by construction.
pub fn random_amp(seed: u64, idx: usize) -> Result<AmpChainConfig> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (idx as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let pre_gain = log_uniform(&mut rng, 1.2, 60.0);
    let gain_class = if pre_gain < 3.0 {
        GainClass::LowGain
    } else if pre_gain < 15.0 {
        GainClass::Crunch
    } else {
        GainClass::HighGain
    };
    let waveshaper = match rng.gen_range(0..4) {
        0 => Waveshaper::Tanh { drive: log_uniform(&mut rng, 1.0, 4.0) },
        1 => Waveshaper::AsymmetricTanh {
            drive: log_uniform(&mut rng, 1.0, 4.0),
            asymmetry: rng.gen_range(0.2..1.0),
        },
        2 => Waveshaper::HardClip { level: rng.gen_range(0.4..1.0) },
        _ => Waveshaper::SoftClipCubic { drive: log_uniform(&mut rng, 1.0, 3.0) },
    };
    let tone_stack = ToneStackConfig {
        low_hz: rng.gen_range(80.0..200.0),
        low_gain_db: rng.gen_range(-6.0..6.0),
        mid_hz: rng.gen_range(400.0..1200.0),
        mid_gain_db: rng.gen_range(-6.0..6.0),
        mid_q: rng.gen_range(0.5..1.4),
        high_hz: rng.gen_range(2000.0..6000.0),
        high_gain_db: rng.gen_range(-6.0..6.0),
    };
    let power_sat = rng.gen_range(0.65..2.5);
    let cab_seed = rng.gen::<u64>();
    let cab_ir = synthesize_cab_ir(cab_seed, 256, rng.gen_range(2500.0..8000.0))?;
    let mut amp = AmpChainConfig {
        amp_id: format!("rand_{idx:03}"),
        gain_class,
        seen: true,
        pre_gain,
        waveshaper,
        tone_stack,
        power_sat,
        cab_seed,
        cab_ir,
        output_trim: 1.0,
    };
    let bound_at_unit_trim = amp.peak_bound(RENDER_RATE);
    amp.output_trim = (0.9 * PEAK_CEILING / bound_at_unit_trim).min(1.0);
    amp.validate(RENDER_RATE)?;
    Ok(amp)
}

/// Tone list for encoder training: every *seen* bank amp plus
/// `n_random` random snapshots. Unseen bank amps are excluded so the
/// zero-shot evaluation stays honest end to end.
pub fn encoder_tone_amps(
    bank: &[AmpChainConfig],
    n_random: usize,
    seed: u64,
) -> Result<Vec<AmpChainConfig>> {
    let mut tones: Vec<AmpChainConfig> = bank.iter().filter(|a| a.seen).cloned().collect();
    for i in 0..n_random {
        tones.push(random_amp(seed, i)?);
    }
    let mut ids: Vec<&str> = tones.iter().map(|a| a.amp_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != tones.len() {
        return Err(Error::Invalid("encoder tone list has duplicate amp ids".into()));
    }
    Ok(tones)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderCorpusConfig {
    /// Random amp snapshots added on top of the seen bank amps.
    pub n_random_amps: usize,
    /// Clean contents rendered per tone (drawn from the train split).
    pub contents_per_tone: usize,
    /// Length of each encoder clip after resampling. [s]
    pub clip_s: f64,
    pub seed: u64,
}

impl Default for EncoderCorpusConfig {
    fn default() -> Self {
        Self { n_random_amps: 120, contents_per_tone: 4, clip_s: 1.5, seed: 23 }
    }
}

/// Render the per-tone clip corpus the encoder trains on, in memory:
/// for each tone amp, a few train-split contents are rendered wet,
/// resampled to the encoder rate, cut into clips, and peak-normalized.
/// Clips land as `(amp_id, clips)` ready for contrastive batching.
pub fn build_encoder_corpus<S: Scalar>(
    tone_amps: &[AmpChainConfig],
    corpus_seed: u64,
    train_contents: &[usize],
    content_s: f64,
    cfg: &EncoderCorpusConfig,
) -> Result<Vec<(String, Vec<Vec<S>>)>> {
    if tone_amps.is_empty() {
        return Err(Error::Invalid("encoder corpus: no tone amps".into()));
    }
    if cfg.contents_per_tone == 0 || cfg.contents_per_tone > train_contents.len() {
        return Err(Error::Invalid(format!(
            "encoder corpus: contents_per_tone {} outside 1..={}",
            cfg.contents_per_tone,
            train_contents.len()
        )));
    }
    let clip_samples = (cfg.clip_s * ENCODER_RATE as f64).round() as usize;
    if clip_samples == 0 {
        return Err(Error::Invalid("encoder corpus: clip_s too short".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut clean_cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut corpus = Vec::with_capacity(tone_amps.len());
    for amp in tone_amps {
        // Partial Fisher-Yates over the train contents.
        let mut order: Vec<usize> = train_contents.to_vec();
        for i in 0..cfg.contents_per_tone {
            let j = rng.gen_range(i..order.len());
            order.swap(i, j);
        }
        let mut clips: Vec<Vec<S>> = Vec::new();
        for &content in &order[..cfg.contents_per_tone] {
            if !clean_cache.contains_key(&content) {
                let clean = synth_clean(content_seed(corpus_seed, content), content_s, RENDER_RATE)?;
                clean_cache.insert(content, clean);
            }
            let clean = &clean_cache[&content];
            let wet = crate::amps::render(clean, RENDER_RATE, amp)?;
            let down = audio::resample(&wet, RENDER_RATE, ENCODER_RATE)?;
            for seg in down.chunks_exact(clip_samples) {
                let peak = seg.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
                if peak < SILENCE_PEAK {
                    continue;
                }
                let normed = audio::peak_normalize(seg, TARGET_DBFS)?;
                clips.push(normed.iter().map(|&v| S::from_f(v)).collect());
            }
        }
        if clips.is_empty() {
            return Err(Error::Invalid(format!(
                "encoder corpus: tone {} produced no usable clips",
                amp.amp_id
            )));
        }
        corpus.push((amp.amp_id.clone(), clips));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amps::amp_bank;
    use proptest::prelude::*;

    #[test]
    fn test_pluck_pitch_matches_delay_line() {
        // Independent oracle: the autocorrelation of a plucked string
        // peaks at its loop period. f0 = 44100/400 makes that period
        // 400 samples (plus the half-sample of the averaging filter).
        let fs = 44_100u32;
        let x = karplus_pluck(9, fs as f64 / 400.0, 0.998, fs as usize, fs).unwrap();
        let mut best = (0usize, f64::NEG_INFINITY);
        for lag in 300..=500 {
            let r: f64 = x[..x.len() - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
            if r > best.1 {
                best = (lag, r);
            }
        }
        assert!(
            (best.0 as i64 - 400).unsigned_abs() <= 3,
            "autocorrelation peak at lag {} rather than ~400",
            best.0
        );
    }

    #[test]
    fn test_pluck_decays() {
        let fs = 44_100u32;
        let x = karplus_pluck(3, 110.25, 0.997, fs as usize, fs).unwrap();
        let q = x.len() / 4;
        let rms = |s: &[f64]| (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
        let first = rms(&x[..q]);
        let last = rms(&x[3 * q..]);
        assert!(
            last < 0.5 * first,
            "string did not decay: first-quarter rms {first}, last {last}"
        );
    }

    #[test]
    fn test_pluck_validation() {
        assert!(karplus_pluck(0, 10.0, 0.99, 100, 44_100).is_err(), "f0 too low");
        assert!(karplus_pluck(0, 110.0, 1.0, 100, 44_100).is_err(), "non-decaying loop");
        assert!(karplus_pluck(0, 110.0, 0.99, 0, 44_100).is_err(), "empty request");
    }

    #[test]
    fn test_synth_clean_shape_and_determinism() {
        let a = synth_clean(5, 1.5, 44_100).unwrap();
        let b = synth_clean(5, 1.5, 44_100).unwrap();
        let c = synth_clean(6, 1.5, 44_100).unwrap();
        assert_eq!(a.len(), 66_150);
        assert_eq!(a, b, "same seed must reproduce the clip");
        assert_ne!(a, c, "different seeds must differ");
        let peak = a.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(
            (peak - audio::db_to_amp(TARGET_DBFS)).abs() < 1e-9,
            "peak {peak} not at the corpus level"
        );
        assert!(synth_clean(5, 0.05, 44_100).is_err(), "too short");
    }

    proptest! {
        #[test]
        fn prop_splits_partition_contents(n in 1usize..300, seed in 0u64..500) {
            let s = split_contents(n, seed).unwrap();
            prop_assert_eq!(s.val.len(), n / 10);
            prop_assert_eq!(s.test.len(), n / 10);
            prop_assert_eq!(s.train.len(), n - 2 * (n / 10));
            let mut all: Vec<usize> =
                s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            let expect: Vec<usize> = (0..n).collect();
            prop_assert_eq!(all, expect, "splits must partition 0..n exactly");
            prop_assert_eq!(&split_contents(n, seed).unwrap(), &s, "splits must be deterministic");
        }
    }

    #[test]
    fn test_split_lookup() {
        let s = split_contents(30, 1).unwrap();
        for &c in &s.val {
            assert_eq!(s.of(c), Some(SplitKind::Val));
        }
        assert_eq!(s.of(99), None);
        assert_eq!(s.get(SplitKind::Train).len(), 24);
    }

    #[test]
    fn test_render_corpus_roundtrip() {
        let bank: Vec<AmpChainConfig> = amp_bank().into_iter().take(2).collect();
        let cfg = CorpusConfig { n_contents: 3, content_s: 0.5, seed: 77 };
        let dir = tempfile::tempdir().unwrap();
        let manifest = render_corpus(dir.path(), &bank, &cfg).unwrap();

        assert_eq!(manifest.n_contents(), 3);
        assert_eq!(manifest.clip_samples, 22_050);
        assert_eq!(manifest.amps.len(), 2);
        assert_eq!(manifest.amp_index(&bank[1].amp_id).unwrap(), 1);
        assert!(manifest.amp_index("nope").is_err());

        let reloaded = load_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(reloaded, manifest, "manifest JSON roundtrip");

        // Clean clips survive PCM16 within one quantization step (the
        // writer scales by 32767, the reader decodes by 32768, so the
        // half-step rounding error carries a small systematic term);
        // wet clips are float32 and reload as the exact f32 cast.
        let clean_f64 = synth_clean(content_seed(77, 1), 0.5, RENDER_RATE).unwrap();
        let clean_back = load_clean::<f64>(dir.path(), &manifest, 1).unwrap();
        for (a, b) in clean_f64.iter().zip(&clean_back) {
            assert!((a - b).abs() <= 1.0 / 32_768.0, "{a} vs {b}");
        }
        let wet_f64 = crate::amps::render(&clean_f64, RENDER_RATE, &bank[0]).unwrap();
        let wet_back = load_wet::<f32>(dir.path(), &manifest, 0, 1).unwrap();
        for (a, b) in wet_f64.iter().zip(&wet_back) {
            assert_eq!(*a as f32, *b, "float32 wet clips must reload bit-exactly");
        }
        assert!(load_wet::<f32>(dir.path(), &manifest, 0, 9).is_err(), "bad content index");

        let bank_back = crate::amps::load_bank(&dir.path().join("bank.json")).unwrap();
        assert_eq!(bank_back, bank);
    }

    #[test]
    fn test_build_pairs_counts_and_order() {
        let bank = amp_bank();
        let dirless = CorpusManifest {
            sample_rate: RENDER_RATE,
            clip_samples: 10,
            seed: 0,
            splits: split_contents(10, 0).unwrap(),
            amps: bank
                .iter()
                .map(|a| AmpEntry {
                    amp_id: a.amp_id.clone(),
                    gain_class: a.gain_class,
                    seen: a.seen,
                })
                .collect(),
            clean: vec![String::new(); 10],
            wet: vec![vec![String::new(); 10]; bank.len()],
        };
        let contents = [2usize, 5, 7];
        let all = build_pairs(&dirless, &contents, false);
        assert_eq!(all.len(), bank.len() * 3);
        let seen = build_pairs(&dirless, &contents, true);
        let n_seen = bank.iter().filter(|a| a.seen).count();
        assert_eq!(seen.len(), n_seen * 3);
        assert!(seen.iter().all(|p| dirless.amps[p.amp].seen));
        assert_eq!(seen[0], Pair { amp: 0, content: 2 }, "amp-major, content order kept");
        assert_eq!(seen[1], Pair { amp: 0, content: 5 });
    }

    #[test]
    fn test_reference_sampling_modes_and_coverage() {
        let pair = Pair { amp: 3, content: 9 };
        let contents = [3usize, 7, 9, 11, 20];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(sample_reference(pair, &contents, RefMode::Paired, &mut rng), pair);

        let mut hit = std::collections::BTreeSet::new();
        for _ in 0..1000 {
            let r = sample_reference(pair, &contents, RefMode::Unpaired, &mut rng);
            assert_eq!(r.amp, pair.amp, "reference must keep the tone");
            assert_ne!(r.content, pair.content, "unpaired must change content");
            hit.insert(r.content);
        }
        assert_eq!(
            hit.into_iter().collect::<Vec<_>>(),
            vec![3, 7, 11, 20],
            "1000 draws must cover every other content"
        );

        // Single-content split: falls back to paired rather than failing.
        let r = sample_reference(pair, &[9], RefMode::Unpaired, &mut rng);
        assert_eq!(r, pair);
    }

    #[test]
    fn test_random_amps_are_valid_and_deterministic() {
        let mut ids = std::collections::BTreeSet::new();
        for i in 0..40 {
            let amp = random_amp(99, i).unwrap();
            amp.validate(RENDER_RATE).unwrap();
            assert!(amp.output_trim <= 1.0);
            assert!(amp.peak_bound(RENDER_RATE) <= PEAK_CEILING);
            assert!(amp.seen);
            let by_gain = if amp.pre_gain < 3.0 {
                GainClass::LowGain
            } else if amp.pre_gain < 15.0 {
                GainClass::Crunch
            } else {
                GainClass::HighGain
            };
            assert_eq!(amp.gain_class, by_gain);
            ids.insert(amp.amp_id.clone());
            assert_eq!(random_amp(99, i).unwrap(), amp, "snapshots must be deterministic");
        }
        assert_eq!(ids.len(), 40, "ids must be unique");
    }

    #[test]
    fn test_encoder_tone_list_excludes_unseen() {
        let bank = amp_bank();
        let n_seen = bank.iter().filter(|a| a.seen).count();
        let tones = encoder_tone_amps(&bank, 5, 1).unwrap();
        assert_eq!(tones.len(), n_seen + 5);
        for unseen in bank.iter().filter(|a| !a.seen) {
            assert!(
                tones.iter().all(|t| t.amp_id != unseen.amp_id),
                "unseen amp {} leaked into the encoder corpus",
                unseen.amp_id
            );
        }
    }

    #[test]
    fn test_encoder_corpus_clips() {
        let bank: Vec<AmpChainConfig> = amp_bank().into_iter().take(2).collect();
        let cfg = EncoderCorpusConfig {
            n_random_amps: 0,
            contents_per_tone: 2,
            clip_s: 0.5,
            seed: 3,
        };
        let tones = encoder_tone_amps(&bank, 0, 3).unwrap();
        let corpus: Vec<(String, Vec<Vec<f32>>)> =
            build_encoder_corpus(&tones, 42, &[0, 1, 2], 1.2, &cfg).unwrap();
        assert_eq!(corpus.len(), 2);
        let clip_samples = (0.5 * ENCODER_RATE as f64) as usize;
        for (id, clips) in &corpus {
            // 1.2 s resampled gives 19200 samples, two 8000-sample clips
            // per content, two contents per tone.
            assert_eq!(clips.len(), 4, "tone {id}");
            for clip in clips {
                assert_eq!(clip.len(), clip_samples);
                let peak = clip.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
                assert!(
                    (peak as f64 - audio::db_to_amp(TARGET_DBFS)).abs() < 1e-6,
                    "clip peak {peak} off the corpus level"
                );
            }
        }
        let again: Vec<(String, Vec<Vec<f32>>)> =
            build_encoder_corpus(&tones, 42, &[0, 1, 2], 1.2, &cfg).unwrap();
        assert_eq!(again, corpus, "corpus must be reproducible");

        assert!(
            build_encoder_corpus::<f32>(&tones, 42, &[0], 1.2, &cfg).is_err(),
            "contents_per_tone larger than the split"
        );
    }
}
