//! Deterministic, resumable generator training.
//!
//! Each step draws a batch of (amp, content) pairs, picks a reference
//! clip per pair (paired or unpaired), crops aligned clean/wet windows
//! at a seeded offset, and accumulates gradients of a complex-STFT loss
//! through the generator; conditioning embeddings come from a frozen,
//! precomputed table whose encoder is identified by a weight hash.
//!
//! Every random draw flows from one seeded stream in a fixed order, the
//! optimizer state lives in name-keyed sorted maps, and checkpoints
//! capture parameters, optimizer moments, and the exact RNG position,
//! so resuming a run continues it bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::audio::{resample, ENCODER_RATE};
use crate::container::{config_hash, Container};
use crate::dataset::{sample_reference, Pair, RefMode};
use crate::encoder::ToneEncoder;
use crate::error::{Error, Result};
use crate::generator::{CondSource, Condition, Generator, PadMode};
use crate::nn::{zero_grads, Adam, Visitable};
use crate::scalar::Scalar;
use crate::stft::{complex_stft_loss_grad, SpectralLossKind, StftConfig};

// ── Configuration ───────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    /// Crops accumulated per optimizer step.
    pub batch: usize,
    /// Generator output samples per crop; the input crop additionally
    /// carries `receptive_field - 1` context samples. [samples]
    pub crop_len: usize,
    pub lr: f64,
    pub ref_mode: RefMode,
    pub stft: StftConfig,
    pub loss: SpectralLossKind,
    /// Validate every this many steps (0 disables validation).
    pub val_every: u64,
    /// Validation rounds without improvement before stopping early
    /// (0 disables early stopping).
    pub patience: u64,
    /// Also write the checkpoint every this many steps (0: only at the
    /// end and on early stop).
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            batch: 6,
            crop_len: 1536,
            lr: 2e-3,
            ref_mode: RefMode::Unpaired,
            stft: StftConfig { window_len: 1024, hop: 256, center: true },
            loss: SpectralLossKind::ComplexMag,
            val_every: 50,
            patience: 5,
            checkpoint_every: 0,
            seed: 17,
        }
    }
}

/// Serialized run configuration stored in checkpoints. The `identity`
/// half pins everything that shapes the weight trajectory; a resumed
/// run must match it exactly. The `control` half (step budget, val
/// cadence, patience, checkpoint cadence) may change across resumes,
/// e.g. to extend a finished run by raising `steps`.
fn run_config_json<S: Scalar>(gen: &Generator<S>, cfg: &TrainConfig) -> serde_json::Value {
    serde_json::json!({
        "identity": {
            "generator": gen.cfg,
            "batch": cfg.batch,
            "crop_len": cfg.crop_len,
            "lr": cfg.lr,
            "ref_mode": cfg.ref_mode,
            "stft": cfg.stft,
            "loss": cfg.loss,
            "seed": cfg.seed,
        },
        "control": {
            "steps": cfg.steps,
            "val_every": cfg.val_every,
            "patience": cfg.patience,
            "checkpoint_every": cfg.checkpoint_every,
        },
    })
}

// ── Training data ───────────────────────────────────────────────────────

/// Conditioning lookup used during training. The embedding variant is a
/// frozen table: the encoder is never updated here, and its weight hash
/// travels with every checkpoint for provenance.
pub enum CondTable<S> {
    None,
    Embeddings { table: BTreeMap<(usize, usize), Vec<S>>, encoder_hash: String },
    ToneIndex { rows: BTreeMap<usize, usize> },
}

/// In-memory training set: full-length clips plus pair lists. Indices
/// follow the corpus manifest (amps by bank order, contents by index).
pub struct TrainData<S> {
    pub clean: BTreeMap<usize, Vec<S>>,
    pub wet: BTreeMap<(usize, usize), Vec<S>>,
    pub train_pairs: Vec<Pair>,
    pub val_pairs: Vec<Pair>,
    /// Contents unpaired references may draw from.
    pub train_contents: Vec<usize>,
    pub cond: CondTable<S>,
}

/// Load the clips for the given amps and contents from a rendered
/// corpus directory.
pub fn load_generator_corpus<S: Scalar>(
    dir: &Path,
    manifest: &crate::dataset::CorpusManifest,
    amps: &[usize],
    contents: &[usize],
) -> Result<(BTreeMap<usize, Vec<S>>, BTreeMap<(usize, usize), Vec<S>>)> {
    let mut clean = BTreeMap::new();
    let mut wet = BTreeMap::new();
    for &c in contents {
        clean.insert(c, crate::dataset::load_clean::<S>(dir, manifest, c)?);
        for &a in amps {
            wet.insert((a, c), crate::dataset::load_wet::<S>(dir, manifest, a, c)?);
        }
    }
    Ok((clean, wet))
}

/// Embed every wet clip with a frozen encoder: the conditioning table
/// for embedding-conditioned training. Clips are resampled from the
/// render rate to the encoder rate first.
pub fn embedding_table<S: Scalar>(
    encoder: &ToneEncoder<S>,
    wet: &BTreeMap<(usize, usize), Vec<S>>,
    render_rate: u32,
) -> Result<BTreeMap<(usize, usize), Vec<S>>> {
    let mut table = BTreeMap::new();
    for (&key, clip) in wet {
        let down = resample(clip, render_rate, ENCODER_RATE)?;
        table.insert(key, encoder.encode(&down)?);
    }
    Ok(table)
}

/// SHA-256 over parameter names and little-endian f64 weights in visit
/// order: a cheap identity for "which exact weights produced this".
pub fn weight_hash<S: Scalar>(model: &mut dyn Visitable<S>) -> String {
    let mut hasher = Sha256::new();
    model.visit_params(&mut |name, p| {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        for v in &p.w {
            hasher.update(v.to_f().to_le_bytes());
        }
    });
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

// ── Checkpoints ─────────────────────────────────────────────────────────

pub const CHECKPOINT_KIND: &str = "generator-checkpoint";

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(text: &str) -> Result<Vec<u8>> {
    if text.len() % 2 != 0 {
        return Err(Error::Invalid("odd-length hex string".into()));
    }
    (0..text.len() / 2)
        .map(|i| {
            u8::from_str_radix(&text[2 * i..2 * i + 2], 16)
                .map_err(|e| Error::Invalid(format!("bad hex: {e}")))
        })
        .collect()
}

struct LoopState {
    step: u64,
    best_val: Option<f64>,
    bad_rounds: u64,
}

fn save_checkpoint<S: Scalar>(
    path: &Path,
    gen: &mut Generator<S>,
    opt: &Adam,
    config: &serde_json::Value,
    state: &LoopState,
    rng: &ChaCha8Rng,
    encoder_hash: Option<&str>,
) -> Result<()> {
    let mut c = Container::new(CHECKPOINT_KIND, config.clone(), state.step);
    c.meta = serde_json::json!({
        "adam_t": opt.t,
        "rng_seed": hex_encode(&rng.get_seed()),
        "rng_stream": rng.get_stream(),
        "rng_word_pos": rng.get_word_pos().to_string(),
        "best_val": state.best_val,
        "bad_rounds": state.bad_rounds,
        "encoder_hash": encoder_hash,
    });
    let mut push_err = None;
    gen.visit_params(&mut |name, p| {
        if push_err.is_none() {
            let w: Vec<f64> = p.w.iter().map(|v| v.to_f()).collect();
            if let Err(e) = c.push_f64(&format!("param.{name}"), w) {
                push_err = Some(e);
            }
        }
    });
    if let Some(e) = push_err {
        return Err(e);
    }
    for (name, m, v) in opt.export_state() {
        c.push_f64(&format!("adam.{name}.m"), m)?;
        c.push_f64(&format!("adam.{name}.v"), v)?;
    }
    c.save(path)
}

fn meta_u64(meta: &serde_json::Value, key: &str) -> Result<u64> {
    meta.get(key)
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Invalid(format!("checkpoint meta missing {key}")))
}

fn load_checkpoint<S: Scalar>(
    path: &Path,
    gen: &mut Generator<S>,
    opt: &mut Adam,
    expected_config: &serde_json::Value,
) -> Result<(ChaCha8Rng, LoopState)> {
    let c = Container::load(path)?;
    if c.kind != CHECKPOINT_KIND {
        return Err(Error::Invalid(format!(
            "{}: kind {} is not a generator checkpoint",
            path.display(),
            c.kind
        )));
    }
    let stored_id = c
        .config
        .get("identity")
        .ok_or_else(|| Error::Invalid("checkpoint config has no identity block".into()))?;
    let expected_id = expected_config
        .get("identity")
        .ok_or_else(|| Error::Invalid("expected config has no identity block".into()))?;
    if config_hash(stored_id) != config_hash(expected_id) {
        return Err(Error::Config(format!(
            "{}: checkpoint was trained under a different configuration \
             (model, data sampling, loss, or seed changed)",
            path.display()
        )));
    }

    // Restore parameters, demanding an exact two-way name match.
    let mut restore_err: Option<Error> = None;
    let mut restored = 0usize;
    gen.visit_params(&mut |name, p| {
        if restore_err.is_some() {
            return;
        }
        match c.get_f64(&format!("param.{name}")) {
            Ok(w) if w.len() == p.w.len() => {
                for (dst, &src) in p.w.iter_mut().zip(w) {
                    *dst = S::from_f(src);
                }
                restored += 1;
            }
            Ok(w) => {
                restore_err = Some(Error::Invalid(format!(
                    "checkpoint param {name} has {} values, model wants {}",
                    w.len(),
                    p.w.len()
                )))
            }
            Err(e) => restore_err = Some(e),
        }
    });
    if let Some(e) = restore_err {
        return Err(e);
    }
    let stored_params = c.section_names().iter().filter(|n| n.starts_with("param.")).count();
    if stored_params != restored {
        return Err(Error::Invalid(format!(
            "checkpoint stores {stored_params} params, model visited {restored}"
        )));
    }

    let adam_t = meta_u64(&c.meta, "adam_t")?;
    let mut entries = Vec::new();
    for name in c.section_names() {
        if let Some(stem) = name.strip_prefix("adam.").and_then(|s| s.strip_suffix(".m")) {
            let m = c.get_f64(name)?.to_vec();
            let v = c.get_f64(&format!("adam.{stem}.v"))?.to_vec();
            entries.push((stem.to_string(), m, v));
        }
    }
    opt.import_state(adam_t, entries);

    let seed_hex = c
        .meta
        .get("rng_seed")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Invalid("checkpoint meta missing rng_seed".into()))?;
    let seed_bytes = hex_decode(seed_hex)?;
    let seed: [u8; 32] = seed_bytes
        .as_slice()
        .try_into()
        .map_err(|_| Error::Invalid("rng_seed must be 32 bytes".into()))?;
    let word_pos: u128 = c
        .meta
        .get("rng_word_pos")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Invalid("checkpoint meta missing rng_word_pos".into()))?
        .parse()
        .map_err(|e| Error::Invalid(format!("bad rng_word_pos: {e}")))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(meta_u64(&c.meta, "rng_stream")?);
    rng.set_word_pos(word_pos);

    let state = LoopState {
        step: c.step,
        best_val: c.meta.get("best_val").and_then(|v| v.as_f64()),
        bad_rounds: meta_u64(&c.meta, "bad_rounds")?,
    };
    Ok((rng, state))
}

// ── Training loop ───────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    /// Absolute step count reached (equals `steps` unless stopped early).
    pub steps_run: u64,
    pub final_train_loss: f64,
    pub best_val: Option<f64>,
    pub val_history: Vec<(u64, f64)>,
    pub stopped_early: bool,
    pub encoder_hash: Option<String>,
}

fn condition_for<'a, S: Scalar>(
    cond: &'a CondTable<S>,
    amp: usize,
    ref_content: usize,
) -> Result<Condition<'a, S>> {
    match cond {
        CondTable::None => Ok(Condition::None),
        CondTable::Embeddings { table, .. } => {
            let emb = table.get(&(amp, ref_content)).ok_or_else(|| {
                Error::Invalid(format!("no embedding for amp {amp} content {ref_content}"))
            })?;
            Ok(Condition::Embedding(emb))
        }
        CondTable::ToneIndex { rows } => {
            let row = rows
                .get(&amp)
                .ok_or_else(|| Error::Invalid(format!("no tone row for amp {amp}")))?;
            Ok(Condition::ToneIndex(*row))
        }
    }
}

/// Validate that every pair is backed by clips long enough for one crop
/// and by conditioning entries, and return the crop's input length.
fn check_data<S: Scalar>(
    gen: &Generator<S>,
    data: &TrainData<S>,
    cfg: &TrainConfig,
) -> Result<usize> {
    if cfg.steps == 0 || cfg.batch == 0 || cfg.crop_len == 0 {
        return Err(Error::Config("training needs steps, batch, and crop_len > 0".into()));
    }
    if data.train_pairs.is_empty() {
        return Err(Error::Invalid("no training pairs".into()));
    }
    if cfg.val_every > 0 && data.val_pairs.is_empty() {
        return Err(Error::Invalid("validation enabled but no validation pairs".into()));
    }
    let in_len = cfg.crop_len + gen.receptive_field() - 1;
    for pair in data.train_pairs.iter().chain(&data.val_pairs) {
        let clean = data
            .clean
            .get(&pair.content)
            .ok_or_else(|| Error::Invalid(format!("missing clean content {}", pair.content)))?;
        let wet = data.wet.get(&(pair.amp, pair.content)).ok_or_else(|| {
            Error::Invalid(format!("missing wet clip ({}, {})", pair.amp, pair.content))
        })?;
        if clean.len() != wet.len() {
            return Err(Error::Invalid(format!(
                "clean/wet length mismatch for ({}, {})",
                pair.amp, pair.content
            )));
        }
        if clean.len() < in_len {
            return Err(Error::Invalid(format!(
                "content {} has {} samples, a crop needs {in_len}",
                pair.content,
                clean.len()
            )));
        }
    }
    match &data.cond {
        CondTable::None => {}
        CondTable::Embeddings { table, .. } => {
            for pair in data.train_pairs.iter().chain(&data.val_pairs) {
                for &c in data.train_contents.iter().chain(std::iter::once(&pair.content)) {
                    match table.get(&(pair.amp, c)) {
                        Some(emb) if emb.len() == gen.cfg.embed_dim => {}
                        Some(emb) => {
                            return Err(Error::Invalid(format!(
                                "embedding ({}, {c}) has dim {}, generator wants {}",
                                pair.amp,
                                emb.len(),
                                gen.cfg.embed_dim
                            )))
                        }
                        None => {
                            return Err(Error::Invalid(format!(
                                "no embedding for amp {} content {c}",
                                pair.amp
                            )))
                        }
                    }
                }
            }
        }
        CondTable::ToneIndex { rows } => {
            let num_tones = match gen.cfg.source {
                CondSource::Lut { num_tones } => num_tones,
                CondSource::ToneEmbedding => {
                    return Err(Error::Config(
                        "tone-index table requires a LUT-sourced generator".into(),
                    ))
                }
            };
            for pair in data.train_pairs.iter().chain(&data.val_pairs) {
                match rows.get(&pair.amp) {
                    Some(&row) if row < num_tones => {}
                    Some(&row) => {
                        return Err(Error::Invalid(format!(
                            "tone row {row} out of range for LUT of {num_tones}"
                        )))
                    }
                    None => {
                        return Err(Error::Invalid(format!("no tone row for amp {}", pair.amp)))
                    }
                }
            }
        }
    }
    Ok(in_len)
}

/// Train `gen` on `data`, writing `metrics.jsonl` and `checkpoint.tcck`
/// under `out_dir`. With `resume_from`, parameters, optimizer moments,
/// RNG position, and early-stop bookkeeping are restored and the run
/// continues exactly as if it had never stopped; only control fields
/// (such as a larger `steps`) may differ from the original config.
pub fn train_generator<S: Scalar>(
    gen: &mut Generator<S>,
    data: &TrainData<S>,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<TrainReport> {
    let in_len = check_data(gen, data, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let config = run_config_json(gen, cfg);
    let encoder_hash = match &data.cond {
        CondTable::Embeddings { encoder_hash, .. } => Some(encoder_hash.clone()),
        _ => None,
    };

    let mut opt = Adam::new(cfg.lr);
    let (mut rng, mut state) = match resume_from {
        Some(path) => load_checkpoint(path, gen, &mut opt, &config)?,
        None => (
            ChaCha8Rng::seed_from_u64(cfg.seed),
            LoopState { step: 0, best_val: None, bad_rounds: 0 },
        ),
    };
    if state.step >= cfg.steps {
        return Err(Error::Invalid(format!(
            "checkpoint is already at step {}, config stops at {}",
            state.step, cfg.steps
        )));
    }

    // Fixed validation crops: drawn from a dedicated stream so they are
    // identical across validations, runs, and resumes.
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7661_6c21);
    let val_offsets: Vec<usize> = data
        .val_pairs
        .iter()
        .map(|p| {
            let max_off = data.clean[&p.content].len() - in_len;
            if max_off == 0 { 0 } else { val_rng.gen_range(0..=max_off) }
        })
        .collect();

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(resume_from.is_some())
            .truncate(resume_from.is_none())
            .write(true)
            .open(&metrics_path)
            .map_err(Error::io(&metrics_path))?,
    );
    let checkpoint_path = out_dir.join("checkpoint.tcck");

    let mut final_train_loss = f64::NAN;
    let mut val_history = Vec::new();
    let mut stopped_early = false;
    while state.step < cfg.steps {
        let step = state.step + 1;
        zero_grads(gen);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch {
            let pair = data.train_pairs[rng.gen_range(0..data.train_pairs.len())];
            let reference = sample_reference(pair, &data.train_contents, cfg.ref_mode, &mut rng);
            let clean = &data.clean[&pair.content];
            let max_off = clean.len() - in_len;
            let off = if max_off == 0 { 0 } else { rng.gen_range(0..=max_off) };

            let x = &clean[off..off + in_len];
            let wet = &data.wet[&(pair.amp, pair.content)];
            let y = &wet[off + in_len - cfg.crop_len..off + in_len];
            let cond = condition_for(&data.cond, pair.amp, reference.content)?;
            let (yhat, cache) = gen.forward_cached(x, PadMode::Provided, cond)?;
            let (loss, mut gy) = complex_stft_loss_grad(&yhat, y, &cfg.stft, cfg.loss)?;
            let inv_batch = S::from_f(1.0 / cfg.batch as f64);
            for g in gy.iter_mut() {
                *g *= inv_batch;
            }
            gen.backward(&cache, &gy)?;
            batch_loss += loss.to_f() / cfg.batch as f64;
        }
        if !batch_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss became {batch_loss} at step {step}; aborting before the \
                 update can poison the parameters"
            )));
        }
        opt.step(gen);
        state.step = step;
        final_train_loss = batch_loss;

        let mut val_loss = None;
        if cfg.val_every > 0 && step % cfg.val_every == 0 {
            let mut acc = 0.0;
            for (pair, &off) in data.val_pairs.iter().zip(&val_offsets) {
                let clean = &data.clean[&pair.content];
                let x = &clean[off..off + in_len];
                let wet = &data.wet[&(pair.amp, pair.content)];
                let y = &wet[off + in_len - cfg.crop_len..off + in_len];
                let cond = condition_for(&data.cond, pair.amp, pair.content)?;
                let yhat = gen.forward(x, PadMode::Provided, cond)?;
                let (loss, _) = complex_stft_loss_grad(&yhat, y, &cfg.stft, cfg.loss)?;
                acc += loss.to_f();
            }
            let v = acc / data.val_pairs.len() as f64;
            if !v.is_finite() {
                return Err(Error::Numeric(format!("validation loss became {v} at step {step}")));
            }
            val_history.push((step, v));
            val_loss = Some(v);
            if state.best_val.map_or(true, |best| v < best) {
                state.best_val = Some(v);
                state.bad_rounds = 0;
            } else {
                state.bad_rounds += 1;
            }
        }

        let line = match val_loss {
            Some(v) => {
                format!("{{\"step\":{step},\"train_loss\":{batch_loss:.6},\"val_loss\":{v:.6}}}\n")
            }
            None => format!("{{\"step\":{step},\"train_loss\":{batch_loss:.6}}}\n"),
        };
        metrics.write_all(line.as_bytes()).map_err(Error::io(&metrics_path))?;

        let stop = cfg.patience > 0 && state.bad_rounds >= cfg.patience;
        if stop {
            stopped_early = true;
        }
        let periodic = cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0;
        if periodic || stop || step == cfg.steps {
            metrics.flush().map_err(Error::io(&metrics_path))?;
            save_checkpoint(
                &checkpoint_path,
                gen,
                &opt,
                &config,
                &state,
                &rng,
                encoder_hash.as_deref(),
            )?;
        }
        if stop {
            break;
        }
    }
    metrics.flush().map_err(Error::io(&metrics_path))?;

    Ok(TrainReport {
        steps_run: state.step,
        final_train_loss,
        best_val: state.best_val,
        val_history,
        stopped_early,
        encoder_hash,
    })
}
