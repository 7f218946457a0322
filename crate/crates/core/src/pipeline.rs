//! End-to-end demo pipeline: render the amp corpus, train the tone
//! encoder, train every generator variant, build the retrieval index,
//! and score the lot into loss tables plus embedding diagnostics.
//!
//! One call to [`run_demo`] produces the full artifact tree under an
//! output directory and returns a [`DemoReport`] with every number in
//! it. The pipeline is deterministic end to end: rerunning with the
//! same config into a fresh directory reproduces every table cell.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::amps::{amp_bank, GainClass};
use crate::audio::{resample, ENCODER_RATE, RENDER_RATE};
use crate::container::Container;
use crate::dataset::{
    build_encoder_corpus, build_pairs, encoder_tone_amps, render_corpus, CorpusConfig,
    CorpusManifest, EncoderCorpusConfig, Pair,
};
use crate::encoder::{train_encoder, AugmentConfig, EncoderConfig, EncoderTrainConfig, ToneEncoder};
use crate::error::{Error, Result};
use crate::eval::{
    embedding_metrics, eval_table, export_spectrograms, pca_2d, zero_shot_table, Conditioned,
    EmbeddingMetrics, EvalCond, EvalData, OneToOne, ResultTable, WetModel, ZeroShotData,
};
use crate::generator::{CondSource, Conditioning, Condition, GcnConfig, Generator, PadMode};
use crate::mel::MelConfig;
use crate::nn::{param_count, Visitable};
use crate::scalar::Scalar;
use crate::stft::{SpectralLossKind, StftConfig};
use crate::training::{
    embedding_table, load_generator_corpus, train_generator, weight_hash, CondTable, TrainConfig,
    TrainData, TrainReport, CHECKPOINT_KIND,
};
use crate::zero_shot::{build_index, select_nearest, RetrievalIndex};

/// Container kind tag for saved encoder weights.
pub const ENCODER_KIND: &str = "encoder-checkpoint";

/// Column labels of the seen-amp loss table, in report order. The
/// first is the dedicated per-amp baseline; the rest are the shared
/// multi-tone variants (conditioning mechanism + condition source).
pub const VARIANT_COLUMNS: [&str; 6] = [
    "one_to_one",
    "film_lut",
    "film_tone_paired",
    "film_tone_unpaired",
    "concat_lut",
    "concat_tone_paired",
];

/// The flagship variant: FiLM conditioning on embeddings of references
/// that never match the target content. Zero-shot runs use its weights
/// and its seen-amp losses as the ratio baseline.
pub const FLAGSHIP_VARIANT: &str = "film_tone_unpaired";

// ── Config ──────────────────────────────────────────────────────────────

/// Everything one demo run depends on. Sub-configs own their seeds so
/// a run is fully described by this one value; `seed` covers the parts
/// without one (model inits and index sampling).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    /// Master seed for model initialization and index sampling.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub encoder_corpus: EncoderCorpusConfig,
    pub encoder: EncoderConfig,
    pub encoder_train: EncoderTrainConfig,
    /// Architecture of each dedicated one-amp generator.
    pub gen_one: GcnConfig,
    /// Architecture shared by the multi-tone variants; conditioning
    /// mechanism and source are overridden per variant.
    pub gen_many: GcnConfig,
    pub train_one: TrainConfig,
    pub train_many: TrainConfig,
    /// Retrieval index entries sampled per seen tone.
    pub per_tone: usize,
    /// Length of the index/diagnostic clips cut from wet renders. [s]
    pub index_clip_s: f64,
    /// Scored audio per evaluation cell, after warmup. [s]
    pub eval_s: f64,
    /// Spectral loss resolution for the evaluation tables.
    pub eval_stft: StftConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 1234,
            corpus: CorpusConfig { n_contents: 32, content_s: 10.0, seed: 11 },
            encoder_corpus: EncoderCorpusConfig {
                n_random_amps: 120,
                contents_per_tone: 3,
                clip_s: 1.5,
                seed: 23,
            },
            // Desk-sized encoder: enough capacity to separate the tone
            // bank without overfitting the small clip corpus.
            encoder: EncoderConfig {
                mel: MelConfig { n_mels: 64, ..MelConfig::default() },
                conv_channels: vec![48, 48, 96],
                trunk_hidden: 192,
                embed_dim: 192,
                proj_hidden: 96,
                proj_dim: 64,
                ..EncoderConfig::default()
            },
            encoder_train: EncoderTrainConfig {
                augment: AugmentConfig { crop_len: 12_000, snr_db_lo: 12.0, snr_db_hi: 40.0 },
                ..EncoderTrainConfig::default()
            },
            gen_one: GcnConfig {
                layers: 7,
                channels: 12,
                kernel: 3,
                conditioning: Conditioning::None,
                source: CondSource::Lut { num_tones: 1 },
                embed_dim: 8,
                cond_dim: 8,
                film_hidden: 8,
                film_depth: 2,
            },
            // Same backbone as the dedicated models, so the dedicated
            // column is a like-for-like upper bound.
            gen_many: GcnConfig {
                layers: 7,
                channels: 12,
                kernel: 3,
                conditioning: Conditioning::Film,
                source: CondSource::ToneEmbedding,
                embed_dim: 192,
                cond_dim: 32,
                film_hidden: 32,
                film_depth: 3,
            },
            train_one: TrainConfig {
                steps: 160,
                batch: 4,
                val_every: 0,
                patience: 0,
                ..TrainConfig::default()
            },
            train_many: TrainConfig {
                steps: 400,
                batch: 6,
                val_every: 80,
                patience: 0,
                ..TrainConfig::default()
            },
            per_tone: 400,
            index_clip_s: 2.0,
            eval_s: 4.0,
            eval_stft: StftConfig::default(),
        }
    }
}

impl DemoConfig {
    /// Cross-field checks cheap enough to run before any rendering.
    pub fn validate(&self) -> Result<()> {
        if self.encoder.embed_dim != self.gen_many.embed_dim {
            return Err(Error::Config(format!(
                "encoder embeds {} dims but the multi-tone generator expects {}",
                self.encoder.embed_dim, self.gen_many.embed_dim
            )));
        }
        if self.gen_one.conditioning != Conditioning::None {
            return Err(Error::Config(
                "the dedicated one-amp generator must be unconditioned".into(),
            ));
        }
        if self.per_tone == 0 {
            return Err(Error::Config("per_tone must be positive".into()));
        }
        if self.eval_s <= 0.0 || self.index_clip_s <= 0.0 {
            return Err(Error::Config("eval_s and index_clip_s must be positive".into()));
        }
        let clip_samples = (self.corpus.content_s * RENDER_RATE as f64).round() as usize;
        if self.eval_window(clip_samples)? > clip_samples {
            return Err(Error::Config(format!(
                "eval_s {} plus warmup exceeds the {}s contents",
                self.eval_s, self.corpus.content_s
            )));
        }
        Ok(())
    }

    /// Samples per evaluation clip: the largest model warmup plus the
    /// scored span, so every cell scores exactly `eval_s` seconds.
    fn eval_window(&self, clip_samples: usize) -> Result<usize> {
        self.gen_one.validate()?;
        self.gen_many.validate()?;
        let warmup = self.gen_one.receptive_field().max(self.gen_many.receptive_field()) - 1;
        let scored = (self.eval_s * RENDER_RATE as f64).round() as usize;
        let n = warmup + scored;
        if n == 0 || n > clip_samples {
            return Err(Error::Config(format!(
                "evaluation window of {n} samples does not fit {clip_samples}-sample clips"
            )));
        }
        Ok(n)
    }
}

// ── Model checkpoint helpers ────────────────────────────────────────────

fn store_params<S: Scalar>(c: &mut Container, model: &mut dyn Visitable<S>) -> Result<()> {
    let mut err = None;
    model.visit_params(&mut |name, p| {
        if err.is_none() {
            let w: Vec<f64> = p.w.iter().map(|v| v.to_f()).collect();
            if let Err(e) = c.push_f64(&format!("param.{name}"), w) {
                err = Some(e);
            }
        }
    });
    err.map_or(Ok(()), Err)
}

fn restore_params<S: Scalar>(c: &Container, model: &mut dyn Visitable<S>) -> Result<()> {
    let mut err: Option<Error> = None;
    let mut restored = 0usize;
    model.visit_params(&mut |name, p| {
        if err.is_some() {
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
                err = Some(Error::Invalid(format!(
                    "stored param {name} has {} values, model wants {}",
                    w.len(),
                    p.w.len()
                )))
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let stored = c.section_names().iter().filter(|n| n.starts_with("param.")).count();
    if stored != restored {
        return Err(Error::Invalid(format!(
            "file stores {stored} params, model visited {restored}"
        )));
    }
    Ok(())
}

/// Save encoder weights (always as f64 sections, so the file is
/// dtype-agnostic) together with its config and weight hash.
pub fn save_encoder<S: Scalar>(path: &Path, encoder: &mut ToneEncoder<S>) -> Result<()> {
    let config = serde_json::json!({ "encoder": encoder.cfg });
    let mut c = Container::new(ENCODER_KIND, config, 0);
    c.meta = serde_json::json!({ "weight_hash": weight_hash(encoder) });
    store_params(&mut c, encoder)?;
    c.save(path)
}

/// Rebuild a tone encoder from a file written by [`save_encoder`].
pub fn load_encoder<S: Scalar>(path: &Path) -> Result<ToneEncoder<S>> {
    let c = Container::load(path)?;
    if c.kind != ENCODER_KIND {
        return Err(Error::Invalid(format!(
            "{}: kind {} is not an encoder checkpoint",
            path.display(),
            c.kind
        )));
    }
    let cfg_json = c
        .config
        .get("encoder")
        .ok_or_else(|| Error::Invalid("encoder checkpoint lacks its config".into()))?;
    let cfg: EncoderConfig = serde_json::from_value(cfg_json.clone())
        .map_err(|e| Error::Config(format!("stored encoder config: {e}")))?;
    let mut encoder = ToneEncoder::new(cfg, 0)?;
    restore_params(&c, &mut encoder)?;
    Ok(encoder)
}

/// Rebuild a generator from a training checkpoint: the architecture
/// comes from the stored identity block, the weights from the param
/// sections. Optimizer state is ignored; use the training entry point
/// to resume.
pub fn load_generator<S: Scalar>(path: &Path) -> Result<Generator<S>> {
    let c = Container::load(path)?;
    if c.kind != CHECKPOINT_KIND {
        return Err(Error::Invalid(format!(
            "{}: kind {} is not a generator checkpoint",
            path.display(),
            c.kind
        )));
    }
    let cfg_json = c
        .config
        .get("identity")
        .and_then(|id| id.get("generator"))
        .ok_or_else(|| Error::Invalid("checkpoint lacks a generator config".into()))?;
    let cfg: GcnConfig = serde_json::from_value(cfg_json.clone())
        .map_err(|e| Error::Config(format!("stored generator config: {e}")))?;
    let mut gen = Generator::new(cfg, 0)?;
    restore_params(&c, &mut gen)?;
    Ok(gen)
}

// ── Report ──────────────────────────────────────────────────────────────

/// Embedding-space diagnostics on held-out renders of the seen amps.
#[derive(Clone, Debug, Serialize)]
pub struct EmbeddingReport {
    pub metrics: EmbeddingMetrics,
    /// Fraction of held-out clips whose nearest index entry carries
    /// the clip's own tone.
    pub retrieval_accuracy: f64,
    /// Held-out clips the diagnostics ran on.
    pub eval_clips: usize,
}

/// Every number a demo run produces, in one serializable bundle.
/// `report.json` in the output directory is exactly this.
#[derive(Debug, Serialize)]
pub struct DemoReport {
    pub encoder_hash: String,
    pub encoder_params: usize,
    /// Trainable parameters per variant (one-to-one counts a single
    /// dedicated model; all nine share the architecture).
    pub generator_params: BTreeMap<String, usize>,
    pub train_reports: BTreeMap<String, TrainReport>,
    pub table_one_to_many: ResultTable,
    pub table_zero_shot: ResultTable,
    pub embedding: EmbeddingReport,
    pub config: DemoConfig,
}

// ── Pipeline stages ─────────────────────────────────────────────────────

/// Cut `x` into windows of `len` every `hop` samples.
fn windows<S: Scalar>(x: &[S], len: usize, hop: usize) -> Vec<Vec<S>> {
    let mut out = Vec::new();
    if len == 0 || hop == 0 || x.len() < len {
        return out;
    }
    let mut start = 0;
    while start + len <= x.len() {
        out.push(x[start..start + len].to_vec());
        start += hop;
    }
    out
}

/// The five shared-generator variants: label, conditioning mechanism,
/// condition source, and the reference policy used while training.
fn variant_plan(num_tones: usize) -> Vec<(&'static str, Conditioning, CondSource, crate::dataset::RefMode)> {
    use crate::dataset::RefMode;
    vec![
        ("film_lut", Conditioning::Film, CondSource::Lut { num_tones }, RefMode::Paired),
        ("film_tone_paired", Conditioning::Film, CondSource::ToneEmbedding, RefMode::Paired),
        ("film_tone_unpaired", Conditioning::Film, CondSource::ToneEmbedding, RefMode::Unpaired),
        ("concat_lut", Conditioning::Concat, CondSource::Lut { num_tones }, RefMode::Paired),
        ("concat_tone_paired", Conditioning::Concat, CondSource::ToneEmbedding, RefMode::Paired),
    ]
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::io(path))
}

fn make_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(Error::io(path))
}

fn amp_rows(manifest: &CorpusManifest, idx: &[usize]) -> Vec<(usize, String, GainClass)> {
    idx.iter()
        .map(|&a| (a, manifest.amps[a].amp_id.clone(), manifest.amps[a].gain_class))
        .collect()
}

fn seen_unseen(manifest: &CorpusManifest) -> Result<(Vec<usize>, Vec<usize>)> {
    let seen: Vec<usize> = manifest
        .amps
        .iter()
        .enumerate()
        .filter(|(_, a)| a.seen)
        .map(|(i, _)| i)
        .collect();
    let unseen: Vec<usize> = manifest
        .amps
        .iter()
        .enumerate()
        .filter(|(_, a)| !a.seen)
        .map(|(i, _)| i)
        .collect();
    if seen.is_empty() || unseen.is_empty() {
        return Err(Error::Invalid("amp bank must hold seen and unseen amps".into()));
    }
    Ok((seen, unseen))
}

// ── Table scoring ───────────────────────────────────────────────────────

/// Score both loss tables from trained artifacts and write the four
/// table files into `out_dir`. Test clips come from the corpus,
/// truncated so every cell scores the same `eval_s` seconds after the
/// shared warmup; conditioning embeddings come from the full-length
/// test renders.
pub fn score_tables<S: Scalar>(
    cfg: &DemoConfig,
    corpus_dir: &Path,
    manifest: &CorpusManifest,
    encoder: &ToneEncoder<S>,
    one_to_one: &BTreeMap<usize, Generator<S>>,
    variants: &BTreeMap<String, Generator<S>>,
    index: &RetrievalIndex<S>,
    out_dir: &Path,
) -> Result<(ResultTable, ResultTable)> {
    let (seen_idx, _) = seen_unseen(manifest)?;
    for label in &VARIANT_COLUMNS[1..] {
        if !variants.contains_key(*label) {
            return Err(Error::Invalid(format!("no trained {label} generator to score")));
        }
    }
    for &a in &seen_idx {
        if !one_to_one.contains_key(&a) {
            return Err(Error::Invalid(format!(
                "no dedicated generator for seen amp {}",
                manifest.amps[a].amp_id
            )));
        }
    }
    let n_eval = cfg.eval_window(manifest.clip_samples)?;
    let test = manifest.splits.test.clone();
    let (clean_test, wet_test) =
        load_generator_corpus::<S>(corpus_dir, manifest, &seen_idx, &test)?;
    let embed_test = embedding_table(encoder, &wet_test, manifest.sample_rate)?;
    let lut_rows: BTreeMap<usize, usize> =
        seen_idx.iter().enumerate().map(|(row, &a)| (a, row)).collect();
    let mut unpaired_eval: BTreeMap<(usize, usize), Vec<S>> = BTreeMap::new();
    for &a in &seen_idx {
        for (i, &c) in test.iter().enumerate() {
            let ref_content = test[(i + 1) % test.len()];
            unpaired_eval.insert((a, c), embed_test[&(a, ref_content)].clone());
        }
    }

    let eval_data = EvalData {
        clean: clean_test.iter().map(|(&c, x)| (c, x[..n_eval].to_vec())).collect(),
        wet: wet_test.iter().map(|(&k, x)| (k, x[..n_eval].to_vec())).collect(),
        amps: amp_rows(manifest, &seen_idx),
        contents: test.clone(),
    };
    let one = OneToOne { label: VARIANT_COLUMNS[0].into(), models: one_to_one };
    let eval_models: Vec<Conditioned<'_, S>> = variant_plan(seen_idx.len())
        .iter()
        .map(|(label, _, source, _)| {
            let cond = match source {
                CondSource::Lut { .. } => EvalCond::ToneRow(&lut_rows),
                CondSource::ToneEmbedding => {
                    if *label == FLAGSHIP_VARIANT {
                        EvalCond::Embedding(&unpaired_eval)
                    } else {
                        EvalCond::Embedding(&embed_test)
                    }
                }
            };
            Conditioned { label: (*label).into(), gen: &variants[*label], cond }
        })
        .collect();
    let mut models: Vec<&dyn WetModel<S>> = vec![&one];
    for m in &eval_models {
        models.push(m);
    }
    let mut meta = BTreeMap::new();
    meta.insert("eval_seconds".into(), format!("{}", cfg.eval_s));
    let table1 =
        eval_table(&models, &eval_data, &cfg.eval_stft, SpectralLossKind::ComplexMag, meta)?;
    table1.save_json(&out_dir.join("table_one_to_many.json"))?;
    write_text(&out_dir.join("table_one_to_many.txt"), &table1.format_text())?;

    let table2 = score_zero_shot(
        cfg,
        corpus_dir,
        manifest,
        encoder,
        &variants[FLAGSHIP_VARIANT],
        index,
        &table1,
        out_dir,
    )?;
    Ok((table1, table2))
}

/// Score the unseen amps under the three condition-selection
/// strategies, with the flagship's seen-amp class means from
/// `seen_table` as the ratio baseline. Writes the table files into
/// `out_dir` and returns the table.
pub fn score_zero_shot<S: Scalar>(
    cfg: &DemoConfig,
    corpus_dir: &Path,
    manifest: &CorpusManifest,
    encoder: &ToneEncoder<S>,
    flagship: &Generator<S>,
    index: &RetrievalIndex<S>,
    seen_table: &ResultTable,
    out_dir: &Path,
) -> Result<ResultTable> {
    let (_, unseen_idx) = seen_unseen(manifest)?;
    let n_eval = cfg.eval_window(manifest.clip_samples)?;
    let test = manifest.splits.test.clone();
    let mut seen_class_mean: BTreeMap<GainClass, f64> = BTreeMap::new();
    for class in [GainClass::HighGain, GainClass::LowGain, GainClass::Crunch] {
        if let Some(mean) = seen_table.class_mean(FLAGSHIP_VARIANT, class) {
            seen_class_mean.insert(class, mean);
        }
    }
    let (unseen_clean, unseen_wet) =
        load_generator_corpus::<S>(corpus_dir, manifest, &unseen_idx, &test)?;
    let zs_data = ZeroShotData {
        clean: unseen_clean.iter().map(|(&c, x)| (c, x[..n_eval].to_vec())).collect(),
        wet: unseen_wet.iter().map(|(&k, x)| (k, x[..n_eval].to_vec())).collect(),
        amps: amp_rows(manifest, &unseen_idx),
        contents: test,
        render_rate: manifest.sample_rate,
    };
    let mut meta = BTreeMap::new();
    meta.insert("baseline_column".into(), FLAGSHIP_VARIANT.into());
    meta.insert("eval_seconds".into(), format!("{}", cfg.eval_s));
    let table2 = zero_shot_table(
        flagship,
        encoder,
        index,
        &zs_data,
        &cfg.eval_stft,
        SpectralLossKind::ComplexMag,
        &seen_class_mean,
        meta,
    )?;
    table2.save_json(&out_dir.join("table_zero_shot.json"))?;
    write_text(&out_dir.join("table_zero_shot.txt"), &table2.format_text())?;
    Ok(table2)
}

/// Render, train, index, evaluate: the whole demo into `out_dir`.
pub fn run_demo<S: Scalar>(cfg: &DemoConfig, out_dir: &Path) -> Result<DemoReport> {
    cfg.validate()?;
    make_dir(out_dir)?;

    // Stage 1: corpus. Clean contents through every bank amp.
    log::info!("stage 1/8: rendering corpus ({} contents)", cfg.corpus.n_contents);
    let bank = amp_bank();
    let corpus_dir = out_dir.join("corpus");
    let manifest = render_corpus(&corpus_dir, &bank, &cfg.corpus)?;
    let splits = manifest.splits.clone();
    let (seen_idx, _) = seen_unseen(&manifest)?;
    let n_eval = cfg.eval_window(manifest.clip_samples)?;

    // Stage 2: tone encoder. Contrastive training over the seen amps
    // plus random amp snapshots; the bank's unseen amps stay unseen.
    log::info!("stage 2/8: training the tone encoder");
    let tones = encoder_tone_amps(&bank, cfg.encoder_corpus.n_random_amps, cfg.encoder_corpus.seed)?;
    let enc_corpus = build_encoder_corpus::<S>(
        &tones,
        manifest.seed,
        &splits.train,
        cfg.corpus.content_s,
        &cfg.encoder_corpus,
    )?;
    let enc_dir = out_dir.join("encoder");
    make_dir(&enc_dir)?;
    let mut encoder = ToneEncoder::<S>::new(cfg.encoder.clone(), cfg.seed ^ 0x656e_63)?;
    let enc_report =
        train_encoder(&mut encoder, &enc_corpus, &cfg.encoder_train, Some(&enc_dir.join("metrics.jsonl")))?;
    drop(enc_corpus);
    let encoder_hash = weight_hash(&mut encoder);
    let encoder_params = param_count(&mut encoder);
    save_encoder(&enc_dir.join("encoder.tcck"), &mut encoder)?;
    log::info!(
        "encoder: {} params, final contrastive loss {:.4}",
        encoder_params,
        enc_report.final_train_loss
    );

    // Stage 3: load the seen-amp corpus and embed every wet clip once.
    // One table serves paired and unpaired training: the reference
    // policy only changes which content a draw looks up.
    log::info!("stage 3/8: embedding the wet corpus");
    let all_contents: Vec<usize> = (0..manifest.n_contents()).collect();
    let (clean_all, wet_seen) =
        load_generator_corpus::<S>(&corpus_dir, &manifest, &seen_idx, &all_contents)?;
    let embed_all = embedding_table(&encoder, &wet_seen, RENDER_RATE)?;

    let mut train_reports: BTreeMap<String, TrainReport> = BTreeMap::new();
    let mut generator_params: BTreeMap<String, usize> = BTreeMap::new();
    let trainval_contents: Vec<usize> =
        splits.train.iter().chain(&splits.val).copied().collect();

    // Stage 4: one dedicated generator per seen amp.
    log::info!("stage 4/8: training {} dedicated generators", seen_idx.len());
    let mut one_to_one: BTreeMap<usize, Generator<S>> = BTreeMap::new();
    for (pos, &a) in seen_idx.iter().enumerate() {
        let amp_id = manifest.amps[a].amp_id.clone();
        let data = TrainData {
            clean: trainval_contents
                .iter()
                .map(|&c| (c, clean_all[&c].clone()))
                .collect(),
            wet: trainval_contents
                .iter()
                .map(|&c| ((a, c), wet_seen[&(a, c)].clone()))
                .collect(),
            train_pairs: splits.train.iter().map(|&c| Pair { amp: a, content: c }).collect(),
            val_pairs: splits.val.iter().map(|&c| Pair { amp: a, content: c }).collect(),
            train_contents: splits.train.clone(),
            cond: CondTable::None,
        };
        let mut gen = Generator::<S>::new(cfg.gen_one.clone(), cfg.seed ^ (0x6f6e + pos as u64))?;
        let dir = out_dir.join("generators").join("one_to_one").join(&amp_id);
        make_dir(&dir)?;
        let report = train_generator(&mut gen, &data, &cfg.train_one, &dir, None)?;
        log::info!("  one_to_one/{amp_id}: final loss {:.4}", report.final_train_loss);
        generator_params.entry("one_to_one".into()).or_insert_with(|| param_count(&mut gen));
        train_reports.insert(format!("one_to_one/{amp_id}"), report);
        one_to_one.insert(a, gen);
    }

    // Stage 5: the five shared multi-tone variants.
    log::info!("stage 5/8: training 5 multi-tone variants");
    let lut_rows: BTreeMap<usize, usize> =
        seen_idx.iter().enumerate().map(|(row, &a)| (a, row)).collect();
    let mut variants: BTreeMap<String, Generator<S>> = BTreeMap::new();
    for (v, (label, conditioning, source, ref_mode)) in
        variant_plan(seen_idx.len()).into_iter().enumerate()
    {
        let gen_cfg = GcnConfig { conditioning, source, ..cfg.gen_many.clone() };
        let train_cfg = TrainConfig { ref_mode, ..cfg.train_many.clone() };
        let cond = match source {
            CondSource::ToneEmbedding => CondTable::Embeddings {
                table: embed_all.clone(),
                encoder_hash: encoder_hash.clone(),
            },
            CondSource::Lut { .. } => CondTable::ToneIndex { rows: lut_rows.clone() },
        };
        let data = TrainData {
            clean: trainval_contents
                .iter()
                .map(|&c| (c, clean_all[&c].clone()))
                .collect(),
            wet: wet_seen
                .iter()
                .filter(|((_, c), _)| trainval_contents.contains(c))
                .map(|(&k, v)| (k, v.clone()))
                .collect(),
            train_pairs: build_pairs(&manifest, &splits.train, true),
            val_pairs: build_pairs(&manifest, &splits.val, true),
            train_contents: splits.train.clone(),
            cond,
        };
        let mut gen = Generator::<S>::new(gen_cfg, cfg.seed ^ (0x6d61 + v as u64))?;
        let dir = out_dir.join("generators").join(label);
        make_dir(&dir)?;
        let report = train_generator(&mut gen, &data, &train_cfg, &dir, None)?;
        log::info!("  {label}: final loss {:.4}", report.final_train_loss);
        generator_params.insert(label.into(), param_count(&mut gen));
        train_reports.insert(label.into(), report);
        variants.insert(label.into(), gen);
    }

    // Stage 6: retrieval index over the seen tones. The pool holds
    // overlapping windows of the train-split renders; entries are
    // sampled from it and embedded.
    log::info!("stage 6/8: building the retrieval index ({} per tone)", cfg.per_tone);
    let clip_enc = (cfg.index_clip_s * ENCODER_RATE as f64).round() as usize;
    let mut pools: Vec<(String, Vec<(usize, Vec<S>)>)> = Vec::with_capacity(seen_idx.len());
    for &a in &seen_idx {
        let mut pool = Vec::new();
        for &c in &splits.train {
            let down = resample(&wet_seen[&(a, c)], RENDER_RATE, ENCODER_RATE)?;
            for seg in windows(&down, clip_enc, clip_enc.max(4) / 4) {
                pool.push((c, seg));
            }
        }
        pools.push((manifest.amps[a].amp_id.clone(), pool));
    }
    let index = build_index(&encoder, &pools, cfg.per_tone, cfg.seed ^ 0x1d38)?;
    drop(pools);
    index.save(&out_dir.join("index.tcck"))?;

    // Stage 7: loss tables on the test split, truncated so every cell
    // scores the same eval_s seconds after the shared warmup.
    log::info!("stage 7/8: scoring the loss tables");
    let (table1, table2) = score_tables(
        cfg,
        &corpus_dir,
        &manifest,
        &encoder,
        &one_to_one,
        &variants,
        &index,
        out_dir,
    )?;

    // Stage 8: embedding diagnostics on held-out renders, retrieval
    // accuracy against the index, and showcase artifacts.
    log::info!("stage 8/8: embedding diagnostics and exports");
    let mut embeds: Vec<Vec<S>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut diag_rows: Vec<(usize, String)> = Vec::new();
    for (tone, &a) in seen_idx.iter().enumerate() {
        for &c in &splits.test {
            let down = resample(&wet_seen[&(a, c)], RENDER_RATE, ENCODER_RATE)?;
            for seg in windows(&down, clip_enc, clip_enc) {
                embeds.push(encoder.encode(&seg)?);
                labels.push(tone);
                diag_rows.push((tone, manifest.amps[a].amp_id.clone()));
            }
        }
    }
    let metrics = embedding_metrics(&embeds, &labels, seen_idx.len())?;
    let mut correct = 0usize;
    for (e, &tone) in embeds.iter().zip(&labels) {
        if select_nearest(e, &index)?.tone == tone {
            correct += 1;
        }
    }
    let retrieval_accuracy = correct as f64 / embeds.len().max(1) as f64;
    let embedding = EmbeddingReport { metrics, retrieval_accuracy, eval_clips: embeds.len() };

    let coords = pca_2d(&embeds)?;
    let mut csv = String::from("tone_id,amp_id,x,y\n");
    for ((tone, amp_id), [x, y]) in diag_rows.iter().zip(&coords) {
        csv.push_str(&format!("{tone},{amp_id},{x},{y}\n"));
    }
    write_text(&out_dir.join("embeddings_2d.csv"), &csv)?;
    drop(embeds);

    // Showcase spectrograms: flagship variant, first seen amp, first
    // test content, conditioned like the unpaired eval column (the
    // next test content's embedding).
    let show_amp = seen_idx[0];
    let show_content = splits.test[0];
    let ref_content = splits.test[1 % splits.test.len()];
    let clean_t = clean_all[&show_content][..n_eval].to_vec();
    let target_t = wet_seen[&(show_amp, show_content)][..n_eval].to_vec();
    let cond = Condition::Embedding(&embed_all[&(show_amp, ref_content)]);
    let generated =
        variants[FLAGSHIP_VARIANT].forward(&clean_t, PadMode::Internal, cond)?;
    export_spectrograms(
        &clean_t,
        &target_t,
        &generated,
        &cfg.eval_stft,
        RENDER_RATE,
        &out_dir.join("spectrograms"),
    )?;

    let report = DemoReport {
        encoder_hash,
        encoder_params,
        generator_params,
        train_reports,
        table_one_to_many: table1,
        table_zero_shot: table2,
        embedding,
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    write_text(&out_dir.join("report.json"), &json)?;
    let mut txt = String::new();
    txt.push_str("Seen amps: spectral loss per variant\n\n");
    txt.push_str(&report.table_one_to_many.format_text());
    txt.push_str("\nUnseen amps: zero-shot condition selection\n\n");
    txt.push_str(&report.table_zero_shot.format_text());
    txt.push_str(&format!(
        "\nEmbedding diagnostics over {} held-out clips:\n  silhouette {:.4}  purity {:.4}  intra-inter gap {:.4}  retrieval accuracy {:.4}\n",
        report.embedding.eval_clips,
        report.embedding.metrics.silhouette,
        report.embedding.metrics.purity,
        report.embedding.metrics.intra_inter_gap,
        report.embedding.retrieval_accuracy,
    ));
    write_text(&out_dir.join("report.txt"), &txt)?;
    log::info!("demo complete: artifacts under {}", out_dir.display());
    Ok(report)
}

// ── Tests ───────────────────────────────────────────────────────────────
