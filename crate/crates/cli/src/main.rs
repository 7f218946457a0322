//! Command-line frontend: every experiment is a named, reproducible
//! command. Each command reads an optional TOML config, honors
//! `--seed`/`--out`/`--config` flags plus `TONECLONE_OUT_DIR` and
//! `TONECLONE_DEVICE` environment overrides, writes a resolved config
//! snapshot next to its artifacts, and exits 0 on success, 1 on
//! runtime failure, 2 on config or validation errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use toneclone::amps::amp_bank;
use toneclone::audio::{resample, wav, Role, ENCODER_RATE, RENDER_RATE};
use toneclone::dataset::{
    build_encoder_corpus, build_pairs, encoder_tone_amps, load_manifest, render_corpus,
    CorpusConfig, CorpusManifest, EncoderCorpusConfig, Pair,
};
use toneclone::encoder::{train_encoder, EncoderConfig, EncoderTrainConfig, ToneEncoder};
use toneclone::error::{Error, Result};
use toneclone::eval::{pca_2d, ResultTable};
use toneclone::generator::{CondSource, Condition, Conditioning, GcnConfig, Generator, PadMode};
use toneclone::pipeline::{
    load_encoder, load_generator, run_demo, save_encoder, score_tables, score_zero_shot,
    DemoConfig, FLAGSHIP_VARIANT, VARIANT_COLUMNS,
};
use toneclone::training::{
    embedding_table, load_generator_corpus, train_generator, weight_hash, CondTable, TrainConfig,
    TrainData,
};
use toneclone::scalar::Scalar;
use toneclone::zero_shot::{select_direct, select_mean, select_nearest, RetrievalIndex};
use toneclone::Sample;

// ── Command line ────────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "toneclone",
    version,
    about = "Train and run conditional neural emulations of virtual guitar amps"
)]
struct Cli {
    /// TOML config for the command (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config and TONECLONE_OUT_DIR.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the clean contents through every amp into a corpus.
    RenderDataset,
    /// Contrastively train the tone encoder on a rendered corpus.
    TrainEncoder {
        /// Rendered corpus directory (from render-dataset).
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train one generator (dedicated, LUT- or embedding-conditioned).
    TrainGenerator {
        /// Rendered corpus directory (from render-dataset).
        #[arg(long)]
        corpus: PathBuf,
        /// Saved encoder, required for tone-embedding conditioning.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Target amp for an unconditioned dedicated model.
        #[arg(long)]
        amp_id: Option<String>,
        /// Resume from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Rescore both loss tables from a demo run directory.
    Eval {
        /// Demo run directory holding corpus, models, and index.
        #[arg(long)]
        run: PathBuf,
    },
    /// Rescore only the unseen-amp table from a demo run directory.
    ZeroShot {
        /// Demo run directory holding corpus, models, and index.
        #[arg(long)]
        run: PathBuf,
    },
    /// Run one clean WAV through a trained generator.
    Infer {
        /// Generator checkpoint to load.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Clean input WAV.
        #[arg(long)]
        input: PathBuf,
        /// Generated wet WAV to write.
        #[arg(long)]
        output: PathBuf,
        /// Condition by LUT row.
        #[arg(long)]
        tone_row: Option<usize>,
        /// Condition by amp id, resolved to a LUT row via --manifest.
        #[arg(long)]
        amp_id: Option<String>,
        /// Corpus manifest that maps amp ids to LUT rows.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Condition by a reference WAV of the target tone.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Saved encoder; required with --reference.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Retrieval index; required for nearest/mean strategies.
        #[arg(long)]
        index: Option<PathBuf>,
        /// How the reference becomes a condition.
        #[arg(long, value_enum, default_value_t = Strategy::Direct)]
        strategy: Strategy,
    },
    /// Embed held-out renders of the seen amps and export them.
    ExportEmbeddings {
        /// Rendered corpus directory (from render-dataset).
        #[arg(long)]
        corpus: PathBuf,
        /// Saved encoder to embed with.
        #[arg(long)]
        encoder: PathBuf,
    },
    /// The whole desk-scale pipeline: render, train, index, evaluate.
    Demo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Strategy {
    /// Encode the reference itself.
    Direct,
    /// Swap in the nearest index entry's embedding.
    Nearest,
    /// Swap in the nearest per-tone mean embedding.
    Mean,
}

// ── Run configs (the TOML schema per command) ───────────────────────────

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RenderRun {
    /// Overrides the corpus seed when set (as does --seed).
    seed: Option<u64>,
    out: Option<PathBuf>,
    corpus: CorpusConfig,
    /// Amp bank JSON; the built-in bank when omitted.
    bank: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainEncoderRun {
    seed: Option<u64>,
    out: Option<PathBuf>,
    encoder: EncoderConfig,
    encoder_train: EncoderTrainConfig,
    encoder_corpus: EncoderCorpusConfig,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainGeneratorRun {
    seed: Option<u64>,
    out: Option<PathBuf>,
    generator: GcnConfig,
    train: TrainConfig,
    /// Target amp for an unconditioned model (flag wins over this).
    amp_id: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DemoRun {
    seed: Option<u64>,
    out: Option<PathBuf>,
    demo: DemoConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExportRun {
    seed: Option<u64>,
    out: Option<PathBuf>,
    /// Which split's renders to embed.
    split: String,
    /// Clip length cut from each render. [s]
    clip_s: f64,
}

impl Default for ExportRun {
    fn default() -> Self {
        Self { seed: None, out: None, split: "test".into(), clip_s: 1.5 }
    }
}

/// Commands whose inputs are all artifacts still take a config for
/// the output directory and accept --seed for interface uniformity.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BareRun {
    seed: Option<u64>,
    out: Option<PathBuf>,
}

fn load_run<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(Error::io(p))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Output directory: flag, then config, then TONECLONE_OUT_DIR.
fn resolve_out(flag: Option<PathBuf>, cfg: Option<PathBuf>) -> Result<PathBuf> {
    flag.or(cfg)
        .or_else(|| std::env::var_os("TONECLONE_OUT_DIR").map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config(
                "no output directory: pass --out, set `out` in the config, \
                 or set TONECLONE_OUT_DIR"
                    .into(),
            )
        })
}

/// Only the CPU path exists; any other device request is a config
/// error rather than a silent fallback.
fn check_device() -> Result<()> {
    match std::env::var("TONECLONE_DEVICE") {
        Err(_) => Ok(()),
        Ok(v) if v == "cpu" => Ok(()),
        Ok(v) => Err(Error::Config(format!(
            "TONECLONE_DEVICE={v} is not supported; only cpu is available"
        ))),
    }
}

fn make_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(Error::io(path))
}

/// Every run leaves its resolved config as `config_<command>.toml` so
/// reruns are diffable and reproducible from the artifact alone.
fn snapshot<T: Serialize>(dir: &Path, command: &str, cfg: &T) -> Result<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("config snapshot: {e}")))?;
    let path = dir.join(format!("config_{command}.toml"));
    std::fs::write(&path, text).map_err(Error::io(&path))
}

fn seen_amps(manifest: &CorpusManifest) -> Vec<usize> {
    manifest
        .amps
        .iter()
        .enumerate()
        .filter(|(_, a)| a.seen)
        .map(|(i, _)| i)
        .collect()
}

// ── Commands ────────────────────────────────────────────────────────────

fn cmd_render(cli: &Cli) -> Result<()> {
    let mut run: RenderRun = load_run(cli.config.as_deref())?;
    if let Some(seed) = cli.seed.or(run.seed) {
        run.corpus.seed = seed;
    }
    let out = resolve_out(cli.out.clone(), run.out.clone())?;
    make_dir(&out)?;
    let bank = match &run.bank {
        Some(path) => toneclone::amps::load_bank(path)?,
        None => amp_bank(),
    };
    let manifest = render_corpus(&out, &bank, &run.corpus)?;
    snapshot(&out, "render_dataset", &run)?;
    println!(
        "rendered {} contents x {} amps into {}",
        manifest.n_contents(),
        manifest.amps.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train_encoder(cli: &Cli, corpus: &Path) -> Result<()> {
    let mut run: TrainEncoderRun = load_run(cli.config.as_deref())?;
    if let Some(seed) = cli.seed.or(run.seed) {
        run.encoder_train.seed = seed;
        run.encoder_corpus.seed = seed ^ 0x636f;
    }
    let out = resolve_out(cli.out.clone(), run.out.clone())?;
    make_dir(&out)?;
    let manifest = load_manifest(&corpus.join("manifest.json"))?;
    let bank = toneclone::amps::load_bank(&corpus.join("bank.json"))?;
    let content_s = manifest.clip_samples as f64 / manifest.sample_rate as f64;
    let tones =
        encoder_tone_amps(&bank, run.encoder_corpus.n_random_amps, run.encoder_corpus.seed)?;
    let clips = build_encoder_corpus::<Sample>(
        &tones,
        manifest.seed,
        &manifest.splits.train,
        content_s,
        &run.encoder_corpus,
    )?;
    let mut encoder =
        ToneEncoder::<Sample>::new(run.encoder.clone(), run.encoder_train.seed ^ 0x656e_63)?;
    let report =
        train_encoder(&mut encoder, &clips, &run.encoder_train, Some(&out.join("metrics.jsonl")))?;
    save_encoder(&out.join("encoder.tcck"), &mut encoder)?;
    snapshot(&out, "train_encoder", &run)?;
    println!(
        "trained encoder for {} steps, final contrastive loss {:.4}, saved to {}",
        report.steps_run,
        report.final_train_loss,
        out.join("encoder.tcck").display()
    );
    Ok(())
}

fn cmd_train_generator(
    cli: &Cli,
    corpus: &Path,
    encoder_path: Option<&Path>,
    amp_flag: Option<&str>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut run: TrainGeneratorRun = load_run(cli.config.as_deref())?;
    if let Some(seed) = cli.seed.or(run.seed) {
        run.train.seed = seed;
    }
    let out = resolve_out(cli.out.clone(), run.out.clone())?;
    make_dir(&out)?;
    let manifest = load_manifest(&corpus.join("manifest.json"))?;
    let seen = seen_amps(&manifest);
    let splits = manifest.splits.clone();
    let trainval: Vec<usize> = splits.train.iter().chain(&splits.val).copied().collect();

    // Which amps the model trains on, and how it is conditioned.
    let amp_id = amp_flag.map(str::to_owned).or_else(|| run.amp_id.clone());
    let (amps, train_pairs, val_pairs): (Vec<usize>, Vec<Pair>, Vec<Pair>) =
        if run.generator.conditioning == Conditioning::None {
            let id = amp_id.as_deref().ok_or_else(|| {
                Error::Config("an unconditioned generator needs --amp-id".into())
            })?;
            let a = manifest.amp_index(id)?;
            if !manifest.amps[a].seen {
                return Err(Error::Config(format!(
                    "amp {id} is held out for zero-shot evaluation; train on seen amps"
                )));
            }
            (
                vec![a],
                splits.train.iter().map(|&c| Pair { amp: a, content: c }).collect(),
                splits.val.iter().map(|&c| Pair { amp: a, content: c }).collect(),
            )
        } else {
            (
                seen.clone(),
                build_pairs(&manifest, &splits.train, true),
                build_pairs(&manifest, &splits.val, true),
            )
        };
    let (clean, wet) = load_generator_corpus::<Sample>(corpus, &manifest, &amps, &trainval)?;

    let cond = match (run.generator.conditioning, run.generator.source) {
        (Conditioning::None, _) => CondTable::None,
        (_, CondSource::Lut { num_tones }) => {
            if num_tones != seen.len() {
                return Err(Error::Config(format!(
                    "LUT has {num_tones} rows but the corpus has {} seen amps",
                    seen.len()
                )));
            }
            CondTable::ToneIndex {
                rows: seen.iter().enumerate().map(|(row, &a)| (a, row)).collect(),
            }
        }
        (_, CondSource::ToneEmbedding) => {
            let path = encoder_path.ok_or_else(|| {
                Error::Config(
                    "tone-embedding conditioning needs --encoder (from train-encoder)".into(),
                )
            })?;
            let mut enc = load_encoder::<Sample>(path)?;
            let table = embedding_table(&enc, &wet, manifest.sample_rate)?;
            CondTable::Embeddings { table, encoder_hash: weight_hash(&mut enc) }
        }
    };
    let data = TrainData {
        clean,
        wet,
        train_pairs,
        val_pairs,
        train_contents: splits.train.clone(),
        cond,
    };
    let mut gen = Generator::<Sample>::new(run.generator.clone(), run.train.seed ^ 0x696e_69)?;
    let report = train_generator(&mut gen, &data, &run.train, &out, resume)?;
    snapshot(&out, "train_generator", &run)?;
    let report_json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("train report: {e}")))?;
    std::fs::write(out.join("train_report.json"), report_json)
        .map_err(Error::io(out.join("train_report.json")))?;
    println!(
        "trained for {} steps, final loss {:.4}, checkpoint at {}",
        report.steps_run,
        report.final_train_loss,
        out.join("checkpoint.tcck").display()
    );
    Ok(())
}

/// Load everything a run directory holds for rescoring. The error
/// messages name the command that produces each missing artifact.
struct RunArtifacts {
    cfg: DemoConfig,
    manifest: CorpusManifest,
    encoder: ToneEncoder<Sample>,
    variants: BTreeMap<String, Generator<Sample>>,
    index: RetrievalIndex<Sample>,
}

fn load_run_artifacts(run: &Path, with_one_to_one: bool) -> Result<(RunArtifacts, BTreeMap<usize, Generator<Sample>>)> {
    let report_path = run.join("report.json");
    if !report_path.exists() {
        return Err(Error::Invalid(format!(
            "{} has no report.json; produce the run directory with `toneclone demo`",
            run.display()
        )));
    }
    let text = std::fs::read_to_string(&report_path).map_err(Error::io(&report_path))?;
    let report: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", report_path.display())))?;
    let cfg: DemoConfig = serde_json::from_value(
        report
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Invalid("report.json has no config block".into()))?,
    )
    .map_err(|e| Error::Config(format!("report config: {e}")))?;
    let manifest = load_manifest(&run.join("corpus").join("manifest.json"))?;
    let encoder = load_encoder::<Sample>(&run.join("encoder").join("encoder.tcck"))?;
    let index = RetrievalIndex::<Sample>::load(&run.join("index.tcck"))?;
    let mut variants = BTreeMap::new();
    for label in &VARIANT_COLUMNS[1..] {
        let path = run.join("generators").join(label).join("checkpoint.tcck");
        if !path.exists() {
            return Err(Error::Invalid(format!(
                "{} is missing; train it with `toneclone demo` or train-generator",
                path.display()
            )));
        }
        variants.insert((*label).to_string(), load_generator::<Sample>(&path)?);
    }
    let mut one_to_one = BTreeMap::new();
    if with_one_to_one {
        for &a in &seen_amps(&manifest) {
            let id = &manifest.amps[a].amp_id;
            let path = run.join("generators").join("one_to_one").join(id).join("checkpoint.tcck");
            if !path.exists() {
                return Err(Error::Invalid(format!(
                    "{} is missing; train it with `toneclone demo` or train-generator",
                    path.display()
                )));
            }
            one_to_one.insert(a, load_generator::<Sample>(&path)?);
        }
    }
    Ok((RunArtifacts { cfg, manifest, encoder, variants, index }, one_to_one))
}

fn cmd_eval(cli: &Cli, run_dir: &Path) -> Result<()> {
    let run_cfg: BareRun = load_run(cli.config.as_deref())?;
    let out = cli
        .out
        .clone()
        .or(run_cfg.out)
        .unwrap_or_else(|| run_dir.to_path_buf());
    make_dir(&out)?;
    let (art, one_to_one) = load_run_artifacts(run_dir, true)?;
    let (t1, t2) = score_tables(
        &art.cfg,
        &run_dir.join("corpus"),
        &art.manifest,
        &art.encoder,
        &one_to_one,
        &art.variants,
        &art.index,
        &out,
    )?;
    snapshot(&out, "eval", &art.cfg)?;
    println!("{}", t1.format_text());
    println!("{}", t2.format_text());
    Ok(())
}

fn cmd_zero_shot(cli: &Cli, run_dir: &Path) -> Result<()> {
    let run_cfg: BareRun = load_run(cli.config.as_deref())?;
    let out = cli
        .out
        .clone()
        .or(run_cfg.out)
        .unwrap_or_else(|| run_dir.to_path_buf());
    make_dir(&out)?;
    let (art, _) = load_run_artifacts(run_dir, false)?;
    let table1_path = run_dir.join("table_one_to_many.json");
    if !table1_path.exists() {
        return Err(Error::Invalid(format!(
            "{} is missing; produce it with `toneclone eval --run {}`",
            table1_path.display(),
            run_dir.display()
        )));
    }
    let table1 = ResultTable::load_json(&table1_path)?;
    let t2 = score_zero_shot(
        &art.cfg,
        &run_dir.join("corpus"),
        &art.manifest,
        &art.encoder,
        &art.variants[FLAGSHIP_VARIANT],
        &art.index,
        &table1,
        &out,
    )?;
    snapshot(&out, "zero_shot", &art.cfg)?;
    println!("{}", t2.format_text());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    cli: &Cli,
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    tone_row: Option<usize>,
    amp_id: Option<&str>,
    manifest: Option<&Path>,
    reference: Option<&Path>,
    encoder: Option<&Path>,
    index: Option<&Path>,
    strategy: Strategy,
) -> Result<()> {
    let _run: BareRun = load_run(cli.config.as_deref())?;
    let picked =
        [tone_row.is_some(), amp_id.is_some(), reference.is_some()].iter().filter(|&&b| b).count();
    if picked > 1 {
        return Err(Error::Config(
            "pick one condition: --tone-row, --amp-id, or --reference".into(),
        ));
    }
    let gen = load_generator::<Sample>(checkpoint)?;
    let clip = wav::read_mono::<Sample>(input, Role::Clean)?;
    let x = if clip.sample_rate == RENDER_RATE {
        clip.samples
    } else {
        log::info!("resampling input {} Hz -> {} Hz", clip.sample_rate, RENDER_RATE);
        resample(&clip.samples, clip.sample_rate, RENDER_RATE)?
    };

    // Resolve the condition spec into what the generator expects.
    let embedding: Option<Vec<Sample>> = if let Some(ref_path) = reference {
        let enc_path = encoder.ok_or_else(|| {
            Error::Config("--reference needs --encoder (from train-encoder)".into())
        })?;
        let enc = load_encoder::<Sample>(enc_path)?;
        let z = wav::read_mono::<Sample>(ref_path, Role::Reference)?;
        let direct = select_direct(&enc, &z.samples, z.sample_rate)?;
        match strategy {
            Strategy::Direct => Some(direct),
            Strategy::Nearest | Strategy::Mean => {
                let idx_path = index.ok_or_else(|| {
                    Error::Config("nearest/mean strategies need --index".into())
                })?;
                let idx = RetrievalIndex::<Sample>::load(idx_path)?;
                let sel = if strategy == Strategy::Nearest {
                    select_nearest(&direct, &idx)?
                } else {
                    select_mean(&direct, &idx)?
                };
                log::info!(
                    "reference matched tone {} (cosine {:.4})",
                    idx.tone_ids[sel.tone],
                    sel.similarity.to_f()
                );
                Some(sel.embedding)
            }
        }
    } else {
        None
    };
    let row: Option<usize> = match (tone_row, amp_id) {
        (Some(r), _) => Some(r),
        (None, Some(id)) => {
            let man_path = manifest.ok_or_else(|| {
                Error::Config("--amp-id needs --manifest to resolve the LUT row".into())
            })?;
            let man = load_manifest(man_path)?;
            let a = man.amp_index(id)?;
            let row = seen_amps(&man).iter().position(|&s| s == a).ok_or_else(|| {
                Error::Config(format!("amp {id} is not a seen amp; it has no LUT row"))
            })?;
            Some(row)
        }
        (None, None) => None,
    };
    let cond = match (&embedding, row) {
        (Some(e), _) => Condition::Embedding(e),
        (None, Some(r)) => Condition::ToneIndex(r),
        (None, None) => Condition::None,
    };
    let y = gen.forward(&x, PadMode::Internal, cond)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            make_dir(parent)?;
        }
    }
    wav::write_f32(output, &y, RENDER_RATE)?;
    let snap = output.with_extension("config.toml");
    let resolved = toml::to_string_pretty(&serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "input": input.display().to_string(),
        "strategy": format!("{strategy:?}").to_lowercase(),
    }))
    .map_err(|e| Error::Config(format!("config snapshot: {e}")))?;
    std::fs::write(&snap, resolved).map_err(Error::io(&snap))?;
    println!("wrote {} ({} samples at {} Hz)", output.display(), y.len(), RENDER_RATE);
    Ok(())
}

fn cmd_export_embeddings(cli: &Cli, corpus: &Path, encoder_path: &Path) -> Result<()> {
    let mut run: ExportRun = load_run(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        run.seed = Some(seed);
    }
    let out = resolve_out(cli.out.clone(), run.out.clone())?;
    make_dir(&out)?;
    let manifest = load_manifest(&corpus.join("manifest.json"))?;
    let contents = match run.split.as_str() {
        "train" => manifest.splits.train.clone(),
        "val" => manifest.splits.val.clone(),
        "test" => manifest.splits.test.clone(),
        other => {
            return Err(Error::Config(format!(
                "split {other} unknown; expected train, val, or test"
            )))
        }
    };
    let encoder = load_encoder::<Sample>(encoder_path)?;
    let clip_len = (run.clip_s * ENCODER_RATE as f64).round() as usize;
    if clip_len == 0 {
        return Err(Error::Config("clip_s too short".into()));
    }

    #[derive(Serialize)]
    struct Entry {
        tone: usize,
        amp_id: String,
        content: usize,
        segment: usize,
        embedding: Vec<Sample>,
    }
    let mut entries: Vec<Entry> = Vec::new();
    for (tone, &a) in seen_amps(&manifest).iter().enumerate() {
        for &c in &contents {
            let wet = toneclone::dataset::load_wet::<Sample>(corpus, &manifest, a, c)?;
            let down = resample(&wet, manifest.sample_rate, ENCODER_RATE)?;
            for (s, seg) in down.chunks_exact(clip_len).enumerate() {
                entries.push(Entry {
                    tone,
                    amp_id: manifest.amps[a].amp_id.clone(),
                    content: c,
                    segment: s,
                    embedding: encoder.encode(seg)?,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Invalid(format!(
            "no {}-split clips of {} samples; lower clip_s",
            run.split, clip_len
        )));
    }
    let embeds: Vec<Vec<Sample>> = entries.iter().map(|e| e.embedding.clone()).collect();
    let coords = pca_2d(&embeds)?;
    let mut csv = String::from("tone_id,amp_id,content,x,y\n");
    for (e, [x, y]) in entries.iter().zip(&coords) {
        csv.push_str(&format!("{},{},{},{x},{y}\n", e.tone, e.amp_id, e.content));
    }
    std::fs::write(out.join("embeddings_2d.csv"), csv)
        .map_err(Error::io(out.join("embeddings_2d.csv")))?;
    let doc = serde_json::json!({
        "dim": embeds[0].len(),
        "clip_s": run.clip_s,
        "split": run.split,
        "entries": entries,
    });
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("embeddings: {e}")))?;
    std::fs::write(out.join("embeddings.json"), json)
        .map_err(Error::io(out.join("embeddings.json")))?;
    snapshot(&out, "export_embeddings", &run)?;
    println!("exported {} embeddings to {}", entries.len(), out.display());
    Ok(())
}

fn cmd_demo(cli: &Cli) -> Result<()> {
    let mut run: DemoRun = load_run(cli.config.as_deref())?;
    if let Some(seed) = cli.seed.or(run.seed) {
        run.demo.seed = seed;
    }
    let out = resolve_out(cli.out.clone(), run.out.clone())?;
    make_dir(&out)?;
    snapshot(&out, "demo", &run)?;
    let report = run_demo::<Sample>(&run.demo, &out)?;
    println!("{}", report.table_one_to_many.format_text());
    println!("{}", report.table_zero_shot.format_text());
    println!(
        "embedding diagnostics: silhouette {:.4}, purity {:.4}, gap {:.4}, retrieval {:.4}",
        report.embedding.metrics.silhouette,
        report.embedding.metrics.purity,
        report.embedding.metrics.intra_inter_gap,
        report.embedding.retrieval_accuracy,
    );
    println!("artifacts under {}", out.display());
    Ok(())
}

// ── Entry point ─────────────────────────────────────────────────────────

fn run(cli: Cli) -> Result<()> {
    check_device()?;
    match &cli.command {
        Cmd::RenderDataset => cmd_render(&cli),
        Cmd::TrainEncoder { corpus } => cmd_train_encoder(&cli, corpus),
        Cmd::TrainGenerator { corpus, encoder, amp_id, resume } => cmd_train_generator(
            &cli,
            corpus,
            encoder.as_deref(),
            amp_id.as_deref(),
            resume.as_deref(),
        ),
        Cmd::Eval { run } => cmd_eval(&cli, run),
        Cmd::ZeroShot { run } => cmd_zero_shot(&cli, run),
        Cmd::Infer {
            checkpoint,
            input,
            output,
            tone_row,
            amp_id,
            manifest,
            reference,
            encoder,
            index,
            strategy,
        } => cmd_infer(
            &cli,
            checkpoint,
            input,
            output,
            *tone_row,
            amp_id.as_deref(),
            manifest.as_deref(),
            reference.as_deref(),
            encoder.as_deref(),
            index.as_deref(),
            *strategy,
        ),
        Cmd::ExportEmbeddings { corpus, encoder } => cmd_export_embeddings(&cli, corpus, encoder),
        Cmd::Demo => cmd_demo(&cli),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
