//! End-to-end tests of the compiled binary: exit codes, artifact
//! layout, idempotent reruns, and the demo -> eval -> zero-shot ->
//! infer chain. Each test drives the real executable.

use std::path::Path;
use std::process::{Command, Output};

use serde::Serialize;
use tempfile::TempDir;

use toneclone::dataset::{load_manifest, CorpusConfig, EncoderCorpusConfig};
use toneclone::encoder::{AugmentConfig, EncoderConfig, EncoderTrainConfig};
use toneclone::generator::{CondSource, Conditioning, GcnConfig};
use toneclone::mel::MelConfig;
use toneclone::pipeline::DemoConfig;
use toneclone::stft::StftConfig;
use toneclone::training::TrainConfig;

/// The binary under test, with env overrides cleared so tests are
/// hermetic regardless of the invoking shell.
fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_toneclone"));
    cmd.env_remove("TONECLONE_OUT_DIR").env_remove("TONECLONE_DEVICE");
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn toneclone");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("spawn toneclone");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write_toml<T: Serialize>(path: &Path, value: &T) {
    std::fs::write(path, toml::to_string(value).unwrap()).unwrap();
}

/// A corpus small enough to render in well under a second.
fn tiny_corpus_toml(path: &Path, n_contents: usize) {
    #[derive(Serialize)]
    struct RenderRun {
        corpus: CorpusConfig,
    }
    write_toml(path, &RenderRun { corpus: CorpusConfig { n_contents, content_s: 0.3, seed: 5 } });
}

/// Mirrors the tiny config used by the library's own pipeline tests:
/// every stage runs, each for a handful of steps.
fn tiny_demo() -> DemoConfig {
    DemoConfig {
        seed: 99,
        corpus: CorpusConfig { n_contents: 20, content_s: 0.6, seed: 11 },
        encoder_corpus: EncoderCorpusConfig {
            n_random_amps: 3,
            contents_per_tone: 2,
            clip_s: 0.35,
            seed: 23,
        },
        encoder: EncoderConfig {
            mel: MelConfig { n_mels: 24, fft_len: 256, win_len: 200, hop: 100, ..MelConfig::default() },
            conv_channels: vec![8, 8],
            kernel: 3,
            stride: 2,
            trunk_hidden: 16,
            embed_dim: 16,
            proj_hidden: 16,
            proj_dim: 8,
        },
        encoder_train: EncoderTrainConfig {
            steps: 8,
            batch_tones: 4,
            lr: 1e-3,
            tau: 0.1,
            augment: AugmentConfig { crop_len: 4000, ..AugmentConfig::default() },
            seed: 7,
            val_every: 0,
            val_batches: 0,
        },
        gen_one: GcnConfig {
            layers: 3,
            channels: 4,
            kernel: 3,
            conditioning: Conditioning::None,
            source: CondSource::Lut { num_tones: 1 },
            embed_dim: 8,
            cond_dim: 8,
            film_hidden: 8,
            film_depth: 2,
        },
        gen_many: GcnConfig {
            layers: 3,
            channels: 6,
            kernel: 3,
            conditioning: Conditioning::Film,
            source: CondSource::ToneEmbedding,
            embed_dim: 16,
            cond_dim: 8,
            film_hidden: 8,
            film_depth: 2,
        },
        train_one: TrainConfig {
            steps: 6,
            batch: 2,
            crop_len: 256,
            stft: StftConfig { window_len: 128, hop: 64, center: true },
            val_every: 0,
            patience: 0,
            ..TrainConfig::default()
        },
        train_many: TrainConfig {
            steps: 8,
            batch: 2,
            crop_len: 256,
            stft: StftConfig { window_len: 128, hop: 64, center: true },
            val_every: 0,
            patience: 0,
            ..TrainConfig::default()
        },
        per_tone: 6,
        index_clip_s: 0.35,
        eval_s: 0.25,
        eval_stft: StftConfig { window_len: 512, hop: 128, center: false },
    }
}

#[test]
fn test_corrupt_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");

    // Unknown key: schema violation.
    std::fs::write(&cfg, "seeed = 3\n").unwrap();
    let (code, stderr) = exit_code(bin().args([
        "render-dataset",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("c").to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "unknown config key is a config error: {stderr}");
    assert!(stderr.contains("seeed"), "error names the bad key: {stderr}");

    // Not TOML at all.
    std::fs::write(&cfg, "{{{{").unwrap();
    let (code, _) = exit_code(bin().args([
        "render-dataset",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("c").to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "unparseable config is a config error");
}

#[test]
fn test_missing_out_exits_2() {
    let (code, stderr) = exit_code(bin().arg("render-dataset"));
    assert_eq!(code, 2, "no output directory anywhere is a config error");
    assert!(stderr.contains("TONECLONE_OUT_DIR"), "message names the env override: {stderr}");
}

#[test]
fn test_non_cpu_device_exits_2() {
    let dir = TempDir::new().unwrap();
    let (code, stderr) = exit_code(
        bin()
            .env("TONECLONE_DEVICE", "cuda")
            .args(["render-dataset", "--out", dir.path().to_str().unwrap()]),
    );
    assert_eq!(code, 2, "non-cpu device is rejected up front");
    assert!(stderr.contains("cpu"), "message says what is supported: {stderr}");

    // cpu is accepted (fails later only if something else is wrong).
    let cfg = dir.path().join("r.toml");
    tiny_corpus_toml(&cfg, 2);
    run_ok(bin().env("TONECLONE_DEVICE", "cpu").args([
        "render-dataset",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("c").to_str().unwrap(),
    ]));
}

#[test]
fn test_render_idempotent_env_out_and_corrupt_bank() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("render.toml");
    tiny_corpus_toml(&cfg, 3);
    let corpus = dir.path().join("corpus");

    // Output directory via environment override, no --out.
    run_ok(
        bin()
            .env("TONECLONE_OUT_DIR", &corpus)
            .args(["render-dataset", "--config", cfg.to_str().unwrap()]),
    );
    let manifest_path = corpus.join("manifest.json");
    assert!(manifest_path.exists(), "manifest written");
    assert!(corpus.join("bank.json").exists(), "bank copied next to the corpus");
    assert!(corpus.join("config_render_dataset.toml").exists(), "config snapshot written");
    let first = std::fs::read(&manifest_path).unwrap();

    // Re-run: byte-identical manifest.
    run_ok(bin().args([
        "render-dataset",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
    ]));
    let second = std::fs::read(&manifest_path).unwrap();
    assert_eq!(first, second, "re-render with the same seed is byte-identical");

    // Corrupt amp bank file: schema error, exit 2.
    let bank = dir.path().join("bank.json");
    std::fs::write(&bank, "not json").unwrap();
    #[derive(Serialize)]
    struct RenderRun<'a> {
        corpus: CorpusConfig,
        bank: &'a Path,
    }
    let bad_cfg = dir.path().join("badbank.toml");
    write_toml(
        &bad_cfg,
        &RenderRun {
            corpus: CorpusConfig { n_contents: 2, content_s: 0.3, seed: 5 },
            bank: &bank,
        },
    );
    let (code, stderr) = exit_code(bin().args([
        "render-dataset",
        "--config",
        bad_cfg.to_str().unwrap(),
        "--out",
        dir.path().join("c2").to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "corrupt amp bank is a config error: {stderr}");
}

#[test]
fn test_train_lut_generator_then_infer() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus");
    let render_cfg = dir.path().join("render.toml");
    tiny_corpus_toml(&render_cfg, 6);
    run_ok(bin().args([
        "render-dataset",
        "--config",
        render_cfg.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
    ]));

    // Train a tiny LUT-conditioned generator for two steps.
    #[derive(Serialize)]
    struct GenRun {
        generator: GcnConfig,
        train: TrainConfig,
    }
    let gen_cfg = dir.path().join("gen.toml");
    write_toml(
        &gen_cfg,
        &GenRun {
            generator: GcnConfig {
                layers: 3,
                channels: 4,
                kernel: 3,
                conditioning: Conditioning::Film,
                source: CondSource::Lut { num_tones: 9 },
                embed_dim: 8,
                cond_dim: 8,
                film_hidden: 8,
                film_depth: 2,
            },
            train: TrainConfig {
                steps: 2,
                batch: 2,
                crop_len: 256,
                stft: StftConfig { window_len: 128, hop: 64, center: true },
                val_every: 0,
                patience: 0,
                ..TrainConfig::default()
            },
        },
    );
    let model_dir = dir.path().join("model");
    run_ok(bin().args([
        "train-generator",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        gen_cfg.to_str().unwrap(),
        "--out",
        model_dir.to_str().unwrap(),
    ]));
    let checkpoint = model_dir.join("checkpoint.tcck");
    assert!(checkpoint.exists(), "training leaves a checkpoint");
    assert!(model_dir.join("train_report.json").exists(), "training leaves a report");

    // Infer with an amp id resolved through the manifest.
    let manifest = load_manifest(&corpus.join("manifest.json")).unwrap();
    let seen_amp = manifest.amps.iter().find(|a| a.seen).unwrap().amp_id.clone();
    let input = corpus.join(&manifest.clean[0]);
    let output = dir.path().join("wet.wav");
    run_ok(bin().args([
        "infer",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--amp-id",
        &seen_amp,
        "--manifest",
        corpus.join("manifest.json").to_str().unwrap(),
    ]));
    let x = toneclone::audio::wav::read_mono::<f32>(&input, toneclone::audio::Role::Clean).unwrap();
    let y = toneclone::audio::wav::read_mono::<f32>(&output, toneclone::audio::Role::Wet).unwrap();
    assert_eq!(y.samples.len(), x.samples.len(), "wet output spans the clean input");
    assert_eq!(y.sample_rate, 44_100, "output at the render rate");

    // Same through a raw LUT row.
    run_ok(bin().args([
        "infer",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("wet2.wav").to_str().unwrap(),
        "--tone-row",
        "3",
    ]));

    // Conflicting condition specs are a config error.
    let (code, stderr) = exit_code(bin().args([
        "infer",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("wet3.wav").to_str().unwrap(),
        "--tone-row",
        "1",
        "--amp-id",
        &seen_amp,
    ]));
    assert_eq!(code, 2, "two condition specs at once: {stderr}");
}

#[test]
fn test_demo_then_eval_zero_shot_export_and_reference_infer() {
    let dir = TempDir::new().unwrap();
    #[derive(Serialize)]
    struct DemoRun {
        demo: DemoConfig,
    }
    let demo_cfg = dir.path().join("demo.toml");
    write_toml(&demo_cfg, &DemoRun { demo: tiny_demo() });
    let run = dir.path().join("run");
    run_ok(bin().args([
        "demo",
        "--config",
        demo_cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]));
    for rel in ["table_one_to_many.json", "table_zero_shot.json", "report.json", "index.tcck"] {
        assert!(run.join(rel).exists(), "demo produced {rel}");
    }
    let t1_demo = std::fs::read(run.join("table_one_to_many.json")).unwrap();
    let t2_demo = std::fs::read(run.join("table_zero_shot.json")).unwrap();

    // eval on the run directory rescored both tables byte-identically.
    run_ok(bin().args(["eval", "--run", run.to_str().unwrap()]));
    assert_eq!(
        std::fs::read(run.join("table_one_to_many.json")).unwrap(),
        t1_demo,
        "eval reproduces the seen-amp table from saved artifacts"
    );

    // zero-shot alone also reproduces its table.
    run_ok(bin().args(["zero-shot", "--run", run.to_str().unwrap()]));
    assert_eq!(
        std::fs::read(run.join("table_zero_shot.json")).unwrap(),
        t2_demo,
        "zero-shot reproduces the unseen-amp table"
    );

    // export-embeddings writes the JSON and the 2-D projection.
    let export = dir.path().join("export");
    #[derive(Serialize)]
    struct ExportRun {
        split: String,
        clip_s: f64,
    }
    let export_cfg = dir.path().join("export.toml");
    write_toml(&export_cfg, &ExportRun { split: "test".into(), clip_s: 0.35 });
    run_ok(bin().args([
        "export-embeddings",
        "--corpus",
        run.join("corpus").to_str().unwrap(),
        "--encoder",
        run.join("encoder/encoder.tcck").to_str().unwrap(),
        "--config",
        export_cfg.to_str().unwrap(),
        "--out",
        export.to_str().unwrap(),
    ]));
    assert!(export.join("embeddings.json").exists(), "embeddings exported");
    assert!(export.join("embeddings_2d.csv").exists(), "2-D projection exported");

    // Reference-conditioned inference through the retrieval index.
    let manifest = load_manifest(&run.join("corpus/manifest.json")).unwrap();
    let test_content = manifest.splits.test[0];
    let input = run.join("corpus").join(&manifest.clean[test_content]);
    let seen_amp_pos = manifest.amps.iter().position(|a| a.seen).unwrap();
    let reference = run.join("corpus").join(&manifest.wet[seen_amp_pos][test_content]);
    let output = dir.path().join("cloned.wav");
    run_ok(bin().args([
        "infer",
        "--checkpoint",
        run.join("generators/film_tone_unpaired/checkpoint.tcck").to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--reference",
        reference.to_str().unwrap(),
        "--encoder",
        run.join("encoder/encoder.tcck").to_str().unwrap(),
        "--index",
        run.join("index.tcck").to_str().unwrap(),
        "--strategy",
        "nearest",
    ]));
    let x = toneclone::audio::wav::read_mono::<f32>(&input, toneclone::audio::Role::Clean).unwrap();
    let y = toneclone::audio::wav::read_mono::<f32>(&output, toneclone::audio::Role::Wet).unwrap();
    assert_eq!(y.samples.len(), x.samples.len(), "cloned output spans the input");
}
