//! Desk-scale evaluation: per-amp loss tables, the unseen-tone table,
//! embedding cluster metrics, and spectrogram exports.
//!
//! Evaluation is pure: every table cell is a deterministic function of
//! (models, data, config), so a rerun reproduces cells exactly. All
//! cells of a table share one test split and one scoring window, which
//! keeps columns comparable. A 2-D projection export exists for human
//! inspection only; no metric is computed from it.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::amps::GainClass;
use crate::audio::{resample, ENCODER_RATE};
use crate::encoder::ToneEncoder;
use crate::error::{Error, Result};
use crate::generator::{Condition, Generator, PadMode};
use crate::scalar::Scalar;
use crate::stft::{complex_stft_loss, stft, SpectralLossKind, StftConfig};
use crate::zero_shot::{cosine_sim, select_mean, select_nearest, RetrievalIndex};

// ── Result tables ───────────────────────────────────────────────────────

/// One table row: an amp with its loss per model variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub amp_id: String,
    pub gain_class: GainClass,
    /// Parallel to the table's `columns`.
    pub cells: Vec<f64>,
    /// Unseen-tone rows: first-column loss divided by the mean seen
    /// loss of the same gain class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_to_seen: Option<f64>,
}

/// Loss table keyed by amp rows and model-variant columns, with run
/// metadata (seed, config hashes, aggregation) carried alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    pub meta: BTreeMap<String, String>,
}

impl ResultTable {
    pub fn new(
        columns: Vec<String>,
        rows: Vec<TableRow>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        if columns.is_empty() || rows.is_empty() {
            return Err(Error::Invalid("a result table needs rows and columns".into()));
        }
        for row in &rows {
            if row.cells.len() != columns.len() {
                return Err(Error::Invalid(format!(
                    "row {} has {} cells for {} columns",
                    row.amp_id,
                    row.cells.len(),
                    columns.len()
                )));
            }
            for (c, &v) in row.cells.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Numeric(format!(
                        "cell ({}, {}) is {v}, losses must be finite and nonnegative",
                        row.amp_id, columns[c]
                    )));
                }
            }
        }
        Ok(Self { columns, rows, meta })
    }

    pub fn cell(&self, amp_id: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.amp_id == amp_id).map(|r| r.cells[c])
    }

    /// Mean of one column over all rows.
    pub fn column_mean(&self, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        let sum: f64 = self.rows.iter().map(|r| r.cells[c]).sum();
        Some(sum / self.rows.len() as f64)
    }

    /// Mean of one column over the rows of one gain class.
    pub fn class_mean(&self, column: &str, class: GainClass) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        let vals: Vec<f64> =
            self.rows.iter().filter(|r| r.gain_class == class).map(|r| r.cells[c]).collect();
        if vals.is_empty() {
            return None;
        }
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Aligned text rendering; the best (lowest) cell of every column
    /// is marked with `*`.
    pub fn format_text(&self) -> String {
        let best: Vec<f64> = (0..self.columns.len())
            .map(|c| self.rows.iter().map(|r| r.cells[c]).fold(f64::INFINITY, f64::min))
            .collect();
        let mut head = vec!["amp".to_string(), "class".to_string()];
        head.extend(self.columns.iter().cloned());
        let mut grid: Vec<Vec<String>> = vec![head];
        for row in &self.rows {
            let mut line = vec![row.amp_id.clone(), row.gain_class.to_string()];
            for (c, &v) in row.cells.iter().enumerate() {
                let mark = if v == best[c] { "*" } else { "" };
                line.push(format!("{v:.6}{mark}"));
            }
            if let Some(r) = row.ratio_to_seen {
                line.push(format!("(x{r:.2} vs seen)"));
            }
            grid.push(line);
        }
        let cols = grid.iter().map(|l| l.len()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..cols)
            .map(|c| grid.iter().filter_map(|l| l.get(c)).map(|s| s.len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &grid {
            for (c, cell) in line.iter().enumerate() {
                out.push_str(&format!("{cell:<width$}  ", width = widths[c]));
            }
            while out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        }
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("serialize table: {e}")))?;
        std::fs::write(path, text).map_err(Error::io(path))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Invalid(format!("{}: bad table: {e}", path.display())))
    }
}

// ── Models under evaluation ─────────────────────────────────────────────

/// Anything that predicts a wet signal from a clean one for a known
/// (amp, content) pair. Implementations wrap trained generators with
/// their conditioning lookup; tests wrap oracles.
pub trait WetModel<S> {
    fn name(&self) -> &str;
    /// Predicted wet signal, same length as `clean`.
    fn render(&self, clean: &[S], amp: usize, content: usize) -> Result<Vec<S>>;
    /// Leading samples to exclude from scoring (causal warmup).
    fn warmup(&self) -> usize {
        0
    }
}

/// The dedicated-model baseline: one independent generator per amp.
pub struct OneToOne<'a, S: Scalar> {
    pub label: String,
    pub models: &'a BTreeMap<usize, Generator<S>>,
}

impl<S: Scalar> WetModel<S> for OneToOne<'_, S> {
    fn name(&self) -> &str {
        &self.label
    }

    fn render(&self, clean: &[S], amp: usize, _content: usize) -> Result<Vec<S>> {
        let gen = self
            .models
            .get(&amp)
            .ok_or_else(|| Error::Invalid(format!("{}: no model for amp {amp}", self.label)))?;
        gen.forward(clean, PadMode::Internal, Condition::None)
    }

    fn warmup(&self) -> usize {
        self.models.values().map(|g| g.receptive_field() - 1).max().unwrap_or(0)
    }
}

/// How a shared generator is conditioned per (amp, content) at eval
/// time. Paired vs unpaired reference policy is decided by whoever
/// fills the embedding map.
pub enum EvalCond<'a, S> {
    ToneRow(&'a BTreeMap<usize, usize>),
    Embedding(&'a BTreeMap<(usize, usize), Vec<S>>),
}

/// A single multi-tone generator plus its conditioning lookup.
pub struct Conditioned<'a, S: Scalar> {
    pub label: String,
    pub gen: &'a Generator<S>,
    pub cond: EvalCond<'a, S>,
}

impl<S: Scalar> WetModel<S> for Conditioned<'_, S> {
    fn name(&self) -> &str {
        &self.label
    }

    fn render(&self, clean: &[S], amp: usize, content: usize) -> Result<Vec<S>> {
        let cond = match &self.cond {
            EvalCond::ToneRow(rows) => Condition::ToneIndex(*rows.get(&amp).ok_or_else(
                || Error::Invalid(format!("{}: no tone row for amp {amp}", self.label)),
            )?),
            EvalCond::Embedding(table) => {
                Condition::Embedding(table.get(&(amp, content)).ok_or_else(|| {
                    Error::Invalid(format!(
                        "{}: no embedding for amp {amp} content {content}",
                        self.label
                    ))
                })?)
            }
        };
        self.gen.forward(clean, PadMode::Internal, cond)
    }

    fn warmup(&self) -> usize {
        self.gen.receptive_field() - 1
    }
}

// ── Loss tables ─────────────────────────────────────────────────────────

/// Test-split clips and the amp rows to score.
pub struct EvalData<S> {
    pub clean: BTreeMap<usize, Vec<S>>,
    pub wet: BTreeMap<(usize, usize), Vec<S>>,
    /// Rows: (amp index into `wet` keys, amp id, gain class).
    pub amps: Vec<(usize, String, GainClass)>,
    /// Test-split contents; identical for every cell.
    pub contents: Vec<usize>,
}

/// Score every model on every amp row: cell = mean complex-STFT loss
/// over the test contents. All cells share one scoring window (the
/// largest warmup of any model is skipped everywhere).
pub fn eval_table<S: Scalar>(
    models: &[&dyn WetModel<S>],
    data: &EvalData<S>,
    stft_cfg: &StftConfig,
    kind: SpectralLossKind,
    extra_meta: BTreeMap<String, String>,
) -> Result<ResultTable> {
    if models.is_empty() {
        return Err(Error::Invalid("no models to evaluate".into()));
    }
    if data.amps.is_empty() || data.contents.is_empty() {
        return Err(Error::Invalid("evaluation needs amps and test contents".into()));
    }
    let skip = models.iter().map(|m| m.warmup()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(data.amps.len());
    for (amp, amp_id, class) in &data.amps {
        let mut cells = Vec::with_capacity(models.len());
        for model in models {
            let mut acc = 0.0f64;
            for &content in &data.contents {
                let clean = data.clean.get(&content).ok_or_else(|| {
                    Error::Invalid(format!("missing clean content {content}"))
                })?;
                let wet = data.wet.get(&(*amp, content)).ok_or_else(|| {
                    Error::Invalid(format!("missing wet clip ({amp}, {content})"))
                })?;
                if wet.len() != clean.len() {
                    return Err(Error::Invalid(format!(
                        "clean/wet length mismatch for ({amp}, {content})"
                    )));
                }
                if clean.len() <= skip {
                    return Err(Error::Invalid(format!(
                        "content {content} is shorter than the {skip}-sample warmup"
                    )));
                }
                let yhat = model.render(clean, *amp, content)?;
                if yhat.len() != clean.len() {
                    return Err(Error::Invalid(format!(
                        "{}: rendered {} samples for {} input samples",
                        model.name(),
                        yhat.len(),
                        clean.len()
                    )));
                }
                let loss = complex_stft_loss(&yhat[skip..], &wet[skip..], stft_cfg, kind)?;
                acc += loss.to_f();
            }
            cells.push(acc / data.contents.len() as f64);
        }
        rows.push(TableRow {
            amp_id: amp_id.clone(),
            gain_class: *class,
            cells,
            ratio_to_seen: None,
        });
    }
    let mut meta = extra_meta;
    meta.insert("aggregation".into(), "mean over test contents".into());
    meta.insert("warmup_skip".into(), skip.to_string());
    meta.insert("stft_window".into(), stft_cfg.window_len.to_string());
    meta.insert("stft_hop".into(), stft_cfg.hop.to_string());
    let columns = models.iter().map(|m| m.name().to_string()).collect();
    ResultTable::new(columns, rows, meta)
}

// ── Unseen-tone table ───────────────────────────────────────────────────

pub const STRATEGY_COLUMNS: [&str; 3] = ["direct", "nearest", "mean"];

/// Unseen-amp clips: same layout as [`EvalData`], rows are the unseen
/// amps, plus the rate the wet references were rendered at.
pub struct ZeroShotData<S> {
    pub clean: BTreeMap<usize, Vec<S>>,
    pub wet: BTreeMap<(usize, usize), Vec<S>>,
    pub amps: Vec<(usize, String, GainClass)>,
    pub contents: Vec<usize>,
    pub render_rate: u32,
}

/// Score an embedding-conditioned generator on unseen amps under the
/// three condition-selection strategies. The reference for a target is
/// the next test content of the same amp (cyclic), so the model never
/// sees the target clip itself. Per row, the direct-strategy loss is
/// also reported relative to `seen_class_mean` for its gain class.
pub fn zero_shot_table<S: Scalar>(
    gen: &Generator<S>,
    encoder: &ToneEncoder<S>,
    index: &RetrievalIndex<S>,
    data: &ZeroShotData<S>,
    stft_cfg: &StftConfig,
    kind: SpectralLossKind,
    seen_class_mean: &BTreeMap<GainClass, f64>,
    extra_meta: BTreeMap<String, String>,
) -> Result<ResultTable> {
    if data.amps.is_empty() || data.contents.is_empty() {
        return Err(Error::Invalid("zero-shot table needs amps and test contents".into()));
    }
    if data.contents.len() < 2 {
        log::warn!("single test content: zero-shot references fall back to the target clip");
    }
    let skip = gen.receptive_field() - 1;
    let mut rows = Vec::with_capacity(data.amps.len());
    for (amp, amp_id, class) in &data.amps {
        let mut cells = vec![0.0f64; STRATEGY_COLUMNS.len()];
        for (pos, &content) in data.contents.iter().enumerate() {
            let clean = data
                .clean
                .get(&content)
                .ok_or_else(|| Error::Invalid(format!("missing clean content {content}")))?;
            let wet = data.wet.get(&(*amp, content)).ok_or_else(|| {
                Error::Invalid(format!("missing wet clip ({amp}, {content})"))
            })?;
            let ref_content = data.contents[(pos + 1) % data.contents.len()];
            let reference = data.wet.get(&(*amp, ref_content)).ok_or_else(|| {
                Error::Invalid(format!("missing reference clip ({amp}, {ref_content})"))
            })?;
            let direct =
                encoder.encode(&resample(reference, data.render_rate, ENCODER_RATE)?)?;
            let nearest = select_nearest(&direct, index)?.embedding;
            let mean = select_mean(&direct, index)?.embedding;
            for (cell, phi) in cells.iter_mut().zip([&direct, &nearest, &mean]) {
                let yhat = gen.forward(clean, PadMode::Internal, Condition::Embedding(phi))?;
                let loss = complex_stft_loss(&yhat[skip..], &wet[skip..], stft_cfg, kind)?;
                *cell += loss.to_f() / data.contents.len() as f64;
            }
        }
        let baseline = seen_class_mean.get(class).copied().ok_or_else(|| {
            Error::Invalid(format!("no seen-class baseline for {class:?} (amp {amp_id})"))
        })?;
        if baseline <= 0.0 {
            return Err(Error::Numeric(format!(
                "seen-class baseline for {class:?} is {baseline}, ratio undefined"
            )));
        }
        rows.push(TableRow {
            amp_id: amp_id.clone(),
            gain_class: *class,
            ratio_to_seen: Some(cells[0] / baseline),
            cells,
        });
    }
    let mut meta = extra_meta;
    meta.insert("aggregation".into(), "mean over test contents".into());
    meta.insert("warmup_skip".into(), skip.to_string());
    meta.insert("reference_policy".into(), "next test content, cyclic".into());
    let columns = STRATEGY_COLUMNS.iter().map(|s| s.to_string()).collect();
    ResultTable::new(columns, rows, meta)
}

// ── Embedding-space metrics ─────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMetrics {
    /// Mean silhouette under cosine distance (1 - cosine similarity).
    pub silhouette: f64,
    /// Fraction of points whose nearest re-normalized tone centroid is
    /// their own tone (ties to the lowest tone ordinal).
    pub purity: f64,
    /// Mean intra-tone cosine minus mean inter-tone cosine.
    pub intra_inter_gap: f64,
}

/// Cluster-quality metrics over labeled embeddings. Requires at least
/// two tones with at least two points each so every term is defined.
pub fn embedding_metrics<S: Scalar>(
    embeddings: &[Vec<S>],
    labels: &[usize],
    num_tones: usize,
) -> Result<EmbeddingMetrics> {
    if embeddings.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if num_tones < 2 {
        return Err(Error::Invalid("cluster metrics need at least two tones".into()));
    }
    let mut counts = vec![0usize; num_tones];
    for &l in labels {
        if l >= num_tones {
            return Err(Error::Invalid(format!("label {l} out of range for {num_tones} tones")));
        }
        counts[l] += 1;
    }
    if let Some(t) = counts.iter().position(|&c| c < 2) {
        return Err(Error::Invalid(format!(
            "tone {t} has {} points, metrics need at least 2 per tone",
            counts[t]
        )));
    }

    let n = embeddings.len();
    // Pairwise cosine in f64; n is a few hundred at desk scale.
    let mut cos = vec![0.0f64; n * n];
    for i in 0..n {
        cos[i * n + i] = 1.0;
        for j in i + 1..n {
            let c = cosine_sim(&embeddings[i], &embeddings[j])?.to_f();
            cos[i * n + j] = c;
            cos[j * n + i] = c;
        }
    }

    // Silhouette with distance 1 - cosine.
    let mut sil_sum = 0.0;
    for i in 0..n {
        let mut intra = 0.0;
        let mut inter = vec![0.0f64; num_tones];
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = 1.0 - cos[i * n + j];
            if labels[j] == labels[i] {
                intra += d;
            } else {
                inter[labels[j]] += d;
            }
        }
        let a = intra / (counts[labels[i]] - 1) as f64;
        let b = (0..num_tones)
            .filter(|&t| t != labels[i])
            .map(|t| inter[t] / counts[t] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        sil_sum += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    let silhouette = sil_sum / n as f64;

    // Purity via nearest re-normalized centroid.
    let dim = embeddings[0].len();
    let mut centroids = vec![vec![0.0f64; dim]; num_tones];
    for (e, &l) in embeddings.iter().zip(labels) {
        if e.len() != dim {
            return Err(Error::Invalid("ragged embedding widths".into()));
        }
        for (c, v) in centroids[l].iter_mut().zip(e) {
            *c += v.to_f() / counts[l] as f64;
        }
    }
    for (t, c) in centroids.iter_mut().enumerate() {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Numeric(format!("tone {t} centroid collapsed to zero")));
        }
        for v in c.iter_mut() {
            *v /= norm;
        }
    }
    let mut correct = 0usize;
    for (e, &l) in embeddings.iter().zip(labels) {
        let ef: Vec<f64> = e.iter().map(|v| v.to_f()).collect();
        let mut best_t = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (t, c) in centroids.iter().enumerate() {
            let sim = cosine_sim(&ef, c)?;
            if sim > best {
                best = sim;
                best_t = t;
            }
        }
        if best_t == l {
            correct += 1;
        }
    }
    let purity = correct as f64 / n as f64;

    // Mean intra-tone vs inter-tone cosine over distinct pairs.
    let (mut intra_sum, mut intra_n) = (0.0f64, 0usize);
    let (mut inter_sum, mut inter_n) = (0.0f64, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] {
                intra_sum += cos[i * n + j];
                intra_n += 1;
            } else {
                inter_sum += cos[i * n + j];
                inter_n += 1;
            }
        }
    }
    let intra_inter_gap = intra_sum / intra_n as f64 - inter_sum / inter_n as f64;

    Ok(EmbeddingMetrics { silhouette, purity, intra_inter_gap })
}

// ── Spectrogram export ──────────────────────────────────────────────────

/// Shapes and file list of one spectrogram export.
#[derive(Clone, Debug)]
pub struct SpectrogramExport {
    pub n_frames: usize,
    pub n_bins: usize,
    pub files: Vec<PathBuf>,
}

fn write_grid_csv(path: &Path, grid: &[f64], n_frames: usize, n_bins: usize) -> Result<()> {
    // One line per frequency bin (low first), one column per frame;
    // `{}` on f64 prints the shortest exactly-round-tripping decimal.
    let mut out = String::new();
    for bin in 0..n_bins {
        for frame in 0..n_frames {
            if frame > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", grid[frame * n_bins + bin]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(Error::io(path))
}

fn write_grid_png(path: &Path, grid: &[f64], n_frames: usize, n_bins: usize) -> Result<()> {
    // Log-compress and normalize to 0..255; high frequencies at the top.
    let logs: Vec<f64> = grid.iter().map(|&v| (v + 1e-10).ln()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = image::GrayImage::new(n_frames as u32, n_bins as u32);
    for frame in 0..n_frames {
        for bin in 0..n_bins {
            let v = (logs[frame * n_bins + bin] - lo) / span;
            let y = (n_bins - 1 - bin) as u32;
            img.put_pixel(frame as u32, y, image::Luma([(v * 255.0).round() as u8]));
        }
    }
    img.save(path).map_err(|e| Error::Invalid(format!("{}: write png: {e}", path.display())))
}

/// Export magnitude spectrograms of the clean input, wet target, and
/// generated result, plus an absolute-error grid and a per-band mean
/// error profile (which makes high-frequency error visible at a
/// glance). Each grid is written as a full-precision CSV and a
/// log-scaled PNG.
pub fn export_spectrograms<S: Scalar>(
    clean: &[S],
    target: &[S],
    generated: &[S],
    stft_cfg: &StftConfig,
    sample_rate: u32,
    dir: &Path,
) -> Result<SpectrogramExport> {
    if clean.len() != target.len() || target.len() != generated.len() {
        return Err(Error::Invalid(format!(
            "spectrogram export needs equal lengths, got {}/{}/{}",
            clean.len(),
            target.len(),
            generated.len()
        )));
    }
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mags = |x: &[S]| -> Result<Vec<f64>> {
        Ok(stft(x, stft_cfg)?.magnitudes().iter().map(|v| v.to_f()).collect())
    };
    let m_clean = mags(clean)?;
    let m_target = mags(target)?;
    let m_generated = mags(generated)?;
    let spec = stft(clean, stft_cfg)?;
    let (n_frames, n_bins) = (spec.n_frames, spec.n_bins);
    let m_error: Vec<f64> =
        m_generated.iter().zip(&m_target).map(|(g, t)| (g - t).abs()).collect();

    let mut files = Vec::new();
    for (stem, grid) in [
        ("clean", &m_clean),
        ("target", &m_target),
        ("generated", &m_generated),
        ("error", &m_error),
    ] {
        let csv = dir.join(format!("{stem}.csv"));
        write_grid_csv(&csv, grid, n_frames, n_bins)?;
        let png = dir.join(format!("{stem}.png"));
        write_grid_png(&png, grid, n_frames, n_bins)?;
        files.push(csv);
        files.push(png);
    }

    // Per-band mean absolute magnitude error: `center_hz,error`.
    let band_path = dir.join("band_error.csv");
    let mut band = String::from("hz,mean_abs_error\n");
    for bin in 0..n_bins {
        let mean: f64 =
            (0..n_frames).map(|f| m_error[f * n_bins + bin]).sum::<f64>() / n_frames as f64;
        let hz = bin as f64 * sample_rate as f64 / stft_cfg.window_len as f64;
        band.push_str(&format!("{hz},{mean}\n"));
    }
    std::fs::write(&band_path, &band).map_err(Error::io(&band_path))?;
    files.push(band_path);

    Ok(SpectrogramExport { n_frames, n_bins, files })
}

// ── 2-D projection (presentation only) ──────────────────────────────────

/// Project embeddings onto their top two principal components via
/// power iteration with deflation. Presentation-only: no metric reads
/// this output. Deterministic (fixed start vectors, fixed iteration
/// count).
pub fn pca_2d<S: Scalar>(embeddings: &[Vec<S>]) -> Result<Vec<[f64; 2]>> {
    if embeddings.len() < 2 {
        return Err(Error::Invalid("projection needs at least two points".into()));
    }
    let dim = embeddings[0].len();
    if dim < 2 || embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::Invalid("projection needs equal widths of at least 2".into()));
    }
    let n = embeddings.len();
    let mut x: Vec<Vec<f64>> =
        embeddings.iter().map(|e| e.iter().map(|v| v.to_f()).collect()).collect();
    let mut mean = vec![0.0f64; dim];
    for row in &x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    for row in x.iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    // Power iteration on the (implicit) scatter matrix X^T X.
    let matvec = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0f64; dim];
        for row in &x {
            let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, r) in out.iter_mut().zip(row) {
                *o += dot * r;
            }
        }
        out
    };
    let normalize = |v: &mut Vec<f64>| -> f64 {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            for a in v.iter_mut() {
                *a /= norm;
            }
        }
        norm
    };
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(2);
    for k in 0..2 {
        // Deterministic start that is unlikely to be orthogonal to the
        // leading eigenvector: decaying coordinates, phase-shifted per
        // component.
        let mut v: Vec<f64> = (0..dim).map(|i| 1.0 / (i + 1 + k) as f64).collect();
        normalize(&mut v);
        for _ in 0..300 {
            let mut w = matvec(&v);
            // Deflate against already-found axes.
            for axis in &axes {
                let dot: f64 = w.iter().zip(axis).map(|(a, b)| a * b).sum();
                for (wi, ai) in w.iter_mut().zip(axis) {
                    *wi -= dot * ai;
                }
            }
            if normalize(&mut w) == 0.0 {
                // Degenerate direction (e.g. all points identical):
                // keep the current vector; projections are zero anyway.
                break;
            }
            v = w;
        }
        axes.push(v);
    }

    Ok(x.iter()
        .map(|row| {
            [
                row.iter().zip(&axes[0]).map(|(a, b)| a * b).sum(),
                row.iter().zip(&axes[1]).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect())
}
