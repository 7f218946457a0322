//! Condition selection for unseen tones.
//!
//! A reference clip of an unheard tone can condition the generator three
//! ways: use its embedding directly, retrieve the single closest seen
//! embedding from a precomputed candidate set, or retrieve the closest
//! per-tone mean. The candidate set is an exhaustive-scan index (a few
//! thousand unit vectors need no ANN structure) serialized as a versioned
//! binary container whose JSON header doubles as a readable manifest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::audio::{resample, ENCODER_RATE};
use crate::container::Container;
use crate::encoder::ToneEncoder;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Entries sampled per seen tone by default; with a 9-tone bank the
/// candidate set holds 3,600 embeddings.
pub const DEFAULT_PER_TONE: usize = 400;

/// Entry embeddings may drift this far from unit norm before the index
/// refuses them (encoders emit unit vectors up to rounding).
const NORM_TOL: f64 = 1e-4;

const INDEX_KIND: &str = "retrieval-index";

// ── Index ───────────────────────────────────────────────────────────────

/// One candidate: the embedding of a specific (tone, content) clip.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry<S> {
    pub embedding: Vec<S>,
    /// Ordinal into `tone_ids`.
    pub tone: usize,
    pub content: usize,
}

/// Immutable candidate set for retrieval: every entry unit-norm, plus
/// one re-normalized mean embedding per tone so a query can be matched
/// against tones rather than individual clips.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex<S> {
    pub tone_ids: Vec<String>,
    pub entries: Vec<IndexEntry<S>>,
    pub means: Vec<Vec<S>>,
}

impl<S: Scalar> RetrievalIndex<S> {
    /// Assemble an index from already-encoded entries, validating unit
    /// norms and computing the per-tone means. Every tone in `tone_ids`
    /// must own at least one entry so the means cover the tone set.
    pub fn from_entries(tone_ids: Vec<String>, entries: Vec<IndexEntry<S>>) -> Result<Self> {
        if tone_ids.is_empty() || entries.is_empty() {
            return Err(Error::Invalid("retrieval index needs tones and entries".into()));
        }
        let dim = entries[0].embedding.len();
        for (i, e) in entries.iter().enumerate() {
            if e.embedding.len() != dim {
                return Err(Error::Invalid(format!(
                    "entry {i} has dim {}, entry 0 has {dim}",
                    e.embedding.len()
                )));
            }
            if e.tone >= tone_ids.len() {
                return Err(Error::Invalid(format!(
                    "entry {i} names tone {} but only {} tones exist",
                    e.tone,
                    tone_ids.len()
                )));
            }
            let norm = e.embedding.iter().map(|v| v.to_f() * v.to_f()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::Invalid(format!(
                    "entry {i} has norm {norm}, embeddings must be unit vectors"
                )));
            }
        }
        let mut means = Vec::with_capacity(tone_ids.len());
        for tone in 0..tone_ids.len() {
            let members: Vec<&IndexEntry<S>> =
                entries.iter().filter(|e| e.tone == tone).collect();
            if members.is_empty() {
                return Err(Error::Invalid(format!(
                    "tone {} ({}) has no entries, means must cover every tone",
                    tone, tone_ids[tone]
                )));
            }
            let mut acc = vec![0.0f64; dim];
            for e in &members {
                for (a, v) in acc.iter_mut().zip(&e.embedding) {
                    *a += v.to_f();
                }
            }
            let inv = 1.0 / members.len() as f64;
            for a in acc.iter_mut() {
                *a *= inv;
            }
            let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric(format!(
                    "tone {} mean embedding collapsed to zero",
                    tone_ids[tone]
                )));
            }
            means.push(acc.iter().map(|&v| S::from_f(v / norm)).collect());
        }
        Ok(Self { tone_ids, entries, means })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.embedding.len())
    }

    /// Serialize to a versioned binary container; embeddings and means
    /// are stored in the native scalar width, so reload is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dim = self.dim();
        let config = serde_json::json!({ "dtype": S::DTYPE, "dim": dim });
        let mut c = Container::new(INDEX_KIND, config, 0);
        c.meta = serde_json::json!({
            "tone_ids": self.tone_ids,
            "labels": self.entries.iter().map(|e| [e.tone, e.content]).collect::<Vec<_>>(),
        });
        let flat_entries: Vec<f64> =
            self.entries.iter().flat_map(|e| e.embedding.iter().map(|v| v.to_f())).collect();
        let flat_means: Vec<f64> =
            self.means.iter().flat_map(|m| m.iter().map(|v| v.to_f())).collect();
        match S::DTYPE {
            "f32" => {
                c.push_f32("embeddings", flat_entries.iter().map(|&v| v as f32).collect())?;
                c.push_f32("means", flat_means.iter().map(|&v| v as f32).collect())?;
            }
            _ => {
                c.push_f64("embeddings", flat_entries)?;
                c.push_f64("means", flat_means)?;
            }
        }
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        if c.kind != INDEX_KIND {
            return Err(Error::Invalid(format!(
                "{}: kind {} is not a retrieval index",
                path.display(),
                c.kind
            )));
        }
        let dtype = c.config.get("dtype").and_then(|v| v.as_str()).unwrap_or("?");
        if dtype != S::DTYPE {
            return Err(Error::Invalid(format!(
                "index stores {dtype} embeddings, caller asked for {}",
                S::DTYPE
            )));
        }
        let dim = c
            .config
            .get("dim")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Invalid("index config missing dim".into()))? as usize;
        let tone_ids: Vec<String> =
            serde_json::from_value(c.meta.get("tone_ids").cloned().unwrap_or_default())
                .map_err(|e| Error::Invalid(format!("bad index tone_ids: {e}")))?;
        let labels: Vec<[usize; 2]> =
            serde_json::from_value(c.meta.get("labels").cloned().unwrap_or_default())
                .map_err(|e| Error::Invalid(format!("bad index labels: {e}")))?;

        let unflatten = |flat: Vec<S>, rows: usize, what: &str| -> Result<Vec<Vec<S>>> {
            if dim == 0 || flat.len() != rows * dim {
                return Err(Error::Invalid(format!(
                    "index {what} holds {} values, expected {rows} x {dim}",
                    flat.len()
                )));
            }
            Ok(flat.chunks_exact(dim).map(|c| c.to_vec()).collect())
        };
        let (flat_entries, flat_means): (Vec<S>, Vec<S>) = match S::DTYPE {
            "f32" => (
                c.get_f32("embeddings")?.iter().map(|&v| S::from_f(v as f64)).collect(),
                c.get_f32("means")?.iter().map(|&v| S::from_f(v as f64)).collect(),
            ),
            _ => (
                c.get_f64("embeddings")?.iter().map(|&v| S::from_f(v)).collect(),
                c.get_f64("means")?.iter().map(|&v| S::from_f(v)).collect(),
            ),
        };
        let embeddings = unflatten(flat_entries, labels.len(), "embeddings")?;
        let means = unflatten(flat_means, tone_ids.len(), "means")?;
        let entries = labels
            .into_iter()
            .zip(embeddings)
            .map(|([tone, content], embedding)| IndexEntry { embedding, tone, content })
            .collect();
        Ok(Self { tone_ids, entries, means })
    }
}

/// Build the candidate set by sampling `per_tone` clips per tone and
/// encoding them. Pools at least `per_tone` strong are sampled without
/// replacement; smaller pools are sampled with replacement and logged.
/// Clips must already be at the encoder's sample rate.
pub fn build_index<S: Scalar>(
    encoder: &ToneEncoder<S>,
    clips_by_tone: &[(String, Vec<(usize, Vec<S>)>)],
    per_tone: usize,
    seed: u64,
) -> Result<RetrievalIndex<S>> {
    if per_tone == 0 {
        return Err(Error::Invalid("per_tone must be positive".into()));
    }
    if clips_by_tone.is_empty() {
        return Err(Error::Invalid("no tones given to index".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(per_tone * clips_by_tone.len());
    for (tone, (tone_id, pool)) in clips_by_tone.iter().enumerate() {
        if pool.is_empty() {
            return Err(Error::Invalid(format!("tone {tone_id} has no clips to index")));
        }
        let picks: Vec<usize> = if pool.len() >= per_tone {
            // Partial Fisher-Yates: first `per_tone` of a seeded shuffle.
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            for i in 0..per_tone {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            idx.truncate(per_tone);
            idx
        } else {
            log::warn!(
                "tone {tone_id} has {} clips, sampling with replacement to reach {per_tone}",
                pool.len()
            );
            (0..per_tone).map(|_| rng.gen_range(0..pool.len())).collect()
        };
        for k in picks {
            let (content, clip) = &pool[k];
            entries.push(IndexEntry {
                embedding: encoder.encode(clip)?,
                tone,
                content: *content,
            });
        }
    }
    let tone_ids = clips_by_tone.iter().map(|(id, _)| id.clone()).collect();
    RetrievalIndex::from_entries(tone_ids, entries)
}

// ── Similarity and selection ────────────────────────────────────────────

/// Cosine similarity in f64 accumulation: dot(a, b) / (|a| |b|).
pub fn cosine_sim<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid(format!(
            "cosine needs equal nonempty dims, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f(), y.to_f());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Invalid("cosine of a zero vector is undefined".into()));
    }
    Ok(S::from_f(dot / (na.sqrt() * nb.sqrt())))
}

/// A chosen condition vector with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection<S> {
    pub embedding: Vec<S>,
    /// Ordinal into the index's `tone_ids`.
    pub tone: usize,
    pub similarity: S,
}

/// Direct strategy: embed the reference itself, resampling to the
/// encoder's rate first. No index involved.
pub fn select_direct<S: Scalar>(
    encoder: &ToneEncoder<S>,
    reference: &[S],
    sample_rate: u32,
) -> Result<Vec<S>> {
    if sample_rate == ENCODER_RATE {
        encoder.encode(reference)
    } else {
        encoder.encode(&resample(reference, sample_rate, ENCODER_RATE)?)
    }
}

fn argmax_cosine<'a, S: Scalar>(
    query: &[S],
    candidates: impl Iterator<Item = (&'a Vec<S>, usize)>,
) -> Result<Selection<S>>
where
    S: 'a,
{
    let mut best: Option<Selection<S>> = None;
    for (embedding, tone) in candidates {
        let sim = cosine_sim(query, embedding)?;
        // Strict > keeps the lowest ordinal on ties.
        if best.as_ref().map_or(true, |b| sim > b.similarity) {
            best = Some(Selection { embedding: embedding.clone(), tone, similarity: sim });
        }
    }
    best.ok_or_else(|| Error::Invalid("empty retrieval index".into()))
}

/// Nearest-embedding strategy: the single index entry most similar to
/// the query; ties go to the lowest entry ordinal.
pub fn select_nearest<S: Scalar>(
    query: &[S],
    index: &RetrievalIndex<S>,
) -> Result<Selection<S>> {
    argmax_cosine(query, index.entries.iter().map(|e| (&e.embedding, e.tone)))
}

/// Mean-embedding strategy: the per-tone mean most similar to the
/// query; one candidate per tone.
pub fn select_mean<S: Scalar>(query: &[S], index: &RetrievalIndex<S>) -> Result<Selection<S>> {
    argmax_cosine(query, index.means.iter().enumerate().map(|(tone, m)| (m, tone)))
}
