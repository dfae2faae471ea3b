//! Exemplar selection: pick and order the in-context demonstrations for a
//! test condition.
//!
//! Retrieval mode returns the k least-distant support records, ordered
//! most-distant first so the most similar exemplar sits last in the prompt.
//! Room conditions compare by squared dimension differences; caption
//! conditions by cosine distance over text embeddings. Fixed-random mode
//! draws the same seeded sample for every condition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingCache, TextEmbedder};
use crate::error::{Error, Result};
use crate::model::{ConditionKind, ConditionText, Layout};
use crate::records::LayoutRecord;

// ── Support set ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct SupportRecord {
    pub id: Option<String>,
    pub condition: ConditionText,
    pub layout: Layout,
    pub embedding: Option<Vec<f64>>,
}

/// The demonstration pool. Embeddings are optional until a caption-condition
/// retrieval needs them; when present they all share one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    records: Vec<SupportRecord>,
}

impl SupportSet {
    pub fn new(records: Vec<SupportRecord>) -> Result<Self> {
        let mut dim = None;
        for (i, rec) in records.iter().enumerate() {
            if let Some(v) = &rec.embedding {
                match dim {
                    None => dim = Some(v.len()),
                    Some(d) if d != v.len() => {
                        return Err(Error::invalid_argument(format!(
                            "record {i}: embedding dimension {} differs from {d}",
                            v.len()
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(SupportSet { records })
    }

    pub fn from_layout_records(records: Vec<LayoutRecord>) -> Result<Self> {
        let records = records
            .into_iter()
            .map(|r| SupportRecord {
                id: r.id,
                condition: r.layout.condition.clone(),
                layout: r.layout,
                embedding: None,
            })
            .collect();
        SupportSet::new(records)
    }

    /// Load from the layout JSON-lines format.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_layout_records(crate::records::read_layout_records(path)?)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SupportRecord] {
        &self.records
    }

    pub fn get(&self, index: usize) -> Option<&SupportRecord> {
        self.records.get(index)
    }

    /// Fill missing embeddings from each record's condition text, going
    /// through `cache` when a record has an id. Newly computed vectors are
    /// written back into the cache.
    pub fn ensure_embeddings(
        &mut self,
        embedder: &dyn TextEmbedder,
        mut cache: Option<&mut EmbeddingCache>,
    ) -> Result<()> {
        for rec in &mut self.records {
            if rec.embedding.is_some() {
                continue;
            }
            let cached = match (&rec.id, &cache) {
                (Some(id), Some(c)) => c.get(id).map(<[f64]>::to_vec),
                _ => None,
            };
            let vector = match cached {
                Some(v) => v,
                None => {
                    let v = embedder.embed(&rec.condition.text)?;
                    if let (Some(id), Some(c)) = (&rec.id, cache.as_deref_mut()) {
                        c.insert(id.clone(), v.clone())?;
                    }
                    v
                }
            };
            rec.embedding = Some(vector);
        }
        // Re-validate the uniform-dimension invariant.
        let validated = SupportSet::new(std::mem::take(&mut self.records))?;
        self.records = validated.records;
        Ok(())
    }
}

// ── Policy ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Retrieval,
    FixedRandom,
}

/// Exemplar counts default to the task-specific values that work best:
/// 16 for numerical captions, 8 for spatial captions, 8 for bedrooms,
/// 4 for living rooms.
pub const DEFAULT_K_NUMERICAL: usize = 16;
pub const DEFAULT_K_SPATIAL: usize = 8;
pub const DEFAULT_K_BEDROOM: usize = 8;
pub const DEFAULT_K_LIVING_ROOM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub mode: SelectionMode,
    pub k: usize,
    /// Used by fixed_random only.
    pub seed: u64,
}

impl SelectionPolicy {
    pub fn retrieval(k: usize) -> Self {
        SelectionPolicy { mode: SelectionMode::Retrieval, k, seed: 0 }
    }

    pub fn fixed_random(k: usize, seed: u64) -> Self {
        SelectionPolicy { mode: SelectionMode::FixedRandom, k, seed }
    }
}

// ── Exemplars ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    /// Index into the support set this exemplar came from.
    pub support_index: usize,
    pub condition: ConditionText,
    pub layout: Layout,
}

/// Ordered exemplars, ready for prompt assembly: the most similar one LAST.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    pub exemplars: Vec<Exemplar>,
}

impl ExemplarSet {
    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn support_indices(&self) -> Vec<usize> {
        self.exemplars.iter().map(|e| e.support_index).collect()
    }
}

// ── Distances ─────────────────────────────────────────────────────────

/// Squared room-dimension distance: (rl_a − rl_b)² + (rw_a − rw_b)².
pub fn distance_room(a: &ConditionText, b: &ConditionText) -> Result<f64> {
    let (al, aw) = a
        .room_dims()
        .ok_or_else(|| Error::invalid_argument("distance_room requires room_spec conditions"))?;
    let (bl, bw) = b
        .room_dims()
        .ok_or_else(|| Error::invalid_argument("distance_room requires room_spec conditions"))?;
    Ok((al - bl).powi(2) + (aw - bw).powi(2))
}

/// Cosine distance 1 − cos(a, b), in [0, 2].
pub fn distance_embedding(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid_argument(format!(
            "embedding dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid_argument("cosine distance undefined for zero vectors"));
    }
    Ok(1.0 - dot / (na * nb))
}

/// Distance from a test condition to one support record, dispatching on the
/// condition kind: rooms by dimensions, captions by embedding.
pub fn distance_to_record(
    condition: &ConditionText,
    query_embedding: Option<&[f64]>,
    record: &SupportRecord,
) -> Result<f64> {
    match condition.kind {
        ConditionKind::RoomSpec => distance_room(condition, &record.condition),
        ConditionKind::Caption => {
            let q = query_embedding.ok_or_else(|| {
                Error::invalid_argument("caption retrieval requires a query embedding")
            })?;
            let r = record.embedding.as_deref().ok_or_else(|| {
                Error::invalid_argument("caption retrieval requires support embeddings")
            })?;
            distance_embedding(q, r)
        }
    }
}

// ── Selection ─────────────────────────────────────────────────────────

/// Select exemplars for a condition.
///
/// Retrieval mode: the k least-distant records, emitted most-distant first
/// so the most similar example is last; equal distances order by lower
/// support index. Fixed-random mode: a seeded sample, independent of the
/// condition. `query_embedding` is required only for caption retrieval.
pub fn select(
    condition: &ConditionText,
    support: &SupportSet,
    policy: &SelectionPolicy,
    query_embedding: Option<&[f64]>,
) -> Result<ExemplarSet> {
    if support.is_empty() {
        return Err(Error::invalid_argument("support set is empty"));
    }
    if policy.k == 0 || policy.k > support.len() {
        return Err(Error::invalid_argument(format!(
            "k = {} out of range for support set of {}",
            policy.k,
            support.len()
        )));
    }

    let indices: Vec<usize> = match policy.mode {
        SelectionMode::FixedRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
            rand::seq::index::sample(&mut rng, support.len(), policy.k).into_vec()
        }
        SelectionMode::Retrieval => {
            let mut scored: Vec<(f64, usize)> = Vec::with_capacity(support.len());
            for (i, rec) in support.records().iter().enumerate() {
                scored.push((distance_to_record(condition, query_embedding, rec)?, i));
            }
            // Nearest k (ties to the lower index), then flipped so the most
            // similar record lands last.
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            scored.truncate(policy.k);
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().map(|(_, i)| i).collect()
        }
    };

    let exemplars = indices
        .into_iter()
        .map(|i| {
            let rec = &support.records()[i];
            Exemplar { support_index: i, condition: rec.condition.clone(), layout: rec.layout.clone() }
        })
        .collect();
    Ok(ExemplarSet { exemplars })
}

/// [`select`] with the query embedding computed on demand for caption
/// conditions in retrieval mode.
pub fn select_with_embedder(
    condition: &ConditionText,
    support: &SupportSet,
    policy: &SelectionPolicy,
    embedder: &dyn TextEmbedder,
) -> Result<ExemplarSet> {
    let query = if policy.mode == SelectionMode::Retrieval && condition.kind == ConditionKind::Caption
    {
        Some(embedder.embed(&condition.text)?)
    } else {
        None
    };
    select(condition, support, policy, query.as_deref())
}
