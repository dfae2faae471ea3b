//! Deterministic offline backend: answers every prompt with the serialized
//! layout of the most similar support record, optionally jittered for the
//! extra samples, so the whole pipeline runs hermetically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};
use std::sync::LazyLock;

use crate::dsl::{serialize, DialectSpec};
use crate::embed::{HashedBagOfWords, TextEmbedder};
use crate::model::{ConditionKind, Element, Layout};
use crate::prompt::{render_condition, AssembledPrompt};
use crate::retrieval::{distance_embedding, SupportSet};

use super::{Backend, BackendError, GenerationParams};

static ROOM_SIZE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"max length (-?\d+)px, max width (-?\d+)px").unwrap());

/// Offline stand-in for an LLM. The first sample echoes the nearest support
/// record's layout verbatim (same distance function retrieval uses, so a
/// test condition equal to an exemplar condition gets that exemplar back);
/// later samples perturb each geometric value within `jitter_px`. Output is
/// a pure function of (prompt, params.seed, support).
pub struct MockBackend {
    support: SupportSet,
    spec: DialectSpec,
    jitter_px: f64,
    embedder: HashedBagOfWords,
}

impl MockBackend {
    pub fn new(support: SupportSet, spec: DialectSpec) -> Result<Self, BackendError> {
        if support.is_empty() {
            return Err(BackendError::Config("mock backend needs a nonempty support set".to_string()));
        }
        Ok(MockBackend { support, spec, jitter_px: 0.0, embedder: HashedBagOfWords::default_dim() })
    }

    pub fn with_jitter(mut self, jitter_px: f64) -> Self {
        self.jitter_px = jitter_px.max(0.0);
        self
    }

    /// The test condition is the last `Prompt:` line of the plain text.
    fn extract_condition<'a>(&self, prompt: &'a str) -> &'a str {
        match prompt.rfind("Prompt: ") {
            Some(pos) => {
                let rest = &prompt[pos + "Prompt: ".len()..];
                rest.lines().next().unwrap_or(rest)
            }
            None => prompt,
        }
    }

    /// Distance between the rendered test condition and one support record,
    /// mirroring retrieval: squared px-dimension distance for room specs,
    /// cosine distance over hashed bag-of-words otherwise.
    fn condition_distance(&self, rendered_test: &str, record_index: usize) -> f64 {
        let record = &self.support.records()[record_index];
        let test_room = ROOM_SIZE.captures(rendered_test);
        if record.condition.kind == ConditionKind::RoomSpec {
            if let Some(test_caps) = &test_room {
                let rendered_record =
                    match render_condition(&record.condition, &record.layout.canvas) {
                        Ok(r) => r,
                        Err(_) => return f64::INFINITY,
                    };
                if let Some(rec_caps) = ROOM_SIZE.captures(&rendered_record) {
                    let get = |caps: &regex::Captures<'_>, i: usize| {
                        caps.get(i).unwrap().as_str().parse::<f64>().unwrap_or(0.0)
                    };
                    let dl = get(test_caps, 1) - get(&rec_caps, 1);
                    let dw = get(test_caps, 2) - get(&rec_caps, 2);
                    return dl * dl + dw * dw;
                }
            }
        }
        let a = self.embedder.embed(rendered_test).unwrap_or_default();
        let b = self.embedder.embed(&record.condition.text).unwrap_or_default();
        distance_embedding(&a, &b).unwrap_or(f64::INFINITY)
    }

    fn nearest_record(&self, rendered_test: &str) -> usize {
        let mut best = 0usize;
        let mut best_distance = f64::INFINITY;
        for i in 0..self.support.len() {
            let d = self.condition_distance(rendered_test, i);
            if d < best_distance {
                best_distance = d;
                best = i;
            }
        }
        best
    }

    fn jittered(&self, layout: &Layout, rng: &mut ChaCha8Rng) -> Layout {
        let mut out = layout.clone();
        let mut nudge = |v: &mut f64| {
            *v += rng.gen_range(-self.jitter_px..=self.jitter_px);
        };
        for el in &mut out.elements {
            match el {
                Element::Box2D(e) => {
                    nudge(&mut e.left);
                    nudge(&mut e.top);
                    nudge(&mut e.width);
                    nudge(&mut e.height);
                }
                Element::Box3D(e) => {
                    nudge(&mut e.left);
                    nudge(&mut e.top);
                    nudge(&mut e.length);
                    nudge(&mut e.width);
                    nudge(&mut e.height);
                }
                Element::Keypoints(set) => {
                    for i in 0..set.nodes.len() {
                        if set.is_visible(i) {
                            nudge(&mut set.nodes[i].0);
                            nudge(&mut set.nodes[i].1);
                        }
                    }
                }
            }
        }
        out
    }
}

fn prompt_seed(prompt: &str, params_seed: u64, sample_index: u64) -> u64 {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut eight = [0u8; 8];
    eight.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(eight) ^ params_seed ^ sample_index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Backend for MockBackend {
    fn complete(
        &self,
        prompt: &AssembledPrompt,
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        let rendered_test = self.extract_condition(&prompt.plain_text);
        let nearest = &self.support.records()[self.nearest_record(rendered_test)];
        let quantized = nearest.layout.quantize(self.spec.quantize_mode());

        let mut texts = Vec::with_capacity(params.n_samples as usize);
        for sample in 0..params.n_samples as u64 {
            let layout = if sample == 0 || self.jitter_px == 0.0 {
                quantized.clone()
            } else {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(prompt_seed(&prompt.plain_text, params.seed, sample));
                self.jittered(&nearest.layout, &mut rng).quantize(self.spec.quantize_mode())
            };
            let text = serialize(&layout, &self.spec)
                .map_err(|e| BackendError::Config(format!("support layout unserializable: {e}")))?;
            texts.push(text);
        }
        Ok(texts)
    }

    fn name(&self) -> String {
        format!("mock:jitter={}", self.jitter_px)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CanvasSpec, ConditionText, Dialect, Element2D};
    use crate::prompt::{build, PromptConfig};
    use crate::retrieval::{select_with_embedder, SelectionPolicy, SupportRecord};

    fn support() -> SupportSet {
        let make = |id: &str, text: &str, left: f64| {
            let condition = ConditionText::caption(text).unwrap();
            let layout = Layout::new(
                Dialect::Image2D,
                condition.clone(),
                CanvasSpec::default_2d(),
                vec![Element::Box2D(Element2D::new(id, left, 10.0, 12.0, 12.0))],
            )
            .unwrap();
            SupportRecord { id: Some(id.to_string()), condition, layout, embedding: None }
        };
        SupportSet::new(vec![
            make("cat", "two cats on a couch", 4.0),
            make("dog", "a dog running in a park", 20.0),
            make("bus", "a yellow bus on the street", 40.0),
        ])
        .unwrap()
    }

    fn prompt_for(text: &str) -> AssembledPrompt {
        let embedder = HashedBagOfWords::default_dim();
        let mut sup = support();
        sup.ensure_embeddings(&embedder, None).unwrap();
        let condition = ConditionText::caption(text).unwrap();
        let exemplars = select_with_embedder(
            &condition,
            &sup,
            &SelectionPolicy::retrieval(2),
            &embedder,
        )
        .unwrap();
        let cfg = PromptConfig::standard(Dialect::Image2D, CanvasSpec::default_2d());
        build(&condition, &exemplars, &cfg).unwrap()
    }

    #[test]
    fn echoes_matching_exemplar_verbatim() {
        let backend = MockBackend::new(support(), DialectSpec::css(Dialect::Image2D)).unwrap();
        let prompt = prompt_for("two cats on a couch");
        let params = GenerationParams::for_2d("mock");
        let texts = backend.complete(&prompt, &params).unwrap();
        assert_eq!(texts.len(), 5);
        assert_eq!(texts[0], "cat {width: 12px; height: 12px; left: 4px; top: 10px; }");
        // Zero jitter: every sample identical.
        assert!(texts.iter().all(|t| t == &texts[0]));
    }

    #[test]
    fn byte_stable_across_runs() {
        let params = GenerationParams { seed: 11, ..GenerationParams::for_2d("mock") };
        let prompt = prompt_for("a dog running in a park");
        let backend =
            MockBackend::new(support(), DialectSpec::css(Dialect::Image2D)).unwrap().with_jitter(2.0);
        let a = backend.complete(&prompt, &params).unwrap();
        let b = backend.complete(&prompt, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);

        let reseeded = GenerationParams { seed: 12, ..params };
        let c = backend.complete(&prompt, &reseeded).unwrap();
        assert_eq!(a[0], c[0], "first sample is always verbatim");
        assert_ne!(a[1..], c[1..], "jittered samples move with the seed");
    }

    #[test]
    fn jittered_samples_stay_within_bound() {
        let jitter = 2.0;
        let backend = MockBackend::new(support(), DialectSpec::css(Dialect::Image2D))
            .unwrap()
            .with_jitter(jitter);
        let prompt = prompt_for("a yellow bus on the street");
        let params = GenerationParams::for_2d("mock");
        let texts = backend.complete(&prompt, &params).unwrap();

        let source = Element2D::new("bus", 40.0, 10.0, 12.0, 12.0);
        let spec = DialectSpec::css(Dialect::Image2D);
        for text in &texts {
            let outcome = crate::dsl::parse(text, &spec, &CanvasSpec::default_2d());
            assert!(!outcome.failed);
            let parsed = outcome.layout.elements[0].as_box2d().unwrap();
            assert_eq!(parsed.category, "bus");
            for (got, want) in [
                (parsed.left, source.left),
                (parsed.top, source.top),
                (parsed.width, source.width),
                (parsed.height, source.height),
            ] {
                assert!((got - want).abs() <= jitter, "{got} vs {want} in {text}");
            }
        }
    }

    #[test]
    fn empty_support_rejected() {
        let empty = SupportSet::new(Vec::new()).unwrap();
        assert!(MockBackend::new(empty, DialectSpec::css(Dialect::Image2D)).is_err());
    }
}
