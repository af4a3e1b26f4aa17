use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, CompletionBackend, CompletionResult};
use crate::kg::KnowledgeGraph;
use crate::prompt::{PromptCase, TaskKind, AFFIRMATIVE_RESPONSE, NEGATIVE_RESPONSE};
use crate::scorer::contains_label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum WrongAnswerPolicy {
    /// Answer with this string.
    Distractor(String),
    /// Answer with another entity (entity prediction) or relation (relation
    /// prediction) drawn from the graph.
    RandomOther,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Probability of answering wrong, in [0, 1].
    pub error_rate: f64,
    pub seed: u64,
    pub policy: WrongAnswerPolicy,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            error_rate: 0.0,
            seed: 0,
            policy: WrongAnswerPolicy::RandomOther,
        }
    }
}

/// Answers from ground truth, wrong with probability `error_rate`. The
/// decision for a case depends only on the seed and the case content.
pub struct OracleBackend<'kg> {
    kg: &'kg KnowledgeGraph,
    cfg: OracleConfig,
}

const OTHER_TRIES: usize = 32;

impl<'kg> OracleBackend<'kg> {
    pub fn new(kg: &'kg KnowledgeGraph, cfg: OracleConfig) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&cfg.error_rate) {
            return Err(BackendError::Config(format!(
                "oracle error rate {} outside [0, 1]",
                cfg.error_rate
            )));
        }
        Ok(OracleBackend { kg, cfg })
    }

    fn case_rng(&self, case: &PromptCase) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.cfg.seed.to_le_bytes());
        for part in [
            case.task.name(),
            &case.prompt,
            &case.expected_response,
            case.source.head.as_str(),
            case.source.relation.as_str(),
            case.source.tail.as_str(),
        ] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        h.update([case.source.label.map_or(2, u8::from)]);
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    /// The response for `case`: ideal, or a deterministic wrong answer.
    pub fn respond(&self, case: &PromptCase) -> String {
        let mut rng = self.case_rng(case);
        let draw: f64 = rng.gen();
        if draw >= self.cfg.error_rate {
            return case.expected_response.clone();
        }
        self.wrong_answer(case, &mut rng)
    }

    fn wrong_answer(&self, case: &PromptCase, rng: &mut ChaCha8Rng) -> String {
        if case.task == TaskKind::TripleClassification {
            // the opposite polarity is never judged correct under either match mode
            return if case.source.label == Some(false) {
                AFFIRMATIVE_RESPONSE
            } else {
                NEGATIVE_RESPONSE
            }
            .to_string();
        }
        let gold = case
            .label_text
            .as_deref()
            .unwrap_or(&case.expected_response);
        let acceptable = |s: &str| !contains_label(gold, s);
        let candidate = match &self.cfg.policy {
            WrongAnswerPolicy::Distractor(text) => Some(text.clone()),
            WrongAnswerPolicy::RandomOther => self.random_other(case, rng, &acceptable),
        };
        candidate.filter(|c| acceptable(c)).unwrap_or_default()
    }

    fn random_other(
        &self,
        case: &PromptCase,
        rng: &mut ChaCha8Rng,
        acceptable: &dyn Fn(&str) -> bool,
    ) -> Option<String> {
        for _ in 0..OTHER_TRIES {
            let candidate = if case.task == TaskKind::RelationPrediction {
                let rels = self.kg.relations();
                if rels.is_empty() {
                    return None;
                }
                rels[rng.gen_range(0..rels.len())].text.clone()
            } else {
                let ents = self.kg.entities();
                if ents.is_empty() {
                    return None;
                }
                ents[rng.gen_range(0..ents.len())].text.clone()
            };
            if acceptable(&candidate) {
                return Some(candidate);
            }
        }
        None
    }
}

impl CompletionBackend for OracleBackend<'_> {
    fn complete(&self, case: &PromptCase) -> Result<CompletionResult, BackendError> {
        Ok(CompletionResult {
            text: self.respond(case),
            latency_ms: 0,
            attempts: 1,
            usage: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{DatasetKind, Entity, NeighborSamplingConfig, Relation, Triple};
    use crate::prompt::{self, Direction};
    use crate::scorer::{judge, ScorerOptions};

    fn kg() -> KnowledgeGraph {
        let ents = ["josip", "male", "female", "zagreb"]
            .iter()
            .map(|e| Entity {
                id: (*e).into(),
                text: e.to_string(),
            })
            .collect();
        let rels = vec![
            Relation {
                id: "gender".into(),
                text: "has gender".into(),
            },
            Relation {
                id: "born".into(),
                text: "was born in".into(),
            },
        ];
        KnowledgeGraph::from_parts(
            DatasetKind::Yago3_10,
            ents,
            rels,
            vec![
                Triple::new("josip", "gender", "male"),
                Triple::new("josip", "born", "zagreb"),
            ],
            vec![],
            vec![],
        )
        .unwrap()
    }

    fn tail_case(kg: &KnowledgeGraph) -> PromptCase {
        prompt::render_entity_prediction(
            kg,
            &Triple::new("josip", "gender", "male"),
            Direction::Tail,
            false,
            &NeighborSamplingConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_error_rate_is_ideal() {
        let kg = kg();
        let oracle = OracleBackend::new(&kg, OracleConfig::default()).unwrap();
        let case = prompt::render_triple_classification(
            &kg,
            &Triple::new("josip", "gender", "male").with_label(true),
        )
        .unwrap();
        assert_eq!(oracle.complete(&case).unwrap().text, "Yes, this is true.");
        assert_eq!(oracle.complete(&tail_case(&kg)).unwrap().text, "male");
    }

    #[test]
    fn forced_errors_never_contain_target() {
        let kg = kg();
        for policy in [
            WrongAnswerPolicy::RandomOther,
            WrongAnswerPolicy::Distractor("unknown".into()),
            WrongAnswerPolicy::Distractor("female".into()),
        ] {
            for seed in 0..20 {
                let oracle = OracleBackend::new(
                    &kg,
                    OracleConfig {
                        error_rate: 1.0,
                        seed,
                        policy: policy.clone(),
                    },
                )
                .unwrap();
                let case = tail_case(&kg);
                let text = oracle.complete(&case).unwrap().text;
                assert!(!text.contains("male"), "{text:?}");
                assert!(!judge(&case, &text, &ScorerOptions::default()).correct);
            }
        }
    }

    #[test]
    fn forced_relation_and_classification_errors_score_wrong() {
        let kg = kg();
        let oracle = OracleBackend::new(
            &kg,
            OracleConfig {
                error_rate: 1.0,
                ..OracleConfig::default()
            },
        )
        .unwrap();
        let t = Triple::new("josip", "gender", "male");
        let rel = prompt::render_relation_prediction(&kg, &t).unwrap();
        let text = oracle.respond(&rel);
        assert_eq!(text, "was born in");
        for label in [true, false] {
            let case =
                prompt::render_triple_classification(&kg, &t.clone().with_label(label)).unwrap();
            assert!(!judge(&case, &oracle.respond(&case), &ScorerOptions::default()).correct);
        }
    }

    #[test]
    fn same_case_same_answer() {
        let kg = kg();
        let cfg = OracleConfig {
            error_rate: 0.5,
            seed: 42,
            ..OracleConfig::default()
        };
        let a = OracleBackend::new(&kg, cfg.clone()).unwrap();
        let b = OracleBackend::new(&kg, cfg).unwrap();
        let case = tail_case(&kg);
        assert_eq!(a.respond(&case), b.respond(&case));
        assert!(OracleBackend::new(
            &kg,
            OracleConfig {
                error_rate: 1.5,
                ..OracleConfig::default()
            }
        )
        .is_err());
    }
}
