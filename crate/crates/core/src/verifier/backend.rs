//! Verifier backends: the interface the steering loop talks to, and the
//! rule-based oracle that implements it in-process.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::features::extract_features;
use super::narration::Narration;
use super::task::TaskSpec;
use crate::env::Observation;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub score: f64,
    pub ok: bool,
    pub rationale: String,
}

/// Outcome of a selection query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub chosen_index: usize,
    pub per_candidate: Vec<CandidateScore>,
}

impl Verdict {
    /// Whether the chosen candidate fires no forbid predicate.
    pub fn chosen_ok(&self) -> bool {
        self.per_candidate
            .get(self.chosen_index)
            .is_some_and(|c| c.ok)
    }

    /// Verdict for a rank-only backend that names a choice but no scores.
    /// The chosen candidate scores 1 and the rest 0; `ok` is recomputed from
    /// the parsed narration features.
    pub fn from_choice(
        choice: usize,
        narrations: &[Narration],
        task: &TaskSpec,
        rationale: &str,
    ) -> Result<Verdict> {
        if choice >= narrations.len() {
            return Err(Error::backend(
                format!(
                    "choice {choice} out of range for {} candidates",
                    narrations.len()
                ),
                None,
            ));
        }
        let per_candidate = narrations
            .iter()
            .enumerate()
            .map(|(i, n)| CandidateScore {
                score: if i == choice { 1.0 } else { 0.0 },
                ok: !task.is_forbidden(&n.features),
                rationale: if i == choice {
                    rationale.to_string()
                } else {
                    String::new()
                },
            })
            .collect();
        Ok(Verdict {
            chosen_index: choice,
            per_candidate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub ok: bool,
    pub rationale: String,
}

/// A narration request: one imagined rollout, decoded to observations.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrateRequest {
    pub rollout_id: String,
    pub frames: Vec<Observation>,
}

/// Translates imagined outcomes to narrations and evaluates them against a
/// task description.
pub trait VerifierBackend {
    fn name(&self) -> &str;

    fn narrate(&self, request: &NarrateRequest) -> Result<Narration>;

    /// Narrate several rollouts. Backends that can overlap requests override
    /// this; results are returned in request order.
    fn narrate_many(&self, requests: &[NarrateRequest]) -> Result<Vec<Narration>> {
        requests.iter().map(|r| self.narrate(r)).collect()
    }

    fn select(&self, narrations: &[Narration], task: &TaskSpec) -> Result<Verdict>;

    fn monitor(&self, narration: &Narration, task: &TaskSpec) -> Result<MonitorVerdict>;
}

/// Deterministic rule-based backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleVerifier;

impl OracleVerifier {
    fn rationale(task: &TaskSpec, n: &Narration) -> String {
        let mut parts = Vec::new();
        for p in &task.prefer {
            if p.predicate.holds(&n.features) {
                parts.push(format!("+{} {}", p.weight, p.predicate.describe()));
            }
        }
        for p in task.fired(&n.features) {
            parts.push(format!("forbidden {}", p.describe()));
        }
        if parts.is_empty() {
            String::from("no predicate matched")
        } else {
            parts.join("; ")
        }
    }
}

/// Oracle selection: highest score wins, lowest index on ties.
pub fn oracle_select(narrations: &[Narration], task: &TaskSpec) -> Result<Verdict> {
    if narrations.is_empty() {
        return Err(Error::Empty("select: no candidate narrations"));
    }
    let per_candidate: Vec<CandidateScore> = narrations
        .iter()
        .map(|n| CandidateScore {
            score: task.score(&n.features),
            ok: !task.is_forbidden(&n.features),
            rationale: OracleVerifier::rationale(task, n),
        })
        .collect();
    let mut chosen = 0;
    for (i, c) in per_candidate.iter().enumerate() {
        if c.score > per_candidate[chosen].score {
            chosen = i;
        }
    }
    Ok(Verdict {
        chosen_index: chosen,
        per_candidate,
    })
}

pub fn oracle_monitor(narration: &Narration, task: &TaskSpec) -> MonitorVerdict {
    let f = &narration.features;
    let fired = task.fired(f);
    let ok = fired.is_empty() && f.grasp_succeeded;
    let rationale = if !f.grasp_succeeded {
        String::from("grasp fails")
    } else if !fired.is_empty() {
        let d: Vec<String> = fired.iter().map(|p| p.describe()).collect();
        format!("forbidden: {}", d.join(", "))
    } else {
        String::from("consistent with the task")
    };
    MonitorVerdict { ok, rationale }
}

impl VerifierBackend for OracleVerifier {
    fn name(&self) -> &str {
        "oracle"
    }

    fn narrate(&self, request: &NarrateRequest) -> Result<Narration> {
        if request.frames.is_empty() {
            return Err(Error::Empty("narrate: no frames"));
        }
        Ok(Narration::from_features(extract_features(&request.frames)))
    }

    fn select(&self, narrations: &[Narration], task: &TaskSpec) -> Result<Verdict> {
        oracle_select(narrations, task)
    }

    fn monitor(&self, narration: &Narration, task: &TaskSpec) -> Result<MonitorVerdict> {
        Ok(oracle_monitor(narration, task))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Region;
    use crate::verifier::{BehaviorFeatures, CrushLevel};

    fn narr(r: Region) -> Narration {
        Narration::from(BehaviorFeatures::clean_grasp(r))
    }

    #[test]
    fn serve_water_chooses_handle_over_interior() {
        let t = TaskSpec::builtin("cup-serve").unwrap();
        let v = oracle_select(&[narr(Region::Interior), narr(Region::Handle)], &t).unwrap();
        assert_eq!(v.chosen_index, 1);
        assert!(v.chosen_ok());
        assert!(!v.per_candidate[0].ok);
    }

    #[test]
    fn oily_handle_chooses_rim() {
        let t = TaskSpec::builtin("cup-oily-handle").unwrap();
        let v = oracle_select(
            &[narr(Region::Handle), narr(Region::Interior), narr(Region::Rim)],
            &t,
        )
        .unwrap();
        assert_eq!(v.chosen_index, 2);
    }

    #[test]
    fn singleton_is_chosen() {
        let t = TaskSpec::builtin("cup-serve").unwrap();
        let v = oracle_select(&[narr(Region::Rim)], &t).unwrap();
        assert_eq!(v.chosen_index, 0);
        assert!(!v.chosen_ok());
        assert!(oracle_select(&[], &t).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let t = TaskSpec::builtin("cup-serve").unwrap();
        let v = oracle_select(&[narr(Region::Handle), narr(Region::Handle)], &t).unwrap();
        assert_eq!(v.chosen_index, 0);
    }

    #[test]
    fn monitor_examples() {
        let serve = TaskSpec::builtin("cup-serve").unwrap();
        assert!(oracle_monitor(&narr(Region::Handle), &serve).ok);
        let crushed = Narration::from(BehaviorFeatures {
            crush_level: CrushLevel::Heavy,
            ..BehaviorFeatures::clean_grasp(Region::Middle)
        });
        let bag = TaskSpec::builtin("bag-minimize-contact").unwrap();
        assert!(!oracle_monitor(&crushed, &bag).ok);
        let toppled = Narration::from(BehaviorFeatures {
            toppled: true,
            ..BehaviorFeatures::EMPTY
        });
        for id in TaskSpec::BUILTIN_IDS {
            assert!(!oracle_monitor(&toppled, &TaskSpec::builtin(id).unwrap()).ok);
        }
    }

    #[test]
    fn from_choice_validates_range() {
        let t = TaskSpec::builtin("cup-serve").unwrap();
        let ns = [narr(Region::Handle), narr(Region::Rim)];
        assert!(Verdict::from_choice(2, &ns, &t, "x").is_err());
        let v = Verdict::from_choice(1, &ns, &t, "rim").unwrap();
        assert_eq!(v.chosen_index, 1);
        assert!(!v.chosen_ok());
        assert!(v.per_candidate[0].ok);
    }
}
