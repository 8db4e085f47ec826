//! Task descriptions: surface text plus preference and forbid predicates
//! over behavior features.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::features::{BehaviorFeatures, CrushLevel, LiftHeight};
use crate::env::{Region, TaskId};
use crate::{Error, Result};

/// A test on one behavior-feature field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "field", content = "value", rename_all = "snake_case")]
pub enum Predicate {
    Region(Region),
    GraspSucceeded(bool),
    Toppled(bool),
    /// Crush level at or above the given level.
    CrushAtLeast(CrushLevel),
    Dropped(bool),
    LiftHeight(LiftHeight),
}

impl Predicate {
    pub fn holds(&self, f: &BehaviorFeatures) -> bool {
        match *self {
            Predicate::Region(r) => f.first_contact_region == r,
            Predicate::GraspSucceeded(b) => f.grasp_succeeded == b,
            Predicate::Toppled(b) => f.toppled == b,
            Predicate::CrushAtLeast(c) => f.crush_level >= c,
            Predicate::Dropped(b) => f.dropped == b,
            Predicate::LiftHeight(l) => f.lift_height == l,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Predicate::Region(r) => format!("region={r}"),
            Predicate::GraspSucceeded(b) => format!("grasp_succeeded={b}"),
            Predicate::Toppled(b) => format!("toppled={b}"),
            Predicate::CrushAtLeast(c) => format!("crush>={c:?}").to_lowercase(),
            Predicate::Dropped(b) => format!("dropped={b}"),
            Predicate::LiftHeight(l) => format!("lift={l:?}").to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPredicate {
    pub predicate: Predicate,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub prefer: Vec<WeightedPredicate>,
    #[serde(default)]
    pub forbid: Vec<Predicate>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prefer.is_empty() && self.forbid.is_empty() {
            return Err(Error::config(format!(
                "task {:?} needs at least one prefer or forbid predicate",
                self.id
            )));
        }
        if let Some(p) = self
            .prefer
            .iter()
            .find(|p| !(p.weight > 0.0 && p.weight.is_finite()))
        {
            return Err(Error::config(format!(
                "task {:?}: prefer weight {} must be positive",
                self.id, p.weight
            )));
        }
        Ok(())
    }

    /// Forbid predicates that fire on `f`.
    pub fn fired(&self, f: &BehaviorFeatures) -> Vec<Predicate> {
        self.forbid.iter().copied().filter(|p| p.holds(f)).collect()
    }

    pub fn is_forbidden(&self, f: &BehaviorFeatures) -> bool {
        self.forbid.iter().any(|p| p.holds(f))
    }

    /// Sum of weights of satisfied preferences.
    pub fn preference(&self, f: &BehaviorFeatures) -> f64 {
        self.prefer
            .iter()
            .filter(|p| p.predicate.holds(f))
            .map(|p| p.weight)
            .sum()
    }

    /// Penalty per fired forbid predicate. Proportional to the total prefer
    /// weight so that scores scale with the weights and one forbid always
    /// outweighs every preference.
    pub fn forbid_penalty(&self) -> f64 {
        let total: f64 = self.prefer.iter().map(|p| p.weight).sum();
        if total > 0.0 {
            2.0 * total
        } else {
            1.0
        }
    }

    /// Oracle score: satisfied preference weight minus the penalty per fired forbid.
    pub fn score(&self, f: &BehaviorFeatures) -> f64 {
        let fired = self.forbid.iter().filter(|p| p.holds(f)).count();
        self.preference(f) - self.forbid_penalty() * fired as f64
    }

    /// Success on ground truth: a grasp happened and nothing forbidden did.
    pub fn satisfied(&self, f: &BehaviorFeatures) -> bool {
        f.grasp_succeeded && !self.is_forbidden(f)
    }

    /// Which object family the task concerns.
    pub fn family(&self) -> Option<TaskId> {
        self.id.split('-').next().and_then(|p| p.parse().ok())
    }

    /// Built-in tasks: `cup-serve`, `cup-oily-handle`, `bag-minimize-contact`,
    /// `bag-secure-lift`.
    pub fn builtin(id: &str) -> Result<TaskSpec> {
        let w = |predicate, weight| WeightedPredicate { predicate, weight };
        let t = match id {
            "cup-serve" => TaskSpec {
                id: id.to_string(),
                text: "Serve a cup of water to a guest. Keep the fingers off the rim and out of \
                       the cup, where the guest will drink."
                    .to_string(),
                prefer: vec![
                    w(Predicate::Region(Region::Handle), 2.0),
                    w(Predicate::GraspSucceeded(true), 1.0),
                ],
                forbid: vec![
                    Predicate::Region(Region::Rim),
                    Predicate::Region(Region::Interior),
                    Predicate::Toppled(true),
                ],
            },
            "cup-oily-handle" => TaskSpec {
                id: id.to_string(),
                text: "The handle of the cup is covered with oil. Pick up the cup without \
                       touching the slippery handle or the inside of the cup."
                    .to_string(),
                prefer: vec![
                    w(Predicate::Region(Region::Rim), 2.0),
                    w(Predicate::GraspSucceeded(true), 1.0),
                ],
                forbid: vec![
                    Predicate::Region(Region::Handle),
                    Predicate::Region(Region::Interior),
                    Predicate::Toppled(true),
                ],
            },
            "bag-minimize-contact" => TaskSpec {
                id: id.to_string(),
                text: "Pick up the bag of chips while touching as little of it as possible, \
                       without crushing what is inside."
                    .to_string(),
                prefer: vec![
                    w(Predicate::Region(Region::Edge), 2.0),
                    w(Predicate::GraspSucceeded(true), 1.0),
                ],
                forbid: vec![
                    Predicate::CrushAtLeast(CrushLevel::Heavy),
                    Predicate::Toppled(true),
                ],
            },
            "bag-secure-lift" => TaskSpec {
                id: id.to_string(),
                text: "The bag holds something heavy. Lift it with a secure grip so that it \
                       cannot slip out."
                    .to_string(),
                prefer: vec![
                    w(Predicate::Region(Region::Middle), 2.0),
                    w(Predicate::GraspSucceeded(true), 1.0),
                ],
                forbid: vec![
                    Predicate::Region(Region::Edge),
                    Predicate::Dropped(true),
                    Predicate::Toppled(true),
                ],
            },
            other => return Err(Error::config(format!("unknown task {other:?}"))),
        };
        Ok(t)
    }

    pub const BUILTIN_IDS: [&'static str; 4] = [
        "cup-serve",
        "cup-oily-handle",
        "bag-minimize-contact",
        "bag-secure-lift",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for id in TaskSpec::BUILTIN_IDS {
            let t = TaskSpec::builtin(id).unwrap();
            t.validate().unwrap();
            assert!(t.family().is_some());
        }
        assert!(TaskSpec::builtin("fork").is_err());
    }

    #[test]
    fn empty_or_nonpositive_tasks_rejected() {
        let mut t = TaskSpec::builtin("cup-serve").unwrap();
        t.prefer[0].weight = 0.0;
        assert!(t.validate().is_err());
        t.prefer.clear();
        t.forbid.clear();
        assert!(t.validate().is_err());
    }

    #[test]
    fn serve_water_prefers_handle() {
        let t = TaskSpec::builtin("cup-serve").unwrap();
        let handle = BehaviorFeatures::clean_grasp(Region::Handle);
        let rim = BehaviorFeatures::clean_grasp(Region::Rim);
        assert!(t.satisfied(&handle));
        assert!(!t.satisfied(&rim));
        assert!(t.score(&handle) > t.score(&rim));
    }

    #[test]
    fn predicates_roundtrip_through_serde_shape() {
        let p = Predicate::CrushAtLeast(CrushLevel::Light);
        assert!(p.holds(&BehaviorFeatures {
            crush_level: CrushLevel::Heavy,
            ..BehaviorFeatures::EMPTY
        }));
        assert!(!p.holds(&BehaviorFeatures::EMPTY));
        assert_eq!(p.describe(), "crush>=light");
    }
}
