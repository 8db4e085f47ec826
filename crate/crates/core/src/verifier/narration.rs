//! Fixed template grammar for behavior narrations.
//!
//! A narration is
//! `the gripper {contact} {lift}{crush}{drop} {topple}`
//! where each slot is chosen from a closed phrase table keyed by one or two
//! feature fields. The grammar is bijective over all feature tuples, so
//! [`parse`] recovers exactly what [`render`] encoded.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::features::{BehaviorFeatures, CrushLevel, LiftHeight};
use crate::env::Region;
use crate::{Error, Result};

const PREFIX: &str = "the gripper ";

fn contact_phrase(r: Region) -> &'static str {
    match r {
        Region::None => "reaches toward the object without a firm grasp",
        Region::Handle => "grasps the cup by the handle",
        Region::Rim => "grasps the cup by the rim",
        Region::Interior => "grasps the cup from the inside",
        Region::Edge => "grasps the bag by the edge",
        Region::Middle => "grasps the bag by the middle",
    }
}

fn lift_phrase(grasp: bool, lift: LiftHeight) -> &'static str {
    match (grasp, lift) {
        (true, LiftHeight::High) => "and lifts it",
        (true, LiftHeight::Low) => "and lifts it only slightly",
        (false, LiftHeight::Low) => "but fails to lift it",
        (false, LiftHeight::High) => "but fails to lift it while raising the gripper high",
    }
}

fn crush_phrase(c: CrushLevel) -> &'static str {
    match c {
        CrushLevel::None => "",
        CrushLevel::Light => " while squeezing it lightly",
        CrushLevel::Heavy => " while crushing it",
    }
}

fn drop_phrase(dropped: bool) -> &'static str {
    if dropped {
        " and then drops it"
    } else {
        ""
    }
}

fn topple_phrase(toppled: bool) -> &'static str {
    if toppled {
        "and knocks it over"
    } else {
        "without toppling"
    }
}

/// Render the narration sentence for a feature tuple.
pub fn render(f: &BehaviorFeatures) -> String {
    let mut s = String::from(PREFIX);
    s.push_str(contact_phrase(f.first_contact_region));
    s.push(' ');
    s.push_str(lift_phrase(f.grasp_succeeded, f.lift_height));
    s.push_str(crush_phrase(f.crush_level));
    s.push_str(drop_phrase(f.dropped));
    s.push(' ');
    s.push_str(topple_phrase(f.toppled));
    s
}

/// Recover the feature tuple from a narration sentence. Leading/trailing
/// whitespace, letter case and a trailing period are tolerated; anything
/// else outside the grammar is an error.
pub fn parse(text: &str) -> Result<BehaviorFeatures> {
    let norm = text.trim().trim_end_matches('.').to_lowercase();
    let rest = norm
        .strip_prefix(PREFIX)
        .ok_or_else(|| Error::Parse(format!("missing prefix {PREFIX:?}: {text:?}")))?;
    let mut found: Option<BehaviorFeatures> = None;
    for region in Region::ALL {
        let Some(r1) = rest.strip_prefix(contact_phrase(region)) else {
            continue;
        };
        let Some(r1) = r1.strip_prefix(' ') else {
            continue;
        };
        for grasp in [false, true] {
            for lift in [LiftHeight::Low, LiftHeight::High] {
                let Some(r2) = r1.strip_prefix(lift_phrase(grasp, lift)) else {
                    continue;
                };
                for crush in CrushLevel::ALL {
                    let Some(r3) = r2.strip_prefix(crush_phrase(crush)) else {
                        continue;
                    };
                    for dropped in [false, true] {
                        let Some(r4) = r3.strip_prefix(drop_phrase(dropped)) else {
                            continue;
                        };
                        for toppled in [false, true] {
                            let tail = format!(" {}", topple_phrase(toppled));
                            if r4 == tail {
                                let f = BehaviorFeatures {
                                    first_contact_region: region,
                                    grasp_succeeded: grasp,
                                    toppled,
                                    crush_level: crush,
                                    dropped,
                                    lift_height: lift,
                                };
                                if found.is_some_and(|g| g != f) {
                                    return Err(Error::Parse(format!("ambiguous narration {text:?}")));
                                }
                                found = Some(f);
                            }
                        }
                    }
                }
            }
        }
    }
    found.ok_or_else(|| Error::Parse(format!("not in narration grammar: {text:?}")))
}

/// The grammar as human-readable template strings, sent to remote backends
/// so their answers stay parseable.
pub fn grammar_templates() -> Vec<String> {
    let mut out = alloc::vec![String::from(
        "the gripper {contact} {lift}{crush}{drop} {topple}"
    )];
    for r in Region::ALL {
        out.push(format!("contact: {}", contact_phrase(r)));
    }
    for g in [true, false] {
        for l in [LiftHeight::High, LiftHeight::Low] {
            out.push(format!("lift: {}", lift_phrase(g, l)));
        }
    }
    for c in CrushLevel::ALL {
        out.push(format!("crush: {:?}", crush_phrase(c)));
    }
    for d in [false, true] {
        out.push(format!("drop: {:?}", drop_phrase(d)));
    }
    for t in [false, true] {
        out.push(format!("topple: {}", topple_phrase(t)));
    }
    out
}

/// A behavior narration: features plus their rendered sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Narration {
    pub features: BehaviorFeatures,
    pub text: String,
}

impl Narration {
    pub fn from_features(features: BehaviorFeatures) -> Self {
        Narration {
            text: render(&features),
            features,
        }
    }

    /// Parse backend text; the stored text is the canonical rendering.
    pub fn from_text(text: &str) -> Result<Self> {
        Ok(Self::from_features(parse(text)?))
    }
}

impl core::fmt::Display for Narration {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.text)
    }
}

impl From<BehaviorFeatures> for Narration {
    fn from(f: BehaviorFeatures) -> Self {
        Narration::from_features(f)
    }
}
