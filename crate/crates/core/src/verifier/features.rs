//! Behavior features and their detection from observation sequences.

use serde::{Deserialize, Serialize};

use crate::env::{Observation, Region, TABLE_Y};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrushLevel {
    None,
    Light,
    Heavy,
}

impl CrushLevel {
    pub const ALL: [CrushLevel; 3] = [CrushLevel::None, CrushLevel::Light, CrushLevel::Heavy];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftHeight {
    Low,
    High,
}

/// Structured outcome of one manipulation attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BehaviorFeatures {
    pub first_contact_region: Region,
    pub grasp_succeeded: bool,
    pub toppled: bool,
    pub crush_level: CrushLevel,
    pub dropped: bool,
    pub lift_height: LiftHeight,
}

impl BehaviorFeatures {
    /// Nothing happened.
    pub const EMPTY: BehaviorFeatures = BehaviorFeatures {
        first_contact_region: Region::None,
        grasp_succeeded: false,
        toppled: false,
        crush_level: CrushLevel::None,
        dropped: false,
        lift_height: LiftHeight::Low,
    };

    /// Clean grasp and high lift at `region`.
    pub fn clean_grasp(region: Region) -> Self {
        BehaviorFeatures {
            first_contact_region: region,
            grasp_succeeded: true,
            lift_height: LiftHeight::High,
            ..Self::EMPTY
        }
    }

    /// Whether the physical consistency rules hold (failed grasps cannot
    /// drop; toppled objects were not grasped).
    pub fn is_consistent(&self) -> bool {
        (self.grasp_succeeded || !self.dropped) && !(self.toppled && self.grasp_succeeded)
    }

    /// Every combination of field values (288 tuples), consistent or not.
    pub fn enumerate_all() -> impl Iterator<Item = BehaviorFeatures> {
        let bools = [false, true];
        Region::ALL.into_iter().flat_map(move |region| {
            bools.into_iter().flat_map(move |grasp| {
                bools.into_iter().flat_map(move |toppled| {
                    CrushLevel::ALL.into_iter().flat_map(move |crush| {
                        bools.into_iter().flat_map(move |dropped| {
                            [LiftHeight::Low, LiftHeight::High].into_iter().map(move |lift| {
                                BehaviorFeatures {
                                    first_contact_region: region,
                                    grasp_succeeded: grasp,
                                    toppled,
                                    crush_level: crush,
                                    dropped,
                                    lift_height: lift,
                                }
                            })
                        })
                    })
                })
            })
        })
    }
}

/// Event-detection thresholds over observation channels.
pub mod thresholds {
    /// Grip channel below this counts as closed.
    pub const GRIP_CLOSED: f64 = 0.5;
    /// Object must rise this far above the table for a frame to count as held.
    pub const HELD_RISE: f64 = 0.05;
    /// Object rise that counts as a high lift, halfway to the scripted lift.
    pub const HIGH_RISE: f64 = 0.2;
    /// Largest distance between the observed ee-object offset and a region's
    /// grasp point for the frame to be attributed to that region.
    pub const REGION_TOLERANCE: f64 = 0.05;
    /// Upright channel below this, together with |sin yaw| above
    /// `TOPPLE_SIN`, marks a toppled object.
    pub const UPRIGHT: f64 = 0.5;
    pub const TOPPLE_SIN: f64 = 0.5;
    pub const CRUSH_LIGHT: f64 = 0.1;
    pub const CRUSH_HEAVY: f64 = 0.5;
    pub const DROPPED: f64 = 0.5;
}

/// Region whose grasp point best explains the ee-object offset, if any is
/// within tolerance.
pub fn nearest_region(offset: [f64; 2]) -> Region {
    let mut best = (Region::None, f64::INFINITY);
    for r in Region::ALL {
        if let Some(o) = r.offset() {
            let d = math::sqrt(math::sq_dist(&offset, &o));
            if d < best.1 {
                best = (r, d);
            }
        }
    }
    if best.1 <= thresholds::REGION_TOLERANCE {
        best.0
    } else {
        Region::None
    }
}

/// Thresholded event detection over a (possibly decoded) observation sequence.
/// Ambiguous channels resolve to none/false.
pub fn extract_features(frames: &[Observation]) -> BehaviorFeatures {
    use thresholds::*;
    let mut f = BehaviorFeatures::EMPTY;
    let mut held_any = false;
    let mut max_rise = f64::NEG_INFINITY;
    let mut dropped_flag = false;
    let mut max_crush: f64 = 0.0;
    for o in frames {
        if o.upright() < UPRIGHT && o.yaw_sin().abs() > TOPPLE_SIN {
            f.toppled = true;
        }
        if o.crush().is_finite() {
            max_crush = max_crush.max(o.crush());
        }
        if o.dropped() > DROPPED {
            dropped_flag = true;
        }
        let ee = o.ee_pos();
        let obj = o.obj_pos();
        let rise = obj[1] - TABLE_Y;
        let closed = o.grip() < GRIP_CLOSED;
        if closed && !held_any && rise >= HELD_RISE {
            let region = nearest_region([ee[0] - obj[0], ee[1] - obj[1]]);
            if region != Region::None {
                f.first_contact_region = region;
                held_any = true;
            }
        }
        // once grasped, the lift is however high the object gets while the grip stays closed
        if held_any && closed {
            max_rise = max_rise.max(rise);
        }
    }
    f.grasp_succeeded = held_any && !f.toppled;
    f.dropped = dropped_flag && f.grasp_succeeded;
    f.lift_height = if held_any && max_rise >= HIGH_RISE {
        LiftHeight::High
    } else {
        LiftHeight::Low
    };
    f.crush_level = if max_crush >= CRUSH_HEAVY {
        CrushLevel::Heavy
    } else if max_crush >= CRUSH_LIGHT {
        CrushLevel::Light
    } else {
        CrushLevel::None
    };
    f
}
