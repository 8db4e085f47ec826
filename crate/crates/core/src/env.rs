//! Planar manipulation simulator.
//!
//! The plane is a side view: `x` is horizontal, `y` is height above the
//! floor, and the object rests on a table at [`TABLE_Y`]. Two object
//! families exist. A cup offers handle, rim and interior grasp regions and
//! can be toppled by a fast lateral sweep. A bag offers edge and middle
//! regions; squeezing the middle crushes its contents and releasing an edge
//! grip high above the table may drop it.
//!
//! Contact is modelled with region and threshold rules only.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::verifier::{extract_features, BehaviorFeatures};
use crate::{math, rng, Error, Result};

/// Observation dimension.
pub const OBS_DIM: usize = 10;
/// Action dimension (dx, dy, grip).
pub const ACTION_DIM: usize = 3;
/// Episode horizon.
pub const EPISODE_HORIZON: usize = 140;
/// Plan horizon.
pub const PLAN_HORIZON: usize = 64;

pub const TABLE_Y: f64 = 0.1;
pub const EE_START: [f64; 2] = [0.5, 0.6];
/// Largest per-axis displacement of one action.
pub const MAX_STEP: f64 = 0.03;
pub const GRIP_CLOSE_THRESHOLD: f64 = 0.5;
/// Distance from a region's grasp point within which closing grasps it.
pub const GRASP_RADIUS: f64 = 0.03;
pub const BODY_HALF_WIDTH: f64 = 0.07;
pub const BODY_HEIGHT: f64 = 0.14;
/// Lateral speed above which contact with the body topples the object.
pub const TOPPLE_SPEED: f64 = 0.02;
/// Grip command below which a middle grip squeezes.
pub const SQUEEZE_LEVEL: f64 = 0.25;
pub const CRUSH_RATE: f64 = 0.03;
/// End-effector height above which a release counts as high.
pub const HIGH_RELEASE: f64 = 0.5;
/// Range of the object's initial horizontal position.
pub const OBJ_X_RANGE: (f64, f64) = (0.4, 0.6);

/// Grasp regions, shared with behavior features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    None,
    Handle,
    Rim,
    Interior,
    Edge,
    Middle,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::None,
        Region::Handle,
        Region::Rim,
        Region::Interior,
        Region::Edge,
        Region::Middle,
    ];

    /// Grasp point relative to the object origin.
    pub fn offset(self) -> Option<[f64; 2]> {
        match self {
            Region::None => None,
            Region::Handle => Some([0.10, 0.04]),
            Region::Rim => Some([-0.07, 0.12]),
            Region::Interior => Some([0.0, 0.08]),
            Region::Edge => Some([0.08, 0.16]),
            Region::Middle => Some([-0.09, 0.02]),
        }
    }

    /// Probability that releasing this grip high above the table drops the object.
    pub fn drop_probability(self) -> f64 {
        match self {
            Region::Edge => 0.4,
            _ => 0.0,
        }
    }

    pub fn family(self) -> Option<TaskId> {
        match self {
            Region::None => None,
            Region::Handle | Region::Rim | Region::Interior => Some(TaskId::Cup),
            Region::Edge | Region::Middle => Some(TaskId::Bag),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::None => "none",
            Region::Handle => "handle",
            Region::Rim => "rim",
            Region::Interior => "interior",
            Region::Edge => "edge",
            Region::Middle => "middle",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Object family; selects grasp regions and scripted modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Cup,
    Bag,
}

impl TaskId {
    pub fn regions(self) -> &'static [Region] {
        match self {
            TaskId::Cup => &[Region::Handle, Region::Rim, Region::Interior],
            TaskId::Bag => &[Region::Edge, Region::Middle],
        }
    }

    /// The two demonstrated modes of the family.
    pub fn demo_modes(self) -> [ModeId; 2] {
        match self {
            TaskId::Cup => [ModeId::Handle, ModeId::Rim],
            TaskId::Bag => [ModeId::Edge, ModeId::Middle],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Cup => "cup",
            TaskId::Bag => "bag",
        }
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cup" => Ok(TaskId::Cup),
            "bag" => Ok(TaskId::Bag),
            other => Err(Error::config(alloc::format!("unknown task id {other:?}"))),
        }
    }
}

/// Scripted demonstration modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeId {
    Handle,
    Rim,
    Interior,
    Edge,
    Middle,
    /// Fast lateral sweep through the object; topples it.
    Swipe,
}

impl ModeId {
    /// Region this mode grasps (none for the sweep).
    pub fn region(self) -> Region {
        match self {
            ModeId::Handle => Region::Handle,
            ModeId::Rim => Region::Rim,
            ModeId::Interior => Region::Interior,
            ModeId::Edge => Region::Edge,
            ModeId::Middle => Region::Middle,
            ModeId::Swipe => Region::None,
        }
    }

    pub fn from_region(region: Region) -> Option<ModeId> {
        match region {
            Region::None => None,
            Region::Handle => Some(ModeId::Handle),
            Region::Rim => Some(ModeId::Rim),
            Region::Interior => Some(ModeId::Interior),
            Region::Edge => Some(ModeId::Edge),
            Region::Middle => Some(ModeId::Middle),
        }
    }

    pub fn valid_for(self, task: TaskId) -> bool {
        self == ModeId::Swipe || self.region().family() == Some(task)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModeId::Swipe => "swipe",
            other => other.region().as_str(),
        }
    }
}

impl FromStr for ModeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "handle" => ModeId::Handle,
            "rim" => ModeId::Rim,
            "interior" => ModeId::Interior,
            "edge" => ModeId::Edge,
            "middle" => ModeId::Middle,
            "swipe" => ModeId::Swipe,
            other => return Err(Error::config(alloc::format!("unknown mode id {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub kind: TaskId,
    pub ee_pos: [f64; 2],
    /// 0 closed, 1 open.
    pub ee_grip: f64,
    pub obj_pos: [f64; 2],
    pub obj_yaw: f64,
    pub obj_upright: bool,
    pub crush: f64,
    pub held_region: Region,
    pub dropped: bool,
}

impl WorldState {
    /// Canonical reset: object centered on the table, gripper open above it.
    pub fn canonical(kind: TaskId) -> Self {
        Self::with_object_x(kind, 0.5)
    }

    pub fn with_object_x(kind: TaskId, obj_x: f64) -> Self {
        WorldState {
            kind,
            ee_pos: EE_START,
            ee_grip: 1.0,
            obj_pos: [obj_x, TABLE_Y],
            obj_yaw: 0.0,
            obj_upright: true,
            crush: 0.0,
            held_region: Region::None,
            dropped: false,
        }
    }

    /// Randomized reset drawn from `(seed, episode)`.
    pub fn reset(kind: TaskId, seed: u64, episode: u64) -> Self {
        let mut r = rng::stream(seed, episode);
        let x = rng::uniform(&mut r, OBJ_X_RANGE.0, OBJ_X_RANGE.1);
        Self::with_object_x(kind, x)
    }

    fn inside_body(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.obj_pos[0];
        let dy = p[1] - self.obj_pos[1];
        dx.abs() < BODY_HALF_WIDTH && (0.0..=BODY_HEIGHT).contains(&dy)
    }
}

/// Low-dimensional observation:
/// `[ee_x, ee_y, grip, obj_x, obj_y, sin(yaw), cos(yaw), upright, crush, dropped]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn zeros() -> Self {
        Observation([0.0; OBS_DIM])
    }

    pub fn ee_pos(&self) -> [f64; 2] {
        [self.0[0], self.0[1]]
    }

    pub fn grip(&self) -> f64 {
        self.0[2]
    }

    pub fn obj_pos(&self) -> [f64; 2] {
        [self.0[3], self.0[4]]
    }

    pub fn yaw_sin(&self) -> f64 {
        self.0[5]
    }

    pub fn upright(&self) -> f64 {
        self.0[7]
    }

    pub fn crush(&self) -> f64 {
        self.0[8]
    }

    pub fn dropped(&self) -> f64 {
        self.0[9]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta_pos: [f64; 2],
    pub grip_cmd: f64,
}

impl Action {
    pub fn new(dx: f64, dy: f64, grip: f64) -> Self {
        Action {
            delta_pos: [dx, dy],
            grip_cmd: grip,
        }
    }

    pub fn from_array(a: [f64; ACTION_DIM]) -> Self {
        Action::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.delta_pos[0], self.delta_pos[1], self.grip_cmd]
    }

    /// Project onto the action bounds.
    pub fn clamped(self) -> Self {
        let c = |v: f64| {
            if v.is_nan() {
                0.0
            } else {
                math::clamp(v, -MAX_STEP, MAX_STEP)
            }
        };
        let grip = if self.grip_cmd.is_nan() {
            1.0
        } else {
            math::clamp(self.grip_cmd, 0.0, 1.0)
        };
        Action::new(c(self.delta_pos[0]), c(self.delta_pos[1]), grip)
    }

    pub fn within_bounds(&self) -> bool {
        self.delta_pos.iter().all(|d| d.abs() <= MAX_STEP) && (0.0..=1.0).contains(&self.grip_cmd)
    }
}

/// Where an episode came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeSource {
    Demo,
    PolicyRollout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: TaskId,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub behavior_label: BehaviorFeatures,
    pub source: EpisodeSource,
    /// Scripted or mixture mode that produced the actions, when known.
    #[serde(default)]
    pub mode: Option<ModeId>,
}

impl EpisodeRecord {
    pub fn validate(&self) -> Result<()> {
        if self.observations.len() != self.actions.len() + 1 {
            return Err(Error::shape(alloc::format!(
                "episode has {} observations for {} actions",
                self.observations.len(),
                self.actions.len()
            )));
        }
        if self.actions.is_empty() {
            return Err(Error::Empty("episode actions"));
        }
        Ok(())
    }
}

/// Advance the world by one action. Inputs are clamped; the only randomness
/// (the drop rule) is drawn from `rng_seed`.
pub fn step(state: &WorldState, action: &Action, rng_seed: u64) -> WorldState {
    let a = action.clamped();
    let mut s = state.clone();
    let prev_ee = state.ee_pos;
    s.ee_pos = [
        math::clamp(prev_ee[0] + a.delta_pos[0], 0.0, 1.0),
        math::clamp(prev_ee[1] + a.delta_pos[1], 0.0, 1.0),
    ];
    let dx = s.ee_pos[0] - prev_ee[0];
    let was_closed = state.ee_grip < GRIP_CLOSE_THRESHOLD;
    s.ee_grip = a.grip_cmd;
    let closed = s.ee_grip < GRIP_CLOSE_THRESHOLD;

    if s.held_region != Region::None {
        let region = s.held_region;
        if !closed {
            if s.ee_pos[1] > HIGH_RELEASE {
                let mut r = rng::stream(rng_seed, 0xD20B);
                if rng::uniform(&mut r, 0.0, 1.0) < region.drop_probability() {
                    s.dropped = true;
                }
            }
            s.obj_pos[1] = TABLE_Y;
            s.held_region = Region::None;
        } else {
            let off = region.offset().unwrap_or([0.0, 0.0]);
            s.obj_pos = [
                math::clamp(s.ee_pos[0] - off[0], 0.0, 1.0),
                math::clamp(s.ee_pos[1] - off[1], 0.0, 1.0),
            ];
            squeeze(&mut s, region);
        }
        return s;
    }

    if s.obj_upright
        && dx.abs() > TOPPLE_SPEED
        && (state.inside_body(prev_ee) || state.inside_body(s.ee_pos))
    {
        s.obj_upright = false;
        s.obj_yaw = if dx > 0.0 { -FRAC_PI_2 } else { FRAC_PI_2 };
        s.obj_pos[0] = math::clamp(s.obj_pos[0] + dx, 0.0, 1.0);
    }

    if closed && !was_closed && s.obj_upright {
        let hit = s.kind.regions().iter().copied().find(|r| {
            let off = r.offset().unwrap_or([0.0, 0.0]);
            let gx = s.obj_pos[0] + off[0];
            let gy = s.obj_pos[1] + off[1];
            math::sqrt(math::sq_dist(&s.ee_pos, &[gx, gy])) <= GRASP_RADIUS
        });
        if let Some(region) = hit {
            let off = region.offset().unwrap_or([0.0, 0.0]);
            s.held_region = region;
            s.obj_pos = [s.ee_pos[0] - off[0], s.ee_pos[1] - off[1]];
            squeeze(&mut s, region);
        }
    }
    s
}

fn squeeze(s: &mut WorldState, region: Region) {
    if region == Region::Middle && s.ee_grip < SQUEEZE_LEVEL {
        s.crush = (s.crush + CRUSH_RATE).min(1.0);
    }
}

/// Deterministic projection of the world state.
pub fn observe(state: &WorldState) -> Observation {
    Observation([
        state.ee_pos[0],
        state.ee_pos[1],
        state.ee_grip,
        state.obj_pos[0],
        state.obj_pos[1],
        math::sin(state.obj_yaw),
        math::cos(state.obj_yaw),
        if state.obj_upright { 1.0 } else { 0.0 },
        state.crush,
        if state.dropped { 1.0 } else { 0.0 },
    ])
}

/// Execute `actions` open-loop from `initial`, returning every visited
/// observation (length `actions.len() + 1`) and the final state.
pub fn execute(
    initial: &WorldState,
    actions: &[Action],
    seed: u64,
) -> (Vec<Observation>, WorldState) {
    let mut obs = Vec::with_capacity(actions.len() + 1);
    let mut s = initial.clone();
    obs.push(observe(&s));
    for (t, a) in actions.iter().enumerate() {
        s = step(&s, a, rng::derive_seed(seed, t as u64));
        obs.push(observe(&s));
    }
    (obs, s)
}

// Scripted controller keyframes (step index).
const APPROACH_END: usize = 16;
const DESCEND_END: usize = 28;
const CLOSE_END: usize = 32;
const LIFT_END: usize = 48;
const RELEASE_STEP: usize = 56;
const LIFT_HEIGHT: f64 = 0.4;
const PREGRASP_CLEARANCE: f64 = 0.15;

/// Waypoint of the scripted controller for `mode` at time `t`.
fn waypoint(mode: ModeId, kind: TaskId, obj: [f64; 2], t: usize) -> [f64; 2] {
    let (pre, target) = match mode {
        ModeId::Swipe => {
            let start = [obj[0] - 0.22, obj[1] + 0.07];
            (start, [start[0] + 0.03 * (DESCEND_END - APPROACH_END) as f64, start[1]])
        }
        m => {
            let off = m.region().offset().unwrap_or([0.0, 0.0]);
            let target = [obj[0] + off[0], obj[1] + off[1]];
            ([target[0], target[1] + PREGRASP_CLEARANCE], target)
        }
    };
    let lifted = [target[0], target[1] + LIFT_HEIGHT];
    let mut keys: Vec<(usize, [f64; 2])> = alloc::vec![
        (0, EE_START),
        (APPROACH_END, pre),
        (DESCEND_END, target),
        (CLOSE_END, target),
        (LIFT_END, lifted),
    ];
    if kind == TaskId::Cup && mode != ModeId::Swipe {
        // set the cup back down, release, retreat
        keys.push((PLAN_HORIZON, lifted));
        keys.push((80, target));
        keys.push((84, target));
        keys.push((100, [target[0], target[1] + 0.2]));
    }
    keys.push((EPISODE_HORIZON + 1, *keys.last().map(|k| &k.1).unwrap_or(&EE_START)));
    interpolate(&keys, t)
}

fn interpolate(keys: &[(usize, [f64; 2])], t: usize) -> [f64; 2] {
    for w in keys.windows(2) {
        let (t0, p0) = w[0];
        let (t1, p1) = w[1];
        if t >= t0 && t <= t1 {
            if t1 == t0 {
                return p1;
            }
            let f = (t - t0) as f64 / (t1 - t0) as f64;
            return [p0[0] + f * (p1[0] - p0[0]), p0[1] + f * (p1[1] - p0[1])];
        }
    }
    keys.last().map(|k| k.1).unwrap_or(EE_START)
}

fn grip_schedule(mode: ModeId, kind: TaskId, t: usize) -> f64 {
    if t < DESCEND_END {
        return 1.0;
    }
    let closed = match mode {
        ModeId::Middle => 0.0,
        _ => 0.3,
    };
    match kind {
        TaskId::Bag if t >= RELEASE_STEP => 1.0,
        TaskId::Cup if mode != ModeId::Swipe && t >= 82 => 1.0,
        _ => closed,
    }
}

/// Run the scripted feedback controller for `mode` from `initial` for
/// `horizon` steps with per-step Gaussian command noise of std `noise`.
pub fn scripted_episode(
    mode: ModeId,
    initial: &WorldState,
    horizon: usize,
    noise: f64,
    seed: u64,
) -> EpisodeRecord {
    let mut r = rng::stream(seed, 0x5C21);
    let obj = initial.obj_pos;
    let mut s = initial.clone();
    let mut observations = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    observations.push(observe(&s));
    for t in 0..horizon {
        let wp = waypoint(mode, initial.kind, obj, t + 1);
        let a = Action::new(
            wp[0] - s.ee_pos[0] + noise * rng::normal(&mut r),
            wp[1] - s.ee_pos[1] + noise * rng::normal(&mut r),
            grip_schedule(mode, initial.kind, t),
        )
        .clamped();
        s = step(&s, &a, rng::derive_seed(seed, t as u64));
        actions.push(a);
        observations.push(observe(&s));
    }
    let behavior_label = extract_features(&observations);
    EpisodeRecord {
        task: initial.kind,
        observations,
        actions,
        behavior_label,
        source: EpisodeSource::Demo,
        mode: Some(mode),
    }
}

/// Default per-step command noise of the scripted demonstrators.
pub const DEMO_NOISE: f64 = 0.001;

/// `n_per_mode` scripted demonstrations for each mode, in mode order.
/// Episode `i` draws its reset and noise from `(rng_seed, i)`.
pub fn generate_demos(
    task: TaskId,
    n_per_mode: usize,
    modes: &[ModeId],
    rng_seed: u64,
) -> Result<Vec<EpisodeRecord>> {
    if modes.is_empty() {
        return Err(Error::config("generate_demos: modes list is empty"));
    }
    for m in modes {
        if !m.valid_for(task) {
            return Err(Error::config(alloc::format!(
                "mode {} has no scripted controller for task {}",
                m.as_str(),
                task.as_str()
            )));
        }
    }
    let mut out = Vec::with_capacity(n_per_mode * modes.len());
    let mut idx = 0u64;
    for &mode in modes {
        for _ in 0..n_per_mode {
            let init = WorldState::reset(task, rng_seed, idx);
            out.push(scripted_episode(
                mode,
                &init,
                EPISODE_HORIZON,
                DEMO_NOISE,
                rng::derive_seed(rng_seed, idx),
            ));
            idx += 1;
        }
    }
    Ok(out)
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parse a comma-separated mode list.
pub fn parse_modes(s: &str) -> Result<Vec<ModeId>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(ModeId::from_str)
        .collect()
}

pub fn mode_names(modes: &[ModeId]) -> Vec<String> {
    modes.iter().map(|m| m.as_str().to_string()).collect()
}
