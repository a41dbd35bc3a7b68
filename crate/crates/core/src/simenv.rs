//! Synthetic two-domain manipulation bench.
//!
//! One object, one goal marker and a point-mass effector inside the unit
//! workspace box. Scenes render deterministically to 224x224 RGB
//! observations; the Source and Target domains differ only in visual style
//! (background intensity, hues, a pixel layout offset) unless a dynamics gain
//! is configured. The object snaps to the effector while the grasp conditions
//! hold, which is the minimal manipulation abstraction that keeps the success
//! predicate nontrivial.
//!
//! Scenes and rollouts are independent given separate rngs and safe to
//! parallelize across episodes.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{command_feature, CommandTokens, Encoder, Observation, IMG_C, IMG_H, IMG_W};
use crate::error::{Error, Result};
use crate::memory::ACTION_DIM;
use crate::policy::PolicyState;

/// Grasp (and object-snap) radius in meters.
pub const GRASP_RADIUS: f64 = 0.05;
/// Per-step effector displacement limit in meters.
pub const MAX_STEP_DISPLACEMENT: f64 = 0.1;
/// Expert per-step travel distance in meters.
const EXPERT_STEP: f64 = 0.08;
/// Expert gripper activation (pre-sigmoid).
const EXPERT_GRIP: f64 = 2.0;

/// Deployment domain of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

/// Mapping from commanded position deltas to executed ones: a gain and a
/// planar rotation. Identity means the domain's dynamics match the commands
/// (style-only shift); anything else is a dynamics shift, as with a
/// miscalibrated control frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlFrame {
    pub gain: f64,
    pub rotation_deg: f64,
}

impl Default for ControlFrame {
    fn default() -> Self {
        Self {
            gain: 1.0,
            rotation_deg: 0.0,
        }
    }
}

impl ControlFrame {
    pub fn is_identity(&self) -> bool {
        self.gain == 1.0 && self.rotation_deg == 0.0
    }

    /// Executed delta for a commanded delta (rotation acts in the x-y plane).
    pub fn apply(&self, delta: [f64; 3]) -> [f64; 3] {
        let phi = self.rotation_deg.to_radians();
        let (sin, cos) = phi.sin_cos();
        [
            self.gain * (cos * delta[0] - sin * delta[1]),
            self.gain * (sin * delta[0] + cos * delta[1]),
            self.gain * delta[2],
        ]
    }

    /// Commanded delta that executes as the desired motion.
    pub fn inverse_apply(&self, motion: [f64; 3]) -> [f64; 3] {
        let phi = (-self.rotation_deg).to_radians();
        let (sin, cos) = phi.sin_cos();
        [
            (cos * motion[0] - sin * motion[1]) / self.gain,
            (sin * motion[0] + cos * motion[1]) / self.gain,
            motion[2] / self.gain,
        ]
    }
}

/// Parameters controlling the synthetic render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualStyle {
    /// Background gray level in [0, 1].
    pub background_intensity: f64,
    /// Object disc hue in [0, 1).
    pub object_hue: f64,
    /// Goal ring hue in [0, 1).
    pub goal_hue: f64,
    /// Effector disc hue in [0, 1).
    pub effector_hue: f64,
    /// Whole-scene pixel offset (x, y).
    pub layout_offset: [i32; 2],
}

impl Default for VisualStyle {
    fn default() -> Self {
        Self {
            background_intensity: 0.12,
            object_hue: 0.02,
            goal_hue: 0.33,
            effector_hue: 0.6,
            layout_offset: [0, 0],
        }
    }
}

/// One task instance: object start, goal, domain and render style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub object_pos: [f64; 3],
    pub goal_pos: [f64; 3],
    pub domain: Domain,
    pub visual_style: VisualStyle,
    pub rng_seed: u64,
}

impl Scene {
    pub fn new(
        object_pos: [f64; 3],
        goal_pos: [f64; 3],
        domain: Domain,
        visual_style: VisualStyle,
        rng_seed: u64,
    ) -> Result<Self> {
        for p in object_pos.iter().chain(goal_pos.iter()) {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config(format!(
                    "scene position component {p} outside the unit workspace"
                )));
            }
        }
        Ok(Self {
            object_pos,
            goal_pos,
            domain,
            visual_style,
            rng_seed,
        })
    }
}

/// Success thresholds and the episode step limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessConfig {
    /// Object-to-goal distance threshold in meters.
    pub eps_pos: f64,
    /// Gripper force error threshold in newtons.
    pub eps_force: f64,
    /// Step budget per episode.
    pub t_max: usize,
    /// Grasp-force setpoint in newtons.
    pub f_expected: f64,
}

impl Default for SuccessConfig {
    fn default() -> Self {
        Self {
            eps_pos: 0.05,
            eps_force: 2.0,
            t_max: 100,
            f_expected: 1.0,
        }
    }
}

impl SuccessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_pos <= 0.0 || self.eps_force <= 0.0 || self.t_max == 0 || self.f_expected <= 0.0
        {
            return Err(Error::Config(
                "success thresholds must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mutable episode state evolved by [`step`].
#[derive(Debug, Clone)]
pub struct SimState {
    pub scene: Scene,
    pub effector_pos: [f64; 3],
    pub object_pos: [f64; 3],
    pub gripper_force: f64,
    /// Command-to-execution mapping (dynamics shift hook).
    pub frame: ControlFrame,
}

impl SimState {
    pub fn new(scene: Scene, effector_start: [f64; 3]) -> Self {
        let object_pos = scene.object_pos;
        Self {
            scene,
            effector_pos: effector_start,
            object_pos,
            gripper_force: 0.0,
            frame: ControlFrame::default(),
        }
    }

    pub fn with_frame(mut self, frame: ControlFrame) -> Self {
        self.frame = frame;
        self
    }
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Advances the point-mass dynamics by one action.
///
/// The position delta (action dims 0..3) is clamped to 0.1 m per step and the
/// effector stays inside the unit box. Orientation dims 3..6 are carried but
/// inert. The effector is touching the object when it is within the grasp
/// radius either before the move (object in hand, carried along) or after it
/// (fresh grasp on arrival). While touching, gripper force is
/// `f_expected * sigmoid(action[6])`, zero otherwise; the object snaps to the
/// effector while touching with the force inside the tolerance band.
pub fn step(state: &mut SimState, action: &Array1<f64>, cfg: &SuccessConfig) -> (
    [f64; 3],
    f64,
) {
    let d_pre = dist3(&state.effector_pos, &state.object_pos);
    let mut delta = state.frame.apply([action[0], action[1], action[2]]);
    let norm = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
    if norm > MAX_STEP_DISPLACEMENT {
        let scale = MAX_STEP_DISPLACEMENT / norm;
        for d in delta.iter_mut() {
            *d *= scale;
        }
    }
    for i in 0..3 {
        state.effector_pos[i] = (state.effector_pos[i] + delta[i]).clamp(0.0, 1.0);
    }
    let d_post = dist3(&state.effector_pos, &state.object_pos);
    let touching = d_pre <= GRASP_RADIUS || d_post <= GRASP_RADIUS;
    let force = if touching {
        cfg.f_expected * sigmoid(action[6])
    } else {
        0.0
    };
    if touching && (force - cfg.f_expected).abs() < cfg.eps_force {
        state.object_pos = state.effector_pos;
    }
    state.gripper_force = force;
    (state.effector_pos, force)
}

/// End-of-trajectory state fed to the success predicate.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryTail {
    pub object_pos: [f64; 3],
    pub goal_pos: [f64; 3],
    pub gripper_force: f64,
    pub steps: usize,
}

/// The three-conjunct outcome classifier, strict inequalities as stated:
/// object within `eps_pos` of the goal AND gripper force within `eps_force`
/// of the setpoint AND step count strictly below `t_max`.
pub fn detect_success(tail: &TrajectoryTail, cfg: &SuccessConfig) -> bool {
    dist3(&tail.object_pos, &tail.goal_pos) < cfg.eps_pos
        && (tail.gripper_force - cfg.f_expected).abs() < cfg.eps_force
        && tail.steps < cfg.t_max
}

/// One recorded interaction step.
#[derive(Debug, Clone)]
pub struct TrajStep {
    /// What the camera saw before the action executed.
    pub observation: Observation,
    pub action: Array1<f64>,
    pub effector_pos: [f64; 3],
    pub gripper_force: f64,
}

/// A full episode: recorded steps, outcome, and (for successes) the expert
/// action sequence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    pub success: bool,
    /// `7 x T` expert actions; present whenever `success` is true for stored
    /// trajectories (the environment supplies demonstrations on success).
    pub expert_actions: Option<Array2<f64>>,
    /// Object position when the episode ended.
    pub final_object_pos: [f64; 3],
    /// Scene the episode ran in.
    pub scene: Scene,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Executed actions as a `7 x T` matrix.
    pub fn executed_actions(&self) -> Array2<f64> {
        let mut m = Array2::zeros((ACTION_DIM, self.steps.len()));
        for (t, s) in self.steps.iter().enumerate() {
            for i in 0..ACTION_DIM {
                m[(i, t)] = s.action[i];
            }
        }
        m
    }

    /// First observation of the episode.
    pub fn initial_observation(&self) -> Option<&Observation> {
        self.steps.first().map(|s| &s.observation)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

fn to_px(coord: f64, extent: usize, offset: i32) -> i64 {
    (coord * (extent - 1) as f64).round() as i64 + offset as i64
}

fn draw_disc(px: &mut [u8], cx: i64, cy: i64, radius: i64, color: [u8; 3]) {
    let r2 = radius * radius;
    for y in (cy - radius).max(0)..=(cy + radius).min(IMG_H as i64 - 1) {
        for x in (cx - radius).max(0)..=(cx + radius).min(IMG_W as i64 - 1) {
            let dx = x - cx;
            let dy = y - cy;
            if dx * dx + dy * dy <= r2 {
                let idx = (y as usize * IMG_W + x as usize) * IMG_C;
                px[idx..idx + 3].copy_from_slice(&color);
            }
        }
    }
}

fn draw_ring(px: &mut [u8], cx: i64, cy: i64, outer: i64, inner: i64, color: [u8; 3]) {
    let o2 = outer * outer;
    let i2 = inner * inner;
    for y in (cy - outer).max(0)..=(cy + outer).min(IMG_H as i64 - 1) {
        for x in (cx - outer).max(0)..=(cx + outer).min(IMG_W as i64 - 1) {
            let dx = x - cx;
            let dy = y - cy;
            let d2 = dx * dx + dy * dy;
            if d2 <= o2 && d2 >= i2 {
                let idx = (y as usize * IMG_W + x as usize) * IMG_C;
                px[idx..idx + 3].copy_from_slice(&color);
            }
        }
    }
}

/// Pixel radii of the rendered markers.
pub const OBJECT_RADIUS_PX: i64 = 9;
const GOAL_OUTER_PX: i64 = 14;
const EFFECTOR_RADIUS_PX: i64 = 5;

/// Renders the scene with the object at an explicit current position.
///
/// Deterministic: a pure function of geometry and style. The x/y workspace
/// coordinates map to pixel columns/rows, shifted by the style's layout
/// offset; z does not affect the render.
pub fn render_state(
    scene: &Scene,
    object_pos: &[f64; 3],
    effector_pos: &[f64; 3],
) -> Observation {
    let style = &scene.visual_style;
    let bg = (style.background_intensity.clamp(0.0, 1.0) * 255.0) as u8;
    let mut px = vec![bg; IMG_H * IMG_W * IMG_C];
    let [ox, oy] = style.layout_offset;

    let goal_c = hsv_to_rgb(style.goal_hue, 0.85, 0.9);
    let obj_c = hsv_to_rgb(style.object_hue, 0.9, 0.95);
    let eff_c = hsv_to_rgb(style.effector_hue, 0.8, 0.95);

    let gx = to_px(scene.goal_pos[0], IMG_W, ox);
    let gy = to_px(scene.goal_pos[1], IMG_H, oy);
    draw_disc(&mut px, gx, gy, GOAL_OUTER_PX, goal_c);
    draw_ring(&mut px, gx, gy, GOAL_OUTER_PX + 3, GOAL_OUTER_PX + 1, goal_c);

    let bx = to_px(object_pos[0], IMG_W, ox);
    let by = to_px(object_pos[1], IMG_H, oy);
    draw_disc(&mut px, bx, by, OBJECT_RADIUS_PX, obj_c);

    let ex = to_px(effector_pos[0], IMG_W, ox);
    let ey = to_px(effector_pos[1], IMG_H, oy);
    draw_disc(&mut px, ex, ey, EFFECTOR_RADIUS_PX, eff_c);

    Observation::new(px).expect("fixed-size render")
}

/// Renders the scene in its initial configuration.
pub fn render(scene: &Scene, effector_pos: &[f64; 3]) -> Observation {
    render_state(scene, &scene.object_pos, effector_pos)
}

/// Scripted proportional controller: move to the object, grasp, carry to the
/// goal. Closed-loop, per-step. Fails with an error (never a silent failing
/// demo) if the success condition is not reached inside the step budget.
pub fn expert_demo(
    scene: &Scene,
    effector_start: [f64; 3],
    frame: &ControlFrame,
    cfg: &SuccessConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut state = SimState::new(scene.clone(), effector_start).with_frame(*frame);
    let mut steps = Vec::new();
    let mut success = false;
    for t in 0..cfg.t_max {
        let target = if dist3(&state.effector_pos, &state.object_pos) > GRASP_RADIUS {
            state.object_pos
        } else {
            state.scene.goal_pos
        };
        let mut motion = [0.0; 3];
        let d = dist3(&state.effector_pos, &target);
        if d > 1e-12 {
            let step_len = d.min(EXPERT_STEP);
            for i in 0..3 {
                motion[i] = (target[i] - state.effector_pos[i]) / d * step_len;
            }
        }
        // The demonstrator works through the domain's control frame: its
        // recorded commands are whatever produces the intended motion.
        let delta = frame.inverse_apply(motion);
        let mut action = Array1::zeros(ACTION_DIM);
        action[0] = delta[0];
        action[1] = delta[1];
        action[2] = delta[2];
        action[6] = EXPERT_GRIP;
        let observation = render_state(scene, &state.object_pos, &state.effector_pos);
        let (pos, force) = step(&mut state, &action, cfg);
        steps.push(TrajStep {
            observation,
            action,
            effector_pos: pos,
            gripper_force: force,
        });
        let tail = TrajectoryTail {
            object_pos: state.object_pos,
            goal_pos: state.scene.goal_pos,
            gripper_force: force,
            steps: t + 1,
        };
        if detect_success(&tail, cfg) {
            success = true;
            break;
        }
    }
    if !success {
        return Err(Error::ExpertFailed {
            reason: format!(
                "no success within {} steps (object at {:?}, goal {:?})",
                cfg.t_max, state.object_pos, state.scene.goal_pos
            ),
        });
    }
    let expert_actions = {
        let mut m = Array2::zeros((ACTION_DIM, steps.len()));
        for (t, s) in steps.iter().enumerate() {
            for i in 0..ACTION_DIM {
                m[(i, t)] = s.action[i];
            }
        }
        Some(m)
    };
    Ok(Trajectory {
        steps,
        success: true,
        expert_actions,
        final_object_pos: state.object_pos,
        scene: scene.clone(),
    })
}

/// Executes the policy open-loop: it is queried on the observation at the
/// start of each decision chunk and the predicted action repeats within the
/// chunk (`chunk_len = None` means one chunk spanning the whole horizon).
/// The episode stops early once the success condition holds.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    policy: &PolicyState,
    encoder: &Encoder,
    command: &CommandTokens,
    scene: &Scene,
    effector_start: [f64; 3],
    horizon: usize,
    chunk_len: Option<usize>,
    frame: &ControlFrame,
    cfg: &SuccessConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let horizon = horizon.min(cfg.t_max);
    let chunk = chunk_len.unwrap_or(horizon).max(1);
    let feature = command_feature(command, policy.d_c());
    let mut state = SimState::new(scene.clone(), effector_start).with_frame(*frame);
    let mut steps = Vec::new();
    let mut success = false;
    let mut action = Array1::zeros(ACTION_DIM);
    for t in 0..horizon {
        let observation = render_state(scene, &state.object_pos, &state.effector_pos);
        if t % chunk == 0 {
            let e = encoder.encode_normalized(&observation)?;
            let (a, _h) = policy.forward(&e, &feature)?;
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    term: "policy action",
                });
            }
            action = a;
        }
        let (pos, force) = step(&mut state, &action, cfg);
        steps.push(TrajStep {
            observation,
            action: action.clone(),
            effector_pos: pos,
            gripper_force: force,
        });
        let tail = TrajectoryTail {
            object_pos: state.object_pos,
            goal_pos: state.scene.goal_pos,
            gripper_force: force,
            steps: t + 1,
        };
        if detect_success(&tail, cfg) {
            success = true;
            break;
        }
    }
    Ok(Trajectory {
        steps,
        success,
        expert_actions: None,
        final_object_pos: state.object_pos,
        scene: scene.clone(),
    })
}

/// Scenario description: geometry sampling plus per-domain styles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Center of the box episode starts are sampled from; the effector
    /// starts at the object.
    pub effector_home: [f64; 3],
    /// Half-width of the planar start-sampling box around the home point.
    pub start_box_half: f64,
    /// Min/max goal distance from the start.
    pub goal_distance: [f64; 2],
    pub source_style: VisualStyle,
    pub target_style: VisualStyle,
    /// Command tokens for Source-domain episodes.
    pub command_tokens: Vec<u32>,
    /// Command tokens for Target-domain episodes (the deployment domain may
    /// phrase its task differently); absent = same as Source.
    #[serde(default)]
    pub target_command_tokens: Option<Vec<u32>>,
    /// Rollout horizon in steps.
    pub horizon: usize,
    /// Decision chunk length; absent = one open-loop chunk per episode.
    #[serde(default)]
    pub chunk_len: Option<usize>,
    /// Target-domain control frame (identity = style-only shift).
    #[serde(default)]
    pub target_frame: ControlFrame,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            effector_home: [0.5, 0.5, 0.5],
            start_box_half: 0.22,
            goal_distance: [0.25, 0.4],
            source_style: VisualStyle::default(),
            target_style: VisualStyle {
                background_intensity: 0.55,
                object_hue: 0.12,
                goal_hue: 0.48,
                effector_hue: 0.78,
                layout_offset: [18, -14],
            },
            command_tokens: vec![4, 19, 7, 2],
            target_command_tokens: None,
            horizon: 100,
            chunk_len: None,
            target_frame: ControlFrame::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.goal_distance[0] <= 0.0 || self.goal_distance[1] < self.goal_distance[0] {
            return Err(Error::Config("goal_distance must be 0 < min <= max".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.start_box_half < 0.0 || self.start_box_half > 0.45 {
            return Err(Error::Config("start_box_half must be in [0, 0.45]".into()));
        }
        for p in self.effector_home {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("effector_home outside workspace".into()));
            }
        }
        Ok(())
    }

    pub fn style_for(&self, domain: Domain) -> &VisualStyle {
        match domain {
            Domain::Source => &self.source_style,
            Domain::Target => &self.target_style,
        }
    }

    pub fn command_tokens_for(&self, domain: Domain) -> &[u32] {
        match domain {
            Domain::Source => &self.command_tokens,
            Domain::Target => self
                .target_command_tokens
                .as_deref()
                .unwrap_or(&self.command_tokens),
        }
    }

    pub fn frame_for(&self, domain: Domain) -> ControlFrame {
        match domain {
            Domain::Source => ControlFrame::default(),
            Domain::Target => self.target_frame,
        }
    }

    /// Samples a planar carry task: the start (where both the effector and
    /// the object begin) is drawn from a box around the home point, the goal
    /// on an annulus around the start.
    pub fn sample_scene<R: Rng>(&self, domain: Domain, rng: &mut R) -> Result<Scene> {
        let seed = rng.random::<u64>();
        let h = self.start_box_half;
        let start = [
            (self.effector_home[0] + (rng.random::<f64>() * 2.0 - 1.0) * h).clamp(0.05, 0.95),
            (self.effector_home[1] + (rng.random::<f64>() * 2.0 - 1.0) * h).clamp(0.05, 0.95),
            self.effector_home[2],
        ];
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let radius =
            self.goal_distance[0] + rng.random::<f64>() * (self.goal_distance[1] - self.goal_distance[0]);
        let goal = [
            (start[0] + radius * theta.cos()).clamp(0.05, 0.95),
            (start[1] + radius * theta.sin()).clamp(0.05, 0.95),
            start[2],
        ];
        Scene::new(start, goal, domain, self.style_for(domain).clone(), seed)
    }

    /// Where the effector begins an episode: at the scene's object.
    pub fn effector_start(scene: &Scene) -> [f64; 3] {
        scene.object_pos
    }
}

/// Per-step record for offline inspection (observations omitted).
#[derive(Debug, Serialize)]
struct StepRecord<'a> {
    action: Vec<f64>,
    effector_pos: &'a [f64; 3],
    gripper_force: f64,
}

#[derive(Debug, Serialize)]
struct TrajectoryRecord<'a> {
    domain: Domain,
    success: bool,
    steps: Vec<StepRecord<'a>>,
    final_object_pos: &'a [f64; 3],
    goal_pos: &'a [f64; 3],
}

/// Writes trajectories as one JSON object per line (geometry and actions;
/// pixel data is not exported).
pub fn export_trajectories_jsonl(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for traj in trajectories {
        let record = TrajectoryRecord {
            domain: traj.scene.domain,
            success: traj.success,
            steps: traj
                .steps
                .iter()
                .map(|s| StepRecord {
                    action: s.action.to_vec(),
                    effector_pos: &s.effector_pos,
                    gripper_force: s.gripper_force,
                })
                .collect(),
            final_object_pos: &traj.final_object_pos,
            goal_pos: &traj.scene.goal_pos,
        };
        serde_json::to_writer(&mut file, &record)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn simple_scene(domain: Domain) -> Scene {
        let spec = ScenarioSpec::default();
        Scene::new(
            [0.5, 0.5, 0.5],
            [0.75, 0.6, 0.5],
            domain,
            spec.style_for(domain).clone(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn render_is_deterministic() {
        let scene = simple_scene(Domain::Source);
        let a = render(&scene, &[0.3, 0.3, 0.5]);
        let b = render(&scene, &[0.3, 0.3, 0.5]);
        assert_eq!(a, b);
    }

    /// Test-side geometry decoder: centroid of exactly-colored pixels,
    /// unprojected through the style's layout offset.
    fn decode_blob(obs: &Observation, color: [u8; 3], offset: [i32; 2]) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
        for y in 0..IMG_H {
            for x in 0..IMG_W {
                if obs.at(y, x, 0) == color[0]
                    && obs.at(y, x, 1) == color[1]
                    && obs.at(y, x, 2) == color[2]
                {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        assert!(n > 0, "blob color not found");
        (
            (sx / n as f64 - offset[0] as f64) / (IMG_W - 1) as f64,
            (sy / n as f64 - offset[1] as f64) / (IMG_H - 1) as f64,
        )
    }

    #[test]
    fn source_and_target_renders_differ_but_decode_identically() {
        let spec = ScenarioSpec::default();
        let geometry = ([0.4, 0.45, 0.5], [0.7, 0.6, 0.5]);
        let source = Scene::new(
            geometry.0,
            geometry.1,
            Domain::Source,
            spec.source_style.clone(),
            1,
        )
        .unwrap();
        let target = Scene::new(
            geometry.0,
            geometry.1,
            Domain::Target,
            spec.target_style.clone(),
            1,
        )
        .unwrap();
        let eff = [0.2, 0.2, 0.5];
        let obs_s = render(&source, &eff);
        let obs_t = render(&target, &eff);
        assert_ne!(obs_s.pixels(), obs_t.pixels());

        let color_s = hsv_to_rgb(spec.source_style.object_hue, 0.9, 0.95);
        let color_t = hsv_to_rgb(spec.target_style.object_hue, 0.9, 0.95);
        let (xs, ys) = decode_blob(&obs_s, color_s, spec.source_style.layout_offset);
        let (xt, yt) = decode_blob(&obs_t, color_t, spec.target_style.layout_offset);
        assert!((xs - xt).abs() < 1e-9 && (ys - yt).abs() < 1e-9);
        assert!((xs - 0.4).abs() < 0.01 && (ys - 0.45).abs() < 0.01);
    }

    #[test]
    fn step_clamps_and_moves() {
        let cfg = SuccessConfig::default();
        let scene = simple_scene(Domain::Source);

        let mut state = SimState::new(scene.clone(), [0.5, 0.5, 0.5]);
        let zero = Array1::zeros(ACTION_DIM);
        let before = state.effector_pos;
        step(&mut state, &zero, &cfg);
        assert_eq!(state.effector_pos, before);

        let mut state = SimState::new(scene.clone(), [0.5, 0.5, 0.5]);
        let mut a = Array1::zeros(ACTION_DIM);
        a[0] = 0.05;
        step(&mut state, &a, &cfg);
        assert!((state.effector_pos[0] - 0.55).abs() < 1e-12);

        let mut state = SimState::new(scene, [0.2, 0.5, 0.5]);
        let mut big = Array1::zeros(ACTION_DIM);
        big[0] = 0.5;
        step(&mut state, &big, &cfg);
        assert!((state.effector_pos[0] - 0.3).abs() < 1e-12, "0.5 m request clamps to 0.1 m");
    }

    #[test]
    fn detect_success_conjuncts() {
        let cfg = SuccessConfig::default();
        let mk = |d: f64, force_err: f64, steps: usize| TrajectoryTail {
            object_pos: [0.5 + d, 0.5, 0.5],
            goal_pos: [0.5, 0.5, 0.5],
            gripper_force: cfg.f_expected + force_err,
            steps,
        };
        assert!(detect_success(&mk(0.03, 0.5, 40), &cfg));
        assert!(!detect_success(&mk(0.05, 0.5, 40), &cfg), "strict distance");
        assert!(!detect_success(&mk(0.03, 0.5, 100), &cfg), "timeout conjunct");
        assert!(!detect_success(&mk(0.03, 2.0, 40), &cfg), "strict force");
    }

    #[test]
    fn expert_succeeds_on_random_scenes() {
        let spec = ScenarioSpec::default();
        let cfg = SuccessConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for i in 0..200 {
            let domain = if i % 2 == 0 { Domain::Source } else { Domain::Target };
            let scene = spec.sample_scene(domain, &mut rng).unwrap();
            let traj = expert_demo(&scene, spec.effector_home, &ControlFrame::default(), &cfg).unwrap();
            assert!(traj.success);
            assert!(traj.len() <= cfg.t_max);
            assert!(traj.expert_actions.is_some());
        }
    }

    #[test]
    fn expert_demo_handles_two_phase_scenes() {
        // Object away from both the start and the goal: approach then carry.
        let scene = Scene::new(
            [0.3, 0.7, 0.5],
            [0.8, 0.2, 0.5],
            Domain::Source,
            VisualStyle::default(),
            3,
        )
        .unwrap();
        let cfg = SuccessConfig::default();
        let traj = expert_demo(&scene, [0.1, 0.1, 0.5], &ControlFrame::default(), &cfg).unwrap();
        assert!(traj.success);
        let d = dist3(&traj.final_object_pos, &scene.goal_pos);
        assert!(d < cfg.eps_pos);
    }

    #[test]
    fn expert_demo_trivial_when_object_at_goal() {
        let scene = Scene::new(
            [0.6, 0.6, 0.5],
            [0.6, 0.6, 0.5],
            Domain::Source,
            VisualStyle::default(),
            3,
        )
        .unwrap();
        let traj = expert_demo(&scene, [0.59, 0.6, 0.5], &ControlFrame::default(), &SuccessConfig::default()).unwrap();
        assert!(traj.success);
        assert!(traj.len() <= 3);
    }

    #[test]
    fn style_shift_does_not_change_expert_actions() {
        let spec = ScenarioSpec::default();
        let geometry = ([0.5, 0.5, 0.5], [0.72, 0.38, 0.5]);
        let cfg = SuccessConfig::default();
        let mk = |domain: Domain| {
            let scene = Scene::new(
                geometry.0,
                geometry.1,
                domain,
                spec.style_for(domain).clone(),
                1,
            )
            .unwrap();
            expert_demo(&scene, spec.effector_home, &ControlFrame::default(), &cfg).unwrap()
        };
        let source = mk(Domain::Source);
        let target = mk(Domain::Target);
        assert_eq!(source.len(), target.len());
        for (a, b) in source.steps.iter().zip(&target.steps) {
            assert_eq!(a.action, b.action);
        }
    }

    #[test]
    fn zero_action_policy_times_out_unless_object_at_goal() {
        use crate::encoder::{Encoder, EncoderConfig};
        use crate::policy::PolicyConfig;
        let enc_cfg = EncoderConfig {
            d_sem: 12,
            d_spa: 4,
            grid: 7,
            seed: 2,
        };
        let encoder = Encoder::from_config(&enc_cfg).unwrap();
        let policy = PolicyState::zeroed(
            &PolicyConfig {
                d_c: 4,
                hidden: 8,
                d_h: 8,
                lora_rank: 2,
                adapted_layers: vec![1],
                init_seed: 3,
                lora_init_sigma: 0.0,
            },
            16,
        )
        .unwrap();
        let cfg = SuccessConfig::default();
        let command = CommandTokens::new(vec![1, 2], 32).unwrap();
        let scene = simple_scene(Domain::Source);
        let traj = rollout(
            &policy,
            &encoder,
            &command,
            &scene,
            [0.5, 0.5, 0.5],
            cfg.t_max,
            None,
            &ControlFrame::default(),
            &cfg,
        )
        .unwrap();
        assert!(!traj.success, "zero-action policy fails by timeout");
        assert_eq!(traj.len(), cfg.t_max);

        // Object already at the goal: success despite a do-nothing policy.
        let easy = Scene::new(
            [0.75, 0.6, 0.5],
            [0.75, 0.6, 0.5],
            Domain::Source,
            VisualStyle::default(),
            1,
        )
        .unwrap();
        let traj = rollout(
            &policy,
            &encoder,
            &command,
            &easy,
            [0.75, 0.6, 0.5],
            cfg.t_max,
            None,
            &ControlFrame::default(),
            &cfg,
        )
        .unwrap();
        assert!(traj.success);
    }

    #[test]
    fn rollouts_are_reproducible() {
        use crate::encoder::{Encoder, EncoderConfig};
        use crate::policy::PolicyConfig;
        let encoder = Encoder::from_config(&EncoderConfig {
            d_sem: 12,
            d_spa: 4,
            grid: 7,
            seed: 2,
        })
        .unwrap();
        let policy = PolicyState::new(&PolicyConfig::default(), 16).unwrap();
        let command = CommandTokens::new(vec![1, 2], 32).unwrap();
        let scene = simple_scene(Domain::Target);
        let cfg = SuccessConfig::default();
        let run = || {
            rollout(
                &policy, &encoder, &command, &scene, [0.5, 0.5, 0.5], 40, None,
                &ControlFrame::default(), &cfg,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.action, y.action);
            assert_eq!(x.effector_pos, y.effector_pos);
        }
    }

    #[test]
    fn export_writes_one_line_per_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajs.jsonl");
        let scene = simple_scene(Domain::Source);
        let traj = expert_demo(&scene, [0.5, 0.5, 0.5], &ControlFrame::default(), &SuccessConfig::default()).unwrap();
        export_trajectories_jsonl(&path, &[traj.clone(), traj]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["success"], serde_json::Value::Bool(true));
    }
}
