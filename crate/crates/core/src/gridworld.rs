//! Stochastic pixel gridworld.
//!
//! A 24x24 binary image contains one controllable 3x3 object and, depending
//! on the scenario, up to three obstacles that move on their own. Every step
//! the controllable object moves 1-3 pixels along the chosen action direction
//! and each obstacle independently picks a uniform action and magnitude.
//! Moves clamp at the grid border (and at quadrant borders for confined
//! obstacles). If the controllable mask then overlaps any obstacle, the
//! controllable object teleports back to the scenario's reset anchor.
//!
//! Coordinates are (x right, y down); an object's anchor is the top-left of
//! its mask's bounding box. All objects render at intensity 1.0, so nothing
//! in a single image says which object is which; only the dynamics do.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GRID: i32 = 24;
pub const NUM_ACTIONS: usize = 4;
pub const IMAGE_PIXELS: usize = (GRID * GRID) as usize;
pub const EPISODE_CAP: u32 = 2000;

pub type Image = Vec<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Left, Action::Right, Action::Up, Action::Down];

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
            Action::Up => 2,
            Action::Down => 3,
        }
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    /// Unit displacement (dx, dy) of the action; y grows downward.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Up => (0, -1),
            Action::Down => (0, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Up => "up",
            Action::Down => "down",
        }
    }
}

/// Inclusive pixel rectangle used for confinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Rect {
    pub const fn full_grid() -> Rect {
        Rect { x0: 0, y0: 0, x1: GRID - 1, y1: GRID - 1 }
    }
}

/// One object: its pixel mask (offsets from the anchor), whether the agent
/// controls it, its starting anchor, and an optional confinement rectangle.
#[derive(Debug, Clone)]
pub struct ObjectSpec {
    pub mask: Vec<(i32, i32)>,
    pub controllable: bool,
    pub start: (i32, i32),
    pub confine: Rect,
}

impl ObjectSpec {
    fn mask_extent(&self) -> (i32, i32) {
        let w = self.mask.iter().map(|&(dx, _)| dx).max().unwrap() + 1;
        let h = self.mask.iter().map(|&(_, dy)| dy).max().unwrap() + 1;
        (w, h)
    }

    /// Legal anchor range so the whole mask stays inside the confinement.
    pub fn anchor_bounds(&self) -> Rect {
        let (w, h) = self.mask_extent();
        Rect {
            x0: self.confine.x0,
            y0: self.confine.y0,
            x1: self.confine.x1 - (w - 1),
            y1: self.confine.y1 - (h - 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Controllable object only; the pretraining transfer source.
    Simple,
    /// One free-roaming 3x1 obstacle; reset anchor (20,20).
    Situation1,
    /// Three obstacles, each confined to its own quadrant; reset anchor (2,2).
    Situation2,
    /// Situation-1 layout with a +1 reward for covering pixel (2,2).
    Reward,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Scenario> {
        match s {
            "simple" => Some(Scenario::Simple),
            "situation1" => Some(Scenario::Situation1),
            "situation2" => Some(Scenario::Situation2),
            "reward" => Some(Scenario::Reward),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Simple => "simple",
            Scenario::Situation1 => "situation1",
            Scenario::Situation2 => "situation2",
            Scenario::Reward => "reward",
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Scenario::Simple => 0,
            Scenario::Situation1 => 1,
            Scenario::Situation2 => 2,
            Scenario::Reward => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Scenario> {
        match id {
            0 => Some(Scenario::Simple),
            1 => Some(Scenario::Situation1),
            2 => Some(Scenario::Situation2),
            3 => Some(Scenario::Reward),
            _ => None,
        }
    }
}

const SQUARE_3X3: [(i32, i32); 9] = [
    (0, 0), (1, 0), (2, 0),
    (0, 1), (1, 1), (2, 1),
    (0, 2), (1, 2), (2, 2),
];
const BAR_V_3X1: [(i32, i32); 3] = [(0, 0), (0, 1), (0, 2)];
const BAR_H_1X3: [(i32, i32); 3] = [(0, 0), (1, 0), (2, 0)];
/// Five-dot mask: a plus shape (center plus its 4-neighbors) in a 3x3 box.
const FIVE_DOT: [(i32, i32); 5] = [(1, 0), (0, 1), (1, 1), (2, 1), (1, 2)];

/// Scenario-level environment description: the objects, the collision reset
/// anchor, and which scenario this is.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub scenario: Scenario,
    pub objects: Vec<ObjectSpec>,
    pub reset_anchor: (i32, i32),
}

impl EnvConfig {
    pub fn for_scenario(scenario: Scenario) -> EnvConfig {
        let controllable = |start| ObjectSpec {
            mask: SQUARE_3X3.to_vec(),
            controllable: true,
            start,
            confine: Rect::full_grid(),
        };
        match scenario {
            Scenario::Simple => EnvConfig {
                scenario,
                objects: vec![controllable((20, 20))],
                reset_anchor: (20, 20),
            },
            Scenario::Situation1 | Scenario::Reward => EnvConfig {
                scenario,
                objects: vec![
                    controllable((20, 20)),
                    ObjectSpec {
                        mask: BAR_V_3X1.to_vec(),
                        controllable: false,
                        start: (10, 10),
                        confine: Rect::full_grid(),
                    },
                ],
                reset_anchor: (20, 20),
            },
            Scenario::Situation2 => {
                // Quadrants are the four 12x12 blocks; the start (2,2) sits in
                // the top-left one, so the obstacles take the other three.
                let tr = Rect { x0: 12, y0: 0, x1: 23, y1: 11 };
                let bl = Rect { x0: 0, y0: 12, x1: 11, y1: 23 };
                let br = Rect { x0: 12, y0: 12, x1: 23, y1: 23 };
                EnvConfig {
                    scenario,
                    objects: vec![
                        controllable((2, 2)),
                        ObjectSpec {
                            mask: BAR_V_3X1.to_vec(),
                            controllable: false,
                            start: (17, 4),
                            confine: tr,
                        },
                        ObjectSpec {
                            mask: BAR_H_1X3.to_vec(),
                            controllable: false,
                            start: (4, 17),
                            confine: bl,
                        },
                        ObjectSpec {
                            mask: FIVE_DOT.to_vec(),
                            controllable: false,
                            start: (17, 17),
                            confine: br,
                        },
                    ],
                    reset_anchor: (2, 2),
                }
            }
        }
    }

    pub fn controllable_index(&self) -> usize {
        self.objects.iter().position(|o| o.controllable).expect("one controllable object")
    }

    pub fn obstacle_indices(&self) -> Vec<usize> {
        (0..self.objects.len()).filter(|&i| !self.objects[i].controllable).collect()
    }
}

/// One environment configuration: every object's anchor plus the RNG that
/// drives this state's future. Cloning a state forks its randomness.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub anchors: Vec<(i32, i32)>,
    pub rng: ChaCha8Rng,
}

impl EnvState {
    pub fn reseeded(&self, seed: u64) -> EnvState {
        EnvState {
            anchors: self.anchors.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// The environment: scenario config plus the step/render rules.
#[derive(Debug, Clone)]
pub struct Gridworld {
    pub config: EnvConfig,
}

fn clamp(v: i32, lo: i32, hi: i32) -> i32 {
    v.max(lo).min(hi)
}

impl Gridworld {
    pub fn new(scenario: Scenario) -> Gridworld {
        Gridworld { config: EnvConfig::for_scenario(scenario) }
    }

    /// State with every object at its starting anchor.
    pub fn initial_state(&self, seed: u64) -> EnvState {
        EnvState {
            anchors: self.config.objects.iter().map(|o| o.start).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// State with uniformly random legal anchors for every object.
    pub fn random_state(&self, rng: &mut impl Rng) -> EnvState {
        let anchors = self
            .config
            .objects
            .iter()
            .map(|o| {
                let b = o.anchor_bounds();
                (rng.gen_range(b.x0..=b.x1), rng.gen_range(b.y0..=b.y1))
            })
            .collect();
        EnvState {
            anchors,
            rng: ChaCha8Rng::seed_from_u64(rng.gen()),
        }
    }

    /// Binary render: pixels covered by any object are 1.0 (overlaps clamp).
    pub fn render(&self, state: &EnvState) -> Image {
        let mut img = vec![0.0f32; IMAGE_PIXELS];
        for (obj, &(ax, ay)) in self.config.objects.iter().zip(&state.anchors) {
            for &(dx, dy) in &obj.mask {
                let (x, y) = (ax + dx, ay + dy);
                debug_assert!((0..GRID).contains(&x) && (0..GRID).contains(&y));
                img[(y * GRID + x) as usize] = 1.0;
            }
        }
        img
    }

    fn move_object(&self, idx: usize, anchor: (i32, i32), action: Action, magnitude: i32) -> (i32, i32) {
        let b = self.config.objects[idx].anchor_bounds();
        let (dx, dy) = action.delta();
        (
            clamp(anchor.0 + dx * magnitude, b.x0, b.x1),
            clamp(anchor.1 + dy * magnitude, b.y0, b.y1),
        )
    }

    fn masks_overlap(&self, i: usize, ai: (i32, i32), j: usize, aj: (i32, i32)) -> bool {
        let mi = &self.config.objects[i].mask;
        let mj = &self.config.objects[j].mask;
        for &(dxi, dyi) in mi {
            for &(dxj, dyj) in mj {
                if ai.0 + dxi == aj.0 + dxj && ai.1 + dyi == aj.1 + dyj {
                    return true;
                }
            }
        }
        false
    }

    /// True if the controllable mask overlaps any obstacle mask.
    pub fn collision(&self, state: &EnvState) -> bool {
        let c = self.config.controllable_index();
        self.config
            .obstacle_indices()
            .into_iter()
            .any(|o| self.masks_overlap(c, state.anchors[c], o, state.anchors[o]))
    }

    /// Advance the state: controllable moves 1-3 pixels along `action`,
    /// every obstacle moves 1-3 pixels along its own uniform action, and a
    /// collision teleports the controllable anchor to the reset anchor.
    /// Returns whether a collision reset happened.
    ///
    /// Draw order is fixed (controllable magnitude, then per obstacle action
    /// and magnitude), so a seed fully determines a trajectory.
    pub fn step(&self, state: &mut EnvState, action: Action) -> bool {
        let c = self.config.controllable_index();
        let mag = state.rng.gen_range(1..=3);
        state.anchors[c] = self.move_object(c, state.anchors[c], action, mag);
        for o in self.config.obstacle_indices() {
            let oa = Action::from_index(state.rng.gen_range(0..NUM_ACTIONS));
            let omag = state.rng.gen_range(1..=3);
            state.anchors[o] = self.move_object(o, state.anchors[o], oa, omag);
        }
        if self.collision(state) {
            state.anchors[c] = self.config.reset_anchor;
            true
        } else {
            false
        }
    }

    /// Render `n` independent next states under `action`, leaving `state`
    /// untouched. The samples consume one continuing RNG stream forked from
    /// the state, so the first sample equals what `step` would have produced.
    pub fn sample_next_states(&self, state: &EnvState, action: Action, n: usize) -> Vec<Image> {
        let mut rng = state.rng.clone();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut s = EnvState { anchors: state.anchors.clone(), rng };
            self.step(&mut s, action);
            out.push(self.render(&s));
            rng = s.rng;
        }
        out
    }

    /// True if the controllable mask covers the goal pixel (2,2).
    pub fn covers_goal(&self, state: &EnvState) -> bool {
        let c = self.config.controllable_index();
        let (ax, ay) = state.anchors[c];
        self.config.objects[c]
            .mask
            .iter()
            .any(|&(dx, dy)| ax + dx == 2 && ay + dy == 2)
    }

    /// One step of the extrinsic-reward task. `steps_taken` counts steps
    /// already finished in the episode; the episode terminates on reward or
    /// when the step count reaches [`EPISODE_CAP`].
    pub fn reward_step(
        &self,
        state: &mut EnvState,
        action: Action,
        steps_taken: u32,
    ) -> crate::Result<RewardStep> {
        if self.config.scenario != Scenario::Reward {
            return Err(crate::Error::Config(format!(
                "reward_step called on scenario {}",
                self.config.scenario.name()
            )));
        }
        let collided = self.step(state, action);
        let reached = self.covers_goal(state);
        let reward = if reached { 1.0 } else { 0.0 };
        let done = reached || steps_taken + 1 >= EPISODE_CAP;
        Ok(RewardStep { reward, done, collided, reached })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RewardStep {
    pub reward: f32,
    pub done: bool,
    pub collided: bool,
    pub reached: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit_count(img: &Image) -> usize {
        img.iter().filter(|&&v| v == 1.0).count()
    }

    #[test]
    fn empty_env_renders_all_zero() {
        let gw = Gridworld {
            config: EnvConfig { scenario: Scenario::Simple, objects: vec![], reset_anchor: (0, 0) },
        };
        let state = EnvState { anchors: vec![], rng: ChaCha8Rng::seed_from_u64(0) };
        assert!(gw.render(&state).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_object_lights_its_mask() {
        let gw = Gridworld::new(Scenario::Simple);
        let mut state = gw.initial_state(0);
        state.anchors[0] = (10, 10);
        let img = gw.render(&state);
        assert_eq!(lit_count(&img), 9);
        for y in 10..13 {
            for x in 10..13 {
                assert_eq!(img[y * 24 + x], 1.0);
            }
        }
    }

    #[test]
    fn situation1_disjoint_objects_light_twelve_pixels() {
        let gw = Gridworld::new(Scenario::Situation1);
        let state = gw.initial_state(0); // (20,20) square and (10,10) bar: disjoint
        assert_eq!(lit_count(&gw.render(&state)), 12);
    }

    #[test]
    fn render_is_idempotent() {
        let gw = Gridworld::new(Scenario::Situation2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = gw.random_state(&mut rng);
        assert_eq!(gw.render(&state), gw.render(&state));
    }

    #[test]
    fn clamp_keeps_anchor_legal() {
        let gw = Gridworld::new(Scenario::Simple);
        let mut state = gw.initial_state(3);
        state.anchors[0] = (21, 10); // 3x3 mask: max anchor is 21
        // Whatever magnitude gets drawn, right cannot push past 21.
        gw.step(&mut state, Action::Right);
        assert_eq!(state.anchors[0].0, 21);
    }

    #[test]
    fn seeded_trajectories_are_identical() {
        let gw = Gridworld::new(Scenario::Situation2);
        let run = |seed| {
            let mut s = gw.initial_state(seed);
            let mut imgs = Vec::new();
            for i in 0..50 {
                gw.step(&mut s, Action::from_index(i % 4));
                imgs.push(gw.render(&s));
            }
            imgs
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn single_sample_matches_step_with_same_draws() {
        let gw = Gridworld::new(Scenario::Situation1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let state = gw.random_state(&mut rng);
        let sampled = gw.sample_next_states(&state, Action::Down, 1);
        let mut stepped = state.clone();
        gw.step(&mut stepped, Action::Down);
        assert_eq!(sampled[0], gw.render(&stepped));
    }

    #[test]
    fn sampling_leaves_state_untouched() {
        let gw = Gridworld::new(Scenario::Situation1);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let state = gw.random_state(&mut rng);
        let before = (state.anchors.clone(), state.rng.clone());
        let imgs = gw.sample_next_states(&state, Action::Left, 20);
        assert_eq!(imgs.len(), 20);
        assert_eq!(before.0, state.anchors);
        assert_eq!(before.1, state.rng);
    }

    #[test]
    fn degenerate_stochasticity_simple_env_fixed_draws() {
        // In the simple env there are no obstacles; with the same fork the
        // first draw decides everything, so distinct samples may differ only
        // via their continuing stream. Sanity: all samples stay legal and
        // differ from the base image only in object position.
        let gw = Gridworld::new(Scenario::Simple);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let state = gw.random_state(&mut rng);
        for img in gw.sample_next_states(&state, Action::Up, 10) {
            assert_eq!(lit_count(&img), 9);
        }
    }

    #[test]
    fn reward_step_requires_reward_scenario() {
        let gw = Gridworld::new(Scenario::Situation1);
        let mut state = gw.initial_state(0);
        assert!(gw.reward_step(&mut state, Action::Up, 0).is_err());
    }

    #[test]
    fn goal_coverage_gives_reward_and_done() {
        let gw = Gridworld::new(Scenario::Reward);
        let mut state = gw.initial_state(0);
        state.anchors[0] = (2, 2);
        state.anchors[1] = (15, 15);
        assert!(gw.covers_goal(&state));
        // Anchor (0..2, 0..2) covers (2,2); e.g. (1,1).
        state.anchors[0] = (1, 1);
        assert!(gw.covers_goal(&state));
        state.anchors[0] = (3, 3);
        assert!(!gw.covers_goal(&state));
    }

    #[test]
    fn episode_cap_terminates_without_reward() {
        let gw = Gridworld::new(Scenario::Reward);
        let mut state = gw.initial_state(1);
        state.anchors[0] = (20, 20);
        let out = gw.reward_step(&mut state, Action::Down, EPISODE_CAP - 1).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 0.0);
    }
}
