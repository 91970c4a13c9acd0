//! Desk-scale particle worlds: cooperative navigation (spread) and
//! predator-prey pursuit (tag) with a scripted evader, plus three optional
//! asymmetry injections — sensor bias, a penalized safety quadrant, and
//! decoy entities that mimic the objective but never pay reward.
//!
//! Physics is a damped double integrator on the unit arena with reward-only
//! contacts: `v <- (1 - damping) v + a dt`, speed-clamped, then
//! `p <- p + v dt`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid_err, shape_err, Result};
use crate::graph::{GraphState, NodeRole};
use crate::symmetry::GroupElement;
use crate::tensor::Tensor;

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.25;
pub const ENTITY_RADIUS: f64 = 0.15;
pub const AGENT_MAX_SPEED: f64 = 1.0;
pub const EVADER_MAX_SPEED: f64 = 1.3;
pub const DEFAULT_HORIZON: usize = 25;
pub const DEFAULT_NUM_AGENTS: usize = 3;
pub const SPREAD_LANDMARKS: usize = 3;
pub const TAG_LANDMARKS: usize = 2;
/// Constant observation offset applied to non-team entities in bias mode.
pub const SENSOR_BIAS: [f64; 2] = [0.3, 0.0];
pub const SAFETY_PENALTY_TAG: f64 = -15.0;
pub const SAFETY_PENALTY_SPREAD: f64 = -5.0;
pub const TAG_CAPTURE_REWARD: f64 = 10.0;
/// True landmark positions in spread's decoy mode.
pub const SPREAD_DECOY_TRUE_LANDMARKS: [[f64; 2]; 3] = [[1.5, 0.9], [-0.9, 0.0], [-0.5, -0.5]];
/// True (static) evader position in tag's decoy mode.
pub const TAG_DECOY_TRUE_EVADER: [f64; 2] = [0.75, 0.75];
/// Scale of the evader's per-pursuer repulsion (divided by pursuer count).
pub const EVADER_REPULSION_GAIN: f64 = 0.3;
/// Cap on a single pursuer's repulsion magnitude.
pub const EVADER_REPULSION_CAP: f64 = 2.0;
/// The evader's final force is normalized then divided by this.
pub const EVADER_FORCE_DIVISOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Spread,
    Tag,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Spread => "spread",
            Scenario::Tag => "tag",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Asymmetry {
    None,
    Bias,
    Safety,
    Decoy,
}

impl Asymmetry {
    pub fn name(self) -> &'static str {
        match self {
            Asymmetry::None => "none",
            Asymmetry::Bias => "bias",
            Asymmetry::Safety => "safety",
            Asymmetry::Decoy => "decoy",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub asymmetry: Asymmetry,
    pub num_agents: usize,
    pub episode_length: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, asymmetry: Asymmetry, seed: u64) -> Self {
        Self {
            scenario,
            asymmetry,
            num_agents: DEFAULT_NUM_AGENTS,
            episode_length: DEFAULT_HORIZON,
            seed,
        }
    }
}

/// Ground-truth entity category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityRole {
    Agent,
    Evader,
    Landmark,
    Decoy,
}

#[derive(Debug, Clone, Copy)]
pub struct Entity {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub role: EntityRole,
}

/// Per-step result: one observation graph per learning agent, per-agent
/// rewards, and the horizon flag.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub observations: Vec<GraphState>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// Anything the trainer can roll out on.
pub trait Environment {
    fn num_agents(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Start a fresh episode and return initial observations.
    fn reset(&mut self) -> Result<Vec<GraphState>>;
    /// Advance one step with per-agent force actions in `[-1, 1]^2`.
    fn step(&mut self, actions: &[[f64; 2]]) -> Result<StepResult>;
}

/// The particle world.
#[derive(Debug, Clone)]
pub struct World {
    cfg: ScenarioConfig,
    entities: Vec<Entity>,
    step_count: usize,
    rng: ChaCha8Rng,
    clamp_warnings: u64,
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        if cfg.num_agents == 0 {
            return Err(invalid_err!("need at least one agent"));
        }
        if cfg.scenario == Scenario::Tag && cfg.asymmetry == Asymmetry::Safety {
            // Permitted; pursuers may spawn anywhere (only spread excludes
            // the quadrant at spawn).
        }
        let mut world = Self {
            cfg,
            entities: Vec::new(),
            step_count: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            clamp_warnings: 0,
        };
        world.spawn()?;
        Ok(world)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Count of action components that had to be clamped into `[-1, 1]`.
    pub fn clamp_warnings(&self) -> u64 {
        self.clamp_warnings
    }

    fn spawn(&mut self) -> Result<()> {
        self.entities.clear();
        self.step_count = 0;
        let cfg = self.cfg;
        let uniform = |rng: &mut ChaCha8Rng| -> [f64; 2] {
            [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
        };
        // Agents.
        for _ in 0..cfg.num_agents {
            let pos = loop {
                let p = uniform(&mut self.rng);
                let excluded = cfg.scenario == Scenario::Spread
                    && cfg.asymmetry == Asymmetry::Safety
                    && p[0] > 0.0
                    && p[1] > 0.0;
                if !excluded {
                    break p;
                }
            };
            self.entities.push(Entity { pos, vel: [0.0; 2], role: EntityRole::Agent });
        }
        match cfg.scenario {
            Scenario::Spread => {
                if cfg.asymmetry == Asymmetry::Decoy {
                    for pos in SPREAD_DECOY_TRUE_LANDMARKS {
                        self.entities.push(Entity { pos, vel: [0.0; 2], role: EntityRole::Landmark });
                    }
                    for _ in 0..SPREAD_LANDMARKS {
                        let pos = uniform(&mut self.rng);
                        self.entities.push(Entity { pos, vel: [0.0; 2], role: EntityRole::Decoy });
                    }
                } else {
                    for _ in 0..SPREAD_LANDMARKS {
                        let pos = uniform(&mut self.rng);
                        self.entities.push(Entity { pos, vel: [0.0; 2], role: EntityRole::Landmark });
                    }
                }
            }
            Scenario::Tag => {
                let evader_pos = if cfg.asymmetry == Asymmetry::Decoy {
                    TAG_DECOY_TRUE_EVADER
                } else {
                    uniform(&mut self.rng)
                };
                self.entities.push(Entity { pos: evader_pos, vel: [0.0; 2], role: EntityRole::Evader });
                for _ in 0..TAG_LANDMARKS {
                    let pos = uniform(&mut self.rng);
                    self.entities.push(Entity { pos, vel: [0.0; 2], role: EntityRole::Landmark });
                }
                if cfg.asymmetry == Asymmetry::Decoy {
                    let pos = uniform(&mut self.rng);
                    self.entities.push(Entity { pos, vel: [0.0; 2], role: EntityRole::Decoy });
                }
            }
        }
        Ok(())
    }

    fn agent_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.role == EntityRole::Agent)
            .map(|(i, _)| i)
    }

    fn evader_index(&self) -> Option<usize> {
        self.entities.iter().position(|e| e.role == EntityRole::Evader)
    }

    /// The scripted evader's force: center attraction plus per-pursuer
    /// repulsion `(gain / N) (x_e - x_j) / ||x_e - x_j||^2` capped at
    /// [`EVADER_REPULSION_CAP`]; the total is normalized then divided by
    /// [`EVADER_FORCE_DIVISOR`].
    pub fn evader_policy(&self) -> Result<[f64; 2]> {
        let e = self
            .evader_index()
            .ok_or_else(|| invalid_err!("no evader in this scenario"))?;
        let evader = self.entities[e].pos;
        let pursuers: Vec<[f64; 2]> = self.agent_indices().map(|i| self.entities[i].pos).collect();
        Ok(evader_force(evader, &pursuers))
    }

    /// Rotate the whole physical state (positions and velocities) about the
    /// origin; used by the environment symmetry checks.
    pub fn apply_rotation(&mut self, g: &GroupElement) -> Result<()> {
        if g.dim() != 2 {
            return Err(shape_err!("world rotation must be 2-D"));
        }
        if g.translation().is_some() {
            return Err(invalid_err!("world rotation must not translate"));
        }
        for ent in &mut self.entities {
            let p = g.apply_point(&ent.pos);
            let v = g.apply_point(&ent.vel);
            ent.pos = [p[0], p[1]];
            ent.vel = [v[0], v[1]];
        }
        Ok(())
    }

    /// Observation graph for one agent: a complete graph over all entities.
    /// Invariant features are `[agent, adversary, landmark]` one-hot (+ self
    /// flag + speed); decoys are encoded as the objective they mimic, while
    /// `roles()` keeps the truth for measurement masks.
    pub fn observe(&self, agent: usize) -> Result<GraphState> {
        let agent_ids: Vec<usize> = self.agent_indices().collect();
        let &agent_entity = agent_ids
            .get(agent)
            .ok_or_else(|| invalid_err!("agent {agent} does not exist"))?;
        let n = self.entities.len();
        let mut h = Tensor::zeros(n, 5);
        let mut u = Tensor::zeros(n, 2);
        let mut v = Tensor::zeros(n, 2);
        let mut roles = Vec::with_capacity(n);
        for (i, ent) in self.entities.iter().enumerate() {
            let (slot, role) = match ent.role {
                EntityRole::Agent => {
                    if i == agent_entity {
                        (0, NodeRole::AgentSelf)
                    } else {
                        (0, NodeRole::Teammate)
                    }
                }
                EntityRole::Evader => (1, NodeRole::Adversary),
                EntityRole::Landmark => (2, NodeRole::Landmark),
                EntityRole::Decoy => {
                    // Visually indistinguishable from the objective.
                    let slot = match self.cfg.scenario {
                        Scenario::Tag => 1,
                        Scenario::Spread => 2,
                    };
                    (slot, NodeRole::Decoy)
                }
            };
            h.set(i, slot, 1.0);
            if i == agent_entity {
                h.set(i, 3, 1.0);
            }
            let speed = crate::math::sqrt(ent.vel[0] * ent.vel[0] + ent.vel[1] * ent.vel[1]);
            h.set(i, 4, speed);

            let mut pos = ent.pos;
            if self.cfg.asymmetry == Asymmetry::Bias && ent.role != EntityRole::Agent {
                pos[0] += SENSOR_BIAS[0];
                pos[1] += SENSOR_BIAS[1];
            }
            u.set(i, 0, pos[0]);
            u.set(i, 1, pos[1]);
            v.set(i, 0, ent.vel[0]);
            v.set(i, 1, ent.vel[1]);
            roles.push(role);
        }
        GraphState::new(h, u, Some(v), roles)
    }

    fn integrate(entity: &mut Entity, action: [f64; 2], max_speed: f64) {
        entity.vel[0] = (1.0 - DAMPING) * entity.vel[0] + action[0] * DT;
        entity.vel[1] = (1.0 - DAMPING) * entity.vel[1] + action[1] * DT;
        let speed =
            crate::math::sqrt(entity.vel[0] * entity.vel[0] + entity.vel[1] * entity.vel[1]);
        if speed > max_speed {
            let k = max_speed / speed;
            entity.vel[0] *= k;
            entity.vel[1] *= k;
        }
        entity.pos[0] += entity.vel[0] * DT;
        entity.pos[1] += entity.vel[1] * DT;
    }

    fn safety_term(&self, pos: [f64; 2]) -> f64 {
        if self.cfg.asymmetry == Asymmetry::Safety {
            safety_penalty(pos, self.cfg.scenario)
        } else {
            0.0
        }
    }

    /// Per-agent rewards on the current (post-integration) state.
    fn rewards(&self) -> Vec<f64> {
        let agent_ids: Vec<usize> = self.agent_indices().collect();
        match self.cfg.scenario {
            Scenario::Spread => {
                // Shared coverage term over true landmarks only.
                let mut shared = 0.0;
                for lm in self.entities.iter().filter(|e| e.role == EntityRole::Landmark) {
                    let mut best = f64::INFINITY;
                    for &a in &agent_ids {
                        best = best.min(dist(self.entities[a].pos, lm.pos));
                    }
                    shared -= best;
                }
                agent_ids
                    .iter()
                    .map(|&a| {
                        let mut r = shared;
                        for &b in &agent_ids {
                            if b != a && is_collision(self.entities[a].pos, self.entities[b].pos) {
                                r -= 1.0;
                            }
                        }
                        r + self.safety_term(self.entities[a].pos)
                    })
                    .collect()
            }
            Scenario::Tag => {
                let caught = self.evader_index().is_some_and(|e| {
                    agent_ids
                        .iter()
                        .any(|&a| is_collision(self.entities[a].pos, self.entities[e].pos))
                });
                let base = if caught { TAG_CAPTURE_REWARD } else { 0.0 };
                agent_ids
                    .iter()
                    .map(|&a| base + self.safety_term(self.entities[a].pos))
                    .collect()
            }
        }
    }
}

impl Environment for World {
    fn num_agents(&self) -> usize {
        self.cfg.num_agents
    }

    fn horizon(&self) -> usize {
        self.cfg.episode_length
    }

    fn reset(&mut self) -> Result<Vec<GraphState>> {
        self.spawn()?;
        (0..self.cfg.num_agents).map(|a| self.observe(a)).collect()
    }

    fn step(&mut self, actions: &[[f64; 2]]) -> Result<StepResult> {
        if actions.len() != self.cfg.num_agents {
            return Err(shape_err!(
                "{} actions for {} agents",
                actions.len(),
                self.cfg.num_agents
            ));
        }
        if self.step_count >= self.cfg.episode_length {
            return Err(invalid_err!("episode is done; reset before stepping"));
        }
        // Scripted entities decide before anything moves.
        let evader_action = match (self.cfg.scenario, self.cfg.asymmetry) {
            (Scenario::Tag, Asymmetry::Decoy) => Some([0.0, 0.0]), // true evader is static
            (Scenario::Tag, _) => Some(self.evader_policy()?),
            _ => None,
        };
        let decoy_actions: Vec<(usize, [f64; 2])> = self
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.role == EntityRole::Decoy)
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
            .into_iter()
            .map(|i| {
                (
                    i,
                    [
                        self.rng.random_range(-1.0..=1.0),
                        self.rng.random_range(-1.0..=1.0),
                    ],
                )
            })
            .collect();

        let agent_ids: Vec<usize> = self.agent_indices().collect();
        for (&idx, action) in agent_ids.iter().zip(actions) {
            let mut a = *action;
            for c in &mut a {
                if !(-1.0..=1.0).contains(c) {
                    *c = c.clamp(-1.0, 1.0);
                    self.clamp_warnings += 1;
                }
            }
            Self::integrate(&mut self.entities[idx], a, AGENT_MAX_SPEED);
        }
        if let (Some(e), Some(a)) = (self.evader_index(), evader_action) {
            if self.cfg.asymmetry != Asymmetry::Decoy {
                Self::integrate(&mut self.entities[e], a, EVADER_MAX_SPEED);
            }
        }
        for (i, a) in decoy_actions {
            Self::integrate(&mut self.entities[i], a, AGENT_MAX_SPEED);
        }

        self.step_count += 1;
        let rewards = self.rewards();
        let observations = (0..self.cfg.num_agents)
            .map(|a| self.observe(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(StepResult {
            observations,
            rewards,
            done: self.step_count >= self.cfg.episode_length,
        })
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    crate::math::sqrt(dx * dx + dy * dy)
}

fn is_collision(a: [f64; 2], b: [f64; 2]) -> bool {
    dist(a, b) < 2.0 * ENTITY_RADIUS
}

/// Safety-region penalty: a flat negative reward iff both coordinates are
/// strictly positive.
pub fn safety_penalty(pos: [f64; 2], scenario: Scenario) -> f64 {
    if pos[0] > 0.0 && pos[1] > 0.0 {
        match scenario {
            Scenario::Tag => SAFETY_PENALTY_TAG,
            Scenario::Spread => SAFETY_PENALTY_SPREAD,
        }
    } else {
        0.0
    }
}

/// The scripted evader force law (see [`World::evader_policy`]). A pursuer
/// exactly coincident with the evader contributes nothing (its direction is
/// undefined); any finite repulsion is capped at [`EVADER_REPULSION_CAP`].
pub fn evader_force(evader: [f64; 2], pursuers: &[[f64; 2]]) -> [f64; 2] {
    let mut total = [-evader[0], -evader[1]];
    let n = pursuers.len().max(1) as f64;
    for p in pursuers {
        let d = [evader[0] - p[0], evader[1] - p[1]];
        let d2 = d[0] * d[0] + d[1] * d[1];
        if d2 == 0.0 {
            continue;
        }
        let mut t = [
            EVADER_REPULSION_GAIN / n * d[0] / d2,
            EVADER_REPULSION_GAIN / n * d[1] / d2,
        ];
        let mag = crate::math::sqrt(t[0] * t[0] + t[1] * t[1]);
        if mag > EVADER_REPULSION_CAP {
            let k = EVADER_REPULSION_CAP / mag;
            t[0] *= k;
            t[1] *= k;
        }
        total[0] += t[0];
        total[1] += t[1];
    }
    let mag = crate::math::sqrt(total[0] * total[0] + total[1] * total[1]);
    if mag == 0.0 {
        return [0.0, 0.0];
    }
    [
        total[0] / mag / EVADER_FORCE_DIVISOR,
        total[1] / mag / EVADER_FORCE_DIVISOR,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(scenario: Scenario, asym: Asymmetry, seed: u64) -> World {
        World::new(ScenarioConfig::new(scenario, asym, seed)).unwrap()
    }

    #[test]
    fn spread_spawn_bounds_and_counts() {
        let w = world(Scenario::Spread, Asymmetry::None, 42);
        assert_eq!(w.entities().len(), 6);
        assert_eq!(w.agent_indices().count(), 3);
        for e in w.entities() {
            assert!(e.pos[0] >= -1.0 && e.pos[0] <= 1.0);
            assert!(e.pos[1] >= -1.0 && e.pos[1] <= 1.0);
            assert_eq!(e.vel, [0.0, 0.0]);
        }
    }

    #[test]
    fn spread_safety_never_spawns_agents_in_quadrant() {
        for seed in 0..50 {
            let w = world(Scenario::Spread, Asymmetry::Safety, seed);
            for i in w.agent_indices() {
                let p = w.entities()[i].pos;
                assert!(!(p[0] > 0.0 && p[1] > 0.0), "seed {seed} spawned {p:?}");
            }
        }
    }

    #[test]
    fn decoy_placements_are_bit_exact() {
        let w = world(Scenario::Spread, Asymmetry::Decoy, 7);
        let landmarks: Vec<[f64; 2]> = w
            .entities()
            .iter()
            .filter(|e| e.role == EntityRole::Landmark)
            .map(|e| e.pos)
            .collect();
        assert_eq!(landmarks, SPREAD_DECOY_TRUE_LANDMARKS.to_vec());
        assert_eq!(
            w.entities().iter().filter(|e| e.role == EntityRole::Decoy).count(),
            3
        );

        let w = world(Scenario::Tag, Asymmetry::Decoy, 7);
        let evader = w.entities()[w.evader_index().unwrap()];
        assert_eq!(evader.pos, TAG_DECOY_TRUE_EVADER);
        assert_eq!(
            w.entities().iter().filter(|e| e.role == EntityRole::Decoy).count(),
            1
        );
    }

    #[test]
    fn integrator_matches_hand_step() {
        let mut w = world(Scenario::Spread, Asymmetry::None, 3);
        let before: Vec<[f64; 2]> = w.entities().iter().map(|e| e.pos).collect();
        let res = w
            .step(&[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
            .unwrap();
        let moved = w.entities()[0];
        assert!((moved.vel[0] - 0.1).abs() < 1e-15);
        assert_eq!(moved.vel[1], 0.0);
        assert!((moved.pos[0] - (before[0][0] + 0.01)).abs() < 1e-15);
        // Zero-action agents with zero velocity stay put.
        assert_eq!(w.entities()[1].pos, before[1]);
        assert!(!res.done);
    }

    #[test]
    fn horizon_terminates_episode() {
        let mut w = world(Scenario::Spread, Asymmetry::None, 4);
        let actions = [[0.0, 0.0]; 3];
        for step in 0..DEFAULT_HORIZON {
            let res = w.step(&actions).unwrap();
            assert_eq!(res.done, step + 1 == DEFAULT_HORIZON);
        }
        assert!(w.step(&actions).is_err());
    }

    #[test]
    fn evader_center_attraction_alone() {
        let f = evader_force([1.0, 0.0], &[]);
        assert!((f[0] + 1.0 / 3.0).abs() < 1e-15);
        assert!(f[1].abs() < 1e-15);
    }

    #[test]
    fn evader_symmetric_pursuers_cancel_at_origin() {
        let f = evader_force([0.0, 0.0], &[[0.5, 0.0], [-0.5, 0.0], [0.0, 0.5], [0.0, -0.5]]);
        assert_eq!(f, [0.0, 0.0]);
    }

    #[test]
    fn evader_close_pursuer_is_capped_and_pushes_away() {
        // Pursuer at (0.9, 0), evader at (1, 0): raw repulsion magnitude
        // 0.3 / 0.01 = 30 exceeds the cap, so the term is 2 in +x; total
        // (-1 + 2, 0) normalizes to +x and shrinks to 1/3.
        let f = evader_force([1.0, 0.0], &[[0.9, 0.0]]);
        assert!((f[0] - 1.0 / 3.0).abs() < 1e-15, "{f:?}");
        assert!(f[1].abs() < 1e-15);
    }

    #[test]
    fn evader_coincident_pursuer_contributes_zero() {
        let f = evader_force([0.4, -0.2], &[[0.4, -0.2]]);
        let g = evader_force([0.4, -0.2], &[]);
        assert_eq!(f, g);
    }

    #[test]
    fn safety_penalty_constants() {
        assert_eq!(safety_penalty([0.1, 0.1], Scenario::Tag), -15.0);
        assert_eq!(safety_penalty([0.1, 0.1], Scenario::Spread), -5.0);
        assert_eq!(safety_penalty([-0.1, 0.5], Scenario::Tag), 0.0);
        assert_eq!(safety_penalty([0.0, 0.5], Scenario::Spread), 0.0);
    }

    #[test]
    fn spread_reward_examples() {
        let mut w = world(Scenario::Spread, Asymmetry::None, 5);
        // Place agents exactly on the three landmarks, far apart.
        let landmark_pos: Vec<[f64; 2]> = w
            .entities
            .iter()
            .filter(|e| e.role == EntityRole::Landmark)
            .map(|e| e.pos)
            .collect();
        let agent_ids: Vec<usize> = w.agent_indices().collect();
        // Spread landmarks out to avoid collisions between covering agents.
        let spots = [[-0.9, -0.9], [0.9, -0.9], [0.0, 0.9]];
        for (k, &i) in agent_ids.iter().enumerate() {
            w.entities[i].pos = spots[k];
        }
        let lm_ids: Vec<usize> = w
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.role == EntityRole::Landmark)
            .map(|(i, _)| i)
            .collect();
        for (k, &i) in lm_ids.iter().enumerate() {
            w.entities[i].pos = spots[k];
        }
        let r = w.rewards();
        assert!(r.iter().all(|&x| x.abs() < 1e-12), "{r:?}");
        let _ = landmark_pos;

        // One agent at distance d from the only uncovered landmark.
        w.entities[lm_ids[0]].pos = [-0.9, -0.5]; // agent 0 now 0.4 away
        let r = w.rewards();
        assert!(r.iter().all(|&x| (x + 0.4).abs() < 1e-12), "{r:?}");

        // Two agents within 0.3 collide and lose 1 each.
        w.entities[agent_ids[0]].pos = [0.0, 0.0];
        w.entities[agent_ids[1]].pos = [0.2, 0.0];
        let r = w.rewards();
        assert!((r[0] - r[2] + 1.0).abs() < 1e-12, "{r:?}");
        assert!((r[1] - r[2] + 1.0).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn tag_reward_examples() {
        let mut w = world(Scenario::Tag, Asymmetry::None, 6);
        let agent_ids: Vec<usize> = w.agent_indices().collect();
        let e = w.evader_index().unwrap();
        // No contact: zero.
        w.entities[e].pos = [0.9, 0.9];
        for (k, &i) in agent_ids.iter().enumerate() {
            w.entities[i].pos = [-0.9 + 0.31 * k as f64, -0.9];
        }
        assert!(w.rewards().iter().all(|&r| r == 0.0));
        // Contact pays everyone.
        w.entities[agent_ids[0]].pos = [0.8, 0.9];
        assert!(w.rewards().iter().all(|&r| r == TAG_CAPTURE_REWARD));
    }

    #[test]
    fn tag_decoy_contact_pays_nothing() {
        let mut w = world(Scenario::Tag, Asymmetry::Decoy, 8);
        let decoy = w
            .entities
            .iter()
            .position(|e| e.role == EntityRole::Decoy)
            .unwrap();
        let agent_ids: Vec<usize> = w.agent_indices().collect();
        w.entities[decoy].pos = [-0.5, -0.5];
        for (k, &i) in agent_ids.iter().enumerate() {
            w.entities[i].pos = [-0.5 + 0.01 * k as f64, -0.5];
        }
        // Touching only the decoy: no capture reward (collisions among
        // pursuers are irrelevant in tag).
        assert!(w.rewards().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn bias_offsets_only_non_team_observations() {
        let mut w = world(Scenario::Spread, Asymmetry::Bias, 9);
        let agent_ids: Vec<usize> = w.agent_indices().collect();
        let lm = w
            .entities
            .iter()
            .position(|e| e.role == EntityRole::Landmark)
            .unwrap();
        w.entities[lm].pos = [0.0, 0.0];
        w.entities[agent_ids[1]].pos = [0.5, 0.5];
        let obs = w.observe(0).unwrap();
        assert!((obs.u().get(lm, 0) - 0.3).abs() < 1e-15);
        assert_eq!(obs.u().get(lm, 1), 0.0);
        assert_eq!(obs.u().get(agent_ids[1], 0), 0.5);

        let plain = world(Scenario::Spread, Asymmetry::None, 9).observe(0).unwrap();
        // Same seed, no bias: ground truth observation.
        let w2 = world(Scenario::Spread, Asymmetry::None, 9);
        assert_eq!(plain.u().data(), w2.observe(0).unwrap().u().data());
    }

    #[test]
    fn observation_marks_exactly_one_self() {
        let w = world(Scenario::Tag, Asymmetry::None, 10);
        for a in 0..3 {
            let obs = w.observe(a).unwrap();
            assert_eq!(obs.self_index().unwrap(), a);
            // Self flag column.
            assert_eq!(obs.h().get(a, 3), 1.0);
        }
    }

    #[test]
    fn episode_is_deterministic_for_fixed_seed_and_actions() {
        let run = |seed: u64| -> Vec<[f64; 2]> {
            let mut w = world(Scenario::Tag, Asymmetry::Decoy, seed);
            let actions = [[0.3, -0.2], [-0.1, 0.4], [0.05, 0.9]];
            for _ in 0..10 {
                w.step(&actions).unwrap();
            }
            w.entities().iter().map(|e| e.pos).collect()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }
}
