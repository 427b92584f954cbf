//! Canonical particle swarm optimization and the static-landscape oracle.
//!
//! The position update adds both the freshly computed velocity and the
//! inertia-weighted previous velocity:
//!
//! ```text
//! v(t+1) = c1·r1·(y − x) + c2·r2·(g − x)
//! x(t+1) = x(t) + v(t+1) + w·v(t)
//! ```

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsoParams {
    /// Velocity weight.
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
}

impl PsoParams {
    pub const STANDARD: PsoParams = PsoParams {
        w: 0.1,
        c1: 2.0,
        c2: 2.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.c1 > 0.0 && self.c2 > 0.0 && self.w.is_finite() {
            Ok(())
        } else {
            Err(Error::Config("acceleration coefficients must be positive".into()))
        }
    }
}

impl Default for PsoParams {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// A position together with the utility it was credited with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub position: Vec2,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoSwarm {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub personal_bests: Vec<Best>,
    pub global_best: Best,
    /// Positions are clamped to `[-bound, bound]²`.
    pub bound: f64,
}

impl PsoSwarm {
    /// Uniform positions over the box, zero velocities, and bests taken from
    /// the initial evaluation.
    pub fn init<R, F>(size: usize, bound: f64, fitness: F, rng: &mut R) -> Self
    where
        R: Rng + ?Sized,
        F: Fn(Vec2) -> f64,
    {
        assert!(size > 0, "swarm needs at least one particle");
        let positions: Vec<Vec2> = (0..size).map(|_| Vec2::uniform_in_box(rng, bound)).collect();
        let personal_bests: Vec<Best> = positions
            .iter()
            .map(|&position| Best {
                position,
                utility: fitness(position),
            })
            .collect();
        let global_best = best_of(&personal_bests);
        Self {
            velocities: vec![Vec2::ZERO; size],
            positions,
            personal_bests,
            global_best,
            bound,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// First maximum by utility.
fn best_of(bests: &[Best]) -> Best {
    let mut best = bests[0];
    for b in &bests[1..] {
        if b.utility > best.utility {
            best = *b;
        }
    }
    best
}

/// One particle's kinematics for given random draws. Returns `(v(t+1), x(t+1))`
/// before clamping.
pub fn kinematics(
    x: Vec2,
    v: Vec2,
    personal: Vec2,
    global: Vec2,
    params: &PsoParams,
    r1: f64,
    r2: f64,
) -> (Vec2, Vec2) {
    let v_next = params.c1 * r1 * (personal - x) + params.c2 * r2 * (global - x);
    let x_next = x + v_next + params.w * v;
    (v_next, x_next)
}

/// Advances every particle once against `fitness`.
///
/// All particles are attracted to the global best as it stood at the start
/// of the step; bests are updated afterwards on strict improvement.
pub fn pso_step<R, F>(swarm: &mut PsoSwarm, params: &PsoParams, fitness: F, rng: &mut R)
where
    R: Rng + ?Sized,
    F: Fn(Vec2) -> f64,
{
    let g = swarm.global_best.position;
    for i in 0..swarm.len() {
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let (v_next, x_next) = kinematics(
            swarm.positions[i],
            swarm.velocities[i],
            swarm.personal_bests[i].position,
            g,
            params,
            r1,
            r2,
        );
        let x_next = x_next.clamp_box(swarm.bound);
        swarm.velocities[i] = v_next;
        swarm.positions[i] = x_next;
        let utility = fitness(x_next);
        if utility > swarm.personal_bests[i].utility {
            swarm.personal_bests[i] = Best {
                position: x_next,
                utility,
            };
        }
    }
    for pb in &swarm.personal_bests {
        if pb.utility > swarm.global_best.utility {
            swarm.global_best = *pb;
        }
    }
}

/// Settings for locating the optimum of a frozen landscape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub params: PsoParams,
    /// Swarm size as a multiple of the peak count.
    pub swarm_factor: usize,
    /// Stop after this many consecutive steps without global-best improvement.
    pub patience: usize,
    pub restarts: usize,
    /// Hard cap on steps per restart.
    pub max_steps: usize,
    /// Number of highest peak means that, together with the swarm's answer,
    /// seed a final mode climb. Zero leaves the swarm's answer untouched.
    #[serde(default)]
    pub polish_starts: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            params: PsoParams::STANDARD,
            swarm_factor: 5,
            patience: 5,
            restarts: 3,
            max_steps: 10_000,
            polish_starts: 10,
        }
    }
}

impl OracleConfig {
    /// Short fingerprint of the settings, used to keep cached traces apart.
    pub fn tag(&self) -> u32 {
        let settings = serde_json::to_string(self).expect("plain data");
        derive_seed(0, &["oracle-config", &settings]) as u32
    }
}

/// Runs canonical PSO on `env` frozen at its current timestep and returns the
/// best optimum over all restarts (the first one on ties).
pub fn find_static_optimum<R: Rng + ?Sized>(
    env: &Environment,
    config: &OracleConfig,
    rng: &mut R,
) -> Result<Best> {
    if env.peaks().is_empty() {
        return Err(Error::EmptyLandscape);
    }
    let size = config.swarm_factor * env.peaks().len();
    let bound = env.e_bound();
    let fitness = |x: Vec2| env.utility(x);
    let mut overall: Option<Best> = None;
    for _ in 0..config.restarts.max(1) {
        let mut swarm = PsoSwarm::init(size, bound, fitness, rng);
        let mut stalled = 0;
        let mut steps = 0;
        while stalled < config.patience && steps < config.max_steps {
            let before = swarm.global_best.utility;
            pso_step(&mut swarm, &config.params, fitness, rng);
            if swarm.global_best.utility > before {
                stalled = 0;
            } else {
                stalled += 1;
            }
            steps += 1;
        }
        match overall {
            Some(b) if b.utility >= swarm.global_best.utility => {}
            _ => overall = Some(swarm.global_best),
        }
    }
    let mut best = overall.expect("at least one restart");
    if config.polish_starts > 0 {
        let mut starts: Vec<(f64, Vec2)> =
            env.peaks().iter().map(|p| (env.utility(p.mu), p.mu)).collect();
        starts.sort_by(|a, b| b.0.total_cmp(&a.0));
        starts.truncate(config.polish_starts);
        let from_swarm = climb_to_mode(env, best.position);
        for candidate in std::iter::once(from_swarm)
            .chain(starts.iter().map(|&(_, mu)| climb_to_mode(env, mu)))
        {
            if candidate.utility > best.utility {
                best = candidate;
            }
        }
    }
    Ok(best)
}

/// Ascends from `start` to a nearby mode of the landscape. Each iteration
/// jumps to the per-axis fixed point of the stationarity condition
/// `Σ_k N_k(x)·(μ_k − x)/σ_k² = 0`, halving the jump until utility rises.
pub fn climb_to_mode(env: &Environment, start: Vec2) -> Best {
    let bound = env.e_bound();
    let mut x = start.clamp_box(bound);
    let mut u = env.utility(x);
    for _ in 0..200 {
        let (mut num, mut den) = ([0.0f64; 2], [0.0f64; 2]);
        for p in env.peaks() {
            let [sx, sy] = p.sigma;
            let zx = (x.x - p.mu.x) / sx;
            let zy = (x.y - p.mu.y) / sy;
            let w = (-0.5 * (zx * zx + zy * zy)).exp() / (sx * sy);
            let (px, py) = (w / (sx * sx), w / (sy * sy));
            num[0] += px * p.mu.x;
            den[0] += px;
            num[1] += py * p.mu.y;
            den[1] += py;
        }
        if den[0] <= 0.0 || den[1] <= 0.0 {
            break;
        }
        let target = Vec2::new(num[0] / den[0], num[1] / den[1]).clamp_box(bound);
        let mut step = target - x;
        let mut moved = false;
        for _ in 0..30 {
            let candidate = x + step;
            let cu = env.utility(candidate);
            if cu > u {
                x = candidate;
                u = cu;
                moved = true;
                break;
            }
            step = 0.5 * step;
        }
        if !moved || step.norm() < 1e-12 {
            break;
        }
    }
    Best {
        position: x,
        utility: u,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub t: usize,
    pub a_x: f64,
    pub a_y: f64,
    pub util_a: f64,
}

impl OracleRecord {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.a_x, self.a_y)
    }
}

/// The true optimum a(t) of one environment realization for every timestep
/// `0..t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrace {
    records: Vec<OracleRecord>,
}

impl OracleTrace {
    /// Checks that records are exactly `t = 0, 1, …` in order.
    pub fn new(records: Vec<OracleRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.t != i {
                return Err(Error::Data(format!(
                    "oracle trace out of order: expected t = {i}, found {}",
                    r.t
                )));
            }
        }
        Ok(Self { records })
    }

    /// Steps a copy of `env` (which must be at t = 0) through its whole
    /// horizon, locating the optimum at every timestep. Each timestep uses its
    /// own derived seed, so any slice of the trace can be recomputed alone.
    pub fn compute(env: &Environment, config: &OracleConfig, seed: u64) -> Result<Self> {
        Self::compute_with_progress(env, config, seed, |_| {})
    }

    pub fn compute_with_progress<P: FnMut(usize)>(
        env: &Environment,
        config: &OracleConfig,
        seed: u64,
        mut progress: P,
    ) -> Result<Self> {
        if env.t() != 0 {
            return Err(Error::Contract("oracle traces start from t = 0".into()));
        }
        let t_max = env.spec().t_max;
        let mut env = env.clone();
        let mut dynamics = env.dynamics_rng();
        let mut records = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let mut rng = rng_from_seed(derive_seed(seed, &["oracle", &t.to_string()]));
            let best = find_static_optimum(&env, config, &mut rng)?;
            records.push(OracleRecord {
                t,
                a_x: best.position.x,
                a_y: best.position.y,
                util_a: best.utility,
            });
            progress(t);
            if t + 1 < t_max {
                env.step_peaks(&mut dynamics)?;
            }
        }
        Self::new(records)
    }

    /// Reads the trace cached at `path` if it covers the horizon, otherwise
    /// computes it and writes the cache.
    pub fn load_or_compute(
        env: &Environment,
        config: &OracleConfig,
        seed: u64,
        path: &Path,
    ) -> Result<Self> {
        let t_max = env.spec().t_max;
        if let Ok(trace) = Self::read_csv(path) {
            if trace.len() == t_max {
                return Ok(trace);
            }
        }
        let trace = Self::compute(env, config, seed)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        trace.write_csv(&tmp)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[OracleRecord] {
        &self.records
    }

    pub fn get(&self, t: usize) -> Result<&OracleRecord> {
        self.records
            .get(t)
            .ok_or_else(|| Error::Data(format!("oracle trace has no entry for t = {t}")))
    }

    /// Fails unless the trace covers `0..t_max`.
    pub fn require_len(&self, t_max: usize) -> Result<()> {
        if self.records.len() < t_max {
            return Err(Error::Data(format!(
                "oracle trace covers {} timesteps, {t_max} required",
                self.records.len()
            )));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for r in &self.records {
            writer.serialize(r)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let records = reader
            .deserialize()
            .collect::<std::result::Result<Vec<OracleRecord>, _>>()?;
        Self::new(records)
    }
}
