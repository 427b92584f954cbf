//! Neural-network-guided particles and the centralized (CNNPSO) and
//! distributed (DNNPSO) swarm updates.
//!
//! Each particle observes the landscape at its own position and on a set of
//! rings around it, feeds the normalized observations to a network, and moves
//! to the position the network predicts. Rings contract after an improving
//! move and expand after a worsening one; a particle whose rings have expanded
//! to the limit is re-randomized.

use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mlp::{Mlp, MlpConfig};
use crate::pso::{pso_step, Best, PsoParams, PsoSwarm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationConfig {
    /// Ring directions, radians.
    pub directions: Vec<f64>,
    /// Base ring radii, scaled by the particle's ring multiplier.
    pub base_radii: Vec<f64>,
    pub m_fac: f64,
    pub gamma_min: i32,
    pub gamma_max: i32,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            directions: (0..8).map(|k| k as f64 * FRAC_PI_4).collect(),
            base_radii: vec![0.5, 1.0, 1.5, 2.0],
            m_fac: 0.8,
            gamma_min: -10,
            gamma_max: 10,
        }
    }
}

impl ObservationConfig {
    pub fn point_count(&self) -> usize {
        self.directions.len() * self.base_radii.len()
    }

    /// Length of a network input: position plus every ring point, three
    /// values each.
    pub fn input_len(&self) -> usize {
        3 * (1 + self.point_count())
    }

    pub fn network_config(&self) -> MlpConfig {
        MlpConfig::guidance(self.point_count())
    }

    /// Ring multiplier belonging to counter value `gamma`.
    pub fn multiplier(&self, gamma: i32) -> f64 {
        self.m_fac.powi(-gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_fac > 0.0 && self.m_fac < 1.0) {
            return Err(Error::Config("m_fac must lie in (0, 1)".into()));
        }
        if !(self.gamma_min < 0 && self.gamma_max > 0) {
            return Err(Error::Config("gamma bounds must straddle zero".into()));
        }
        if self.point_count() == 0 {
            return Err(Error::Config("at least one observation point is required".into()));
        }
        Ok(())
    }
}

/// A training sample shared between particles in the distributed variant.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedSample {
    pub input: Vec<f64>,
    /// Normalized next position, in `[-1, 1]²`.
    pub target: [f64; 2],
    /// Timestep the sample was produced.
    pub timestamp: usize,
    /// Index of the particle that produced it.
    pub origin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NngParticle {
    pub position: Vec2,
    /// Utility at `position` when last evaluated.
    pub utility: f64,
    /// Ring-adjustment counter; the multiplier is always `m_fac^(−gamma)`.
    pub gamma: i32,
    ring_multiplier: f64,
    /// D_i(t): samples received during the current timestep.
    pub received: Vec<Arc<PropagatedSample>>,
    /// D_i(t−1): samples received during the previous timestep.
    pub previous: Vec<Arc<PropagatedSample>>,
}

impl NngParticle {
    pub fn new(position: Vec2, utility: f64) -> Self {
        Self {
            position,
            utility,
            gamma: 0,
            ring_multiplier: 1.0,
            received: Vec::new(),
            previous: Vec::new(),
        }
    }

    pub fn ring_multiplier(&self) -> f64 {
        self.ring_multiplier
    }

    fn set_gamma(&mut self, gamma: i32, cfg: &ObservationConfig) {
        self.gamma = gamma.clamp(cfg.gamma_min, cfg.gamma_max);
        self.ring_multiplier = cfg.multiplier(self.gamma);
    }
}

/// Ring points around the particle: radii in the outer loop, directions in
/// the inner loop, both in configuration order.
pub fn observation_points(p: &NngParticle, cfg: &ObservationConfig) -> Vec<Vec2> {
    ring_points(p.position, p.ring_multiplier, cfg)
}

pub fn ring_points(center: Vec2, multiplier: f64, cfg: &ObservationConfig) -> Vec<Vec2> {
    let mut points = Vec::with_capacity(cfg.point_count());
    for &r in &cfg.base_radii {
        for &theta in &cfg.directions {
            points.push(center + Vec2::from_polar(multiplier * r, theta));
        }
    }
    points
}

/// `[x/E, y/E, util(x)]` for the position followed by each point. Points
/// outside the domain are passed through unclamped.
pub fn build_input(position: Vec2, points: &[Vec2], env: &Environment) -> Vec<f64> {
    let bound = env.e_bound();
    let mut input = Vec::with_capacity(3 * (1 + points.len()));
    for q in std::iter::once(&position).chain(points) {
        input.push(q.x / bound);
        input.push(q.y / bound);
        input.push(env.utility(*q));
    }
    input
}

/// Scales the network output to the domain. Returns the position and the
/// normalized output it came from.
pub fn predict_next(net: &Mlp, input: &[f64], e_bound: f64) -> Result<(Vec2, [f64; 2])> {
    let out = net.forward(input)?;
    if out.len() != 2 {
        return Err(Error::Contract(format!("guidance network must output 2 values, got {}", out.len())));
    }
    let normalized = [out[0], out[1]];
    Ok((Vec2::new(e_bound * out[0], e_bound * out[1]), normalized))
}

/// Contracts the rings after an improvement and expands them after a
/// worsening; equal utilities change nothing.
pub fn update_ring(p: &mut NngParticle, old_util: f64, new_util: f64, cfg: &ObservationConfig) {
    if new_util > old_util {
        p.set_gamma(p.gamma - 1, cfg);
    } else if new_util < old_util {
        p.set_gamma(p.gamma + 1, cfg);
    }
}

/// Stagnation escape. With probability ½ the particle jumps to the stored
/// global best, whose stored utility is refreshed if the landscape under it
/// has changed; otherwise it jumps to a uniform position in the domain.
/// Utility is re-evaluated and the rings are reset.
pub fn re_randomize<R: Rng + ?Sized>(
    p: &mut NngParticle,
    global_best: &mut Best,
    env: &Environment,
    cfg: &ObservationConfig,
    rng: &mut R,
) {
    if rng.gen_bool(0.5) {
        p.position = global_best.position;
        let current = env.utility(global_best.position);
        if current != global_best.utility {
            global_best.utility = current;
        }
    } else {
        p.position = Vec2::uniform_in_box(rng, env.e_bound());
    }
    p.utility = env.utility(p.position);
    p.set_gamma(0, cfg);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One network shared by the whole swarm.
    Centralized,
    /// One network per particle, with sample propagation.
    Distributed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub variant: Variant,
    pub particle_count: usize,
    /// Epochs per improving move in the centralized variant.
    pub tau_epoch_c: usize,
    /// Epochs for a freshly received sample in the distributed variant.
    pub tau_epoch_d: usize,
    /// Learning rate for online training.
    pub online_lr: f64,
    pub observation: ObservationConfig,
}

impl AlgorithmConfig {
    pub fn new(variant: Variant, particle_count: usize) -> Self {
        Self {
            variant,
            particle_count,
            tau_epoch_c: 1,
            tau_epoch_d: 2,
            online_lr: 1e-3,
            observation: ObservationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particle_count == 0 {
            return Err(Error::Config("a swarm needs at least one particle".into()));
        }
        self.observation.validate()
    }
}

/// The networks steering a swarm.
#[derive(Debug, Clone, PartialEq)]
pub enum Guidance {
    Shared(Mlp),
    PerParticle(Vec<Mlp>),
}

/// What happened during one swarm update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Optimizer steps taken across all networks.
    pub training_steps: usize,
    /// `(trainer, sample origin, epochs)` for every sample trained on.
    pub trained: Vec<(usize, usize, usize)>,
    pub re_randomized: Vec<usize>,
}

/// Anything that can track the optimum one timestep at a time.
pub trait Tracker {
    /// Moves the swarm against the landscape as it stands at `env.t()`.
    fn update<R: Rng + ?Sized>(&mut self, env: &Environment, rng: &mut R) -> Result<StepReport>;

    /// The best position the swarm knows of, with its stored utility.
    fn global_best(&self) -> Best;
}

#[derive(Debug, Clone)]
pub struct NngSwarm {
    config: AlgorithmConfig,
    particles: Vec<NngParticle>,
    guidance: Guidance,
    global_best: Best,
}

impl NngSwarm {
    /// Places particles uniformly in the domain and evaluates them against
    /// `env`. The global best starts at the best initial particle.
    pub fn new<R: Rng + ?Sized>(
        config: AlgorithmConfig,
        guidance: Guidance,
        env: &Environment,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let expected = config.observation.input_len();
        let check = |net: &Mlp| -> Result<()> {
            let c = net.config();
            if c.input_size() != expected || c.output_size() != 2 {
                return Err(Error::Config(format!(
                    "network shape {:?} does not fit {expected} inputs and 2 outputs",
                    c.layer_sizes
                )));
            }
            Ok(())
        };
        match (&config.variant, &guidance) {
            (Variant::Centralized, Guidance::Shared(net)) => check(net)?,
            (Variant::Distributed, Guidance::PerParticle(nets)) => {
                if nets.len() != config.particle_count {
                    return Err(Error::Config(format!(
                        "distributed swarm of {} needs as many networks, got {}",
                        config.particle_count,
                        nets.len()
                    )));
                }
                nets.iter().try_for_each(check)?;
            }
            _ => return Err(Error::Config("guidance does not match the variant".into())),
        }
        let particles: Vec<NngParticle> = (0..config.particle_count)
            .map(|_| {
                let x = Vec2::uniform_in_box(rng, env.e_bound());
                NngParticle::new(x, env.utility(x))
            })
            .collect();
        let mut global_best = Best {
            position: particles[0].position,
            utility: particles[0].utility,
        };
        for p in &particles[1..] {
            if p.utility > global_best.utility {
                global_best = Best {
                    position: p.position,
                    utility: p.utility,
                };
            }
        }
        Ok(Self {
            config,
            particles,
            guidance,
            global_best,
        })
    }

    pub fn config(&self) -> &AlgorithmConfig {
        &self.config
    }

    pub fn particles(&self) -> &[NngParticle] {
        &self.particles
    }

    pub fn guidance(&self) -> &Guidance {
        &self.guidance
    }

    fn net_for(&self, i: usize) -> &Mlp {
        match &self.guidance {
            Guidance::Shared(net) => net,
            Guidance::PerParticle(nets) => &nets[i],
        }
    }

    /// Centralized update: particles move in index order; an improving move
    /// trains the shared network on the particle's own input and normalized
    /// new position.
    pub fn cnnpso_update<R: Rng + ?Sized>(
        &mut self,
        env: &Environment,
        rng: &mut R,
    ) -> Result<StepReport> {
        let mut report = StepReport::default();
        for i in 0..self.particles.len() {
            let (input, old_util, new_util, target) = self.move_particle(i, env)?;
            let obs = &self.config.observation;
            update_ring(&mut self.particles[i], old_util, new_util, obs);
            if new_util > old_util {
                let Guidance::Shared(net) = &mut self.guidance else {
                    return Err(Error::Config("centralized update needs a shared network".into()));
                };
                for _ in 0..self.config.tau_epoch_c {
                    net.train_batch(&[(&input, &target)], self.config.online_lr)?;
                    report.training_steps += 1;
                }
                report.trained.push((i, i, self.config.tau_epoch_c));
            }
            self.finish_particle(i, env, rng, &mut report);
        }
        Ok(report)
    }

    /// Distributed update: moves as in the centralized variant, but an
    /// improving particle sends its sample, plus everything it received in the
    /// previous timestep, to every other particle. Once all particles have
    /// moved, each trains its own network on what it received, for
    /// `tau_epoch_d − age` epochs and never on its own samples.
    pub fn dnnpso_update<R: Rng + ?Sized>(
        &mut self,
        env: &Environment,
        rng: &mut R,
    ) -> Result<StepReport> {
        let t = env.t();
        let mut report = StepReport::default();
        for i in 0..self.particles.len() {
            let (input, old_util, new_util, target) = self.move_particle(i, env)?;
            let obs = &self.config.observation;
            update_ring(&mut self.particles[i], old_util, new_util, obs);
            if new_util > old_util {
                let sample = Arc::new(PropagatedSample {
                    input,
                    target,
                    timestamp: t,
                    origin: i,
                });
                let relayed = self.particles[i].previous.clone();
                for (j, other) in self.particles.iter_mut().enumerate() {
                    if j == i {
                        continue;
                    }
                    push_unique(&mut other.received, &sample);
                    for d in &relayed {
                        push_unique(&mut other.received, d);
                    }
                }
            }
            self.finish_particle(i, env, rng, &mut report);
        }

        let tau = self.config.tau_epoch_d;
        let lr = self.config.online_lr;
        let Guidance::PerParticle(nets) = &mut self.guidance else {
            return Err(Error::Config("distributed update needs one network per particle".into()));
        };
        for (i, (particle, net)) in self.particles.iter_mut().zip(nets.iter_mut()).enumerate() {
            for d in &particle.received {
                if d.origin == i {
                    continue;
                }
                let epochs = epochs_for(tau, t, d.timestamp);
                if epochs == 0 {
                    continue;
                }
                for _ in 0..epochs {
                    net.train_batch(&[(&d.input, &d.target)], lr)?;
                    report.training_steps += 1;
                }
                report.trained.push((i, d.origin, epochs));
            }
            // D_i(t) becomes D_i(t−1); anything that would train zero epochs
            // at t+1 can never be used again.
            let mut current = std::mem::take(&mut particle.received);
            current.retain(|d| epochs_for(tau, t + 1, d.timestamp) > 0);
            particle.previous = current;
        }
        Ok(report)
    }

    /// Builds the input for particle `i`, predicts and applies its move.
    /// Returns `(input, utility before, utility after, normalized target)`.
    fn move_particle(
        &mut self,
        i: usize,
        env: &Environment,
    ) -> Result<(Vec<f64>, f64, f64, [f64; 2])> {
        let p = &self.particles[i];
        let points = observation_points(p, &self.config.observation);
        let input = build_input(p.position, &points, env);
        let old_util = input[2];
        let (next, target) = predict_next(self.net_for(i), &input, env.e_bound())?;
        let new_util = env.utility(next);
        let p = &mut self.particles[i];
        p.position = next;
        p.utility = new_util;
        Ok((input, old_util, new_util, target))
    }

    fn finish_particle<R: Rng + ?Sized>(
        &mut self,
        i: usize,
        env: &Environment,
        rng: &mut R,
        report: &mut StepReport,
    ) {
        let obs = &self.config.observation;
        let p = &mut self.particles[i];
        if p.gamma == obs.gamma_max {
            re_randomize(p, &mut self.global_best, env, obs, rng);
            report.re_randomized.push(i);
        }
        if self.global_best.utility < p.utility {
            self.global_best = Best {
                position: p.position,
                utility: p.utility,
            };
        }
    }
}

/// κ = τ − (t − t'), floored at zero.
pub fn epochs_for(tau: usize, t: usize, timestamp: usize) -> usize {
    tau.saturating_sub(t.saturating_sub(timestamp))
}

fn push_unique(buffer: &mut Vec<Arc<PropagatedSample>>, sample: &Arc<PropagatedSample>) {
    let dup = buffer
        .iter()
        .any(|d| d.origin == sample.origin && d.timestamp == sample.timestamp);
    if !dup {
        buffer.push(Arc::clone(sample));
    }
}

impl Tracker for NngSwarm {
    fn update<R: Rng + ?Sized>(&mut self, env: &Environment, rng: &mut R) -> Result<StepReport> {
        match self.config.variant {
            Variant::Centralized => self.cnnpso_update(env, rng),
            Variant::Distributed => self.dnnpso_update(env, rng),
        }
    }

    fn global_best(&self) -> Best {
        self.global_best
    }
}

/// Canonical PSO used as a tracker: one PSO step per timestep against the
/// current landscape, with personal and global bests kept from earlier
/// timesteps.
#[derive(Debug, Clone)]
pub struct PsoTracker {
    swarm: PsoSwarm,
    params: PsoParams,
}

impl PsoTracker {
    pub fn new<R: Rng + ?Sized>(
        particle_count: usize,
        params: PsoParams,
        env: &Environment,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        if particle_count == 0 {
            return Err(Error::Config("a swarm needs at least one particle".into()));
        }
        let swarm = PsoSwarm::init(particle_count, env.e_bound(), |x| env.utility(x), rng);
        Ok(Self { swarm, params })
    }

    pub fn swarm(&self) -> &PsoSwarm {
        &self.swarm
    }
}

impl Tracker for PsoTracker {
    fn update<R: Rng + ?Sized>(&mut self, env: &Environment, rng: &mut R) -> Result<StepReport> {
        pso_step(&mut self.swarm, &self.params, |x| env.utility(x), rng);
        Ok(StepReport::default())
    }

    fn global_best(&self) -> Best {
        self.swarm.global_best
    }
}

/// One entry of the global-best history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub t: usize,
    pub best: Best,
    /// Utility of the stored best position on the landscape at `t`.
    pub true_utility: f64,
}

/// Runs `tracker` from `env` (at t = 0) for the whole horizon: update, record
/// the global best, move the peaks. Returns one entry per timestep.
pub fn run_tracker<T: Tracker, R: Rng + ?Sized>(
    tracker: &mut T,
    env: &Environment,
    rng: &mut R,
) -> Result<Vec<HistoryEntry>> {
    run_tracker_with(tracker, env, rng, |_, _| {})
}

/// [`run_tracker`] with a hook called after every update.
pub fn run_tracker_with<T, R, F>(
    tracker: &mut T,
    env: &Environment,
    rng: &mut R,
    mut observe: F,
) -> Result<Vec<HistoryEntry>>
where
    T: Tracker,
    R: Rng + ?Sized,
    F: FnMut(&T, &StepReport),
{
    if env.t() != 0 {
        return Err(Error::Contract("runs start from t = 0".into()));
    }
    let t_max = env.spec().t_max;
    let mut env = env.clone();
    let mut dynamics = env.dynamics_rng();
    let mut history = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let report = tracker.update(&env, rng)?;
        observe(tracker, &report);
        let best = tracker.global_best();
        history.push(HistoryEntry {
            t,
            best,
            true_utility: env.utility(best.position),
        });
        if t + 1 < t_max {
            env.step_peaks(&mut dynamics)?;
        }
    }
    Ok(history)
}

/// Builds a swarm for `config` from pre-trained networks and runs it.
pub fn run_experiment<R: Rng + ?Sized>(
    config: &AlgorithmConfig,
    env: &Environment,
    guidance: Guidance,
    rng: &mut R,
) -> Result<Vec<HistoryEntry>> {
    let mut swarm = NngSwarm::new(config.clone(), guidance, env, rng)?;
    run_tracker(&mut swarm, env, rng)
}
