//! Offline training of guidance networks on simplified landscapes, with the
//! oracle optimum as the label.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mlp::{Example, LrSchedule, Mlp};
use crate::pso::{OracleConfig, OracleTrace};
use crate::seed::{derive_seed, rng_from_seed};
use crate::swarm::{build_input, predict_next, ring_points, Guidance, ObservationConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub peak_counts: Vec<usize>,
    pub center_counts: Vec<usize>,
    pub t_max: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha_start: f64,
    pub alpha_warm: f64,
    pub alpha_final: f64,
    pub repeats: usize,
    pub observation: ObservationConfig,
    pub oracle: OracleConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            peak_counts: vec![25, 50],
            center_counts: vec![5, 10],
            t_max: 10_000,
            batch_size: 64,
            epochs: 5,
            alpha_start: 0.0,
            alpha_warm: 1e-3,
            alpha_final: 1e-5,
            repeats: 3,
            observation: ObservationConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.repeats == 0 {
            return Err(Error::Config("batch size, epochs and repeats must be at least 1".into()));
        }
        if self.peak_counts.is_empty() || self.center_counts.is_empty() {
            return Err(Error::Config("peak and center count choices must be non-empty".into()));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        self.observation.validate()
    }

    /// The schedule for one pass over `samples` examples: warm-up across the
    /// first epoch, then cosine decay that reaches `alpha_final` on the last
    /// optimizer step.
    pub fn schedule(&self, samples: usize) -> Result<LrSchedule> {
        let per_epoch = samples.div_ceil(self.batch_size).max(1);
        let total = self.epochs * per_epoch - 1;
        let warmup = per_epoch.min(total);
        LrSchedule::new(self.alpha_start, self.alpha_warm, self.alpha_final, warmup, total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: Vec<f64>,
    /// Oracle optimum divided by the domain bound.
    pub label: [f64; 2],
}

/// Mean loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub repeat: usize,
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Rolls a single particle through `env` (from t = 0) with `net` steering it,
/// recording the network input and normalized oracle optimum at every step.
/// Rings stay at their base radii and the particle is never re-randomized.
pub fn collect_dataset<R: Rng + ?Sized>(
    env: &Environment,
    net: &Mlp,
    oracle: &OracleTrace,
    observation: &ObservationConfig,
    rng: &mut R,
) -> Result<Vec<TrainingSample>> {
    if env.t() != 0 {
        return Err(Error::Contract("data collection starts from t = 0".into()));
    }
    let t_max = env.spec().t_max;
    oracle.require_len(t_max)?;
    let bound = env.e_bound();
    let mut env = env.clone();
    let mut dynamics = env.dynamics_rng();
    let mut x = Vec2::uniform_in_box(rng, bound);
    let mut data = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let points = ring_points(x, 1.0, observation);
        let input = build_input(x, &points, &env);
        let a = oracle.get(t)?.position();
        let (next, _) = predict_next(net, &input, bound)?;
        data.push(TrainingSample {
            input,
            label: [a.x / bound, a.y / bound],
        });
        x = next;
        if t + 1 < t_max {
            env.step_peaks(&mut dynamics)?;
        }
    }
    Ok(data)
}

/// Trains `net` for `cfg.epochs` epochs over shuffled mini-batches of
/// `data` under a fresh schedule. Returns the mean pre-update loss of each
/// epoch.
pub fn train_on_dataset<R: Rng + ?Sized>(
    net: &mut Mlp,
    data: &[TrainingSample],
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let schedule = cfg.schedule(data.len())?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&k| (data[k].input.as_slice(), data[k].label.as_slice()))
                .collect();
            let lr = schedule.lr_at(step.min(schedule.total_steps))?;
            sum += net.train_batch(&batch, lr)?;
            batches += 1;
            step += 1;
        }
        losses.push(sum / batches as f64);
    }
    Ok(losses)
}

/// Bookkeeping for one pre-trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub net: Mlp,
    pub history: Vec<EpochLoss>,
    /// Seed of the environment generated for each repeat.
    pub env_seeds: Vec<u64>,
}

/// Landscape used for repeat `repeat` of the network identified by `seed`.
pub fn pretrain_env_spec(cfg: &PretrainConfig, seed: u64, repeat: usize) -> EnvironmentSpec {
    let r = repeat.to_string();
    let env_seed = derive_seed(seed, &["pretrain-env", &r]);
    let mut pick = rng_from_seed(derive_seed(seed, &["pretrain-shape", &r]));
    let peaks = *cfg.peak_counts.choose(&mut pick).expect("validated");
    let centers = *cfg.center_counts.choose(&mut pick).expect("validated");
    EnvironmentSpec::standard(peaks, centers, cfg.t_max, env_seed)
}

/// File name under which the oracle trace of `spec` is cached. The name
/// changes with the oracle settings.
pub fn oracle_cache_name(spec: &EnvironmentSpec, oracle: &OracleConfig) -> String {
    let tag = oracle.tag();
    format!(
        "oracle-{:016x}-h{}-c{}-t{}-{tag:08x}.csv",
        spec.seed, spec.peak_count, spec.center_count, spec.t_max
    )
}

/// Pre-trains `net` over `cfg.repeats` freshly generated landscapes. Oracle
/// traces are cached in `cache` when given.
pub fn pretrain_network(
    mut net: Mlp,
    cfg: &PretrainConfig,
    seed: u64,
    cache: Option<&Path>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let mut history = Vec::new();
    let mut env_seeds = Vec::with_capacity(cfg.repeats);
    for repeat in 0..cfg.repeats {
        let spec = pretrain_env_spec(cfg, seed, repeat);
        env_seeds.push(spec.seed);
        let env = Environment::generate(spec)?;
        let oracle_seed = derive_seed(env.spec().seed, &["oracle"]);
        let oracle = match cache {
            Some(dir) => OracleTrace::load_or_compute(
                &env,
                &cfg.oracle,
                oracle_seed,
                &dir.join(oracle_cache_name(env.spec(), &cfg.oracle)),
            )?,
            None => OracleTrace::compute(&env, &cfg.oracle, oracle_seed)?,
        };
        let mut rng = rng_from_seed(derive_seed(seed, &["pretrain-rollout", &repeat.to_string()]));
        let data = collect_dataset(&env, &net, &oracle, &cfg.observation, &mut rng)?;
        let losses = train_on_dataset(&mut net, &data, cfg, &mut rng)?;
        history.extend(losses.into_iter().enumerate().map(|(e, mean_loss)| EpochLoss {
            repeat,
            epoch: e + 1,
            mean_loss,
        }));
    }
    Ok(PretrainOutcome {
        net,
        history,
        env_seeds,
    })
}

/// Seed of network `index` of a variant, derived from a master pre-training
/// seed.
pub fn network_seed(master: u64, variant: Variant, index: usize) -> u64 {
    let name = match variant {
        Variant::Centralized => "cnnpso",
        Variant::Distributed => "dnnpso",
    };
    derive_seed(master, &["network", name, &index.to_string()])
}

/// Pre-trains `count` independently initialized networks. Fails if any two
/// would share a pre-training landscape.
pub fn pretrain_networks(
    variant: Variant,
    count: usize,
    cfg: &PretrainConfig,
    master: u64,
    cache: Option<&Path>,
) -> Result<Vec<PretrainOutcome>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        let seed = network_seed(master, variant, index);
        let init = Mlp::init_he(
            cfg.observation.network_config(),
            &mut rng_from_seed(derive_seed(seed, &["init"])),
        )?;
        let outcome = pretrain_network(init, cfg, seed, cache)?;
        for s in &outcome.env_seeds {
            if !seen.insert(*s) {
                return Err(Error::Contract(format!("pre-training environment {s:#x} reused")));
            }
        }
        out.push(outcome);
    }
    Ok(out)
}

/// Wraps pre-trained networks in the guidance a variant expects.
pub fn guidance_from(variant: Variant, mut nets: Vec<Mlp>) -> Result<Guidance> {
    match variant {
        Variant::Centralized => {
            if nets.len() != 1 {
                return Err(Error::Config(format!(
                    "centralized guidance takes one network, got {}",
                    nets.len()
                )));
            }
            Ok(Guidance::Shared(nets.remove(0)))
        }
        Variant::Distributed => Ok(Guidance::PerParticle(nets)),
    }
}

/// Weight file path of network `index` inside `dir`.
pub fn weight_path(dir: &Path, variant: Variant, index: usize) -> PathBuf {
    let name = match variant {
        Variant::Centralized => "cnnpso",
        Variant::Distributed => "dnnpso",
    };
    dir.join(format!("{name}-{index:02}.json"))
}

pub fn write_loss_csv(path: &Path, history: &[EpochLoss]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in history {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
