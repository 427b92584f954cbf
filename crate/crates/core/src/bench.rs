//! Experiment plans and the on-disk result tree: environments, oracle traces,
//! per-run traces and summary tables.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_env, aggregate_group, tracking_error, RunId, RunRecord, StepRecord, Summary};
use crate::mlp::Mlp;
use crate::pretrain::{pretrain_networks, weight_path, write_loss_csv, PretrainConfig};
use crate::pso::{OracleConfig, OracleTrace, PsoParams};
use crate::seed::{derive_seed, rng_from_seed};
use crate::swarm::{run_experiment, run_tracker, AlgorithmConfig, Guidance, HistoryEntry, PsoTracker, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub peaks: usize,
    pub centers: usize,
}

impl GroupSpec {
    pub fn new(name: &str, peaks: usize, centers: usize) -> Self {
        Self {
            name: name.to_string(),
            peaks,
            centers,
        }
    }
}

/// The four benchmark groups.
pub fn table_groups() -> Vec<GroupSpec> {
    vec![
        GroupSpec::new("E1", 100, 50),
        GroupSpec::new("E2", 200, 100),
        GroupSpec::new("E3", 200, 200),
        GroupSpec::new("E4", 500, 100),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    Pso,
    Cnnpso,
    Dnnpso,
}

impl AlgorithmKind {
    pub fn label(self) -> &'static str {
        match self {
            AlgorithmKind::Pso => "PSO",
            AlgorithmKind::Cnnpso => "CNNPSO",
            AlgorithmKind::Dnnpso => "DNNPSO",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            AlgorithmKind::Pso => "pso",
            AlgorithmKind::Cnnpso => "cnnpso",
            AlgorithmKind::Dnnpso => "dnnpso",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            AlgorithmKind::Pso => None,
            AlgorithmKind::Cnnpso => Some(Variant::Centralized),
            AlgorithmKind::Dnnpso => Some(Variant::Distributed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlgorithmEntry {
    pub kind: AlgorithmKind,
    pub particles: usize,
}

impl AlgorithmEntry {
    pub fn new(kind: AlgorithmKind, particles: usize) -> Self {
        Self { kind, particles }
    }

    /// Directory and seed name, e.g. `dnnpso-5`.
    pub fn name(&self) -> String {
        format!("{}-{}", self.kind.slug(), self.particles)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub groups: Vec<GroupSpec>,
    pub t_max: usize,
    pub e_count: usize,
    pub e_run: usize,
    pub algorithms: Vec<AlgorithmEntry>,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    /// Where pre-trained weights are read from.
    pub weights_dir: PathBuf,
    /// Cells of the matrix run concurrently on this many threads.
    pub workers: usize,
    pub oracle: OracleConfig,
    pub pso: PsoParams,
    pub online_lr: f64,
    /// Seed from which every pre-trained network is derived.
    pub pretrain_seed: u64,
    pub pretrain: PretrainConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self::desk(1, PathBuf::from("results"))
    }
}

impl ExperimentPlan {
    /// Desk-scale matrix: two groups, short horizon, few repetitions.
    pub fn desk(master_seed: u64, out_dir: PathBuf) -> Self {
        let groups = table_groups();
        Self {
            groups: vec![groups[0].clone(), groups[2].clone()],
            t_max: 2000,
            e_count: 2,
            e_run: 2,
            algorithms: vec![
                AlgorithmEntry::new(AlgorithmKind::Cnnpso, 5),
                AlgorithmEntry::new(AlgorithmKind::Dnnpso, 5),
                AlgorithmEntry::new(AlgorithmKind::Pso, 5),
                AlgorithmEntry::new(AlgorithmKind::Pso, 165),
            ],
            master_seed,
            weights_dir: out_dir.join("weights"),
            out_dir,
            workers: 1,
            oracle: OracleConfig::default(),
            pso: PsoParams::STANDARD,
            online_lr: 1e-3,
            pretrain_seed: 1,
            pretrain: PretrainConfig {
                t_max: 2000,
                ..PretrainConfig::default()
            },
        }
    }

    /// The full benchmark: four groups, 20000 steps, 5 environments × 3 runs.
    pub fn full(master_seed: u64, out_dir: PathBuf) -> Self {
        Self {
            groups: table_groups(),
            t_max: 20_000,
            e_count: 5,
            e_run: 3,
            pretrain: PretrainConfig::default(),
            ..Self::desk(master_seed, out_dir)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("plan: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("plan: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() || self.algorithms.is_empty() {
            return Err(Error::Config("a plan needs at least one group and one algorithm".into()));
        }
        if self.t_max == 0 || self.e_count == 0 || self.e_run == 0 {
            return Err(Error::Config("t_max, e_count and e_run must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let mut names = HashSet::new();
        for a in &self.algorithms {
            if a.particles == 0 {
                return Err(Error::Config(format!("{}: particle count must be positive", a.name())));
            }
            if !names.insert(a.name()) {
                return Err(Error::Config(format!("{} listed twice", a.name())));
            }
        }
        let mut groups = HashSet::new();
        for g in &self.groups {
            if g.peaks == 0 || g.centers == 0 || !groups.insert(g.name.clone()) {
                return Err(Error::Config(format!("group {} is empty or duplicated", g.name)));
            }
        }
        self.pso.validate()?;
        self.pretrain.validate()
    }

    /// Seed of environment `env` of `group`, shared by every algorithm.
    pub fn env_seed(&self, group: &GroupSpec, env: usize) -> u64 {
        derive_seed(self.master_seed, &["env", &group.name, &env.to_string()])
    }

    /// Seed of one run; independent of which other algorithms are planned.
    pub fn run_seed(&self, group: &GroupSpec, env: usize, run: usize, algorithm: &AlgorithmEntry) -> u64 {
        derive_seed(
            self.master_seed,
            &["run", &group.name, &env.to_string(), &run.to_string(), &algorithm.name()],
        )
    }

    pub fn env_spec(&self, group: &GroupSpec, env: usize) -> EnvironmentSpec {
        EnvironmentSpec::standard(group.peaks, group.centers, self.t_max, self.env_seed(group, env))
    }

    pub fn env_path(&self, group: &GroupSpec, env: usize) -> PathBuf {
        self.out_dir.join("envs").join(format!("{}-e{env}.json", group.name))
    }

    pub fn oracle_path(&self, group: &GroupSpec, env: usize) -> PathBuf {
        self.out_dir
            .join("oracle")
            .join(format!("{}-e{env}-{:08x}.csv", group.name, self.oracle.tag()))
    }

    pub fn run_path(&self, algorithm: &AlgorithmEntry, group: &GroupSpec, env: usize, run: usize) -> PathBuf {
        self.out_dir
            .join("runs")
            .join(algorithm.name())
            .join(format!("{}-e{env}-r{run}.csv", group.name))
    }

    /// Networks needed per variant: one shared network, and as many
    /// per-particle networks as the largest distributed swarm.
    pub fn required_networks(&self) -> Vec<(Variant, usize)> {
        let mut out = Vec::new();
        if self.algorithms.iter().any(|a| a.kind == AlgorithmKind::Cnnpso) {
            out.push((Variant::Centralized, 1));
        }
        let dnn = self
            .algorithms
            .iter()
            .filter(|a| a.kind == AlgorithmKind::Dnnpso)
            .map(|a| a.particles)
            .max();
        if let Some(n) = dnn {
            out.push((Variant::Distributed, n));
        }
        out
    }
}

/// Error of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: AlgorithmEntry,
    pub group: String,
    pub env: usize,
    pub run: usize,
    pub error: f64,
    pub t_max: usize,
}

/// Pairs a global-best history with the oracle trace.
pub fn to_run_record(history: &[HistoryEntry], oracle: &OracleTrace, id: RunId) -> Result<RunRecord> {
    let steps = history
        .iter()
        .map(|h| {
            let a = oracle.get(h.t)?;
            Ok(StepRecord::new(h.t, h.best.position, h.true_utility, a.position(), a.util_a))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunRecord { id, steps })
}

/// Loads the first `count` pre-trained networks of a variant.
pub fn load_networks(dir: &Path, variant: Variant, count: usize) -> Result<Vec<Mlp>> {
    (0..count)
        .map(|i| {
            let path = weight_path(dir, variant, i);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "missing pre-trained weights {}; run `nngpso pretrain` first",
                    path.display()
                )));
            }
            Mlp::load_weights(&path)
        })
        .collect()
}

/// Pre-trains whatever networks the plan needs that are not yet on disk,
/// writing weights and loss histories to `plan.weights_dir`.
pub fn ensure_weights(plan: &ExperimentPlan, log: &(dyn Fn(&str) + Sync)) -> Result<()> {
    plan.validate()?;
    let dir = &plan.weights_dir;
    let cache = plan.out_dir.join("pretrain-oracle");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (variant, count) in plan.required_networks() {
        if (0..count).all(|i| weight_path(dir, variant, i).exists()) {
            continue;
        }
        log(&format!("pre-training {count} {variant:?} network(s)"));
        let outcomes = pretrain_networks(variant, count, &plan.pretrain, plan.pretrain_seed, Some(&cache))?;
        for (i, o) in outcomes.iter().enumerate() {
            let path = weight_path(dir, variant, i);
            o.net.save_weights(&path)?;
            write_loss_csv(&path.with_extension("loss.csv"), &o.history)?;
        }
    }
    Ok(())
}

struct Nets {
    shared: Option<Mlp>,
    per_particle: Vec<Mlp>,
}

/// Executes every (group, environment) cell of the plan and writes the
/// summary tables. Oracle traces already on disk are reused.
pub fn run_plan(plan: &ExperimentPlan, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<RunResult>> {
    plan.validate()?;
    let mut nets = Nets {
        shared: None,
        per_particle: Vec::new(),
    };
    for (variant, count) in plan.required_networks() {
        let loaded = load_networks(&plan.weights_dir, variant, count)?;
        match variant {
            Variant::Centralized => nets.shared = loaded.into_iter().next(),
            Variant::Distributed => nets.per_particle = loaded,
        }
    }
    for sub in ["envs", "oracle", "runs"] {
        let dir = plan.out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for a in &plan.algorithms {
        let dir = plan.out_dir.join("runs").join(a.name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let cells: Vec<(usize, usize)> = (0..plan.groups.len())
        .flat_map(|g| (0..plan.e_count).map(move |e| (g, e)))
        .collect();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    let failure = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..plan.workers.min(cells.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= cells.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                let (g, e) = cells[k];
                match run_cell(plan, &nets, g, e, log) {
                    Ok(mut r) => results.lock().unwrap().append(&mut r),
                    Err(err) => {
                        failure.lock().unwrap().get_or_insert(err);
                    }
                }
            });
        }
    });
    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }
    let mut results = results.into_inner().unwrap();
    sort_results(plan, &mut results);
    emit_report(plan, &results)?;
    Ok(results)
}

fn sort_results(plan: &ExperimentPlan, results: &mut [RunResult]) {
    let alg_index = |a: &AlgorithmEntry| plan.algorithms.iter().position(|x| x == a);
    let group_index = |g: &str| plan.groups.iter().position(|x| x.name == g);
    results.sort_by_key(|r| (alg_index(&r.algorithm), group_index(&r.group), r.env, r.run));
}

/// Generates and saves the environment of a cell and loads or computes its
/// oracle trace.
fn prepare_cell(
    plan: &ExperimentPlan,
    g: usize,
    e: usize,
    log: &(dyn Fn(&str) + Sync),
) -> Result<(Environment, OracleTrace)> {
    let group = &plan.groups[g];
    let env = Environment::generate(plan.env_spec(group, e))?;
    let env_path = plan.env_path(group, e);
    if let Some(dir) = env_path.parent() {
        std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
    }
    env.save_json(&env_path)?;
    let oracle_path = plan.oracle_path(group, e);
    if !oracle_path.exists() {
        log(&format!("{} env {e}: computing oracle trace ({} steps)", group.name, plan.t_max));
    }
    let oracle_seed = derive_seed(env.spec().seed, &["oracle"]);
    let oracle = OracleTrace::load_or_compute(&env, &plan.oracle, oracle_seed, &oracle_path)?;
    Ok((env, oracle))
}

/// Writes every environment of the plan and its oracle trace.
pub fn precompute_oracles(plan: &ExperimentPlan, log: &(dyn Fn(&str) + Sync)) -> Result<()> {
    plan.validate()?;
    for g in 0..plan.groups.len() {
        for e in 0..plan.e_count {
            prepare_cell(plan, g, e, log)?;
        }
    }
    Ok(())
}

fn run_cell(
    plan: &ExperimentPlan,
    nets: &Nets,
    g: usize,
    e: usize,
    log: &(dyn Fn(&str) + Sync),
) -> Result<Vec<RunResult>> {
    let group = &plan.groups[g];
    let (env, oracle) = prepare_cell(plan, g, e, log)?;

    let mut out = Vec::new();
    for algorithm in &plan.algorithms {
        for run in 0..plan.e_run {
            let mut rng = rng_from_seed(plan.run_seed(group, e, run, algorithm));
            let history = match algorithm.kind {
                AlgorithmKind::Pso => {
                    let mut tracker = PsoTracker::new(algorithm.particles, plan.pso, &env, &mut rng)?;
                    run_tracker(&mut tracker, &env, &mut rng)?
                }
                AlgorithmKind::Cnnpso => {
                    let net = nets.shared.clone().ok_or_else(|| Error::Config("no shared network".into()))?;
                    let cfg = algorithm_config(plan, Variant::Centralized, algorithm.particles);
                    run_experiment(&cfg, &env, Guidance::Shared(net), &mut rng)?
                }
                AlgorithmKind::Dnnpso => {
                    let p = algorithm.particles;
                    if nets.per_particle.len() < p {
                        return Err(Error::Config(format!("{} needs {p} networks", algorithm.name())));
                    }
                    let cfg = algorithm_config(plan, Variant::Distributed, p);
                    let guidance = Guidance::PerParticle(nets.per_particle[..p].to_vec());
                    run_experiment(&cfg, &env, guidance, &mut rng)?
                }
            };
            let id = RunId { group: g, env: e, run };
            let record = to_run_record(&history, &oracle, id)?;
            record.write_csv(&plan.run_path(algorithm, group, e, run))?;
            out.push(RunResult {
                algorithm: *algorithm,
                group: group.name.clone(),
                env: e,
                run,
                error: tracking_error(&record),
                t_max: plan.t_max,
            });
        }
    }
    log(&format!("{} env {e}: done", group.name));
    Ok(out)
}

fn algorithm_config(plan: &ExperimentPlan, variant: Variant, particles: usize) -> AlgorithmConfig {
    AlgorithmConfig {
        online_lr: plan.online_lr,
        ..AlgorithmConfig::new(variant, particles)
    }
}

/// Reads whatever run traces of the plan exist on disk.
pub fn collect_results(plan: &ExperimentPlan) -> Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for algorithm in &plan.algorithms {
        for (g, group) in plan.groups.iter().enumerate() {
            for e in 0..plan.e_count {
                for run in 0..plan.e_run {
                    let path = plan.run_path(algorithm, group, e, run);
                    if !path.exists() {
                        continue;
                    }
                    let record = RunRecord::read_csv(&path, RunId { group: g, env: e, run })?;
                    if record.steps.len() != plan.t_max {
                        continue;
                    }
                    out.push(RunResult {
                        algorithm: *algorithm,
                        group: group.name.clone(),
                        env: e,
                        run,
                        error: tracking_error(&record),
                        t_max: plan.t_max,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// One row of the comparison table. A `None` cell had missing runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: String,
    pub particles: usize,
    pub groups: BTreeMap<String, Option<Summary>>,
    pub aggregate: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub t_max: usize,
    pub group_order: Vec<String>,
    /// Cumulative tracking error per run.
    pub cumulative: Vec<ReportRow>,
    /// The same table divided by `t_max`.
    pub per_step: Vec<ReportRow>,
}

impl Report {
    pub fn row(&self, algorithm: &AlgorithmEntry) -> Option<&ReportRow> {
        self.cumulative
            .iter()
            .find(|r| r.algorithm == algorithm.kind.label() && r.particles == algorithm.particles)
    }
}

/// Builds the comparison table from run results, one row per planned
/// algorithm. Cells with any missing run are left empty.
pub fn build_report(plan: &ExperimentPlan, results: &[RunResult]) -> Result<Report> {
    let mut cumulative = Vec::new();
    for algorithm in &plan.algorithms {
        let mut groups = BTreeMap::new();
        let mut complete = Vec::new();
        for group in &plan.groups {
            let cell = group_summary(plan, results, algorithm, &group.name)?;
            if let Some(s) = cell {
                complete.push(s);
            }
            groups.insert(group.name.clone(), cell);
        }
        let aggregate = if complete.len() == plan.groups.len() {
            Some(aggregate_group(&complete)?)
        } else {
            None
        };
        cumulative.push(ReportRow {
            algorithm: algorithm.kind.label().to_string(),
            particles: algorithm.particles,
            groups,
            aggregate,
        });
    }
    let scale = |s: &Option<Summary>| {
        s.map(|s| Summary {
            mean: s.mean / plan.t_max as f64,
            sd: s.sd / plan.t_max as f64,
        })
    };
    let per_step = cumulative
        .iter()
        .map(|r| ReportRow {
            algorithm: r.algorithm.clone(),
            particles: r.particles,
            groups: r.groups.iter().map(|(k, v)| (k.clone(), scale(v))).collect(),
            aggregate: scale(&r.aggregate),
        })
        .collect();
    Ok(Report {
        t_max: plan.t_max,
        group_order: plan.groups.iter().map(|g| g.name.clone()).collect(),
        cumulative,
        per_step,
    })
}

fn group_summary(
    plan: &ExperimentPlan,
    results: &[RunResult],
    algorithm: &AlgorithmEntry,
    group: &str,
) -> Result<Option<Summary>> {
    let mut envs = Vec::with_capacity(plan.e_count);
    for e in 0..plan.e_count {
        let errors: Vec<f64> = results
            .iter()
            .filter(|r| &r.algorithm == algorithm && r.group == group && r.env == e && r.run < plan.e_run)
            .map(|r| r.error)
            .collect();
        if errors.len() != plan.e_run {
            return Ok(None);
        }
        envs.push(aggregate_env(&errors)?);
    }
    Ok(Some(aggregate_group(&envs)?))
}

/// Writes `summary.csv`, `summary_per_step.csv` and `summary.json` into the
/// plan's output directory.
pub fn emit_report(plan: &ExperimentPlan, results: &[RunResult]) -> Result<Report> {
    let report = build_report(plan, results)?;
    std::fs::create_dir_all(&plan.out_dir).map_err(|e| Error::io(&plan.out_dir, e))?;
    write_table(&plan.out_dir.join("summary.csv"), &report.group_order, &report.cumulative)?;
    write_table(&plan.out_dir.join("summary_per_step.csv"), &report.group_order, &report.per_step)?;
    let json_path = plan.out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok(report)
}

fn cell(s: &Option<Summary>) -> String {
    match s {
        Some(s) => format!("{:.3} ± {:.3}", s.mean, s.sd),
        None => String::new(),
    }
}

fn write_table(path: &Path, groups: &[String], rows: &[ReportRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["algorithm".to_string(), "p".into(), "n".into()];
    header.extend(groups.iter().cloned());
    header.push("aggregate".into());
    writer.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.algorithm.clone(), row.particles.to_string(), String::new()];
        record.extend(groups.iter().map(|g| cell(row.groups.get(g).unwrap_or(&None))));
        record.push(cell(&row.aggregate));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_plan(dir: &Path) -> ExperimentPlan {
        ExperimentPlan {
            groups: vec![GroupSpec::new("A", 6, 3), GroupSpec::new("B", 8, 8)],
            t_max: 25,
            e_count: 2,
            e_run: 2,
            algorithms: vec![AlgorithmEntry::new(AlgorithmKind::Pso, 5)],
            ..ExperimentPlan::desk(7, dir.to_path_buf())
        }
    }

    #[test]
    fn desk_and_full_shapes() {
        let desk = ExperimentPlan::desk(1, "out".into());
        assert_eq!(desk.groups.iter().map(|g| g.name.as_str()).collect::<Vec<_>>(), ["E1", "E3"]);
        assert_eq!((desk.t_max, desk.e_count, desk.e_run), (2000, 2, 2));
        let full = ExperimentPlan::full(1, "out".into());
        assert_eq!(full.groups.len() * full.e_count * full.e_run, 60);
        assert_eq!(full.t_max, 20_000);
        // matched observation budget
        let pso: Vec<usize> = desk
            .algorithms
            .iter()
            .filter(|a| a.kind == AlgorithmKind::Pso)
            .map(|a| a.particles)
            .collect();
        assert_eq!(pso, [5, 165]);
        assert_eq!(165, 5 * 33);
    }

    #[test]
    fn plan_round_trips_through_toml() {
        let plan = ExperimentPlan::desk(99, "somewhere".into());
        let text = plan.to_toml().unwrap();
        assert_eq!(ExperimentPlan::from_toml(&text).unwrap(), plan);
        let partial = ExperimentPlan::from_toml("t_max = 300\nmaster_seed = 4\n").unwrap();
        assert_eq!((partial.t_max, partial.master_seed), (300, 4));
        assert!(ExperimentPlan::from_toml("algorithms = [{ kind = \"ga\", particles = 3 }]").is_err());
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let mut plan = ExperimentPlan::desk(1, "x".into());
        plan.algorithms.push(AlgorithmEntry::new(AlgorithmKind::Pso, 5));
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::desk(1, "x".into());
        plan.e_run = 0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn seeds_are_stable_when_algorithms_change() {
        let plan = ExperimentPlan::desk(3, "x".into());
        let g = &plan.groups[0];
        let a = AlgorithmEntry::new(AlgorithmKind::Pso, 5);
        let mut bigger = plan.clone();
        bigger.algorithms.push(AlgorithmEntry::new(AlgorithmKind::Dnnpso, 10));
        assert_eq!(plan.run_seed(g, 1, 0, &a), bigger.run_seed(g, 1, 0, &a));
        assert_eq!(plan.env_seed(g, 1), bigger.env_seed(g, 1));
        assert_ne!(plan.env_seed(g, 0), plan.env_seed(g, 1));
        assert_ne!(
            plan.run_seed(g, 0, 0, &a),
            plan.run_seed(g, 0, 0, &AlgorithmEntry::new(AlgorithmKind::Cnnpso, 5))
        );
    }

    #[test]
    fn pretrained_weights_feed_a_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(dir.path());
        plan.algorithms = vec![
            AlgorithmEntry::new(AlgorithmKind::Cnnpso, 2),
            AlgorithmEntry::new(AlgorithmKind::Dnnpso, 3),
        ];
        plan.pretrain = PretrainConfig {
            peak_counts: vec![4],
            center_counts: vec![2],
            t_max: 20,
            ..PretrainConfig::default()
        };
        ensure_weights(&plan, &|_| {}).unwrap();
        assert!(weight_path(&plan.weights_dir, Variant::Centralized, 0).exists());
        assert!(weight_path(&plan.weights_dir, Variant::Distributed, 2).exists());
        assert!(!weight_path(&plan.weights_dir, Variant::Distributed, 3).exists());
        let results = run_plan(&plan, &|_| {}).unwrap();
        assert_eq!(results.len(), 2 * 2 * 2 * 2);
        assert!(results.iter().all(|r| r.error.is_finite() && r.error >= 0.0));
    }

    #[test]
    fn missing_weights_are_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(dir.path());
        plan.algorithms.push(AlgorithmEntry::new(AlgorithmKind::Dnnpso, 5));
        let err = run_plan(&plan, &|_| {});
        assert!(matches!(err, Err(Error::Config(_))), "{err:?}");
    }

    #[test]
    fn pso_only_plan_writes_the_result_tree() {
        let dir = tempfile::tempdir().unwrap();
        let plan = tiny_plan(dir.path());
        let results = run_plan(&plan, &|_| {}).unwrap();
        assert_eq!(results.len(), 2 * 2 * 2);
        let trace = std::fs::read_to_string(plan.run_path(&plan.algorithms[0], &plan.groups[0], 0, 0)).unwrap();
        assert_eq!(trace.lines().count(), 1 + 25);
        assert_eq!(collect_results(&plan).unwrap(), results);

        // a report that also lists NNGPSO rows leaves them blank
        let mut wider = plan.clone();
        wider.algorithms.push(AlgorithmEntry::new(AlgorithmKind::Dnnpso, 5));
        let report = emit_report(&wider, &results).unwrap();
        let dnn = report.row(&wider.algorithms[1]).unwrap();
        assert!(dnn.aggregate.is_none() && dnn.groups.values().all(|c| c.is_none()));
        let pso = report.row(&wider.algorithms[0]).unwrap();
        let groups: Vec<Summary> = pso.groups.values().map(|c| c.unwrap()).collect();
        assert_eq!(pso.aggregate, Some(aggregate_group(&groups).unwrap()));
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(csv.starts_with("algorithm,p,n,A,B,aggregate\n"));
        assert!(csv.lines().nth(2).unwrap().starts_with("DNNPSO,5,,,,"));
    }

    #[test]
    fn shared_environment_files_are_identical_across_plans() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = tiny_plan(d1.path());
        let mut p2 = tiny_plan(d2.path());
        p2.algorithms = vec![AlgorithmEntry::new(AlgorithmKind::Pso, 9)];
        run_plan(&p1, &|_| {}).unwrap();
        run_plan(&p2, &|_| {}).unwrap();
        for g in &p1.groups {
            for e in 0..p1.e_count {
                let a = std::fs::read(p1.env_path(g, e)).unwrap();
                let b = std::fs::read(p2.env_path(g, e)).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn workers_do_not_change_results() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = tiny_plan(d1.path());
        let p2 = ExperimentPlan {
            workers: 3,
            ..tiny_plan(d2.path())
        };
        let r1 = run_plan(&p1, &|_| {}).unwrap();
        let r2 = run_plan(&p2, &|_| {}).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(
            std::fs::read(d1.path().join("summary.csv")).unwrap(),
            std::fs::read(d2.path().join("summary.csv")).unwrap()
        );
    }
}
