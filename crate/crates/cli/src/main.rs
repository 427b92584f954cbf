use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nngpso::bench::{
    collect_results, emit_report, ensure_weights, precompute_oracles, run_plan, ExperimentPlan, Report,
};

#[derive(Parser)]
#[command(name = "nngpso", version, about = "Track a moving optimum with neural-network-guided swarms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a plan as TOML, ready to edit.
    Plan(PlanArgs),
    /// Pre-train the networks a plan needs and save their weights.
    Pretrain(PlanArgs),
    /// Generate the plan's environments and precompute their optimum traces.
    Oracle(PlanArgs),
    /// Execute every algorithm, environment and run of a plan.
    Run(PlanArgs),
    /// Rebuild the summary tables from run traces on disk.
    Report(PlanArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Plan file (TOML). Without it the desk-scale plan is used.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Start from the full-scale plan (4 groups, t_max 20000, 5 envs × 3 runs).
    #[arg(long, conflicts_with = "plan")]
    full: bool,
    /// Output directory.
    #[arg(long, env = "NNGPSO_OUT")]
    out: Option<PathBuf>,
    /// Directory holding pre-trained weights (default: <out>/weights).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Master seed for environments and runs.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed for pre-training.
    #[arg(long)]
    pretrain_seed: Option<u64>,
    /// Timesteps per run.
    #[arg(long)]
    t_max: Option<usize>,
    /// Environments per group.
    #[arg(long)]
    e_count: Option<usize>,
    /// Runs per environment and algorithm.
    #[arg(long)]
    e_run: Option<usize>,
    /// Horizon of each pre-training landscape.
    #[arg(long)]
    pretrain_t_max: Option<usize>,
    /// Worker threads for experiment cells.
    #[arg(long)]
    workers: Option<usize>,
}

impl PlanArgs {
    fn resolve(&self) -> nngpso::Result<ExperimentPlan> {
        let mut plan = match (&self.plan, self.full) {
            (Some(path), _) => ExperimentPlan::load(path)?,
            (None, true) => ExperimentPlan::full(1, PathBuf::from("results")),
            (None, false) => ExperimentPlan::default(),
        };
        let plan_weights_default = plan.weights_dir == plan.out_dir.join("weights");
        if let Some(out) = &self.out {
            plan.out_dir = out.clone();
            if plan_weights_default {
                plan.weights_dir = out.join("weights");
            }
        }
        if let Some(w) = &self.weights {
            plan.weights_dir = w.clone();
        }
        if let Some(s) = self.seed {
            plan.master_seed = s;
        }
        if let Some(s) = self.pretrain_seed {
            plan.pretrain_seed = s;
        }
        if let Some(t) = self.t_max {
            plan.t_max = t;
        }
        if let Some(n) = self.e_count {
            plan.e_count = n;
        }
        if let Some(n) = self.e_run {
            plan.e_run = n;
        }
        if let Some(t) = self.pretrain_t_max {
            plan.pretrain.t_max = t;
        }
        if let Some(w) = self.workers {
            plan.workers = w;
        }
        plan.validate()?;
        Ok(plan)
    }
}

fn log(message: &str) {
    eprintln!("[nngpso] {message}");
}

fn print_report(report: &Report) {
    println!("per-step tracking error (cumulative / t_max = {})", report.t_max);
    print!("{:<8} {:>4}", "alg", "p");
    for g in &report.group_order {
        print!(" {g:>17}");
    }
    println!(" {:>17}", "aggregate");
    for row in &report.per_step {
        print!("{:<8} {:>4}", row.algorithm, row.particles);
        for g in &report.group_order {
            match row.groups.get(g).copied().flatten() {
                Some(s) => print!(" {:>8.3} ± {:<6.3}", s.mean, s.sd),
                None => print!(" {:>17}", ""),
            }
        }
        match row.aggregate {
            Some(s) => println!(" {:>8.3} ± {:<6.3}", s.mean, s.sd),
            None => println!(),
        }
    }
}

fn execute(cli: Cli) -> nngpso::Result<()> {
    match cli.command {
        Command::Plan(args) => {
            print!("{}", args.resolve()?.to_toml()?);
        }
        Command::Pretrain(args) => {
            let plan = args.resolve()?;
            ensure_weights(&plan, &log)?;
            log(&format!("weights in {}", plan.weights_dir.display()));
        }
        Command::Oracle(args) => {
            let plan = args.resolve()?;
            if args.full {
                log("full scale: the oracle traces take many CPU hours");
            }
            precompute_oracles(&plan, &log)?;
        }
        Command::Run(args) => {
            let plan = args.resolve()?;
            if args.full {
                log("full scale: the oracle traces take many CPU hours");
            }
            let results = run_plan(&plan, &log)?;
            print_report(&emit_report(&plan, &results)?);
        }
        Command::Report(args) => {
            let plan = args.resolve()?;
            let results = collect_results(&plan)?;
            print_report(&emit_report(&plan, &results)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
