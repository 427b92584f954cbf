use std::path::Path;
use std::process::Command;

fn nngpso() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nngpso"))
}

fn tiny_plan(dir: &Path, algorithms: &str) -> std::path::PathBuf {
    let text = format!(
        "t_max = 30\ne_count = 1\ne_run = 2\nmaster_seed = 5\nout_dir = \"{}\"\n\
         [[groups]]\nname = \"S\"\npeaks = 6\ncenters = 3\n{algorithms}",
        dir.join("out").display()
    );
    let path = dir.join("plan.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const PSO_ONLY: &str = "[[algorithms]]\nkind = \"pso\"\nparticles = 5\n";

#[test]
fn plan_prints_parseable_toml() {
    let out = nngpso().args(["plan", "--seed", "9", "--t-max", "500"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let plan = nngpso::bench::ExperimentPlan::from_toml(&text).unwrap();
    assert_eq!((plan.master_seed, plan.t_max), (9, 500));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path(), PSO_ONLY);
    let run = nngpso().arg("run").arg("--plan").arg(&plan).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = dir.path().join("out/summary.csv");
    let first = std::fs::read(&summary).unwrap();
    std::fs::remove_file(&summary).unwrap();

    let report = nngpso().arg("report").arg("--plan").arg(&plan).output().unwrap();
    assert!(report.status.success());
    assert_eq!(std::fs::read(&summary).unwrap(), first);
    assert!(String::from_utf8(report.stdout).unwrap().contains("PSO"));
}

#[test]
fn output_directory_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path(), PSO_ONLY);
    let elsewhere = dir.path().join("elsewhere");
    let status = nngpso()
        .arg("oracle")
        .arg("--plan")
        .arg(&plan)
        .env("NNGPSO_OUT", &elsewhere)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(elsewhere.join("envs/S-e0.json").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_weights_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path(), "[[algorithms]]\nkind = \"dnnpso\"\nparticles = 5\n");
    let out = nngpso().arg("run").arg("--plan").arg(&plan).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pre-trained weights"));
}
