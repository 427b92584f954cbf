use std::time::Instant;
use nngpso::env::{Environment, EnvironmentSpec};
use nngpso::pso::{find_static_optimum, OracleConfig};
use nngpso::seed::rng_from_seed;
use nngpso::Vec2;

fn main() {
    for (h, c) in [(25, 5), (50, 10), (100, 50), (200, 200)] {
        let env = Environment::generate(EnvironmentSpec::standard(h, c, 2000, 1)).unwrap();
        let mut rng = rng_from_seed(3);
        let t0 = Instant::now();
        let n = 20;
        for _ in 0..n { find_static_optimum(&env, &OracleConfig::default(), &mut rng).unwrap(); }
        let per = t0.elapsed().as_secs_f64() / n as f64;
        let t1 = Instant::now();
        let mut s = 0.0;
        for i in 0..100000 { s += env.utility(Vec2::new((i % 200) as f64 * 0.1 - 10.0, 0.3)); }
        let ev = t1.elapsed().as_secs_f64() / 100000.0 / h as f64;
        println!("H={h}: oracle {:.2} ms/timestep, {:.2} ns/peak-eval ({s:.1})", per * 1e3, ev * 1e9);
    }
}
