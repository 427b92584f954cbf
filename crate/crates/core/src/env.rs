//! The dynamic landscape: a sum of axis-aligned bivariate Gaussian peaks,
//! each drifting in a straight line toward a static center.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use wide::f64x4;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::seed::{rng_from_seed, SimRng};

/// Generation and dynamics parameters for one environment realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    /// Half-width of the square domain.
    pub e_bound: f64,
    /// Shrink factor applied to `e_bound` for initial peak and center sampling.
    pub e_factor: f64,
    pub peak_count: usize,
    pub center_count: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Peak speed divisor, in timesteps.
    pub omega: f64,
    pub t_max: usize,
    pub seed: u64,
}

impl EnvironmentSpec {
    /// The experiment defaults: a 20×20 domain, 0.8 sampling factor,
    /// σ ∈ [0.25, 1] and ω = t_max.
    pub fn standard(peak_count: usize, center_count: usize, t_max: usize, seed: u64) -> Self {
        Self {
            e_bound: 10.0,
            e_factor: 0.8,
            peak_count,
            center_count,
            sigma_min: 0.25,
            sigma_max: 1.0,
            omega: t_max as f64,
            t_max,
            seed,
        }
    }

    /// Half-width of the initialization square, `e_factor · e_bound`.
    pub fn init_bound(&self) -> f64 {
        self.e_factor * self.e_bound
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.e_bound > 0.0 && self.e_bound.is_finite()) {
            return fail("e_bound must be positive and finite");
        }
        if !(self.e_factor > 0.0 && self.e_factor <= 1.0) {
            return fail("e_factor must lie in (0, 1]");
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite()) {
            return fail("sigma bounds must satisfy 0 < sigma_min <= sigma_max");
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return fail("omega must be positive");
        }
        if self.t_max == 0 {
            return fail("t_max must be positive");
        }
        if self.center_count == 0 && self.peak_count > 0 {
            return fail("peaks need at least one center to move toward");
        }
        Ok(())
    }
}

/// One bivariate Gaussian component of the landscape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub mu: Vec2,
    /// Per-axis standard deviations.
    pub sigma: [f64; 2],
    /// Correlation coefficient; only 0 is supported.
    pub rho: f64,
    pub center_index: usize,
    /// Distance from the initial mean to the assigned center.
    pub initial_distance: f64,
}

/// Structure-of-arrays copy of the peak parameters for the utility inner
/// loop, padded to a multiple of the SIMD width with zero-scale lanes.
#[derive(Debug, Clone, Default)]
struct Kernels {
    mx: Vec<f64x4>,
    my: Vec<f64x4>,
    // -1 / (2σ²) per axis
    ax: Vec<f64x4>,
    ay: Vec<f64x4>,
    scale: Vec<f64x4>,
}

const LANES: usize = 4;

impl Kernels {
    fn build(peaks: &[Peak]) -> Self {
        let chunks = peaks.len().div_ceil(LANES);
        let mut k = Kernels::default();
        for c in 0..chunks {
            let mut mx = [0.0; LANES];
            let mut my = [0.0; LANES];
            let mut ax = [0.0; LANES];
            let mut ay = [0.0; LANES];
            let mut scale = [0.0; LANES];
            for lane in 0..LANES {
                if let Some(p) = peaks.get(c * LANES + lane) {
                    let [s1, s2] = p.sigma;
                    mx[lane] = p.mu.x;
                    my[lane] = p.mu.y;
                    ax[lane] = -0.5 / (s1 * s1);
                    ay[lane] = -0.5 / (s2 * s2);
                    scale[lane] = 1.0 / (2.0 * PI * s1 * s2);
                }
            }
            k.mx.push(f64x4::from(mx));
            k.my.push(f64x4::from(my));
            k.ax.push(f64x4::from(ax));
            k.ay.push(f64x4::from(ay));
            k.scale.push(f64x4::from(scale));
        }
        k
    }

    fn set_mean(&mut self, index: usize, mu: Vec2) {
        let (c, lane) = (index / LANES, index % LANES);
        let mut mx = self.mx[c].to_array();
        let mut my = self.my[c].to_array();
        mx[lane] = mu.x;
        my[lane] = mu.y;
        self.mx[c] = f64x4::from(mx);
        self.my[c] = f64x4::from(my);
    }

    #[inline]
    fn eval(&self, x: Vec2) -> f64 {
        let px = f64x4::splat(x.x);
        let py = f64x4::splat(x.y);
        let mut acc = f64x4::ZERO;
        for c in 0..self.mx.len() {
            let dx = px - self.mx[c];
            let dy = py - self.my[c];
            let arg = self.ax[c] * dx * dx + self.ay[c] * dy * dy;
            acc += self.scale[c] * arg.exp();
        }
        acc.reduce_add()
    }

    fn scale_sum(&self) -> f64 {
        self.scale.iter().map(|s| s.reduce_add()).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct EnvironmentFile {
    spec: EnvironmentSpec,
    t: usize,
    peaks: Vec<Peak>,
    centers: Vec<Vec2>,
}

/// A snapshot of the landscape at timestep `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentFile", into = "EnvironmentFile")]
pub struct Environment {
    spec: EnvironmentSpec,
    peaks: Vec<Peak>,
    centers: Vec<Vec2>,
    t: usize,
    kernels: Kernels,
}

impl From<Environment> for EnvironmentFile {
    fn from(env: Environment) -> Self {
        Self {
            spec: env.spec,
            t: env.t,
            peaks: env.peaks,
            centers: env.centers,
        }
    }
}

impl TryFrom<EnvironmentFile> for Environment {
    type Error = Error;

    fn try_from(file: EnvironmentFile) -> Result<Self> {
        Environment::from_parts(file.spec, file.peaks, file.centers, file.t)
    }
}

impl PartialEq for Environment {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.peaks == other.peaks
            && self.centers == other.centers
            && self.t == other.t
    }
}

impl Environment {
    /// Builds an environment from explicit parts, checking every invariant.
    pub fn from_parts(
        spec: EnvironmentSpec,
        peaks: Vec<Peak>,
        centers: Vec<Vec2>,
        t: usize,
    ) -> Result<Self> {
        spec.validate()?;
        for (i, peak) in peaks.iter().enumerate() {
            if peak.rho != 0.0 {
                return Err(Error::Config(format!("peak {i}: nonzero correlation is unsupported")));
            }
            if peak.center_index >= centers.len() {
                return Err(Error::Config(format!("peak {i}: center index out of range")));
            }
            if !peak.sigma.iter().all(|s| *s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("peak {i}: sigma must be positive")));
            }
        }
        let kernels = Kernels::build(&peaks);
        Ok(Self {
            spec,
            peaks,
            centers,
            t,
            kernels,
        })
    }

    /// Generates an environment using the generation stream of `spec.seed`.
    pub fn generate(spec: EnvironmentSpec) -> Result<Self> {
        let mut rng = rng_from_seed(spec.seed);
        Self::generate_with(spec, &mut rng)
    }

    /// Samples peak means and centers uniformly in the initialization square,
    /// SDs uniformly in `[sigma_min, sigma_max]`, and a uniform center per peak.
    pub fn generate_with<R: Rng + ?Sized>(spec: EnvironmentSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let bound = spec.init_bound();
        let centers: Vec<Vec2> = (0..spec.center_count)
            .map(|_| Vec2::uniform_in_box(rng, bound))
            .collect();
        let peaks = (0..spec.peak_count)
            .map(|_| {
                let mu = Vec2::uniform_in_box(rng, bound);
                let sigma = [
                    rng.gen_range(spec.sigma_min..=spec.sigma_max),
                    rng.gen_range(spec.sigma_min..=spec.sigma_max),
                ];
                let center_index = rng.gen_range(0..centers.len());
                Peak {
                    mu,
                    sigma,
                    rho: 0.0,
                    center_index,
                    initial_distance: mu.distance(centers[center_index]),
                }
            })
            .collect();
        Self::from_parts(spec, peaks, centers, 0)
    }

    /// The peak-motion random stream belonging to this realization, positioned
    /// at t = 0. It is independent of the generation stream, so a run can be
    /// replayed from a saved environment file alone.
    pub fn dynamics_rng(&self) -> SimRng {
        let mut rng = rng_from_seed(self.spec.seed);
        rng.set_stream(1);
        rng
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn peaks(&self) -> &[Peak] {
        &self.peaks
    }

    pub fn centers(&self) -> &[Vec2] {
        &self.centers
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn e_bound(&self) -> f64 {
        self.spec.e_bound
    }

    /// Sum of the peak densities at `x`. Defined everywhere, including
    /// outside the domain. Terms whose exponent is below about −708 (density
    /// factor under 1e−307) contribute zero.
    #[inline]
    pub fn utility(&self, x: Vec2) -> f64 {
        self.kernels.eval(x)
    }

    /// Upper bound on [`Environment::utility`]: every density at its own mean.
    pub fn max_possible_utility(&self) -> f64 {
        self.kernels.scale_sum()
    }

    /// Advances every peak one timestep toward its center.
    ///
    /// Each peak draws a speed from `U(0, initial_distance / omega)`; a step
    /// that would overshoot lands exactly on the center, where the peak stays.
    pub fn step_peaks<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.t >= self.spec.t_max {
            return Err(Error::Contract(format!(
                "cannot step past t_max = {}",
                self.spec.t_max
            )));
        }
        let omega = self.spec.omega;
        for (i, peak) in self.peaks.iter_mut().enumerate() {
            let speed = rng.gen::<f64>() * peak.initial_distance / omega;
            let center = self.centers[peak.center_index];
            let to_center = center - peak.mu;
            let remaining = to_center.norm();
            if remaining == 0.0 {
                continue;
            }
            if speed >= remaining {
                peak.mu = center;
            } else {
                peak.mu += (speed / remaining) * to_center;
            }
            self.kernels.set_mean(i, peak.mu);
        }
        self.t += 1;
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn spec(peaks: usize) -> EnvironmentSpec {
        EnvironmentSpec::standard(peaks, 3, 100, 42)
    }

    fn single_peak(mu: Vec2, sigma: [f64; 2]) -> Environment {
        let peaks = vec![Peak {
            mu,
            sigma,
            rho: 0.0,
            center_index: 0,
            initial_distance: 0.0,
        }];
        Environment::from_parts(spec(1), peaks, vec![mu], 0).unwrap()
    }

    #[test]
    fn initial_means_lie_in_the_sampling_square() {
        let env = Environment::generate(EnvironmentSpec::standard(500, 50, 10, 9)).unwrap();
        for p in env.peaks() {
            assert!(p.mu.in_box(8.0));
            assert!((0.25..=1.0).contains(&p.sigma[0]) && (0.25..=1.0).contains(&p.sigma[1]));
        }
        assert!(env.centers().iter().all(|c| c.in_box(8.0)));
    }

    #[test]
    fn empty_landscape_is_flat_zero() {
        let env = Environment::generate(spec(0)).unwrap();
        assert!(env.peaks().is_empty());
        assert_eq!(env.utility(Vec2::new(1.0, -2.0)), 0.0);
        assert_eq!(env.max_possible_utility(), 0.0);
    }

    #[test]
    fn same_seed_same_environment() {
        let a = Environment::generate(spec(20)).unwrap();
        let b = Environment::generate(spec(20)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(3);
        s.e_factor = 0.0;
        assert!(matches!(Environment::generate(s), Err(Error::Config(_))));
        let mut s = spec(3);
        s.sigma_min = 2.0;
        assert!(Environment::generate(s).is_err());
        let mut s = spec(3);
        s.t_max = 0;
        assert!(Environment::generate(s).is_err());
    }

    #[test]
    fn nonzero_rho_is_rejected() {
        let peaks = vec![Peak {
            mu: Vec2::ZERO,
            sigma: [1.0, 1.0],
            rho: 0.3,
            center_index: 0,
            initial_distance: 0.0,
        }];
        assert!(Environment::from_parts(spec(1), peaks, vec![Vec2::ZERO], 0).is_err());
    }

    #[test]
    fn utility_matches_closed_form() {
        let env = single_peak(Vec2::ZERO, [1.0, 1.0]);
        let at_mean = 1.0 / (2.0 * PI);
        assert!((env.utility(Vec2::ZERO) - at_mean).abs() < 1e-15);
        assert!((env.utility(Vec2::ZERO) - 0.1591549).abs() < 1e-7);
        let one_off = (-0.5f64).exp() / (2.0 * PI);
        assert!((env.utility(Vec2::new(1.0, 0.0)) - one_off).abs() < 1e-15);
        assert!((env.utility(Vec2::new(1.0, 0.0)) - 0.0965324).abs() < 1e-7);
    }

    #[test]
    fn twin_peaks_are_mirror_symmetric() {
        let peak = |x: f64| Peak {
            mu: Vec2::new(x, 0.0),
            sigma: [2.0, 2.0],
            rho: 0.0,
            center_index: 0,
            initial_distance: 0.0,
        };
        let env =
            Environment::from_parts(spec(2), vec![peak(-2.0), peak(2.0)], vec![Vec2::ZERO], 0)
                .unwrap();
        for v in [0.3, 1.0, 2.5, 7.0] {
            assert_eq!(env.utility(Vec2::new(0.0, v)), env.utility(Vec2::new(0.0, -v)));
            assert!((env.utility(Vec2::new(v, 0.0)) - env.utility(Vec2::new(-v, 0.0))).abs() < 1e-15);
        }
    }

    #[test]
    fn max_possible_utility_sums_prefactors() {
        let env = single_peak(Vec2::ZERO, [1.0, 1.0]);
        assert!((env.max_possible_utility() - 1.0 / (2.0 * PI)).abs() < 1e-15);

        let mk = |s: f64| Peak {
            mu: Vec2::ZERO,
            sigma: [s, s],
            rho: 0.0,
            center_index: 0,
            initial_distance: 0.0,
        };
        let env = Environment::from_parts(spec(2), vec![mk(1.0), mk(0.5)], vec![Vec2::ZERO], 0)
            .unwrap();
        let expected = 1.0 / (2.0 * PI) + 1.0 / (2.0 * PI * 0.25);
        assert!((env.max_possible_utility() - expected).abs() < 1e-12);
        assert!((env.max_possible_utility() - 0.7958).abs() < 1e-4);
    }

    fn moving_peak(mu: Vec2, center: Vec2, initial_distance: f64, omega: f64) -> Environment {
        let mut s = spec(1);
        s.omega = omega;
        let peaks = vec![Peak {
            mu,
            sigma: [1.0, 1.0],
            rho: 0.0,
            center_index: 0,
            initial_distance,
        }];
        Environment::from_parts(s, peaks, vec![center], 0).unwrap()
    }

    /// Always yields the same draw, so `gen::<f64>()` is a known constant.
    fn fixed_draw_rng(u: f64) -> rand::rngs::mock::StepRng {
        // StepRng feeds raw u64s; gen::<f64>() uses the top 53 bits.
        let raw = ((u * (1u64 << 53) as f64) as u64) << 11;
        rand::rngs::mock::StepRng::new(raw, 0)
    }

    #[test]
    fn peak_moves_along_unit_vector() {
        // speed = 0.2 * 5 / 1 = 1
        let mut env = moving_peak(Vec2::ZERO, Vec2::new(3.0, 4.0), 5.0, 1.0);
        env.step_peaks(&mut fixed_draw_rng(0.2)).unwrap();
        let mu = env.peaks()[0].mu;
        assert!((mu.x - 0.6).abs() < 1e-12 && (mu.y - 0.8).abs() < 1e-12);
        assert_eq!(env.t(), 1);
    }

    #[test]
    fn overshoot_snaps_to_center() {
        let center = Vec2::new(0.1, 0.0);
        // speed 0.5 against remaining distance 0.1
        let mut env = moving_peak(Vec2::ZERO, center, 1.0, 1.0);
        env.step_peaks(&mut fixed_draw_rng(0.5)).unwrap();
        assert_eq!(env.peaks()[0].mu, center);
        env.step_peaks(&mut fixed_draw_rng(0.9)).unwrap();
        assert_eq!(env.peaks()[0].mu, center);
    }

    #[test]
    fn peak_at_center_stays_put() {
        let c = Vec2::new(1.0, 1.0);
        let mut env = moving_peak(c, c, 0.0, 10.0);
        let mut rng = SimRng::seed_from_u64(1);
        env.step_peaks(&mut rng).unwrap();
        assert_eq!(env.peaks()[0].mu, c);
    }

    #[test]
    fn stepping_past_t_max_is_a_contract_error() {
        let mut s = spec(2);
        s.t_max = 1;
        let mut env = Environment::generate(s).unwrap();
        let mut rng = env.dynamics_rng();
        env.step_peaks(&mut rng).unwrap();
        assert!(matches!(env.step_peaks(&mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn trajectories_are_deterministic_and_distances_monotone() {
        let s = EnvironmentSpec::standard(30, 5, 200, 3);
        let run = || {
            let mut env = Environment::generate(s.clone()).unwrap();
            let mut rng = env.dynamics_rng();
            let mut snapshots = vec![env.clone()];
            for _ in 0..s.t_max {
                let before: Vec<f64> = env
                    .peaks()
                    .iter()
                    .map(|p| p.mu.distance(env.centers()[p.center_index]))
                    .collect();
                env.step_peaks(&mut rng).unwrap();
                for (p, d) in env.peaks().iter().zip(before) {
                    assert!(p.mu.distance(env.centers()[p.center_index]) <= d);
                }
                snapshots.push(env.clone());
            }
            snapshots
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn json_round_trip_preserves_the_landscape() {
        let env = Environment::generate(spec(12)).unwrap();
        let text = serde_json::to_string(&env).unwrap();
        let back: Environment = serde_json::from_str(&text).unwrap();
        assert_eq!(env, back);
        let x = Vec2::new(0.3, -1.7);
        assert_eq!(env.utility(x), back.utility(x));
    }

    proptest! {
        #[test]
        fn utility_bounded_by_prefactor_sum(seed in any::<u64>(), peaks in 0usize..40) {
            let env = Environment::generate(EnvironmentSpec::standard(peaks, 4, 10, seed)).unwrap();
            let mut rng = SimRng::seed_from_u64(seed ^ 0xabcd);
            let cap = env.max_possible_utility();
            for _ in 0..1000 {
                let x = Vec2::uniform_in_box(&mut rng, 12.0);
                let u = env.utility(x);
                prop_assert!(u >= 0.0);
                prop_assert!(u <= cap * (1.0 + 1e-12));
            }
        }

        #[test]
        fn isotropic_peak_is_radially_symmetric(
            s in 0.25f64..1.0, d in 0.0f64..3.0, a in 0.0f64..std::f64::consts::TAU,
        ) {
            let mu = Vec2::new(1.5, -2.0);
            let env = single_peak(mu, [s, s]);
            let reference = env.utility(mu + Vec2::new(d, 0.0));
            let probe = env.utility(mu + Vec2::from_polar(d, a));
            prop_assert!((reference - probe).abs() < 1e-12);
        }
    }
}
