//! Seeded simulation of the multiplicative-noise system, stage costs and
//! exact one-step expectations.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{ensure_len, ensure_shape, quad_form};
use crate::model::{CostSpec, GainPair, SdltiSystem};
use crate::probe::ProbingSchedule;
use crate::report::fmt_sig12;
use crate::scalar::{lit, to_f64, Scalar};

/// Any state component beyond this magnitude aborts a simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseDistribution {
    #[default]
    StandardGaussian,
    /// ±1 with equal probability.
    Rademacher,
}

/// Mixes a seed with a path of indices (splitmix64 finalizer per step).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |acc, &i| mix(acc ^ mix(i)))
}

/// Zero-mean, unit-variance scalar noise stream `ω_k`.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    distribution: NoiseDistribution,
    position: u64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64, distribution: NoiseDistribution) -> Self {
        Self {
            seed,
            distribution,
            position: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn gaussian(seed: u64) -> Self {
        Self::new(seed, NoiseDistribution::StandardGaussian)
    }

    /// Independent stream keyed by `(seed, path…)`.
    pub fn derived(seed: u64, distribution: NoiseDistribution, path: &[u64]) -> Self {
        Self::new(derive_seed(seed, path), distribution)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> NoiseDistribution {
        self.distribution
    }

    /// Number of draws taken so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn next_f64(&mut self) -> f64 {
        self.position += 1;
        match self.distribution {
            NoiseDistribution::StandardGaussian => self.rng.sample(StandardNormal),
            NoiseDistribution::Rademacher => {
                if self.rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn sample<T: Scalar>(&mut self) -> T {
        lit(self.next_f64())
    }
}

fn check_step_dims<T: Scalar>(
    sys: &SdltiSystem<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    v: &DVector<T>,
) -> Result<()> {
    ensure_len(x, sys.n(), "state")?;
    ensure_len(u, sys.m1(), "control")?;
    ensure_len(v, sys.m2(), "disturbance")
}

/// Deterministic and noise-multiplied parts `(A1x+B1u+C1v, A2x+C2v)` of the
/// transition.
pub fn transition_parts<T: Scalar>(
    sys: &SdltiSystem<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    v: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    check_step_dims(sys, x, u, v)?;
    let mean = sys.a1() * x + sys.b1() * u + sys.c1() * v;
    let spread = sys.a2() * x + sys.c2() * v;
    Ok((mean, spread))
}

/// `A1 x + B1 u + C1 v + (A2 x + C2 v) ω`.
pub fn step<T: Scalar>(
    sys: &SdltiSystem<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    v: &DVector<T>,
    omega: T,
) -> Result<DVector<T>> {
    let (mean, spread) = transition_parts(sys, x, u, v)?;
    Ok(mean + spread * omega)
}

/// `(r1, r2)` with `r2 = xᵀQx + uᵀu` and `r1 = γ² vᵀv − r2`.
pub fn stage_costs<T: Scalar>(
    cost: &CostSpec<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    v: &DVector<T>,
) -> Result<(T, T)> {
    ensure_len(x, cost.n(), "state")?;
    let r2 = quad_form(cost.q(), x) + u.dot(u);
    let r1 = cost.gamma_sq() * v.dot(v) - r2;
    Ok((r1, r2))
}

/// `E[x⁺ᵀ P x⁺ | x, u, v]` under `E ω = 0`, `E ω² = 1`.
pub fn expected_next_quadratic<T: Scalar>(
    sys: &SdltiSystem<T>,
    p: &DMatrix<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    v: &DVector<T>,
) -> Result<T> {
    ensure_shape(p, (sys.n(), sys.n()), "P")?;
    let (mean, spread) = transition_parts(sys, x, u, v)?;
    Ok(quad_form(p, &mean) + quad_form(p, &spread))
}

pub(crate) fn diverged<T: Scalar>(x: &DVector<T>) -> bool {
    let limit = lit::<T>(DIVERGENCE_LIMIT);
    x.iter().any(|c| !c.is_finite() || c.abs() > limit)
}

/// Recorded run: `states` has one more entry than the per-step lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub states: Vec<DVector<T>>,
    pub controls: Vec<DVector<T>>,
    pub disturbances: Vec<DVector<T>>,
    /// `None` when the noise realization was not observable.
    pub noises: Vec<Option<T>>,
    pub r1: Vec<T>,
    pub r2: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn starting_at(x0: DVector<T>) -> Self {
        Self {
            states: vec![x0],
            controls: Vec::new(),
            disturbances: Vec::new(),
            noises: Vec::new(),
            r1: Vec::new(),
            r2: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn push(
        &mut self,
        u: DVector<T>,
        v: DVector<T>,
        omega: Option<T>,
        costs: (T, T),
        next: DVector<T>,
    ) {
        self.controls.push(u);
        self.disturbances.push(v);
        self.noises.push(omega);
        self.r1.push(costs.0);
        self.r2.push(costs.1);
        self.states.push(next);
    }

    pub fn final_state(&self) -> &DVector<T> {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Recomputes every transition from the stored inputs and noise and
    /// returns the largest deviation from the stored next state.
    pub fn replay_error(&self, sys: &SdltiSystem<T>) -> Result<T> {
        let mut worst = T::zero();
        for k in 0..self.steps() {
            let omega = self.noises[k]
                .ok_or_else(|| Error::Oracle(format!("noise at step {k} not recorded")))?;
            let next = step(
                sys,
                &self.states[k],
                &self.controls[k],
                &self.disturbances[k],
                omega,
            )?;
            worst = worst.max((next - &self.states[k + 1]).amax());
        }
        Ok(worst)
    }

    /// CSV with header `k,x1..xn,u1..um1,v1..vm2,omega,r1,r2`; the terminal
    /// state row leaves the input columns blank.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.states[0].len();
        let m1 = self.controls.first().map_or(0, |u| u.len());
        let m2 = self.disturbances.first().map_or(0, |v| v.len());
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m1).map(|i| format!("u{i}")));
        header.extend((1..=m2).map(|i| format!("v{i}")));
        header.extend(["omega", "r1", "r2"].map(String::from));
        writeln!(w, "{}", header.join(","))?;

        let f = |x: T| fmt_sig12(to_f64(x));
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|&c| f(c)));
            if k < self.steps() {
                row.extend(self.controls[k].iter().map(|&c| f(c)));
                row.extend(self.disturbances[k].iter().map(|&c| f(c)));
                row.push(self.noises[k].map(f).unwrap_or_default());
                row.push(f(self.r1[k]));
                row.push(f(self.r2[k]));
            } else {
                row.extend(std::iter::repeat_n(String::new(), m1 + m2 + 3));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs `u = K2 x + e_u`, `v = K1 x + e_v` for `steps` steps (probe terms
/// zero when `probe` is `None` or inactive).
pub fn simulate_closed_loop<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    gains: &GainPair<T>,
    x0: &DVector<T>,
    steps: usize,
    noise: &mut NoiseSource,
    probe: Option<&ProbingSchedule>,
) -> Result<Trajectory<T>> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    ensure_len(x0, sys.n(), "x0")?;
    ensure_shape(gains.k1(), (sys.m2(), sys.n()), "K1")?;
    ensure_shape(gains.k2(), (sys.m1(), sys.n()), "K2")?;

    let mut traj = Trajectory::starting_at(x0.clone());
    for k in 0..steps {
        let x = traj.final_state().clone();
        let (eu, ev) = match probe {
            Some(p) => p.probing_noise(k, sys.m1(), sys.m2()),
            None => (DVector::zeros(sys.m1()), DVector::zeros(sys.m2())),
        };
        let u = gains.k2() * &x + eu;
        let v = gains.k1() * &x + ev;
        let omega = noise.sample::<T>();
        let costs = stage_costs(cost, &x, &u, &v)?;
        let next = step(sys, &x, &u, &v, omega)?;
        if diverged(&next) {
            return Err(Error::Divergence { step: k + 1 });
        }
        traj.push(u, v, Some(omega), costs, next);
    }
    Ok(traj)
}

/// Seeded estimate of `Σ E(xᵀQx + uᵀu) / Σ vᵀv` from `x0 = 0` under
/// `u = K2 x` and the given disturbance sequence (zero past its end).
///
/// A run whose state exceeds [`DIVERGENCE_LIMIT`] stops accumulating; the
/// ratio returned is then already far above any sensible `γ²`.
pub fn empirical_attenuation<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    k2: &DMatrix<T>,
    disturbance: &[DVector<T>],
    horizon: usize,
    runs: usize,
    seed: u64,
) -> Result<T> {
    ensure_shape(k2, (sys.m1(), sys.n()), "K2")?;
    for v in disturbance {
        ensure_len(v, sys.m2(), "disturbance")?;
    }
    let energy: T = disturbance
        .iter()
        .take(horizon)
        .fold(T::zero(), |acc, v| acc + v.dot(v));
    if energy <= T::zero() {
        return Err(Error::ZeroDisturbanceEnergy);
    }
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be positive".into()));
    }

    let zero_v = DVector::zeros(sys.m2());
    let mut output = T::zero();
    for r in 0..runs {
        let mut noise =
            NoiseSource::derived(seed, NoiseDistribution::StandardGaussian, &[r as u64]);
        let mut x = DVector::zeros(sys.n());
        for k in 0..horizon {
            let v = disturbance.get(k).unwrap_or(&zero_v);
            let u = k2 * &x;
            output += quad_form(cost.q(), &x) + u.dot(&u);
            x = step(sys, &x, &u, v, noise.sample())?;
            if diverged(&x) {
                output += lit::<T>(DIVERGENCE_LIMIT * DIVERGENCE_LIMIT);
                break;
            }
        }
    }
    Ok(output / (energy * lit::<T>(runs as f64)))
}
