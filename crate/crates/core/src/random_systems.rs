//! Seeded generator of feasible test systems.
//!
//! `A1` is scaled to spectral radius 0.9, `A2` shrunk until the lifted
//! open-loop radius is below 0.95, input matrices are small, `γ = 5` and
//! `Q = I`. Draws are rejected until the coupled solve converges to a
//! mean-square stabilizing solution.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::gare::{ms_stable, solve_coupled_gare, SolveReport};
use crate::linalg::spectral_radius;
use crate::model::{CostSpec, SdltiSystem};

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub system: SdltiSystem<f64>,
    pub cost: CostSpec<f64>,
    pub solution: SolveReport<f64>,
    /// Rejected draws before this one.
    pub rejected: usize,
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Feasible system with state dimension `n` and one or two inputs per
/// channel, deterministic in `seed`.
pub fn random_feasible_system(seed: u64, n: usize) -> RandomInstance {
    assert!(n >= 1, "state dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected = 0;
    loop {
        let m1 = rng.random_range(1..=2);
        let m2 = rng.random_range(1..=2);
        let mut a1 = normal(&mut rng, n, n, 1.0);
        let rho = spectral_radius(&a1);
        if rho < 1e-6 {
            rejected += 1;
            continue;
        }
        a1 *= 0.9 / rho;
        let mut a2 = normal(&mut rng, n, n, 0.3);
        while !(ms_stable(&a1, &a2).radius < 0.95) {
            a2 *= 0.5;
        }
        let b1 = normal(&mut rng, n, m1, 0.3);
        let c1 = normal(&mut rng, n, m2, 0.3);
        let c2 = normal(&mut rng, n, m2, 0.1);
        let system = SdltiSystem::from_matrices(a1, a2, b1, c1, c2).expect("consistent shapes");
        let cost = CostSpec::identity(5.0, n).expect("valid cost");
        match solve_coupled_gare(&system, &cost, 1e-11, 20_000) {
            Ok(solution) if solution.stable() => {
                return RandomInstance {
                    system,
                    cost,
                    solution,
                    rejected,
                }
            }
            _ => rejected += 1,
        }
    }
}
