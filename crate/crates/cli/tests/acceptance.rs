//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stoch_h2hinf::bench::{f16_initial_gains, f16_reference, f16_system, f16_x0};
use stoch_h2hinf::gare::{qlearn_value_update, value_iteration_sequence};
use stoch_h2hinf::linalg::min_eigenvalue;
use stoch_h2hinf::qfunction::mat_from_vecs;
use stoch_h2hinf::random_systems::random_feasible_system;
use stoch_h2hinf::sim::{empirical_attenuation, NoiseDistribution};
use stoch_h2hinf::{
    closed_loop_stability, gains_from_q, h_from_values, run_q_learning, simulate_closed_loop,
    solve_coupled_gare, values_from_q, vech, vecs, AlgoConfig, CostSpec, ExpectationMode,
    NoiseCase, NoiseSource, QLearnReport, SdltiSystem, SimOracle, ValuePair,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// F-16 plus twenty random feasible systems with `n ≤ 3`.
fn test_systems() -> Vec<(String, SdltiSystem<f64>, CostSpec<f64>)> {
    let (sys, cost) = f16_system::<f64>();
    let mut out = vec![("f16".to_string(), sys, cost)];
    for seed in 0..20u64 {
        let inst = random_feasible_system(seed, 1 + (seed % 3) as usize);
        out.push((format!("random#{seed}"), inst.system, inst.cost));
    }
    out
}

fn analytic_run(case: NoiseCase, seed: u64) -> QLearnReport<f64> {
    let (sys, cost) = f16_system::<f64>();
    let config = AlgoConfig {
        expectation_mode: ExpectationMode::Analytic,
        noise_case: case,
        seed,
        ..AlgoConfig::default()
    };
    let mut oracle = SimOracle::new(sys, seed);
    run_q_learning(
        &mut oracle,
        &cost,
        &config,
        &f16_initial_gains(),
        &f16_x0(),
        None,
    )
    .expect("analytic run")
}

fn mc_run(seed: u64) -> Result<QLearnReport<f64>, String> {
    let (sys, cost) = f16_system::<f64>();
    let config = AlgoConfig {
        expectation_mode: ExpectationMode::MonteCarlo,
        noise_case: NoiseCase::Case1,
        tuples_per_iter: 20,
        branches: 100,
        seed,
        ..AlgoConfig::default()
    };
    let mut oracle = SimOracle::new(sys, seed);
    run_q_learning(
        &mut oracle,
        &cost,
        &config,
        &f16_initial_gains(),
        &f16_x0(),
        None,
    )
    .map_err(|e| e.to_string())
}

struct Runs {
    analytic: Vec<(NoiseCase, QLearnReport<f64>)>,
    mc: Vec<(u64, Result<QLearnReport<f64>, String>)>,
}

fn criterion_1() -> Outcome {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_stoch-h2hinf"))
        .args(["solve", "--system", "f16", "--out"])
        .arg(out.path())
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();
    if !status.status.success() {
        return Err(format!("solve exited with {}", status.status));
    }
    let blocks = |name: &str| -> Result<Vec<DMatrix<f64>>, String> {
        let text = std::fs::read_to_string(out.path().join(name)).map_err(|e| e.to_string())?;
        stoch_h2hinf::report::parse_blocks(&text).map_err(|e| e.to_string())
    };
    let vals = blocks("values.txt")?;
    let gains = blocks("gains.txt")?;
    let (rv, rg) = f16_reference::<f64>();
    let dp = max_abs_diff(&vals[0], rv.p1()).max(max_abs_diff(&vals[1], rv.p2()));
    let dk = max_abs_diff(&gains[0], rg.k1()).max(max_abs_diff(&gains[1], rg.k2()));
    check(
        dp <= 5e-3 && dk <= 1e-3 && elapsed < 1.0,
        format!(
            "max|dP| = {dp:.3e} (tol 5e-3), max|dK| = {dk:.3e} (tol 1e-3), wall {elapsed:.3} s"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut worst: (f64, String) = (0.0, String::new());
    let mut steps = 0;
    for (name, sys, cost) in test_systems() {
        let mut vals = ValuePair::zeros(sys.n());
        for i in 0..200 {
            let q = h_from_values(&sys, &cost, &vals).map_err(|e| format!("{name}: {e}"))?;
            let g = gains_from_q(&q).map_err(|e| format!("{name}: {e}"))?;
            let via_h = values_from_q(&q, &g).map_err(|e| format!("{name}: {e}"))?;
            let (direct, dg) =
                qlearn_value_update(&sys, &cost, &vals).map_err(|e| e.to_string())?;
            let (a, b) = via_h.distance(&direct);
            let (c, d) = g.distance(&dg);
            let err = a.max(b).max(c).max(d);
            if err > worst.0 {
                worst = (err, format!("{name} iteration {i}"));
            }
            vals = direct;
            steps += 1;
        }
    }
    check(
        worst.0 <= 1e-10,
        format!(
            "{steps} updates on 21 systems, worst Frobenius gap {:.3e} at {} (tol 1e-10)",
            worst.0, worst.1
        ),
    )
}

fn criterion_3(runs: &Runs) -> Outcome {
    let (sys, cost) = f16_system::<f64>();
    let report = &runs.analytic[0].1;
    if !report.converged() {
        return Err(format!("did not terminate: {}", report.reason));
    }
    let sol = solve_coupled_gare(&sys, &cost, 1e-12, 100_000).map_err(|e| e.to_string())?;
    let (k1, k2) = report.gains.distance(&sol.gains);
    let vi =
        value_iteration_sequence(&sys, &cost, report.iterations()).map_err(|e| e.to_string())?;
    let worst = report
        .history
        .iter()
        .map(|r| {
            let (a, b) = r.values.distance(&vi[r.iteration]);
            a.max(b)
        })
        .fold(0.0, f64::max);
    check(
        k1 <= 2e-3 && k2 <= 2e-3 && worst <= 1e-6,
        format!(
            "terminated at iteration {}, |K1-K1*| = {k1:.3e}, |K2-K2*| = {k2:.3e} (tol 2e-3), worst value gap to VI {worst:.3e} (tol 1e-6)",
            report.iterations()
        ),
    )
}

fn criterion_4(runs: &Runs) -> Outcome {
    let (sys, cost) = f16_system::<f64>();
    let (_, reference) = f16_reference::<f64>();
    let threshold = 0.01 * f16_x0::<f64>().norm_squared();
    let mut ok = true;
    let mut parts = Vec::new();
    for (seed, run) in &runs.mc {
        let report = match run {
            Ok(r) => r,
            Err(e) => {
                ok = false;
                parts.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let (k1, k2) = report.gains.distance(&reference);
        let start = report.learning.final_state().clone();
        let mut sum = 0.0;
        let mut diverged = false;
        for r in 0..50u64 {
            let mut noise =
                NoiseSource::derived(*seed, NoiseDistribution::StandardGaussian, &[99, r]);
            match simulate_closed_loop(&sys, &cost, &report.gains, &start, 100, &mut noise, None) {
                Ok(t) => sum += t.final_state().norm_squared(),
                Err(_) => diverged = true,
            }
        }
        let mean = sum / 50.0;
        let pass = k1 <= 0.05 && k2 <= 0.05 && !diverged && mean < threshold;
        ok &= pass;
        parts.push(format!(
            "seed {seed}: {} after {} it, |dK1| {k1:.3e} |dK2| {k2:.3e}, mean|x100|^2 {}",
            if report.converged() {
                "stopped"
            } else {
                "no stop"
            },
            report.iterations(),
            if diverged {
                "diverged".to_string()
            } else {
                format!("{mean:.3e}")
            }
        ));
    }
    check(
        ok,
        format!(
            "{} (K tol 0.05, state tol {threshold:.3})",
            parts.join("; ")
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut worst = (f64::INFINITY, String::new());
    for (name, sys, cost) in test_systems() {
        let seq =
            value_iteration_sequence(&sys, &cost, 1500).map_err(|e| format!("{name}: {e}"))?;
        for (i, w) in seq.windows(2).enumerate() {
            let m = [
                min_eigenvalue(&(w[0].p1() - w[1].p1())),
                min_eigenvalue(&(w[1].p2() - w[0].p2())),
                min_eigenvalue(&(w[0].p1() + w[0].p2())),
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            if m < worst.0 {
                worst = (m, format!("{name} iteration {i}"));
            }
        }
    }
    check(
        worst.0 >= -1e-9,
        format!(
            "1500 iterations on 21 systems, smallest eigenvalue {:.3e} at {} (tol -1e-9)",
            worst.0, worst.1
        ),
    )
}

fn criterion_6(runs: &Runs) -> Outcome {
    let (sys, cost) = f16_system::<f64>();
    let mut parts = Vec::new();
    let mut worst_all: f64 = 0.0;
    for (case, report) in &runs.analytic {
        let mut prev = ValuePair::zeros(sys.n());
        let mut worst: f64 = 0.0;
        for r in &report.history {
            let target = h_from_values(&sys, &cost, &prev).map_err(|e| e.to_string())?;
            let (a, b) = r.q.distance(&target);
            worst = worst.max(a).max(b);
            prev = r.values.clone();
        }
        worst_all = worst_all.max(worst);
        parts.push(format!(
            "case {case}: {worst:.3e} over {} it",
            report.iterations()
        ));
    }
    check(
        worst_all <= 1e-8,
        format!("{} (tol 1e-8)", parts.join(", ")),
    )
}

fn criterion_7() -> Outcome {
    let mut noise = NoiseSource::gaussian(2024);
    let mut sym = |p: usize| {
        let m = DMatrix::from_fn(p, p, |_, _| noise.next_f64());
        (&m + m.transpose()) * 0.5
    };
    let mut worst: f64 = 0.0;
    let mut round_trip = true;
    for i in 0..1000 {
        let p = 1 + i % 6;
        let h = sym(p);
        let z = sym(p);
        let lhs = vech(&z)
            .map_err(|e| e.to_string())?
            .dot(&vecs(&h).map_err(|e| e.to_string())?);
        worst = worst.max((lhs - (&h * &z).trace()).abs());
        round_trip &= mat_from_vecs(&vecs(&h).map_err(|e| e.to_string())?, p)
            .map_err(|e| e.to_string())?
            == h;
    }
    check(
        worst <= 1e-12 && round_trip,
        format!("1000 pairs, p <= 6: worst trace gap {worst:.3e} (tol 1e-12), exact round trip {round_trip}"),
    )
}

fn criterion_8(runs: &Runs) -> Outcome {
    let (sys, _) = f16_system::<f64>();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let converged = runs
        .analytic
        .iter()
        .map(|(_, r)| r)
        .chain(runs.mc.iter().filter_map(|(_, r)| r.as_ref().ok()))
        .filter(|r| r.converged());
    for r in converged {
        let cert = closed_loop_stability(&sys, &r.gains);
        ok &= cert.stable;
        worst = worst.max(cert.radius);
        checked += 1;
    }
    check(
        ok && checked > 0,
        format!("{checked} converged runs, largest mean-square radius {worst:.6}"),
    )
}

fn criterion_9(runs: &Runs) -> Outcome {
    let (sys, cost) = f16_system::<f64>();
    let k2 = runs.analytic[0].1.gains.k2().clone();
    let mut worst: f64 = 0.0;
    for j in 0..50u64 {
        let mut src = NoiseSource::derived(77, NoiseDistribution::StandardGaussian, &[j]);
        let decay = 0.7 + 0.25 * (j as f64 / 49.0);
        let scale = 1.0 + (j % 5) as f64;
        let v: Vec<DVector<f64>> = (0..80)
            .map(|k| DVector::from_element(1, scale * decay.powi(k) * src.next_f64()))
            .collect();
        let ratio =
            empirical_attenuation(&sys, &cost, &k2, &v, 600, 20, j).map_err(|e| e.to_string())?;
        worst = worst.max(ratio);
    }
    check(
        worst < 1.0,
        format!("50 disturbances, largest energy ratio {worst:.4} (gamma^2 = 1)"),
    )
}

/// Scalar coupled fixed point, computed without the library.
fn desk_scalar(
    a1: f64,
    a2: f64,
    b1: f64,
    c1: f64,
    c2: f64,
    q: f64,
    gamma: f64,
) -> Option<(f64, f64, f64, f64)> {
    let (mut p1, mut p2) = (0.0f64, 0.0f64);
    for _ in 0..200_000 {
        // stationarity of Q1 in v and Q2 in u
        let m11 = gamma * gamma + p1 * (c1 * c1 + c2 * c2);
        let m12 = p1 * c1 * b1;
        let m21 = p2 * b1 * c1;
        let m22 = 1.0 + p2 * b1 * b1;
        if m11 <= 0.0 || m22 <= 0.0 {
            return None;
        }
        let r1 = -p1 * (c1 * a1 + c2 * a2);
        let r2 = -p2 * b1 * a1;
        let det = m11 * m22 - m12 * m21;
        let k1 = (r1 * m22 - m12 * r2) / det;
        let k2 = (m11 * r2 - m21 * r1) / det;
        let f = a1 + b1 * k2 + c1 * k1;
        let g = a2 + c2 * k1;
        let growth = f * f + g * g;
        let n1 = gamma * gamma * k1 * k1 - q - k2 * k2 + growth * p1;
        let n2 = q + k2 * k2 + growth * p2;
        let change = (n1 - p1).abs().max((n2 - p2).abs());
        p1 = n1;
        p2 = n2;
        if change < 1e-15 * (1.0 + p2.abs()) {
            return Some((p1, p2, k1, k2));
        }
    }
    None
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut unif = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 10 {
        let (a1, a2, b1, c1, c2) = (
            unif(-0.9, 0.9),
            unif(-0.3, 0.3),
            unif(0.5, 1.5),
            unif(-0.5, 0.5),
            unif(-0.2, 0.2),
        );
        let (q, gamma) = (unif(0.5, 2.0), unif(2.0, 4.0));
        if a1 * a1 + a2 * a2 >= 0.95 {
            continue;
        }
        let Some((p1, p2, k1, k2)) = desk_scalar(a1, a2, b1, c1, c2, q, gamma) else {
            continue;
        };
        let m = |x: f64| DMatrix::from_element(1, 1, x);
        let sys = SdltiSystem::from_matrices(m(a1), m(a2), m(b1), m(c1), m(c2))
            .map_err(|e| e.to_string())?;
        let cost = CostSpec::new(gamma, m(q)).map_err(|e| e.to_string())?;
        let sol = solve_coupled_gare(&sys, &cost, 1e-13, 200_000).map_err(|e| e.to_string())?;
        let gap = [
            sol.values.p1()[(0, 0)] - p1,
            sol.values.p2()[(0, 0)] - p2,
            sol.gains.k1()[(0, 0)] - k1,
            sol.gains.k2()[(0, 0)] - k2,
        ]
        .iter()
        .fold(0.0f64, |a, d| a.max(d.abs()));
        worst = worst.max(gap);
        done += 1;
    }
    check(
        worst <= 1e-9,
        format!("10 scalar instances, worst gap {worst:.3e} (tol 1e-9)"),
    )
}

fn main() {
    let started = Instant::now();
    let runs = Runs {
        analytic: [NoiseCase::Case1, NoiseCase::Case2, NoiseCase::Case3]
            .into_iter()
            .map(|c| (c, analytic_run(c, 0)))
            .collect(),
        mc: [1u64, 2, 3, 4, 5]
            .into_iter()
            .map(|s| (s, mc_run(s)))
            .collect(),
    };
    let results: Vec<(&str, Outcome)> = vec![
        (
            "model-based solve matches the published solution",
            criterion_1(),
        ),
        (
            "H-mediated update equals the direct value update",
            criterion_2(),
        ),
        (
            "analytic Q-learning terminates at the fixed point",
            criterion_3(&runs),
        ),
        (
            "Monte-Carlo Q-learning stays near the published gains",
            criterion_4(&runs),
        ),
        (
            "value iterates are monotone and P1 + P2 is PSD",
            criterion_5(),
        ),
        (
            "analytic regression is unbiased under all probes",
            criterion_6(&runs),
        ),
        ("vech/vecs trace identity and round trip", criterion_7()),
        (
            "terminal gains are mean-square stabilizing",
            criterion_8(&runs),
        ),
        ("empirical attenuation below gamma", criterion_9(&runs)),
        ("scalar desk oracle agrees with the solver", criterion_10()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.1} s)",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
