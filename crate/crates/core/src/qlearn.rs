//! Model-free learning of `(H1, H2)` from probed trajectories.
//!
//! Everything here except [`run_value_iteration`] sees the plant only through
//! [`TrajectoryOracle`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gare::{gains_from_values, qlearn_value_update};
use crate::linalg::{ensure_len, ensure_shape, quad_form};
use crate::model::{
    AlgoConfig, CostSpec, Dims, ExpectationMode, GainPair, QPair, SdltiSystem, StopRule, ValuePair,
};
use crate::oracle::{branch_average, TrajectoryOracle};
use crate::probe::ProbingSchedule;
use crate::qfunction::{
    gains_from_q, h_from_values, mat_from_vecs, triangular_len, values_from_q, vech_outer,
};
use crate::report::fmt_sig12;
use crate::scalar::{lit, to_f64, Scalar};
use crate::sim::{stage_costs, Trajectory};

/// Relative singular-value floor below which the regression is rejected.
pub const EXCITATION_FLOOR: f64 = 1e-10;

/// One executed, probed step and its Bellman targets.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanSample<T: Scalar> {
    pub x: DVector<T>,
    pub u: DVector<T>,
    pub v: DVector<T>,
    /// Stage costs `(r1, r2)` of `(x, u, v)`.
    pub costs: (T, T),
    pub d1: T,
    pub d2: T,
    /// `vech(ẑ ẑᵀ)` for `ẑ = [x; u; v]`.
    pub row: DVector<T>,
}

/// Targets for one step from the oracle's current state. The oracle is not
/// advanced.
#[allow(clippy::too_many_arguments)]
pub fn bellman_targets<T: Scalar, O: TrajectoryOracle<T> + ?Sized>(
    oracle: &mut O,
    cost: &CostSpec<T>,
    q: &QPair<T>,
    gains: &GainPair<T>,
    e_u: &DVector<T>,
    e_v: &DVector<T>,
    branches: usize,
    mode: ExpectationMode,
) -> Result<BellmanSample<T>> {
    let d = oracle.dims();
    ensure_len(e_u, d.m1, "e_u")?;
    ensure_len(e_v, d.m2, "e_v")?;
    let x = oracle.state();
    let u = gains.k2() * &x + e_u;
    let v = gains.k1() * &x + e_v;
    let costs = stage_costs(cost, &x, &u, &v)?;

    // Continuation z⁺ᵀHz⁺ with z⁺ = [x⁺; K2x⁺; K1x⁺] is x⁺ᵀ(GᵀHG)x⁺.
    let g = gains.policy_lift();
    let w1 = g.transpose() * q.h1() * &g;
    let w2 = g.transpose() * q.h2() * &g;
    let (c1, c2) = match mode {
        ExpectationMode::Analytic => {
            let missing = || Error::Oracle("oracle cannot provide exact expectations".into());
            let c1 = oracle
                .expected_quadratic(&w1, &u, &v)?
                .ok_or_else(missing)?;
            let c2 = oracle
                .expected_quadratic(&w2, &u, &v)?
                .ok_or_else(missing)?;
            (c1, c2)
        }
        ExpectationMode::MonteCarlo => {
            let succ = oracle.branch(&u, &v, branches)?;
            if succ.iter().any(|s| s.iter().any(|c| !c.is_finite())) {
                return Err(Error::Oracle("non-finite successor state".into()));
            }
            (branch_average(&w1, &succ)?, branch_average(&w2, &succ)?)
        }
    };

    let z = DVector::from_iterator(d.p(), x.iter().chain(u.iter()).chain(v.iter()).copied());
    Ok(BellmanSample {
        row: vech_outer(&z),
        d1: costs.0 + c1,
        d2: costs.1 + c2,
        costs,
        x,
        u,
        v,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRow<T: Scalar> {
    pub row: DVector<T>,
    pub d1: T,
    pub d2: T,
    pub k: usize,
}

/// Regression tuples collected in one learning iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch<T: Scalar> {
    dims: Dims,
    rows: Vec<DataRow<T>>,
}

impl<T: Scalar> DataBatch<T> {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims,
            rows: Vec::new(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn rows(&self) -> &[DataRow<T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: DataRow<T>) -> Result<()> {
        ensure_len(&row.row, self.dims.unknowns(), "regression row")?;
        self.rows.push(row);
        Ok(())
    }
}

/// Stacked regression `X vecs(H_j) ≈ Y_j`.
#[derive(Debug, Clone)]
pub struct Regression<T: Scalar> {
    pub dims: Dims,
    pub x: DMatrix<T>,
    pub y1: DVector<T>,
    pub y2: DVector<T>,
    pub sigma_min: T,
    pub sigma_max: T,
}

pub fn assemble_regression<T: Scalar>(batch: &DataBatch<T>) -> Result<Regression<T>> {
    let d = batch.dims();
    let cols = d.unknowns();
    if batch.len() < cols {
        return Err(Error::TooFewTuples {
            rows: batch.len(),
            unknowns: cols,
        });
    }
    let rows = batch.rows();
    let x = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i].row[j]);
    let y1 = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.d1));
    let y2 = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.d2));

    let sv = x.clone().singular_values();
    let sigma_max = sv.iter().fold(T::zero(), |a, &s| a.max(s));
    let sigma_min = sv.iter().fold(sigma_max, |a, &s| a.min(s));
    if !(sigma_max > T::zero()) || sigma_min < sigma_max * lit(EXCITATION_FLOOR) {
        return Err(Error::InsufficientExcitation {
            smallest: to_f64(sigma_min),
            largest: to_f64(sigma_max),
        });
    }
    Ok(Regression {
        dims: d,
        x,
        y1,
        y2,
        sigma_min,
        sigma_max,
    })
}

/// Least-squares `(H1, H2)`: column-scaled QR, normal equations as fallback.
pub fn least_squares_h<T: Scalar>(
    dims: Dims,
    x: &DMatrix<T>,
    y1: &DVector<T>,
    y2: &DVector<T>,
) -> Result<QPair<T>> {
    let cols = triangular_len(dims.p());
    ensure_shape(x, (x.nrows(), cols), "X")?;
    ensure_len(y1, x.nrows(), "Y1")?;
    ensure_len(y2, x.nrows(), "Y2")?;
    if x.nrows() < cols {
        return Err(Error::TooFewTuples {
            rows: x.nrows(),
            unknowns: cols,
        });
    }
    let mut y = DMatrix::zeros(x.nrows(), 2);
    y.set_column(0, y1);
    y.set_column(1, y2);

    let coef = qr_solve(x, &y)
        .or_else(|| normal_solve(x, &y))
        .ok_or(Error::SingularNormalEquations)?;
    let h1 = mat_from_vecs(&coef.column(0).into_owned(), dims.p())?;
    let h2 = mat_from_vecs(&coef.column(1).into_owned(), dims.p())?;
    Ok(QPair::from_computed(dims, h1, h2))
}

fn column_scales<T: Scalar>(x: &DMatrix<T>) -> Option<DVector<T>> {
    let s = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.norm()));
    s.iter().all(|&v| v > T::zero()).then_some(s)
}

fn qr_solve<T: Scalar>(x: &DMatrix<T>, y: &DMatrix<T>) -> Option<DMatrix<T>> {
    let s = column_scales(x)?;
    let mut xs = x.clone();
    for (j, mut col) in xs.column_iter_mut().enumerate() {
        col /= s[j];
    }
    let qr = xs.qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let diag_min = r.diagonal().iter().fold(diag_max, |a, &v| a.min(v.abs()));
    if !(diag_min > diag_max * lit(EXCITATION_FLOOR)) {
        return None;
    }
    let rhs = qr.q().transpose() * y;
    let mut coef = r.solve_upper_triangular(&rhs)?;
    for (j, mut row) in coef.row_iter_mut().enumerate() {
        row /= s[j];
    }
    coef.iter().all(|v| v.is_finite()).then_some(coef)
}

fn normal_solve<T: Scalar>(x: &DMatrix<T>, y: &DMatrix<T>) -> Option<DMatrix<T>> {
    let xt = x.transpose();
    let chol = (&xt * x).cholesky()?;
    let coef = chol.solve(&(xt * y));
    coef.iter().all(|v| v.is_finite()).then_some(coef)
}

/// Outcome of the stopping test.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Continue,
    Stop(String),
}

impl Decision {
    pub fn is_stop(&self) -> bool {
        matches!(self, Decision::Stop(_))
    }
}

/// The third stopping condition at probe state `x`.
pub fn value_decrease_holds<T: Scalar>(
    cost: &CostSpec<T>,
    prev: (&QPair<T>, &GainPair<T>),
    next: (&QPair<T>, &GainPair<T>),
    x: &DVector<T>,
    rule: StopRule,
) -> Result<bool> {
    let (q_prev, g_prev) = prev;
    let (q_next, g_next) = next;
    ensure_len(x, q_next.dims().n, "probe state")?;
    let z_next = g_next.policy_lift() * x;
    let z_prev = g_prev.policy_lift() * x;
    let lhs = quad_form(q_next.h2(), &z_next);
    let baseline = match rule {
        StopRule::SameQ => quad_form(q_prev.h2(), &z_prev),
        StopRule::CrossQ => quad_form(q_prev.h1(), &z_prev),
    };
    let u_next = g_next.k2() * x;
    let r2 = quad_form(cost.q(), x) + u_next.dot(&u_next);
    Ok(lhs - baseline < r2)
}

/// Stops only when both Q-matrix changes are below `tol` and the value
/// decrease condition holds at `x`.
#[allow(clippy::too_many_arguments)]
pub fn termination<T: Scalar>(
    iteration: usize,
    cost: &CostSpec<T>,
    prev: (&QPair<T>, &GainPair<T>),
    next: (&QPair<T>, &GainPair<T>),
    x: &DVector<T>,
    tol: T,
    rule: StopRule,
) -> Result<Decision> {
    let (dh1, dh2) = next.0.distance(prev.0);
    if !(dh1 < tol && dh2 < tol) {
        return Ok(Decision::Continue);
    }
    if !value_decrease_holds(cost, prev, next, x, rule)? {
        return Ok(Decision::Continue);
    }
    Ok(Decision::Stop(format!(
        "converged at iteration {iteration}: |dH1| = {}, |dH2| = {}",
        fmt_sig12(to_f64(dh1)),
        fmt_sig12(to_f64(dh2))
    )))
}

/// Known solution to measure iterates against.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference<T: Scalar> {
    pub values: ValuePair<T>,
    pub gains: GainPair<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T: Scalar> {
    pub iteration: usize,
    pub dh1: T,
    pub dh2: T,
    pub err_k1: Option<T>,
    pub err_k2: Option<T>,
    pub err_p1: Option<T>,
    pub err_p2: Option<T>,
    pub q: QPair<T>,
    pub values: ValuePair<T>,
    pub gains: GainPair<T>,
    /// Smallest singular value of the regression matrix; `None` for
    /// model-based runs.
    pub sigma_min: Option<T>,
    pub stop: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged {
        iteration: usize,
    },
    MaxIterations,
    /// A numerical failure ended the run during `iteration`; the report
    /// holds the iterates completed before it.
    Aborted {
        iteration: usize,
        cause: AbortCause,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortCause {
    /// Δ1 or Δ2 lost definiteness, or the gain block became singular.
    Infeasible,
    /// Rank-deficient or badly conditioned regression.
    Excitation,
    Divergence,
    Numerical,
}

impl AbortCause {
    /// `None` for errors that are not a property of the data (bad input,
    /// I/O, replay mismatch); those propagate instead.
    pub fn classify(e: &Error) -> Option<Self> {
        Some(match e {
            Error::GammaInfeasible { .. } | Error::SingularGainBlock => AbortCause::Infeasible,
            Error::InsufficientExcitation { .. } | Error::SingularNormalEquations => {
                AbortCause::Excitation
            }
            Error::Divergence { .. } => AbortCause::Divergence,
            Error::NonFinite { .. } | Error::NotSymmetric { .. } => AbortCause::Numerical,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct QLearnReport<T: Scalar> {
    pub q: QPair<T>,
    pub gains: GainPair<T>,
    pub values: ValuePair<T>,
    pub history: Vec<IterationRecord<T>>,
    pub termination: Termination,
    pub reason: String,
    pub seed: u64,
    /// Probed trajectory driven during learning.
    pub learning: Trajectory<T>,
    /// Unprobed closed loop recorded after learning stopped.
    pub evaluation: Option<Trajectory<T>>,
}

impl<T: Scalar> QLearnReport<T> {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Converged { .. })
    }

    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// CSV `iter,dH1_fro,dH2_fro,errK1,errK2,errP1,errP2,term_flag`; error
    /// cells stay blank without a reference.
    pub fn write_convergence_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,dH1_fro,dH2_fro,errK1,errK2,errP1,errP2,term_flag")?;
        let cell = |v: Option<T>| v.map(|x| fmt_sig12(to_f64(x))).unwrap_or_default();
        for r in &self.history {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.iteration,
                fmt_sig12(to_f64(r.dh1)),
                fmt_sig12(to_f64(r.dh2)),
                cell(r.err_k1),
                cell(r.err_k2),
                cell(r.err_p1),
                cell(r.err_p2),
                u8::from(r.stop)
            )?;
        }
        Ok(())
    }
}

fn errors_against<T: Scalar>(
    reference: Option<&Reference<T>>,
    vals: &ValuePair<T>,
    gains: &GainPair<T>,
) -> [Option<T>; 4] {
    match reference {
        Some(r) => {
            let (k1, k2) = gains.distance(&r.gains);
            let (p1, p2) = vals.distance(&r.values);
            [Some(k1), Some(k2), Some(p1), Some(p2)]
        }
        None => [None; 4],
    }
}

/// Learning loop with the probing schedule selected by `config.noise_case`.
pub fn run_q_learning<T: Scalar, O: TrajectoryOracle<T> + ?Sized>(
    oracle: &mut O,
    cost: &CostSpec<T>,
    config: &AlgoConfig<T>,
    initial_gains: &GainPair<T>,
    x0: &DVector<T>,
    reference: Option<&Reference<T>>,
) -> Result<QLearnReport<T>> {
    let probe = ProbingSchedule::for_case(config.noise_case)?;
    run_q_learning_with_probe(oracle, cost, config, initial_gains, x0, reference, probe)
}

/// Learning loop with an explicit probing schedule.
pub fn run_q_learning_with_probe<T: Scalar, O: TrajectoryOracle<T> + ?Sized>(
    oracle: &mut O,
    cost: &CostSpec<T>,
    config: &AlgoConfig<T>,
    initial_gains: &GainPair<T>,
    x0: &DVector<T>,
    reference: Option<&Reference<T>>,
    mut probe: ProbingSchedule,
) -> Result<QLearnReport<T>> {
    let d = oracle.dims();
    config.validate(d)?;
    ensure_len(x0, d.n, "x0")?;
    ensure_shape(initial_gains.k1(), (d.m2, d.n), "K1")?;
    ensure_shape(initial_gains.k2(), (d.m1, d.n), "K2")?;
    ensure_shape(cost.q(), (d.n, d.n), "Q")?;
    probe.set_active(true);

    oracle.reset(x0)?;
    let mut q = QPair::zeros(d);
    let mut gains = initial_gains.clone();
    let mut learning = Trajectory::starting_at(x0.clone());
    let mut history = Vec::new();
    let mut outcome = Termination::MaxIterations;
    let mut reason = format!("iteration limit {} reached", config.max_iters);
    let mut k = 0usize;

    for iteration in 1..=config.max_iters {
        let step = (|| -> Result<_> {
            let mut batch = DataBatch::new(d);
            for _ in 0..config.tuples_per_iter {
                let (e_u, e_v) = probe.probing_noise::<T>(k, d.m1, d.m2);
                let s = bellman_targets(
                    oracle,
                    cost,
                    &q,
                    &gains,
                    &e_u,
                    &e_v,
                    config.branches,
                    config.expectation_mode,
                )?;
                let next = oracle.apply(&s.u, &s.v)?;
                learning.push(s.u, s.v, oracle.last_noise(), s.costs, next);
                batch.push(DataRow {
                    row: s.row,
                    d1: s.d1,
                    d2: s.d2,
                    k,
                })?;
                k += 1;
            }

            let reg = assemble_regression(&batch)?;
            let q_next = least_squares_h(d, &reg.x, &reg.y1, &reg.y2)?;
            let gains_next = gains_from_q(&q_next)?;
            let vals_next = values_from_q(&q_next, &gains_next)?;
            let decision = termination(
                iteration,
                cost,
                (&q, &gains),
                (&q_next, &gains_next),
                x0,
                config.tol,
                config.stop_rule,
            )?;
            Ok((reg, q_next, gains_next, vals_next, decision))
        })();
        let (reg, q_next, gains_next, vals_next, decision) = match step {
            Ok(v) => v,
            Err(e) => match AbortCause::classify(&e) {
                Some(cause) => {
                    outcome = Termination::Aborted { iteration, cause };
                    reason = format!("aborted in iteration {iteration}: {e}");
                    break;
                }
                None => return Err(e),
            },
        };
        let (dh1, dh2) = q_next.distance(&q);
        let [err_k1, err_k2, err_p1, err_p2] = errors_against(reference, &vals_next, &gains_next);
        history.push(IterationRecord {
            iteration,
            dh1,
            dh2,
            err_k1,
            err_k2,
            err_p1,
            err_p2,
            q: q_next.clone(),
            values: vals_next,
            gains: gains_next.clone(),
            sigma_min: Some(reg.sigma_min),
            stop: decision.is_stop(),
        });
        q = q_next;
        gains = gains_next;
        if let Decision::Stop(why) = decision {
            outcome = Termination::Converged { iteration };
            reason = why;
            break;
        }
    }

    probe.set_active(false);
    let evaluation = match outcome {
        Termination::Aborted { .. } => None,
        _ => unprobed_run(oracle, cost, &gains, config.eval_steps)?,
    };
    let values = history
        .last()
        .map(|r| r.values.clone())
        .unwrap_or_else(|| ValuePair::zeros(d.n));
    Ok(QLearnReport {
        q,
        gains,
        values,
        history,
        termination: outcome,
        reason,
        seed: config.seed,
        learning,
        evaluation,
    })
}

fn unprobed_run<T: Scalar, O: TrajectoryOracle<T> + ?Sized>(
    oracle: &mut O,
    cost: &CostSpec<T>,
    gains: &GainPair<T>,
    steps: usize,
) -> Result<Option<Trajectory<T>>> {
    if steps == 0 {
        return Ok(None);
    }
    let mut traj = Trajectory::starting_at(oracle.state());
    for _ in 0..steps {
        let x = oracle.state();
        let u = gains.k2() * &x;
        let v = gains.k1() * &x;
        let costs = stage_costs(cost, &x, &u, &v)?;
        let next = match oracle.apply(&u, &v) {
            Ok(next) => next,
            // keep the prefix; the blow-up is visible in the last rows
            Err(Error::Divergence { .. }) => break,
            Err(e) => return Err(e),
        };
        traj.push(u, v, oracle.last_noise(), costs, next);
    }
    Ok(Some(traj))
}

/// Model-based counterpart of the learning loop: the same report, with each
/// Q-matrix built from the exact value recursion.
pub fn run_value_iteration<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    config: &AlgoConfig<T>,
    x0: &DVector<T>,
    reference: Option<&Reference<T>>,
) -> Result<QLearnReport<T>> {
    let d = sys.dims();
    if !(config.tol > T::zero()) || config.max_iters == 0 {
        return Err(Error::InvalidConfig(
            "tol and max_iters must be positive".into(),
        ));
    }
    ensure_len(x0, d.n, "x0")?;
    let mut vals = ValuePair::zeros(d.n);
    let mut q = QPair::zeros(d);
    let mut gains = GainPair::zeros(d);
    let mut history = Vec::new();
    let mut outcome = Termination::MaxIterations;
    let mut reason = format!("iteration limit {} reached", config.max_iters);

    for iteration in 1..=config.max_iters {
        let q_next = h_from_values(sys, cost, &vals)?;
        let (vals_next, gains_next) = qlearn_value_update(sys, cost, &vals)?;
        let decision = termination(
            iteration,
            cost,
            (&q, &gains),
            (&q_next, &gains_next),
            x0,
            config.tol,
            config.stop_rule,
        )?;
        let (dh1, dh2) = q_next.distance(&q);
        let [err_k1, err_k2, err_p1, err_p2] = errors_against(reference, &vals_next, &gains_next);
        history.push(IterationRecord {
            iteration,
            dh1,
            dh2,
            err_k1,
            err_k2,
            err_p1,
            err_p2,
            q: q_next.clone(),
            values: vals_next.clone(),
            gains: gains_next.clone(),
            sigma_min: None,
            stop: decision.is_stop(),
        });
        q = q_next;
        gains = gains_next;
        vals = vals_next;
        if let Decision::Stop(why) = decision {
            outcome = Termination::Converged { iteration };
            reason = why;
            break;
        }
    }
    // Final gains consistent with the final values, as the learner would extract.
    let gains = gains_from_values(sys, cost, &vals).unwrap_or(gains);
    Ok(QLearnReport {
        q,
        gains,
        values: vals,
        history,
        termination: outcome,
        reason,
        seed: config.seed,
        learning: Trajectory::starting_at(x0.clone()),
        evaluation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{f16_initial_gains, f16_system, f16_x0};
    use crate::gare::{closed_loop_stability, solve_coupled_gare, value_iteration_sequence};
    use crate::model::NoiseCase;
    use crate::oracle::{RecordingOracle, SimOracle};
    use crate::probe::{SinusoidTerm, Wave};
    use crate::random_systems::random_feasible_system;
    use crate::sim::NoiseSource;

    fn analytic(max_iters: usize) -> AlgoConfig<f64> {
        AlgoConfig {
            expectation_mode: ExpectationMode::Analytic,
            max_iters,
            ..AlgoConfig::default()
        }
    }

    fn f16_oracle(seed: u64) -> SimOracle<f64> {
        SimOracle::new(f16_system::<f64>().0, seed)
    }

    #[test]
    fn zero_h_targets_are_stage_costs() {
        let (sys, cost) = f16_system::<f64>();
        let mut o = SimOracle::new(sys.clone(), 1);
        o.reset(&DVector::from_vec(vec![0.5, -1.0, 2.0])).unwrap();
        let gains = f16_initial_gains::<f64>();
        let e = DVector::from_element(1, 0.3);
        for mode in [ExpectationMode::Analytic, ExpectationMode::MonteCarlo] {
            let s = bellman_targets(
                &mut o,
                &cost,
                &QPair::zeros(sys.dims()),
                &gains,
                &e,
                &e,
                5,
                mode,
            )
            .unwrap();
            assert_eq!((s.d1, s.d2), s.costs);
        }
    }

    #[test]
    fn targets_at_origin_with_case1_probe() {
        let (sys, cost) = f16_system::<f64>();
        let mut o = SimOracle::new(sys.clone(), 1);
        o.reset(&DVector::zeros(3)).unwrap();
        let probe = ProbingSchedule::for_case(NoiseCase::Case1).unwrap();
        let (eu, ev) = probe.probing_noise::<f64>(0, 1, 1);
        let s = bellman_targets(
            &mut o,
            &cost,
            &QPair::zeros(sys.dims()),
            &GainPair::zeros(sys.dims()),
            &eu,
            &ev,
            10,
            ExpectationMode::MonteCarlo,
        )
        .unwrap();
        assert_eq!((s.d1, s.d2), (0.0, 1.0));
        let mut expected_row = DVector::zeros(15);
        expected_row[12] = 1.0; // u²
        expected_row[13] = 2.0; // 2uv
        expected_row[14] = 1.0; // v²
        assert_eq!(s.row, expected_row);
    }

    #[test]
    fn analytic_targets_match_bellman_identity() {
        let (sys, cost) = f16_system::<f64>();
        let vals = value_iteration_sequence(&sys, &cost, 7)
            .unwrap()
            .pop()
            .unwrap();
        let q = h_from_values(&sys, &cost, &vals).unwrap();
        let gains = gains_from_q(&q).unwrap();
        let mut o = SimOracle::new(sys.clone(), 3);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        o.reset(&x).unwrap();
        let e = DVector::from_element(1, 0.7);
        let s = bellman_targets(
            &mut o,
            &cost,
            &q,
            &gains,
            &e,
            &e,
            1,
            ExpectationMode::Analytic,
        )
        .unwrap();
        let p = values_from_q(&q, &gains).unwrap();
        let c1 = crate::sim::expected_next_quadratic(&sys, p.p1(), &x, &s.u, &s.v).unwrap();
        let c2 = crate::sim::expected_next_quadratic(&sys, p.p2(), &x, &s.u, &s.v).unwrap();
        assert!((s.d1 - (s.costs.0 + c1)).abs() < 1e-10);
        assert!((s.d2 - (s.costs.1 + c2)).abs() < 1e-10);
    }

    #[test]
    fn too_few_rows_and_duplicates_rejected() {
        let d = Dims::new(1, 1, 1);
        let mut batch = DataBatch::new(d);
        let z = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        for k in 0..5 {
            batch
                .push(DataRow {
                    row: vech_outer(&z),
                    d1: 1.0,
                    d2: 2.0,
                    k,
                })
                .unwrap();
        }
        assert!(matches!(
            assemble_regression(&batch),
            Err(Error::TooFewTuples {
                rows: 5,
                unknowns: 6
            })
        ));
        for k in 5..20 {
            batch
                .push(DataRow {
                    row: vech_outer(&z),
                    d1: 1.0,
                    d2: 2.0,
                    k,
                })
                .unwrap();
        }
        assert!(matches!(
            assemble_regression(&batch),
            Err(Error::InsufficientExcitation { .. })
        ));
    }

    fn collect_batch(probe_active: bool) -> Result<Regression<f64>> {
        let (sys, cost) = f16_system::<f64>();
        let mut o = SimOracle::new(sys.clone(), 11);
        o.reset(&f16_x0()).unwrap();
        let mut probe = ProbingSchedule::for_case(NoiseCase::Case1).unwrap();
        probe.set_active(probe_active);
        let gains = f16_initial_gains::<f64>();
        let q = QPair::zeros(sys.dims());
        let mut batch = DataBatch::new(sys.dims());
        for k in 0..20 {
            let (eu, ev) = probe.probing_noise::<f64>(k, 1, 1);
            let s = bellman_targets(
                &mut o,
                &cost,
                &q,
                &gains,
                &eu,
                &ev,
                4,
                ExpectationMode::MonteCarlo,
            )?;
            o.apply(&s.u, &s.v)?;
            batch.push(DataRow {
                row: s.row,
                d1: s.d1,
                d2: s.d2,
                k,
            })?;
        }
        assemble_regression(&batch)
    }

    #[test]
    fn probing_controls_rank() {
        let reg = collect_batch(true).unwrap();
        assert_eq!(reg.x.ncols(), 15);
        assert!(reg.sigma_min > 1e-10 * reg.sigma_max);
        assert!(matches!(
            collect_batch(false),
            Err(Error::InsufficientExcitation { .. })
        ));
    }

    #[test]
    fn synthetic_regression_recovers_h() {
        let d = Dims::new(2, 1, 1);
        let p = d.p();
        let mut noise = NoiseSource::gaussian(5);
        let mut sym = || {
            let m = DMatrix::from_fn(p, p, |_, _| noise.next_f64());
            (&m + m.transpose()) * 0.5
        };
        let (h1, h2) = (sym(), sym());
        let x = DMatrix::from_fn(25, d.unknowns(), |_, _| noise.next_f64());
        let y1 = &x * crate::qfunction::vecs(&h1).unwrap();
        let y2 = &x * crate::qfunction::vecs(&h2).unwrap();
        let q = least_squares_h(d, &x, &y1, &y2).unwrap();
        assert!((q.h1() - &h1).amax() < 1e-10);
        assert!((q.h2() - &h2).amax() < 1e-10);

        let zero = least_squares_h(d, &x, &DVector::zeros(25), &DVector::zeros(25)).unwrap();
        assert_eq!(zero.h1().amax(), 0.0);
    }

    #[test]
    fn termination_examples() {
        let (sys, cost) = f16_system::<f64>();
        let sol = solve_coupled_gare(&sys, &cost, 1e-10, 5000).unwrap();
        let q = h_from_values(&sys, &cost, &sol.values).unwrap();
        let x = f16_x0::<f64>();
        let stop = termination(
            3,
            &cost,
            (&q, &sol.gains),
            (&q, &sol.gains),
            &x,
            1e-3,
            StopRule::SameQ,
        )
        .unwrap();
        assert!(stop.is_stop());

        let mut bumped = q.h1().clone();
        bumped[(0, 0)] += 1e-2;
        let q2 = QPair::new(sys.dims(), bumped, q.h2().clone()).unwrap();
        let go = termination(
            3,
            &cost,
            (&q, &sol.gains),
            (&q2, &sol.gains),
            &x,
            1e-3,
            StopRule::SameQ,
        )
        .unwrap();
        assert_eq!(go, Decision::Continue);
    }

    #[test]
    fn first_regression_from_zero_is_exact() {
        let cost = f16_system::<f64>().1;
        let mut o = f16_oracle(7);
        let report = run_q_learning(
            &mut o,
            &cost,
            &analytic(2),
            &f16_initial_gains(),
            &f16_x0(),
            None,
        )
        .unwrap();
        let (sys, _) = f16_system::<f64>();
        let h1 = h_from_values(&sys, &cost, &ValuePair::zeros(3)).unwrap();
        let h2 = h_from_values(&sys, &cost, &report.history[0].values).unwrap();
        let (a, b) = report.history[0].q.distance(&h1);
        assert!(a < 1e-8 && b < 1e-8);
        let (a, b) = report.history[1].q.distance(&h2);
        assert!(a < 1e-8 && b < 1e-8);
        assert!((report.history[0].values.p1() + cost.q()).amax() < 1e-9);
    }

    #[test]
    fn analytic_run_tracks_value_iteration() {
        let (sys, cost) = f16_system::<f64>();
        let mut o = f16_oracle(21);
        let report = run_q_learning(
            &mut o,
            &cost,
            &analytic(500),
            &f16_initial_gains(),
            &f16_x0(),
            None,
        )
        .unwrap();
        assert!(report.converged(), "{}", report.reason);
        let vi = value_iteration_sequence(&sys, &cost, report.iterations()).unwrap();
        for r in &report.history {
            let (a, b) = r.values.distance(&vi[r.iteration]);
            assert!(
                a < 1e-6 && b < 1e-6,
                "iteration {}: {a:e} {b:e}",
                r.iteration
            );
        }
        let sol = solve_coupled_gare(&sys, &cost, 1e-11, 5000).unwrap();
        assert!((report.gains.k1() - sol.gains.k1()).amax() < 2e-3);
        assert!((report.gains.k2() - sol.gains.k2()).amax() < 2e-3);
        assert!(closed_loop_stability(&sys, &report.gains).stable);
        assert_eq!(report.evaluation.as_ref().unwrap().steps(), 100);
    }

    #[test]
    fn replayed_tape_reproduces_iterates() {
        let cost = f16_system::<f64>().1;
        let config = AlgoConfig {
            max_iters: 6,
            branches: 5,
            ..AlgoConfig::default()
        };
        let mut rec = RecordingOracle::new(f16_oracle(3));
        let live = run_q_learning(
            &mut rec,
            &cost,
            &config,
            &f16_initial_gains(),
            &f16_x0(),
            None,
        )
        .unwrap();
        let mut replay = rec.into_replay();
        let again = run_q_learning(
            &mut replay,
            &cost,
            &config,
            &f16_initial_gains(),
            &f16_x0(),
            None,
        )
        .unwrap();
        assert_eq!(replay.remaining(), 0);
        assert_eq!(live.history, again.history);
        assert_eq!(live.learning.states, again.learning.states);
    }

    #[test]
    fn infeasible_gamma_surfaces() {
        let m = |x: f64| DMatrix::from_element(1, 1, x);
        let sys = SdltiSystem::from_matrices(m(0.5), m(0.1), m(1.0), m(1.0), m(0.2)).unwrap();
        let cost = CostSpec::identity(0.5, 1).unwrap();
        assert!(matches!(
            solve_coupled_gare(&sys, &cost, 1e-9, 100),
            Err(Error::GammaInfeasible { .. })
        ));
        let mut o = SimOracle::new(sys.clone(), 0);
        let config = AlgoConfig {
            tuples_per_iter: 10,
            ..analytic(50)
        };
        let r = run_q_learning(
            &mut o,
            &cost,
            &config,
            &GainPair::zeros(sys.dims()),
            &DVector::from_element(1, 1.0),
            None,
        )
        .unwrap();
        assert_eq!(
            r.termination,
            Termination::Aborted {
                iteration: 2,
                cause: AbortCause::Infeasible
            }
        );
        assert!(r.reason.contains("Δ1"), "{}", r.reason);
        assert_eq!(r.iterations(), 1);
        assert!(r.evaluation.is_none());
    }

    #[test]
    fn random_systems_unbiased_in_analytic_mode() {
        for seed in 0..4 {
            let inst = random_feasible_system(seed, 2);
            let d = inst.system.dims();
            let config = AlgoConfig {
                tuples_per_iter: d.unknowns() + 10,
                ..analytic(15)
            };
            let mut o = SimOracle::new(inst.system.clone(), seed);
            let x0 = DVector::from_element(d.n, 1.0);
            let report =
                run_q_learning(&mut o, &inst.cost, &config, &GainPair::zeros(d), &x0, None)
                    .unwrap();
            let mut prev = ValuePair::zeros(d.n);
            for r in &report.history {
                let exact = h_from_values(&inst.system, &inst.cost, &prev).unwrap();
                let (a, b) = r.q.distance(&exact);
                assert!(
                    a < 1e-8 && b < 1e-8,
                    "seed {seed} iteration {}: {a:e} {b:e}",
                    r.iteration
                );
                prev = r.values.clone();
            }
        }
    }

    #[test]
    fn custom_probe_schedule_runs() {
        let cost = f16_system::<f64>().1;
        let t = |w, f| SinusoidTerm::new(w, f, 1.0).unwrap();
        let probe = ProbingSchedule::custom(
            vec![t(Wave::Sin, 2.3), t(Wave::CosSquared, 0.7)],
            vec![t(Wave::Cos, 5.1), t(Wave::SinSquared, 1.3)],
        )
        .unwrap();
        let mut o = f16_oracle(1);
        let r = run_q_learning_with_probe(
            &mut o,
            &cost,
            &analytic(3),
            &f16_initial_gains(),
            &f16_x0(),
            None,
            probe,
        );
        assert_eq!(r.unwrap().iterations(), 3);
    }

    #[test]
    fn convergence_csv_leaves_errors_blank_without_reference() {
        let cost = f16_system::<f64>().1;
        let mut o = f16_oracle(1);
        let r = run_q_learning(
            &mut o,
            &cost,
            &analytic(2),
            &f16_initial_gains(),
            &f16_x0(),
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_convergence_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "iter,dH1_fro,dH2_fro,errK1,errK2,errP1,errP2,term_flag"
        );
        assert!(lines[1].starts_with("1,") && lines[1].ends_with(",,,,,0"));
    }

    #[test]
    fn value_iteration_report_shape() {
        let (sys, cost) = f16_system::<f64>();
        let config = AlgoConfig {
            tol: 1e-6,
            max_iters: 2000,
            ..AlgoConfig::default()
        };
        let r = run_value_iteration(&sys, &cost, &config, &f16_x0(), None).unwrap();
        assert!(r.converged());
        assert_eq!(r.history.len(), r.iterations());
        let sol = solve_coupled_gare(&sys, &cost, 1e-11, 5000).unwrap();
        assert!((r.gains.k2() - sol.gains.k2()).amax() < 1e-3);
    }
}
