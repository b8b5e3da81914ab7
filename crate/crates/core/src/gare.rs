//! Model-based machinery: the closed-loop quadratic map, the coupled gain
//! formula, value recursions, Riccati residuals and mean-square stability.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{ensure_shape, min_eigenvalue, solve_square, spectral_radius};
use crate::model::{CostSpec, GainPair, SdltiSystem, ValuePair};
use crate::report::fmt_sig12;
use crate::scalar::{to_f64, Scalar};

/// `𝒜(X, Y1, Y2) = (A2+C2Y1)ᵀX(A2+C2Y1) + (A1+B1Y2+C1Y1)ᵀX(A1+B1Y2+C1Y1)`.
pub fn closed_loop_quadratic_map<T: Scalar>(
    sys: &SdltiSystem<T>,
    x: &DMatrix<T>,
    y1: &DMatrix<T>,
    y2: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let d = sys.dims();
    ensure_shape(x, (d.n, d.n), "X")?;
    ensure_shape(y1, (d.m2, d.n), "Y1")?;
    ensure_shape(y2, (d.m1, d.n), "Y2")?;
    let f = sys.a1() + sys.b1() * y2 + sys.c1() * y1;
    let g = sys.a2() + sys.c2() * y1;
    let out = g.transpose() * x * &g + f.transpose() * x * &f;
    Ok(crate::linalg::symmetrize(&out))
}

/// `(Δ1, Δ2) = (γ²I + C2ᵀP1C2 + C1ᵀP1C1, I + B1ᵀP2B1)`.
pub fn delta_matrices<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    vals: &ValuePair<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let d = sys.dims();
    ensure_shape(vals.p1(), (d.n, d.n), "P1")?;
    let (p1, p2) = (vals.p1(), vals.p2());
    let delta1 = DMatrix::identity(d.m2, d.m2) * cost.gamma_sq()
        + sys.c2().transpose() * p1 * sys.c2()
        + sys.c1().transpose() * p1 * sys.c1();
    let delta2 = DMatrix::identity(d.m1, d.m1) + sys.b1().transpose() * p2 * sys.b1();
    Ok((delta1, delta2))
}

/// Solves `[[Δ1, W12],[W21, Δ2]] [K1; K2] = −[R1; R2]`, refusing when either
/// diagonal block has lost positive definiteness.
pub(crate) fn solve_gain_block<T: Scalar>(
    delta1: DMatrix<T>,
    w12: DMatrix<T>,
    w21: DMatrix<T>,
    delta2: DMatrix<T>,
    r1: DMatrix<T>,
    r2: DMatrix<T>,
) -> Result<GainPair<T>> {
    let (m2, m1, n) = (delta1.nrows(), delta2.nrows(), r1.ncols());
    let check_pd = |m: &DMatrix<T>, which: &'static str| {
        let min = min_eigenvalue(m);
        if min > T::zero() && min.is_finite() {
            Ok(())
        } else {
            Err(Error::GammaInfeasible {
                which,
                min_eigenvalue: to_f64(min),
            })
        }
    };
    check_pd(&delta1, "Δ1")?;
    check_pd(&delta2, "Δ2")?;

    let size = m1 + m2;
    let mut block = DMatrix::zeros(size, size);
    block.view_mut((0, 0), (m2, m2)).copy_from(&delta1);
    block.view_mut((0, m2), (m2, m1)).copy_from(&w12);
    block.view_mut((m2, 0), (m1, m2)).copy_from(&w21);
    block.view_mut((m2, m2), (m1, m1)).copy_from(&delta2);
    let mut rhs = DMatrix::zeros(size, n);
    rhs.view_mut((0, 0), (m2, n)).copy_from(&r1);
    rhs.view_mut((m2, 0), (m1, n)).copy_from(&r2);

    let k = -solve_square(&block, &rhs).ok_or(Error::SingularGainBlock)?;
    GainPair::new(
        k.view((0, 0), (m2, n)).into_owned(),
        k.view((m2, 0), (m1, n)).into_owned(),
    )
}

/// Coupled gains `(K1, K2)` for the value pair.
pub fn gains_from_values<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    vals: &ValuePair<T>,
) -> Result<GainPair<T>> {
    let (delta1, delta2) = delta_matrices(sys, cost, vals)?;
    let (p1, p2) = (vals.p1(), vals.p2());
    let (b1t, c1t, c2t) = (
        sys.b1().transpose(),
        sys.c1().transpose(),
        sys.c2().transpose(),
    );
    solve_gain_block(
        delta1,
        &c1t * p1 * sys.b1(),
        &b1t * p2 * sys.c1(),
        delta2,
        &c1t * p1 * sys.a1() + &c2t * p1 * sys.a2(),
        &b1t * p2 * sys.a1(),
    )
}

/// Value update with the supplied (current) gains.
pub fn vi_value_update<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    vals: &ValuePair<T>,
    gains: &GainPair<T>,
) -> Result<ValuePair<T>> {
    ensure_shape(cost.q(), (sys.n(), sys.n()), "Q")?;
    let (k1, k2) = (gains.k1(), gains.k2());
    let a1 = closed_loop_quadratic_map(sys, vals.p1(), k1, k2)?;
    let a2 = closed_loop_quadratic_map(sys, vals.p2(), k1, k2)?;
    let k2tk2 = k2.transpose() * k2;
    let p1 = a1 - cost.q() - &k2tk2 + k1.transpose() * k1 * cost.gamma_sq();
    let p2 = a2 + cost.q() + k2tk2;
    Ok(ValuePair::from_computed(p1, p2))
}

/// New gains from `vals`, then the value update with those gains.
pub fn qlearn_value_update<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    vals: &ValuePair<T>,
) -> Result<(ValuePair<T>, GainPair<T>)> {
    let gains = gains_from_values(sys, cost, vals)?;
    let next = vi_value_update(sys, cost, vals, &gains)?;
    Ok((next, gains))
}

/// Left-hand sides of the two coupled Riccati equations at `(P, K)`.
pub fn gare_residuals<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    vals: &ValuePair<T>,
    gains: &GainPair<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let d = sys.dims();
    ensure_shape(gains.k1(), (d.m2, d.n), "K1")?;
    ensure_shape(gains.k2(), (d.m1, d.n), "K2")?;
    let (delta1, delta2) = delta_matrices(sys, cost, vals)?;
    let inv1 = delta1.try_inverse().ok_or(Error::SingularGainBlock)?;
    let inv2 = delta2.try_inverse().ok_or(Error::SingularGainBlock)?;
    let (p1, p2, q) = (vals.p1(), vals.p2(), cost.q());
    let (k1, k2) = (gains.k1(), gains.k2());

    let f1 = sys.a1() + sys.b1() * k2;
    let m1 = f1.transpose() * p1 * sys.c1() + sys.a2().transpose() * p1 * sys.c2();
    let r1 = -p1 + f1.transpose() * p1 * &f1 - q + sys.a2().transpose() * p1 * sys.a2()
        - k2.transpose() * k2
        - &m1 * inv1 * m1.transpose();

    let f2 = sys.a1() + sys.c1() * k1;
    let g2 = sys.a2() + sys.c2() * k1;
    let m2 = f2.transpose() * p2 * sys.b1();
    let r2 = -p2 + f2.transpose() * p2 * &f2 + q + g2.transpose() * p2 * &g2
        - &m2 * inv2 * m2.transpose();

    Ok((
        crate::linalg::symmetrize(&r1),
        crate::linalg::symmetrize(&r2),
    ))
}

/// Spectral radius of `Ā1⊗Ā1 + Ā2⊗Ā2` and whether it is below one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCertificate<T: Scalar> {
    pub radius: T,
    pub stable: bool,
}

pub fn ms_stable<T: Scalar>(abar1: &DMatrix<T>, abar2: &DMatrix<T>) -> StabilityCertificate<T> {
    if !abar1.is_square() || abar1.shape() != abar2.shape() {
        return StabilityCertificate {
            radius: T::one() / T::zero(),
            stable: false,
        };
    }
    let lifted = abar1.kronecker(abar1) + abar2.kronecker(abar2);
    let radius = spectral_radius(&lifted);
    StabilityCertificate {
        radius,
        stable: radius < T::one(),
    }
}

/// Closed-loop certificate for `(A1+B1K2+C1K1, A2+C2K1)`.
pub fn closed_loop_stability<T: Scalar>(
    sys: &SdltiSystem<T>,
    gains: &GainPair<T>,
) -> StabilityCertificate<T> {
    let (f, g) = sys.closed_loop(gains);
    ms_stable(&f, &g)
}

/// One row of the solver history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStep<T: Scalar> {
    pub dp1: T,
    pub dp2: T,
    pub res1: T,
    pub res2: T,
}

#[derive(Debug, Clone)]
pub struct SolveReport<T: Scalar> {
    pub values: ValuePair<T>,
    pub gains: GainPair<T>,
    pub iterations: usize,
    /// Frobenius norms of the residuals at `(values, gains)`.
    pub residual_norms: (T, T),
    pub history: Vec<SolveStep<T>>,
    pub stability: StabilityCertificate<T>,
}

impl<T: Scalar> SolveReport<T> {
    pub fn stable(&self) -> bool {
        self.stability.stable
    }

    /// CSV `iter,dP1_fro,dP2_fro,res1_fro,res2_fro`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,dP1_fro,dP2_fro,res1_fro,res2_fro")?;
        for (i, s) in self.history.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                i + 1,
                fmt_sig12(to_f64(s.dp1)),
                fmt_sig12(to_f64(s.dp2)),
                fmt_sig12(to_f64(s.res1)),
                fmt_sig12(to_f64(s.res2))
            )?;
        }
        Ok(())
    }
}

fn residual_norms<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    vals: &ValuePair<T>,
    gains: &GainPair<T>,
) -> Result<(T, T)> {
    let (r1, r2) = gare_residuals(sys, cost, vals, gains)?;
    Ok((r1.norm(), r2.norm()))
}

/// Iterates [`qlearn_value_update`] from zero until both value changes are
/// below `tol`.
pub fn solve_coupled_gare<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    tol: T,
    max_iters: usize,
) -> Result<SolveReport<T>> {
    if !(tol > T::zero()) || max_iters == 0 {
        return Err(Error::InvalidConfig(
            "tol and max_iters must be positive".into(),
        ));
    }
    let mut vals = ValuePair::zeros(sys.n());
    let mut gains = gains_from_values(sys, cost, &vals)?;
    let mut history = Vec::new();
    for iter in 1..=max_iters {
        let next = vi_value_update(sys, cost, &vals, &gains)?;
        let (dp1, dp2) = next.distance(&vals);
        vals = next;
        gains = gains_from_values(sys, cost, &vals)?;
        let (res1, res2) = residual_norms(sys, cost, &vals, &gains)?;
        history.push(SolveStep {
            dp1,
            dp2,
            res1,
            res2,
        });
        if dp1 < tol && dp2 < tol {
            let stability = closed_loop_stability(sys, &gains);
            return Ok(SolveReport {
                values: vals,
                gains,
                iterations: iter,
                residual_norms: (res1, res2),
                history,
                stability,
            });
        }
    }
    let last = history
        .last()
        .map_or(f64::NAN, |s| to_f64(s.dp1.max(s.dp2)));
    Err(Error::NotConverged {
        iterations: max_iters,
        last_change: last,
    })
}

/// `(P⁽⁰⁾ = 0, P⁽¹⁾, …, P⁽ⁱᵗᵉʳˢ⁾)` under [`qlearn_value_update`].
pub fn value_iteration_sequence<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    iters: usize,
) -> Result<Vec<ValuePair<T>>> {
    let mut seq = vec![ValuePair::zeros(sys.n())];
    for _ in 0..iters {
        let (next, _) = qlearn_value_update(sys, cost, seq.last().expect("non-empty"))?;
        seq.push(next);
    }
    Ok(seq)
}

/// Values of the frozen policy `(η1, η2)` from zero: `iters + 1` entries.
pub fn fixed_policy_value_sequence<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    eta1: &DMatrix<T>,
    eta2: &DMatrix<T>,
    iters: usize,
) -> Result<Vec<ValuePair<T>>> {
    let gains = GainPair::for_system(sys, eta1.clone(), eta2.clone())?;
    let mut seq = vec![ValuePair::zeros(sys.n())];
    for _ in 0..iters {
        let next = vi_value_update(sys, cost, seq.last().expect("non-empty"), &gains)?;
        seq.push(next);
    }
    Ok(seq)
}
