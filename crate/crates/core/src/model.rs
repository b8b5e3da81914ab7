//! Domain types: the stochastic system, its cost, value/gain/Q-matrix pairs
//! and the learning configuration.
//!
//! All types validate dimensions at construction and are immutable afterwards.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};
use crate::linalg::{self, checked_symmetric, ensure_finite, ensure_shape};
use crate::scalar::{lit, symmetry_tolerance, to_f64, Scalar};

/// State, control and disturbance dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
}

impl Dims {
    pub fn new(n: usize, m1: usize, m2: usize) -> Self {
        Self { n, m1, m2 }
    }

    /// Length of the stacked vector `[x; u; v]`.
    pub fn p(&self) -> usize {
        self.n + self.m1 + self.m2
    }

    /// Number of free entries of a symmetric `p × p` matrix.
    pub fn unknowns(&self) -> usize {
        let p = self.p();
        p * (p + 1) / 2
    }

    pub fn state(&self) -> Range<usize> {
        0..self.n
    }

    pub fn control(&self) -> Range<usize> {
        self.n..self.n + self.m1
    }

    pub fn disturbance(&self) -> Range<usize> {
        self.n + self.m1..self.p()
    }
}

/// Raw system matrices with their declared dimensions, before validation.
#[derive(Debug, Clone)]
pub struct SystemParts<T: Scalar> {
    pub dims: Dims,
    pub a1: DMatrix<T>,
    pub a2: DMatrix<T>,
    pub b1: DMatrix<T>,
    pub c1: DMatrix<T>,
    pub c2: DMatrix<T>,
}

impl<T: Scalar> SystemParts<T> {
    /// Infers the dimensions from `a1`, `b1` and `c1`.
    pub fn infer(
        a1: DMatrix<T>,
        a2: DMatrix<T>,
        b1: DMatrix<T>,
        c1: DMatrix<T>,
        c2: DMatrix<T>,
    ) -> Self {
        let dims = Dims::new(a1.nrows(), b1.ncols(), c1.ncols());
        Self {
            dims,
            a1,
            a2,
            b1,
            c1,
            c2,
        }
    }

    pub fn build(self) -> Result<SdltiSystem<T>> {
        SdltiSystem::new(self)
    }
}

/// Linear system with state- and disturbance-multiplicative noise:
///
/// `x⁺ = A1 x + B1 u + C1 v + (A2 x + C2 v) ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdltiSystem<T: Scalar> {
    dims: Dims,
    a1: DMatrix<T>,
    a2: DMatrix<T>,
    b1: DMatrix<T>,
    c1: DMatrix<T>,
    c2: DMatrix<T>,
}

impl<T: Scalar> SdltiSystem<T> {
    pub fn new(parts: SystemParts<T>) -> Result<Self> {
        let Dims { n, m1, m2 } = parts.dims;
        if n == 0 || m1 == 0 || m2 == 0 {
            return Err(Error::DimensionMismatch {
                what: "system dimensions",
                expected: (1, 1),
                found: (n, m1.min(m2)),
            });
        }
        for (m, shape, what) in parts.shapes() {
            ensure_shape(m, shape, what)?;
            ensure_finite(m, what)?;
        }
        Ok(Self {
            dims: parts.dims,
            a1: parts.a1,
            a2: parts.a2,
            b1: parts.b1,
            c1: parts.c1,
            c2: parts.c2,
        })
    }

    pub fn from_matrices(
        a1: DMatrix<T>,
        a2: DMatrix<T>,
        b1: DMatrix<T>,
        c1: DMatrix<T>,
        c2: DMatrix<T>,
    ) -> Result<Self> {
        SystemParts::infer(a1, a2, b1, c1, c2).build()
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn n(&self) -> usize {
        self.dims.n
    }
    pub fn m1(&self) -> usize {
        self.dims.m1
    }
    pub fn m2(&self) -> usize {
        self.dims.m2
    }
    pub fn a1(&self) -> &DMatrix<T> {
        &self.a1
    }
    pub fn a2(&self) -> &DMatrix<T> {
        &self.a2
    }
    pub fn b1(&self) -> &DMatrix<T> {
        &self.b1
    }
    pub fn c1(&self) -> &DMatrix<T> {
        &self.c1
    }
    pub fn c2(&self) -> &DMatrix<T> {
        &self.c2
    }

    pub fn to_parts(&self) -> SystemParts<T> {
        SystemParts {
            dims: self.dims,
            a1: self.a1.clone(),
            a2: self.a2.clone(),
            b1: self.b1.clone(),
            c1: self.c1.clone(),
            c2: self.c2.clone(),
        }
    }

    /// `[A1 B1 C1]`, the drift part of the stacked transition.
    pub fn drift_map(&self) -> DMatrix<T> {
        let Dims { n, m1, m2 } = self.dims;
        let mut g = DMatrix::zeros(n, n + m1 + m2);
        g.view_mut((0, 0), (n, n)).copy_from(&self.a1);
        g.view_mut((0, n), (n, m1)).copy_from(&self.b1);
        g.view_mut((0, n + m1), (n, m2)).copy_from(&self.c1);
        g
    }

    /// `[A2 0 C2]`, the noise-multiplied part of the stacked transition.
    pub fn diffusion_map(&self) -> DMatrix<T> {
        let Dims { n, m1, m2 } = self.dims;
        let mut g = DMatrix::zeros(n, n + m1 + m2);
        g.view_mut((0, 0), (n, n)).copy_from(&self.a2);
        g.view_mut((0, n + m1), (n, m2)).copy_from(&self.c2);
        g
    }

    /// Closed-loop pair `(A1 + B1 K2 + C1 K1, A2 + C2 K1)`.
    pub fn closed_loop(&self, gains: &GainPair<T>) -> (DMatrix<T>, DMatrix<T>) {
        let drift = &self.a1 + &self.b1 * gains.k2() + &self.c1 * gains.k1();
        let diffusion = &self.a2 + &self.c2 * gains.k1();
        (drift, diffusion)
    }
}

impl<T: Scalar> SystemParts<T> {
    fn shapes(&self) -> [(&DMatrix<T>, (usize, usize), &'static str); 5] {
        let Dims { n, m1, m2 } = self.dims;
        [
            (&self.a1, (n, n), "A1"),
            (&self.a2, (n, n), "A2"),
            (&self.b1, (n, m1), "B1"),
            (&self.c1, (n, m2), "C1"),
            (&self.c2, (n, m2), "C2"),
        ]
    }
}

/// Attenuation level and state weight. The control weight is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec<T: Scalar> {
    gamma: T,
    q: DMatrix<T>,
    observability_certified: bool,
}

impl<T: Scalar> CostSpec<T> {
    pub fn new(gamma: T, q: DMatrix<T>) -> Result<Self> {
        if !(gamma.is_finite() && gamma > T::zero()) {
            return Err(Error::InvalidCost(format!(
                "gamma must be positive, got {}",
                gamma
            )));
        }
        let q = checked_symmetric(q, "Q")?;
        let min_eig = linalg::min_eigenvalue(&q);
        let slack = symmetry_tolerance(linalg::max_abs(&q));
        if min_eig < -slack {
            return Err(Error::InvalidCost(format!(
                "Q is not positive semidefinite (min eigenvalue {:e})",
                to_f64(min_eig)
            )));
        }
        Ok(Self {
            gamma,
            observability_certified: min_eig > slack,
            q,
        })
    }

    /// `γ = gamma`, `Q = I`.
    pub fn identity(gamma: T, n: usize) -> Result<Self> {
        Self::new(gamma, DMatrix::identity(n, n))
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn gamma_sq(&self) -> T {
        self.gamma * self.gamma
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    /// `Q ≻ 0`, the sufficient exact-observability check.
    pub fn observability_certified(&self) -> bool {
        self.observability_certified
    }
}

/// Value matrices `(P1, P2)` of the attenuation and output-energy games.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePair<T: Scalar> {
    p1: DMatrix<T>,
    p2: DMatrix<T>,
}

impl<T: Scalar> ValuePair<T> {
    pub fn new(p1: DMatrix<T>, p2: DMatrix<T>) -> Result<Self> {
        if p1.shape() != p2.shape() {
            return Err(Error::DimensionMismatch {
                what: "P2",
                expected: p1.shape(),
                found: p2.shape(),
            });
        }
        Ok(Self {
            p1: checked_symmetric(p1, "P1")?,
            p2: checked_symmetric(p2, "P2")?,
        })
    }

    /// Symmetrizes without checking; for freshly computed iterates.
    pub(crate) fn from_computed(p1: DMatrix<T>, p2: DMatrix<T>) -> Self {
        Self {
            p1: linalg::symmetrize(&p1),
            p2: linalg::symmetrize(&p2),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            p1: DMatrix::zeros(n, n),
            p2: DMatrix::zeros(n, n),
        }
    }

    pub fn p1(&self) -> &DMatrix<T> {
        &self.p1
    }
    pub fn p2(&self) -> &DMatrix<T> {
        &self.p2
    }
    pub fn n(&self) -> usize {
        self.p1.nrows()
    }

    /// Frobenius distances `(‖ΔP1‖, ‖ΔP2‖)`.
    pub fn distance(&self, other: &Self) -> (T, T) {
        ((&self.p1 - &other.p1).norm(), (&self.p2 - &other.p2).norm())
    }
}

/// Worst-case disturbance gain `K1` (m2 × n) and control gain `K2` (m1 × n).
#[derive(Debug, Clone, PartialEq)]
pub struct GainPair<T: Scalar> {
    k1: DMatrix<T>,
    k2: DMatrix<T>,
}

impl<T: Scalar> GainPair<T> {
    pub fn new(k1: DMatrix<T>, k2: DMatrix<T>) -> Result<Self> {
        if k1.ncols() != k2.ncols() {
            return Err(Error::DimensionMismatch {
                what: "K2",
                expected: (k2.nrows(), k1.ncols()),
                found: k2.shape(),
            });
        }
        ensure_finite(&k1, "K1")?;
        ensure_finite(&k2, "K2")?;
        Ok(Self { k1, k2 })
    }

    /// Checks shapes against a system as well.
    pub fn for_system(sys: &SdltiSystem<T>, k1: DMatrix<T>, k2: DMatrix<T>) -> Result<Self> {
        let d = sys.dims();
        ensure_shape(&k1, (d.m2, d.n), "K1")?;
        ensure_shape(&k2, (d.m1, d.n), "K2")?;
        Self::new(k1, k2)
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            k1: DMatrix::zeros(dims.m2, dims.n),
            k2: DMatrix::zeros(dims.m1, dims.n),
        }
    }

    pub fn k1(&self) -> &DMatrix<T> {
        &self.k1
    }
    pub fn k2(&self) -> &DMatrix<T> {
        &self.k2
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.k1.ncols(), self.k2.nrows(), self.k1.nrows())
    }

    /// `[I; K2; K1]`, mapping a state to the stacked policy vector.
    pub fn policy_lift(&self) -> DMatrix<T> {
        let d = self.dims();
        let mut g = DMatrix::zeros(d.p(), d.n);
        g.view_mut((0, 0), (d.n, d.n))
            .copy_from(&DMatrix::identity(d.n, d.n));
        g.view_mut((d.n, 0), (d.m1, d.n)).copy_from(&self.k2);
        g.view_mut((d.n + d.m1, 0), (d.m2, d.n)).copy_from(&self.k1);
        g
    }

    /// Frobenius distances `(‖ΔK1‖, ‖ΔK2‖)`.
    pub fn distance(&self, other: &Self) -> (T, T) {
        ((&self.k1 - &other.k1).norm(), (&self.k2 - &other.k2).norm())
    }
}

/// Block index of the stacked vector `[x; u; v]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    State,
    Control,
    Disturbance,
}

impl Block {
    fn range(self, d: Dims) -> Range<usize> {
        match self {
            Block::State => d.state(),
            Block::Control => d.control(),
            Block::Disturbance => d.disturbance(),
        }
    }
}

/// Q-function matrices `(H1, H2)`, each `p × p` and symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct QPair<T: Scalar> {
    dims: Dims,
    h1: DMatrix<T>,
    h2: DMatrix<T>,
}

impl<T: Scalar> QPair<T> {
    pub fn new(dims: Dims, h1: DMatrix<T>, h2: DMatrix<T>) -> Result<Self> {
        let p = dims.p();
        ensure_shape(&h1, (p, p), "H1")?;
        ensure_shape(&h2, (p, p), "H2")?;
        Ok(Self {
            dims,
            h1: checked_symmetric(h1, "H1")?,
            h2: checked_symmetric(h2, "H2")?,
        })
    }

    pub(crate) fn from_computed(dims: Dims, h1: DMatrix<T>, h2: DMatrix<T>) -> Self {
        Self {
            dims,
            h1: linalg::symmetrize(&h1),
            h2: linalg::symmetrize(&h2),
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        let p = dims.p();
        Self {
            dims,
            h1: DMatrix::zeros(p, p),
            h2: DMatrix::zeros(p, p),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn h1(&self) -> &DMatrix<T> {
        &self.h1
    }
    pub fn h2(&self) -> &DMatrix<T> {
        &self.h2
    }

    /// Block `Γ1(row, col)` as a view into `H1`.
    pub fn gamma1(&self, row: Block, col: Block) -> DMatrixView<'_, T> {
        block_view(&self.h1, self.dims, row, col)
    }

    /// Block `Γ2(row, col)` as a view into `H2`.
    pub fn gamma2(&self, row: Block, col: Block) -> DMatrixView<'_, T> {
        block_view(&self.h2, self.dims, row, col)
    }

    /// Frobenius distances `(‖ΔH1‖, ‖ΔH2‖)`.
    pub fn distance(&self, other: &Self) -> (T, T) {
        ((&self.h1 - &other.h1).norm(), (&self.h2 - &other.h2).norm())
    }
}

fn block_view<T: Scalar>(h: &DMatrix<T>, d: Dims, row: Block, col: Block) -> DMatrixView<'_, T> {
    let r = row.range(d);
    let c = col.range(d);
    h.view((r.start, c.start), (r.len(), c.len()))
}

/// Which probing-noise schedule drives the learning run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseCase {
    #[default]
    Case1,
    Case2,
    Case3,
    Custom,
}

impl fmt::Display for NoiseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoiseCase::Case1 => "1",
            NoiseCase::Case2 => "2",
            NoiseCase::Case3 => "3",
            NoiseCase::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// How conditional expectations inside the Bellman targets are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExpectationMode {
    /// Exact conditional expectation supplied by the oracle (testing only).
    Analytic,
    /// Average over branched successor states.
    #[default]
    MonteCarlo,
}

impl fmt::Display for ExpectationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpectationMode::Analytic => "analytic",
            ExpectationMode::MonteCarlo => "mc",
        })
    }
}

/// Third stopping condition of the learning loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopRule {
    /// `Q2⁺(x,u⁺,v⁺) − Q2(x,u,v) < r2(x,u⁺,v⁺)`.
    #[default]
    SameQ,
    /// `Q2⁺(x,u⁺,v⁺) − Q1(x,u,v) < r2(x,u⁺,v⁺)`.
    CrossQ,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig<T: Scalar> {
    pub tol: T,
    pub max_iters: usize,
    pub tuples_per_iter: usize,
    pub branches: usize,
    pub seed: u64,
    pub noise_case: NoiseCase,
    pub expectation_mode: ExpectationMode,
    pub stop_rule: StopRule,
    /// Length of the unprobed closed-loop run recorded after learning stops.
    pub eval_steps: usize,
}

impl<T: Scalar> Default for AlgoConfig<T> {
    fn default() -> Self {
        Self {
            tol: lit(1e-3),
            max_iters: 500,
            tuples_per_iter: 20,
            branches: 100,
            seed: 0,
            noise_case: NoiseCase::Case1,
            expectation_mode: ExpectationMode::MonteCarlo,
            stop_rule: StopRule::SameQ,
            eval_steps: 100,
        }
    }
}

impl<T: Scalar> AlgoConfig<T> {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > T::zero()) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if self.branches == 0 {
            return Err(Error::InvalidConfig("branches must be positive".into()));
        }
        if self.tuples_per_iter < dims.unknowns() {
            return Err(Error::TooFewTuples {
                rows: self.tuples_per_iter,
                unknowns: dims.unknowns(),
            });
        }
        Ok(())
    }
}

/// One problem found by [`validate_system`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch {
        matrix: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite {
        matrix: &'static str,
    },
    QNotSymmetric {
        asymmetry: f64,
    },
    QNotPsd {
        min_eigenvalue: f64,
    },
    GammaNotPositive,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch {
                matrix,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch: {matrix} is {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::NonFinite { matrix } => write!(f, "{matrix} has non-finite entries"),
            Violation::QNotSymmetric { asymmetry } => {
                write!(f, "Q not symmetric (asymmetry {asymmetry:e})")
            }
            Violation::QNotPsd { min_eigenvalue } => {
                write!(f, "Q not PSD (min eigenvalue {min_eigenvalue:e})")
            }
            Violation::GammaNotPositive => write!(f, "gamma not positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub observability_certified: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks system shapes and the cost against each other without building
/// anything. Never fails; an empty violation list means valid.
pub fn validate_system<T: Scalar>(
    parts: &SystemParts<T>,
    gamma: T,
    q: &DMatrix<T>,
) -> ValidationReport {
    let mut violations = Vec::new();
    for (m, expected, matrix) in parts.shapes() {
        if m.shape() != expected {
            violations.push(Violation::DimensionMismatch {
                matrix,
                expected,
                found: m.shape(),
            });
        }
        if !m.iter().all(|v| v.is_finite()) {
            violations.push(Violation::NonFinite { matrix });
        }
    }
    if !(gamma.is_finite() && gamma > T::zero()) {
        violations.push(Violation::GammaNotPositive);
    }

    let n = parts.dims.n;
    let mut certified = false;
    if q.shape() != (n, n) {
        violations.push(Violation::DimensionMismatch {
            matrix: "Q",
            expected: (n, n),
            found: q.shape(),
        });
    } else if !q.iter().all(|v| v.is_finite()) {
        violations.push(Violation::NonFinite { matrix: "Q" });
    } else {
        let scale = linalg::max_abs(q);
        let asym = linalg::max_asymmetry(q);
        if asym > symmetry_tolerance(scale) {
            violations.push(Violation::QNotSymmetric {
                asymmetry: to_f64(asym),
            });
        } else {
            let min_eig = linalg::min_eigenvalue(q);
            let slack = symmetry_tolerance(scale);
            if min_eig < -slack {
                violations.push(Violation::QNotPsd {
                    min_eigenvalue: to_f64(min_eig),
                });
            }
            certified = min_eig > slack;
        }
    }

    ValidationReport {
        observability_certified: certified && violations.is_empty(),
        violations,
    }
}
