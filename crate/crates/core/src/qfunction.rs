//! Q-matrix algebra: building `(H1, H2)` from value matrices, extracting
//! gains and values back out, and the half-vectorization pair.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gare::solve_gain_block;
use crate::linalg::{checked_symmetric, ensure_len, ensure_shape, quad_form};
use crate::model::{Block, CostSpec, Dims, GainPair, QPair, SdltiSystem, ValuePair};
use crate::scalar::Scalar;

/// The stacked vector `z = [x; u; v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedInput<T: Scalar> {
    dims: Dims,
    z: DVector<T>,
}

impl<T: Scalar> StackedInput<T> {
    pub fn new(dims: Dims, x: &DVector<T>, u: &DVector<T>, v: &DVector<T>) -> Result<Self> {
        ensure_len(x, dims.n, "x")?;
        ensure_len(u, dims.m1, "u")?;
        ensure_len(v, dims.m2, "v")?;
        let z = DVector::from_iterator(dims.p(), x.iter().chain(u.iter()).chain(v.iter()).copied());
        Ok(Self { dims, z })
    }

    pub fn from_vector(dims: Dims, z: DVector<T>) -> Result<Self> {
        ensure_len(&z, dims.p(), "z")?;
        Ok(Self { dims, z })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn as_vector(&self) -> &DVector<T> {
        &self.z
    }
    pub fn x(&self) -> DVector<T> {
        self.z.rows_range(self.dims.state()).into_owned()
    }
    pub fn u(&self) -> DVector<T> {
        self.z.rows_range(self.dims.control()).into_owned()
    }
    pub fn v(&self) -> DVector<T> {
        self.z.rows_range(self.dims.disturbance()).into_owned()
    }
}

/// `p(p+1)/2`.
pub fn triangular_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// `H1` and `H2` for the given value pair.
pub fn h_from_values<T: Scalar>(
    sys: &SdltiSystem<T>,
    cost: &CostSpec<T>,
    vals: &ValuePair<T>,
) -> Result<QPair<T>> {
    let d = sys.dims();
    ensure_shape(cost.q(), (d.n, d.n), "Q")?;
    ensure_shape(vals.p1(), (d.n, d.n), "P1")?;
    let drift = sys.drift_map();
    let diffusion = sys.diffusion_map();
    let sandwich =
        |p: &DMatrix<T>| drift.transpose() * p * &drift + diffusion.transpose() * p * &diffusion;

    let mut h1 = sandwich(vals.p1());
    let mut h2 = sandwich(vals.p2());
    let n = d.n;
    for i in 0..n {
        for j in 0..n {
            h1[(i, j)] -= cost.q()[(i, j)];
            h2[(i, j)] += cost.q()[(i, j)];
        }
    }
    for i in d.control() {
        h1[(i, i)] -= T::one();
        h2[(i, i)] += T::one();
    }
    for i in d.disturbance() {
        h1[(i, i)] += cost.gamma_sq();
    }
    Ok(QPair::from_computed(d, h1, h2))
}

/// Greedy gains from the Γ blocks of `(H1, H2)`.
pub fn gains_from_q<T: Scalar>(q: &QPair<T>) -> Result<GainPair<T>> {
    use Block::{Control as U, Disturbance as V, State as X};
    solve_gain_block(
        q.gamma1(V, V).into_owned(),
        q.gamma1(U, V).transpose(),
        q.gamma2(U, V).into_owned(),
        q.gamma2(U, U).into_owned(),
        q.gamma1(X, V).transpose(),
        q.gamma2(X, U).transpose(),
    )
}

/// `P = [I; K2; K1]ᵀ H [I; K2; K1]` for both players.
pub fn values_from_q<T: Scalar>(q: &QPair<T>, gains: &GainPair<T>) -> Result<ValuePair<T>> {
    let d = q.dims();
    ensure_shape(gains.k1(), (d.m2, d.n), "K1")?;
    ensure_shape(gains.k2(), (d.m1, d.n), "K2")?;
    let g = gains.policy_lift();
    let gt = g.transpose();
    Ok(ValuePair::from_computed(
        &gt * q.h1() * &g,
        &gt * q.h2() * &g,
    ))
}

/// Upper triangle, row-major: `[H11, H12, …, H1p, H22, …, Hpp]`.
pub fn vecs<T: Scalar>(h: &DMatrix<T>) -> Result<DVector<T>> {
    let h = checked_symmetric(h.clone(), "H")?;
    Ok(half_vec(&h, T::one()))
}

/// As [`vecs`] with off-diagonal entries doubled, so `vech(Z)·vecs(H) = Tr(ZH)`.
pub fn vech<T: Scalar>(z: &DMatrix<T>) -> Result<DVector<T>> {
    let z = checked_symmetric(z.clone(), "Z")?;
    Ok(half_vec(&z, T::one() + T::one()))
}

fn half_vec<T: Scalar>(m: &DMatrix<T>, off_diag: T) -> DVector<T> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(triangular_len(p));
    for i in 0..p {
        out.push(m[(i, i)]);
        for j in (i + 1)..p {
            out.push(m[(i, j)] * off_diag);
        }
    }
    DVector::from_vec(out)
}

/// `vech(z zᵀ)` without forming the outer product.
pub fn vech_outer<T: Scalar>(z: &DVector<T>) -> DVector<T> {
    let p = z.len();
    let two = T::one() + T::one();
    let mut out = Vec::with_capacity(triangular_len(p));
    for i in 0..p {
        out.push(z[i] * z[i]);
        for j in (i + 1)..p {
            out.push(two * z[i] * z[j]);
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`vecs`].
pub fn mat_from_vecs<T: Scalar>(v: &DVector<T>, p: usize) -> Result<DMatrix<T>> {
    let len = triangular_len(p);
    if v.len() != len {
        return Err(Error::DimensionMismatch {
            what: "vecs",
            expected: (len, 1),
            found: (v.len(), 1),
        });
    }
    let mut h = DMatrix::zeros(p, p);
    let mut idx = 0;
    for i in 0..p {
        for j in i..p {
            h[(i, j)] = v[idx];
            h[(j, i)] = v[idx];
            idx += 1;
        }
    }
    Ok(h)
}

/// `zᵀ H z`.
pub fn q_value<T: Scalar>(h: &DMatrix<T>, z: &StackedInput<T>) -> Result<T> {
    let p = z.dims().p();
    ensure_shape(h, (p, p), "H")?;
    Ok(quad_form(h, z.as_vector()))
}
