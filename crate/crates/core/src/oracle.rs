//! The sampling interface the learner talks to, a simulator behind it, and a
//! record/replay pair for checking that a run depends on nothing else.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{ensure_len, quad_form};
use crate::model::{Dims, SdltiSystem};
use crate::scalar::Scalar;
use crate::sim::{
    diverged, expected_next_quadratic, transition_parts, NoiseDistribution, NoiseSource,
};

/// Black-box access to a plant. Implementations own the current state.
pub trait TrajectoryOracle<T: Scalar> {
    fn dims(&self) -> Dims;

    fn state(&self) -> DVector<T>;

    fn reset(&mut self, x: &DVector<T>) -> Result<()>;

    /// Applies `(u, v)` for one step and returns the new state.
    fn apply(&mut self, u: &DVector<T>, v: &DVector<T>) -> Result<DVector<T>>;

    /// `count` independent successors of the current state under `(u, v)`;
    /// the state itself does not advance.
    fn branch(&mut self, u: &DVector<T>, v: &DVector<T>, count: usize) -> Result<Vec<DVector<T>>>;

    /// Exact `E[x⁺ᵀ P x⁺]` from the current state, when the oracle can provide it.
    fn expected_quadratic(
        &mut self,
        p: &DMatrix<T>,
        u: &DVector<T>,
        v: &DVector<T>,
    ) -> Result<Option<T>>;

    /// Noise realization of the last [`apply`](Self::apply), if observable.
    fn last_noise(&self) -> Option<T> {
        None
    }
}

/// Simulated plant. Branch `j` at step `k` draws from a stream seeded by
/// `(seed, k, j)`, so the main trajectory never depends on branching.
#[derive(Debug, Clone)]
pub struct SimOracle<T: Scalar> {
    sys: SdltiSystem<T>,
    x: DVector<T>,
    seed: u64,
    noise: NoiseSource,
    step: u64,
    last_omega: Option<T>,
}

impl<T: Scalar> SimOracle<T> {
    pub fn new(sys: SdltiSystem<T>, seed: u64) -> Self {
        Self::with_distribution(sys, seed, NoiseDistribution::StandardGaussian)
    }

    pub fn with_distribution(
        sys: SdltiSystem<T>,
        seed: u64,
        distribution: NoiseDistribution,
    ) -> Self {
        let n = sys.n();
        Self {
            sys,
            x: DVector::zeros(n),
            seed,
            noise: NoiseSource::new(seed, distribution),
            step: 0,
            last_omega: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

impl<T: Scalar> TrajectoryOracle<T> for SimOracle<T> {
    fn dims(&self) -> Dims {
        self.sys.dims()
    }

    fn state(&self) -> DVector<T> {
        self.x.clone()
    }

    fn reset(&mut self, x: &DVector<T>) -> Result<()> {
        ensure_len(x, self.sys.n(), "reset state")?;
        self.x = x.clone();
        Ok(())
    }

    fn apply(&mut self, u: &DVector<T>, v: &DVector<T>) -> Result<DVector<T>> {
        let (mean, spread) = transition_parts(&self.sys, &self.x, u, v)?;
        let omega = self.noise.sample::<T>();
        let next = mean + spread * omega;
        self.step += 1;
        if diverged(&next) {
            return Err(Error::Divergence {
                step: self.step as usize,
            });
        }
        self.x = next.clone();
        self.last_omega = Some(omega);
        Ok(next)
    }

    fn branch(&mut self, u: &DVector<T>, v: &DVector<T>, count: usize) -> Result<Vec<DVector<T>>> {
        let (mean, spread) = transition_parts(&self.sys, &self.x, u, v)?;
        let dist = self.noise.distribution();
        (0..count as u64)
            .map(|j| {
                let omega = NoiseSource::derived(self.seed, dist, &[self.step, j]).sample::<T>();
                let next = &mean + &spread * omega;
                if diverged(&next) {
                    Err(Error::Divergence {
                        step: self.step as usize + 1,
                    })
                } else {
                    Ok(next)
                }
            })
            .collect()
    }

    fn expected_quadratic(
        &mut self,
        p: &DMatrix<T>,
        u: &DVector<T>,
        v: &DVector<T>,
    ) -> Result<Option<T>> {
        expected_next_quadratic(&self.sys, p, &self.x, u, v).map(Some)
    }

    fn last_noise(&self) -> Option<T> {
        self.last_omega
    }
}

/// One recorded oracle interaction.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleEvent<T: Scalar> {
    Reset(DVector<T>),
    Apply {
        u: DVector<T>,
        v: DVector<T>,
        next: DVector<T>,
    },
    Branch {
        u: DVector<T>,
        v: DVector<T>,
        successors: Vec<DVector<T>>,
    },
    Expected {
        p: DMatrix<T>,
        u: DVector<T>,
        v: DVector<T>,
        value: Option<T>,
    },
}

/// Forwards to an inner oracle and keeps a tape of every answer.
#[derive(Debug)]
pub struct RecordingOracle<O, T: Scalar> {
    inner: O,
    tape: Vec<OracleEvent<T>>,
}

impl<O: TrajectoryOracle<T>, T: Scalar> RecordingOracle<O, T> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            tape: Vec::new(),
        }
    }

    pub fn tape(&self) -> &[OracleEvent<T>] {
        &self.tape
    }

    /// A replay oracle serving this tape.
    pub fn into_replay(self) -> ReplayOracle<T> {
        ReplayOracle::new(self.inner.dims(), self.tape)
    }
}

impl<O: TrajectoryOracle<T>, T: Scalar> TrajectoryOracle<T> for RecordingOracle<O, T> {
    fn dims(&self) -> Dims {
        self.inner.dims()
    }

    fn state(&self) -> DVector<T> {
        self.inner.state()
    }

    fn reset(&mut self, x: &DVector<T>) -> Result<()> {
        self.inner.reset(x)?;
        self.tape.push(OracleEvent::Reset(x.clone()));
        Ok(())
    }

    fn apply(&mut self, u: &DVector<T>, v: &DVector<T>) -> Result<DVector<T>> {
        let next = self.inner.apply(u, v)?;
        self.tape.push(OracleEvent::Apply {
            u: u.clone(),
            v: v.clone(),
            next: next.clone(),
        });
        Ok(next)
    }

    fn branch(&mut self, u: &DVector<T>, v: &DVector<T>, count: usize) -> Result<Vec<DVector<T>>> {
        let successors = self.inner.branch(u, v, count)?;
        self.tape.push(OracleEvent::Branch {
            u: u.clone(),
            v: v.clone(),
            successors: successors.clone(),
        });
        Ok(successors)
    }

    fn expected_quadratic(
        &mut self,
        p: &DMatrix<T>,
        u: &DVector<T>,
        v: &DVector<T>,
    ) -> Result<Option<T>> {
        let value = self.inner.expected_quadratic(p, u, v)?;
        self.tape.push(OracleEvent::Expected {
            p: p.clone(),
            u: u.clone(),
            v: v.clone(),
            value,
        });
        Ok(value)
    }
}

/// Serves a recorded tape. Any request that differs from the recorded one
/// is an error, so a successful replay proves the learner saw only the tape.
#[derive(Debug, Clone)]
pub struct ReplayOracle<T: Scalar> {
    dims: Dims,
    tape: Vec<OracleEvent<T>>,
    cursor: usize,
    x: DVector<T>,
}

impl<T: Scalar> ReplayOracle<T> {
    pub fn new(dims: Dims, tape: Vec<OracleEvent<T>>) -> Self {
        Self {
            dims,
            tape,
            cursor: 0,
            x: DVector::zeros(dims.n),
        }
    }

    pub fn remaining(&self) -> usize {
        self.tape.len() - self.cursor
    }

    fn next_event(&mut self) -> Result<OracleEvent<T>> {
        let ev =
            self.tape.get(self.cursor).cloned().ok_or_else(|| {
                Error::Oracle(format!("tape exhausted after {} events", self.cursor))
            })?;
        self.cursor += 1;
        Ok(ev)
    }

    fn mismatch(&self, what: &str) -> Error {
        Error::Oracle(format!(
            "replay diverged at event {}: {what}",
            self.cursor - 1
        ))
    }
}

impl<T: Scalar> TrajectoryOracle<T> for ReplayOracle<T> {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn state(&self) -> DVector<T> {
        self.x.clone()
    }

    fn reset(&mut self, x: &DVector<T>) -> Result<()> {
        match self.next_event()? {
            OracleEvent::Reset(rx) if &rx == x => {
                self.x = rx;
                Ok(())
            }
            _ => Err(self.mismatch("reset")),
        }
    }

    fn apply(&mut self, u: &DVector<T>, v: &DVector<T>) -> Result<DVector<T>> {
        match self.next_event()? {
            OracleEvent::Apply { u: ru, v: rv, next } if &ru == u && &rv == v => {
                self.x = next.clone();
                Ok(next)
            }
            _ => Err(self.mismatch("apply")),
        }
    }

    fn branch(&mut self, u: &DVector<T>, v: &DVector<T>, count: usize) -> Result<Vec<DVector<T>>> {
        match self.next_event()? {
            OracleEvent::Branch {
                u: ru,
                v: rv,
                successors,
            } if &ru == u && &rv == v && successors.len() == count => Ok(successors),
            _ => Err(self.mismatch("branch")),
        }
    }

    fn expected_quadratic(
        &mut self,
        p: &DMatrix<T>,
        u: &DVector<T>,
        v: &DVector<T>,
    ) -> Result<Option<T>> {
        match self.next_event()? {
            OracleEvent::Expected {
                p: rp,
                u: ru,
                v: rv,
                value,
            } if &rp == p && &ru == u && &rv == v => Ok(value),
            _ => Err(self.mismatch("expected_quadratic")),
        }
    }
}

/// Sample mean of `x⁺ᵀ P x⁺` over branched successors.
pub fn branch_average<T: Scalar>(p: &DMatrix<T>, successors: &[DVector<T>]) -> Result<T> {
    if successors.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one branch is required".into(),
        ));
    }
    let total = successors
        .iter()
        .fold(T::zero(), |acc, x| acc + quad_form(p, x));
    Ok(total / crate::scalar::lit(successors.len() as f64))
}
