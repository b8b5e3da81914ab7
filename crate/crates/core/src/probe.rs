//! Deterministic probing signals added to the control and disturbance
//! channels while learning.
//!
//! Only sums of (squared) sinusoids of the time index are representable.
//! Constants and random white noise cannot be expressed, since both leave the
//! regression matrix rank deficient.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::NoiseCase;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wave {
    Sin,
    Cos,
    SinSquared,
    CosSquared,
}

/// `amplitude · wave(frequency · t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidTerm {
    wave: Wave,
    frequency: f64,
    amplitude: f64,
}

impl SinusoidTerm {
    pub fn new(wave: Wave, frequency: f64, amplitude: f64) -> Result<Self> {
        if !(frequency.is_finite() && frequency > 0.0) {
            return Err(Error::InvalidProbe(format!(
                "frequency must be positive and finite, got {frequency}"
            )));
        }
        if !(amplitude.is_finite() && amplitude != 0.0) {
            return Err(Error::InvalidProbe(format!(
                "amplitude must be non-zero and finite, got {amplitude}"
            )));
        }
        Ok(Self {
            wave,
            frequency,
            amplitude,
        })
    }

    const fn unit(wave: Wave, frequency: f64) -> Self {
        Self {
            wave,
            frequency,
            amplitude: 1.0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let arg = self.frequency * t;
        let w = match self.wave {
            Wave::Sin => arg.sin(),
            Wave::Cos => arg.cos(),
            Wave::SinSquared => arg.sin().powi(2),
            Wave::CosSquared => arg.cos().powi(2),
        };
        self.amplitude * w
    }
}

const CASE1_U: [SinusoidTerm; 2] = [
    SinusoidTerm::unit(Wave::Sin, 1.009),
    SinusoidTerm::unit(Wave::CosSquared, 0.538),
];
const CASE1_V: [SinusoidTerm; 2] = [
    SinusoidTerm::unit(Wave::Sin, 9.7),
    SinusoidTerm::unit(Wave::CosSquared, 10.2),
];
const CASE2_U: [SinusoidTerm; 2] = [
    SinusoidTerm::unit(Wave::Sin, 0.9),
    SinusoidTerm::unit(Wave::Cos, 100.0),
];
const CASE2_V: [SinusoidTerm; 2] = [
    SinusoidTerm::unit(Wave::Sin, 10.0),
    SinusoidTerm::unit(Wave::Cos, 10.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ProbingSchedule {
    case: NoiseCase,
    control: Vec<SinusoidTerm>,
    disturbance: Vec<SinusoidTerm>,
    active: bool,
}

impl ProbingSchedule {
    pub fn for_case(case: NoiseCase) -> Result<Self> {
        let (control, disturbance) = match case {
            NoiseCase::Case1 => (CASE1_U.to_vec(), CASE1_V.to_vec()),
            NoiseCase::Case2 => (CASE2_U.to_vec(), CASE2_V.to_vec()),
            NoiseCase::Case3 => (
                CASE1_U.iter().chain(&CASE2_U).copied().collect(),
                CASE1_V.iter().chain(&CASE2_V).copied().collect(),
            ),
            NoiseCase::Custom => {
                return Err(Error::InvalidProbe(
                    "custom schedules are built with ProbingSchedule::custom".into(),
                ))
            }
        };
        Ok(Self {
            case,
            control,
            disturbance,
            active: true,
        })
    }

    pub fn custom(control: Vec<SinusoidTerm>, disturbance: Vec<SinusoidTerm>) -> Result<Self> {
        if control.is_empty() || disturbance.is_empty() {
            return Err(Error::InvalidProbe(
                "both channels need at least one sinusoid".into(),
            ));
        }
        Ok(Self {
            case: NoiseCase::Custom,
            control,
            disturbance,
            active: true,
        })
    }

    pub fn case(&self) -> NoiseCase {
        self.case
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn set_active(&mut self, active: bool) {
        self.active = active;
    }

    /// Probing pair `(e_u, e_v)` at time `k`. Component `j` of a vector
    /// channel evaluates the same terms at `k + j`.
    pub fn probing_noise<T: Scalar>(
        &self,
        k: usize,
        m1: usize,
        m2: usize,
    ) -> (DVector<T>, DVector<T>) {
        if !self.active {
            return (DVector::zeros(m1), DVector::zeros(m2));
        }
        let channel = |terms: &[SinusoidTerm], m: usize| {
            DVector::from_fn(m, |j, _| {
                let t = (k + j) as f64;
                lit::<T>(terms.iter().map(|term| term.eval(t)).sum())
            })
        };
        (channel(&self.control, m1), channel(&self.disturbance, m2))
    }
}
