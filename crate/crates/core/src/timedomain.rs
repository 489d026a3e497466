//! Direct time integration of the first-order delayed system in physical time:
//! ∂ₜv₁ − a∂ₓv₁ = B, ∂ₜv₂ + a∂ₓv₂ = B, v₁ + v₂ = 0 at x = 0, v₁ − v₂ = 0 at x = 1,
//! with u = ½∫₀ˣ(v₁ − v₂)/a. First-order upwind in x, forward Euler in t.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

use crate::exprlang::{Env, EvalError, Expr};
use crate::model::{self, ModelError, ProblemSpec};
use crate::quad;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("CFL number {0:.3} exceeds 0.9")]
    CflViolation(f64),
    #[error("negative delay {0} has no initial-value problem")]
    NegativeDelayUnsupported(f64),
    #[error("no oscillation detected: amplitude {amplitude:.3e}, {crossings} upward crossings, relative amplitude drift {drift:.3}")]
    NoOscillationDetected { amplitude: f64, crossings: usize, drift: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const MAX_CFL: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Grid cells.
    pub m: usize,
    /// a_max Δt / Δx.
    pub cfl: f64,
    /// Probe location for the period estimate.
    pub x_probe: f64,
    /// Fraction of the run discarded as transient.
    pub discard: f64,
    /// Amplitudes below this count as rest.
    pub noise_floor: f64,
    /// Largest relative amplitude change across the retained window of a settled cycle.
    pub settle_tol: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            m: 400,
            cfl: 0.9,
            x_probe: 1.0,
            discard: 0.8,
            noise_floor: 1e-8,
            settle_tol: 0.05,
        }
    }
}

/// Current (v₁, v₂) and the history of u over the last τ.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub dt: f64,
    pub tau: f64,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    /// u at t, t − Δt, t − 2Δt, … (newest first).
    history: VecDeque<Vec<f64>>,
    x: Vec<f64>,
    h: f64,
    a: Vec<f64>,
    a_x: Vec<f64>,
    lambda: f64,
    b: Expr,
}

impl SimState {
    /// State with the given (v₁, v₂) on M + 1 nodes and constant history.
    pub fn new(spec: &ProblemSpec, tau: f64, v1: Vec<f64>, v2: Vec<f64>, cfl: f64) -> Result<Self, SimError> {
        if tau < 0.0 {
            return Err(SimError::NegativeDelayUnsupported(tau));
        }
        if !(cfl > 0.0 && cfl <= MAX_CFL) {
            return Err(SimError::CflViolation(cfl));
        }
        let m = v1.len() - 1;
        let coeffs = model::linearize(spec, spec.lambda, m)?;
        let h = coeffs.grid.h;
        let a_max = coeffs.at.a.iter().cloned().fold(0.0, f64::max);
        let dt = cfl * h / a_max;
        let mut state = SimState {
            t: 0.0,
            dt,
            tau,
            v1,
            v2,
            history: VecDeque::new(),
            x: coeffs.grid.x.clone(),
            h,
            a: coeffs.at.a.clone(),
            a_x: coeffs.at.a_x.clone(),
            lambda: spec.lambda,
            b: spec.b.joint(),
        };
        state.impose_boundary();
        let u = state.u();
        let len = (tau / dt).ceil() as usize + 2;
        state.history = std::iter::repeat_n(u, len).collect();
        Ok(state)
    }

    /// State whose u is the given profile with u_t = 0.
    pub fn from_displacement(spec: &ProblemSpec, tau: f64, u: &[f64], cfl: f64) -> Result<Self, SimError> {
        let m = u.len() - 1;
        let coeffs = model::linearize(spec, spec.lambda, m)?;
        let ux = quad::derivative(u, coeffs.grid.h);
        let v1 = (0..=m).map(|i| coeffs.at.a[i] * ux[i]).collect();
        let v2 = (0..=m).map(|i| -coeffs.at.a[i] * ux[i]).collect();
        Self::new(spec, tau, v1, v2, cfl)
    }

    pub fn grid(&self) -> &[f64] {
        &self.x
    }

    /// u = ½∫₀ˣ(v₁ − v₂)/a.
    pub fn u(&self) -> Vec<f64> {
        let g: Vec<f64> = (0..self.x.len()).map(|i| (self.v1[i] - self.v2[i]) / (2.0 * self.a[i])).collect();
        quad::cumulative(&g, self.h)
    }

    /// u(t − τ) by linear interpolation between stored steps.
    fn delayed(&self) -> Vec<f64> {
        let lag = self.tau / self.dt;
        let j = lag.floor() as usize;
        let f = lag - j as f64;
        let (p, q) = (&self.history[j], &self.history[j + 1]);
        p.iter().zip(q).map(|(p, q)| (1.0 - f) * p + f * q).collect()
    }

    fn impose_boundary(&mut self) {
        let m = self.x.len() - 1;
        self.v2[0] = -self.v1[0];
        self.v1[m] = self.v2[m];
    }

    /// One upwind step of length Δt.
    pub fn step(&mut self) -> Result<(), SimError> {
        let m = self.x.len() - 1;
        let u = &self.history[0];
        let ud = self.delayed();
        let source = (0..=m)
            .map(|i| {
                let (v1, v2) = (self.v1[i], self.v2[i]);
                let args = [u[i], ud[i], 0.5 * (v1 + v2), (v1 - v2) / (2.0 * self.a[i])];
                Ok(self.b.eval(&Env::new(self.x[i], self.lambda, args))? - 0.5 * self.a_x[i] * (v1 - v2))
            })
            .collect::<Result<Vec<f64>, EvalError>>()?;
        let r = self.dt / self.h;
        let mut v1 = self.v1.clone();
        let mut v2 = self.v2.clone();
        for i in 0..m {
            v1[i] += r * self.a[i] * (self.v1[i + 1] - self.v1[i]) + self.dt * source[i];
        }
        for i in 1..=m {
            v2[i] += -r * self.a[i] * (self.v2[i] - self.v2[i - 1]) + self.dt * source[i];
        }
        self.v1 = v1;
        self.v2 = v2;
        self.impose_boundary();
        self.t += self.dt;
        let u = self.u();
        self.history.pop_back();
        self.history.push_front(u);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOrbit {
    pub period: f64,
    /// Half the peak-to-peak probe amplitude over the retained window.
    pub amplitude: f64,
    /// Relative amplitude change between the two halves of the retained window.
    pub amplitude_drift: f64,
    pub crossings: usize,
    pub dt: f64,
    /// Retained (t, u(t, x_probe)) samples.
    pub probe: Vec<(f64, f64)>,
}

fn half_range(samples: &[(f64, f64)]) -> f64 {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, u)| (lo.min(*u), hi.max(*u)));
    0.5 * (hi - lo)
}

/// Integrates to `t_end`, drops the transient and estimates the period from
/// upward crossings of the probe signal through its mean.
pub fn run_to_orbit(mut state: SimState, t_end: f64, opts: &SimOptions) -> Result<SimOrbit, SimError> {
    let probe_at = |s: &SimState| quad::interpolate(&s.history[0], s.h, opts.x_probe);
    let start = opts.discard * t_end;
    let mut probe = Vec::new();
    while state.t < t_end {
        state.step()?;
        if state.t >= start {
            probe.push((state.t, probe_at(&state)));
        }
    }
    let amplitude = half_range(&probe);
    let half = probe.len() / 2;
    let (first, second) = (half_range(&probe[..half]), half_range(&probe[half..]));
    let drift = if first > 0.0 { second / first - 1.0 } else { 0.0 };
    let mean = probe.iter().map(|p| p.1).sum::<f64>() / probe.len().max(1) as f64;
    let crossings: Vec<f64> = probe
        .windows(2)
        .filter(|w| w[0].1 < mean && w[1].1 >= mean)
        .map(|w| {
            let (a, b) = (w[0].1 - mean, w[1].1 - mean);
            w[0].0 + (w[1].0 - w[0].0) * (-a / (b - a))
        })
        .collect();
    if amplitude < opts.noise_floor || crossings.len() < 3 || drift.abs() > opts.settle_tol {
        return Err(SimError::NoOscillationDetected {
            amplitude,
            crossings: crossings.len(),
            drift,
        });
    }
    let period = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    Ok(SimOrbit {
        period,
        amplitude,
        amplitude_drift: drift,
        crossings: crossings.len(),
        dt: state.dt,
        probe,
    })
}
