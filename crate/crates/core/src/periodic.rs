//! Time-periodic solutions through the fixed-point system v = Cv + D·B(v).
//!
//! Fields are truncated Fourier series in t (harmonics 0..=N, negative ones
//! implied by conjugate symmetry) sampled on the model grid in x. Time shifts
//! become phase factors, so C and D act harmonic by harmonic. The kernel of D
//! factorizes as E(x)/E(ξ), which turns each integral into a running sum.

use faer::linalg::solvers::Solve;
use faer::Mat;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::eigen::{self, EigenError, HopfCertificate, Tolerances};
use crate::exprlang::{Env, EvalError, Expr};
use crate::model::{self, CharKernels, LinearizedCoeffs, ModelError, ProblemSpec};
use crate::quad;
use crate::C64;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Error)]
pub enum PeriodicError {
    #[error("Newton did not converge at eps = {eps}: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { eps: f64, iterations: usize, residual: f64 },
    #[error("Newton Jacobian is singular (pivot ratio {pivot_ratio:.3e}): resonance or failed certificate")]
    JacobianSingular { pivot_ratio: f64 },
    #[error("continuation failed (last converged eps: {last_good:?}): {source}")]
    BranchFailed {
        last_good: Option<f64>,
        #[source]
        source: Box<PeriodicError>,
    },
    #[error("the branch fit needs at least three positive eps values, got {0}")]
    DegenerateFit(usize),
    #[error("unsupported discretization N = {n}, M = {m} (need N >= 1, M >= 16)")]
    BadDiscretization { n: usize, m: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Highest retained harmonic N.
    pub n: usize,
    /// Grid cells M.
    pub m: usize,
    pub max_iter: usize,
    /// Max-norm of the field residual at convergence.
    pub tol_orbit: f64,
    /// Absolute tolerance on the amplitude and phase equations.
    pub tol_constraint: f64,
    /// Relative finite-difference step of the Jacobian.
    pub fd_step: f64,
    /// Smallest accepted ratio of LU pivots.
    pub pivot_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            n: 8,
            m: 64,
            max_iter: 20,
            tol_orbit: 1e-9,
            tol_constraint: 1e-10,
            fd_step: 1e-7,
            pivot_tol: 1e-10,
        }
    }
}

/// Harmonics v̂ᵏⱼ(xₘ) for k = 0..=N and j = 0, 1 (the two components).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierField {
    pub n: usize,
    pub m: usize,
    /// Entry (2k + j)(M + 1) + node.
    pub coeffs: Vec<C64>,
}

impl FourierField {
    pub fn zeros(n: usize, m: usize) -> Self {
        FourierField {
            n,
            m,
            coeffs: vec![C64::default(); 2 * (n + 1) * (m + 1)],
        }
    }

    fn range(&self, k: usize, j: usize) -> std::ops::Range<usize> {
        let np = self.m + 1;
        let start = (2 * k + j) * np;
        start..start + np
    }

    pub fn profile(&self, k: usize, j: usize) -> &[C64] {
        &self.coeffs[self.range(k, j)]
    }

    pub fn profile_mut(&mut self, k: usize, j: usize) -> &mut [C64] {
        let r = self.range(k, j);
        &mut self.coeffs[r]
    }

    /// Forces the mean (k = 0) to be real, so the field is real-valued.
    pub fn symmetrize(&mut self) {
        for j in 0..2 {
            for c in self.profile_mut(0, j) {
                c.im = 0.0;
            }
        }
    }

    /// The field t ↦ v(t + φ): harmonic k picks up e^{ikφ}.
    pub fn shifted(&self, phi: f64) -> Self {
        let mut out = self.clone();
        for k in 0..=self.n {
            let rot = C64::from_polar(1.0, k as f64 * phi);
            for j in 0..2 {
                for c in out.profile_mut(k, j) {
                    *c *= rot;
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn max_diff(&self, other: &FourierField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub v: FourierField,
    pub omega: f64,
    pub tau: f64,
    pub eps: f64,
    pub lambda: f64,
    /// Max-norm of v − Cv − D·B(v).
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchResult {
    pub orbits: Vec<PeriodicOrbit>,
    /// c₂ in τ(ε) ≈ τ₀ + c₁ε + ½c₂ε².
    pub fit_tau_curvature: f64,
    pub fit_tau_slope: f64,
    pub fit_tau_intercept: f64,
    pub fit_omega_curvature: f64,
    pub fit_omega_slope: f64,
    pub fit_omega_intercept: f64,
}

/// u, ∂ₜu and ∂ₓu on the collocation grid, row s holding time t_s = 2πs/S.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub u_t: Vec<Vec<f64>>,
    pub u_x: Vec<Vec<f64>>,
}

impl Reconstruction {
    pub fn max_abs(&self) -> f64 {
        self.u.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Discretized fixed-point problem for one (spec, λ) at a known critical delay.
#[derive(Debug, Clone)]
pub struct PeriodicSolver {
    spec: ProblemSpec,
    b: Expr,
    coeffs: LinearizedCoeffs,
    kernels: CharKernels,
    pub tau0: f64,
    pub opts: SolverOptions,
    /// Harmonics carried by the unknowns (odd ones only when b is odd in u).
    pub harmonics: Vec<usize>,
    samples: usize,
    /// e^{ik t_s}, entry s(N + 1) + k.
    twiddle: Vec<C64>,
    u0: Vec<C64>,
    v0: [Vec<C64>; 2],
    /// ⟨v₀¹, v₀¹⟩ = ½∫|v₀|².
    v0_norm: f64,
}

impl PeriodicSolver {
    pub fn new(spec: &ProblemSpec, tau0: f64, opts: SolverOptions) -> Result<Self, PeriodicError> {
        if opts.n < 1 || opts.m < 16 {
            return Err(PeriodicError::BadDiscretization { n: opts.n, m: opts.m });
        }
        let coeffs = model::linearize(spec, spec.lambda, opts.m)?;
        let kernels = model::kernels(&coeffs);
        let eig = eigen::eigenpair(tau0, &coeffs)?;
        let a0 = &coeffs.zero.a;
        let v0 = [
            (0..=opts.m).map(|i| I * eig.u0[i] + eig.u0_prime[i] * a0[i]).collect::<Vec<_>>(),
            (0..=opts.m).map(|i| I * eig.u0[i] - eig.u0_prime[i] * a0[i]).collect::<Vec<_>>(),
        ];
        let sq: Vec<f64> = (0..=opts.m).map(|i| v0[0][i].norm_sqr() + v0[1][i].norm_sqr()).collect();
        let v0_norm = 0.5 * quad::integrate(&sq, coeffs.grid.h);
        let harmonics = if spec.is_odd_in_u() {
            (1..=opts.n).step_by(2).collect()
        } else {
            (0..=opts.n).collect()
        };
        let samples = 4 * opts.n + 1;
        let twiddle = (0..samples)
            .flat_map(|s| {
                let t = 2.0 * PI * s as f64 / samples as f64;
                (0..=opts.n).map(move |k| C64::from_polar(1.0, k as f64 * t))
            })
            .collect();
        Ok(PeriodicSolver {
            spec: spec.clone(),
            b: spec.b.joint(),
            coeffs,
            kernels,
            tau0,
            opts,
            harmonics,
            samples,
            twiddle,
            u0: eig.u0,
            v0,
            v0_norm,
        })
    }

    pub fn from_certificate(spec: &ProblemSpec, cert: &HopfCertificate, opts: SolverOptions) -> Result<Self, PeriodicError> {
        Self::new(spec, cert.tau0, opts)
    }

    pub fn lambda(&self) -> f64 {
        self.spec.lambda
    }

    pub fn grid(&self) -> &quad::Grid {
        &self.coeffs.grid
    }

    /// Critical eigenfunction u₀ on the solver grid, scaled to u₀(1) = 1.
    pub fn u0(&self) -> &[C64] {
        &self.u0
    }

    pub fn v0(&self) -> &[Vec<C64>; 2] {
        &self.v0
    }

    fn np(&self) -> usize {
        self.opts.m + 1
    }

    fn zero_field(&self) -> FourierField {
        FourierField::zeros(self.opts.n, self.opts.m)
    }

    /// First-order guess: only harmonic 1, v̂¹ = (ε/2)v₀, at ω = 1 and τ = τ₀.
    pub fn predictor(&self, eps: f64) -> PeriodicOrbit {
        let mut v = self.zero_field();
        for j in 0..2 {
            for (c, w) in v.profile_mut(1, j).iter_mut().zip(&self.v0[j]) {
                *c = w * (0.5 * eps);
            }
        }
        PeriodicOrbit {
            v,
            omega: 1.0,
            tau: self.tau0,
            eps,
            lambda: self.lambda(),
            residual_norm: f64::NAN,
            iterations: 0,
        }
    }

    /// e^{ikω∫₀ˣ1/a} at every node.
    fn phases(&self, k: usize, omega: f64) -> Vec<C64> {
        let kw = k as f64 * omega;
        self.kernels.travel.iter().map(|t| C64::from_polar(1.0, kw * t)).collect()
    }

    /// Boundary-data operator: (Cv)₁ = −c₁(x,0)e^{ikωA(x,0)}v̂₂(0),
    /// (Cv)₂ = c₂(x,1)e^{−ikωA(x,1)}v̂₁(1).
    pub fn apply_c(&self, v: &FourierField, omega: f64) -> FourierField {
        let mut out = self.zero_field();
        let (f1, f2) = (&self.kernels.f1, &self.kernels.f2);
        let last = self.opts.m;
        for k in 0..=self.opts.n {
            let ph = self.phases(k, omega);
            let left = v.profile(k, 1)[0];
            let right = v.profile(k, 0)[last];
            let o1: Vec<C64> = (0..self.np()).map(|i| -ph[i] * (-f1[i]).exp() * left).collect();
            let o2: Vec<C64> = (0..self.np())
                .map(|i| (ph[last] / ph[i]) * (f2[i] - f2[last]).exp() * right)
                .collect();
            out.profile_mut(k, 0).copy_from_slice(&o1);
            out.profile_mut(k, 1).copy_from_slice(&o2);
        }
        out.symmetrize();
        out
    }

    /// Inverse of the transport operator with the homogeneous boundary data:
    /// (Df)₁ = −∫₀ˣ (c₁/a)e^{ikωA(x,ξ)} f̂₁, (Df)₂ = −∫ₓ¹ (c₂/a)e^{−ikωA(x,ξ)} f̂₂.
    pub fn apply_d(&self, f: &FourierField, omega: f64) -> FourierField {
        let mut out = self.zero_field();
        let (f1, f2) = (&self.kernels.f1, &self.kernels.f2);
        let a = &self.coeffs.at.a;
        let h = self.coeffs.grid.h;
        for k in 0..=self.opts.n {
            let ph = self.phases(k, omega);
            let e1: Vec<C64> = (0..self.np()).map(|i| ph[i] * (-f1[i]).exp()).collect();
            let e2: Vec<C64> = (0..self.np()).map(|i| ph[i].conj() * f2[i].exp()).collect();
            let g1: Vec<C64> = (0..self.np()).map(|i| f.profile(k, 0)[i] / (e1[i] * a[i])).collect();
            let g2: Vec<C64> = (0..self.np()).map(|i| f.profile(k, 1)[i] / (e2[i] * a[i])).collect();
            let cum = quad::cumulative(&g1, h);
            let tail = quad::tail(&g2, h);
            for i in 0..self.np() {
                out.profile_mut(k, 0)[i] = -e1[i] * cum[i];
                out.profile_mut(k, 1)[i] = -e2[i] * tail[i];
            }
        }
        out.symmetrize();
        out
    }

    /// Harmonics of u = J v = ½∫₀ˣ(v₁ − v₂)/a, stacked as k(M+1) + node.
    fn u_harmonics(&self, v: &FourierField) -> Vec<C64> {
        let a = &self.coeffs.at.a;
        let mut out = Vec::with_capacity((self.opts.n + 1) * self.np());
        for k in 0..=self.opts.n {
            let (v1, v2) = (v.profile(k, 0), v.profile(k, 1));
            let g: Vec<C64> = (0..self.np()).map(|i| (v1[i] - v2[i]) / (2.0 * a[i])).collect();
            out.extend(quad::cumulative(&g, self.coeffs.grid.h));
        }
        out
    }

    /// Real samples at the collocation times of a stacked harmonic table.
    fn synthesize(&self, hat: &[C64]) -> Vec<Vec<f64>> {
        let (n, np) = (self.opts.n, self.np());
        (0..self.samples)
            .map(|s| {
                let tw = &self.twiddle[s * (n + 1)..(s + 1) * (n + 1)];
                (0..np)
                    .map(|i| {
                        let mut acc = hat[i].re;
                        for k in 1..=n {
                            acc += 2.0 * (hat[k * np + i] * tw[k]).re;
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    /// Harmonics 0..=N of real samples (higher ones are dropped).
    fn analyze(&self, vals: &[Vec<f64>]) -> Vec<C64> {
        let (n, np) = (self.opts.n, self.np());
        let scale = 1.0 / self.samples as f64;
        let mut out = vec![C64::default(); (n + 1) * np];
        for (s, row) in vals.iter().enumerate() {
            let tw = &self.twiddle[s * (n + 1)..(s + 1) * (n + 1)];
            for k in 0..=n {
                let w = tw[k].conj() * scale;
                for i in 0..np {
                    out[k * np + i] += w * row[i];
                }
            }
        }
        out
    }

    /// Pseudo-spectral B₁ = B − b₁v₁, B₂ = B − b₂v₂ with
    /// B = b(x, λ, Jv, Jv(t−ωτ), Kv, K_λv) − ½∂ₓa(v₁ − v₂).
    pub fn apply_b(&self, v: &FourierField, omega: f64, tau: f64) -> Result<FourierField, EvalError> {
        let (n, np) = (self.opts.n, self.np());
        let at = &self.coeffs.at;
        let u_hat = self.u_harmonics(v);
        let mut delayed = u_hat.clone();
        let mut kv = vec![C64::default(); (n + 1) * np];
        let mut kl = vec![C64::default(); (n + 1) * np];
        for k in 0..=n {
            let rot = C64::from_polar(1.0, -(k as f64) * omega * tau);
            let (v1, v2) = (v.profile(k, 0), v.profile(k, 1));
            for i in 0..np {
                delayed[k * np + i] *= rot;
                kv[k * np + i] = (v1[i] + v2[i]) * 0.5;
                kl[k * np + i] = (v1[i] - v2[i]) / (2.0 * at.a[i]);
            }
        }
        let fields = [&u_hat, &delayed, &kv, &kl].map(|h| self.synthesize(h));
        let x = &self.coeffs.grid.x;
        let lambda = self.lambda();
        let vals = (0..self.samples)
            .map(|s| {
                (0..np)
                    .map(|i| {
                        let args = [fields[0][s][i], fields[1][s][i], fields[2][s][i], fields[3][s][i]];
                        self.b.eval(&Env::new(x[i], lambda, args))
                    })
                    .collect::<Result<Vec<f64>, EvalError>>()
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let b_hat = self.analyze(&vals);
        let mut out = self.zero_field();
        for k in 0..=n {
            for i in 0..np {
                let (v1, v2) = (v.profile(k, 0)[i], v.profile(k, 1)[i]);
                let common = b_hat[k * np + i] - (v1 - v2) * (0.5 * at.a_x[i]);
                out.profile_mut(k, 0)[i] = common - v1 * self.coeffs.b1[i];
                out.profile_mut(k, 1)[i] = common - v2 * self.coeffs.b2[i];
            }
        }
        out.symmetrize();
        Ok(out)
    }

    /// v − Cv − D·B(v).
    pub fn field_residual(&self, v: &FourierField, omega: f64, tau: f64) -> Result<FourierField, EvalError> {
        let cv = self.apply_c(v, omega);
        let dbv = self.apply_d(&self.apply_b(v, omega, tau)?, omega);
        let mut out = v.clone();
        for ((o, c), d) in out.coeffs.iter_mut().zip(&cv.coeffs).zip(&dbv.coeffs) {
            *o -= c + d;
        }
        Ok(out)
    }

    /// (⟨v, v₀¹⟩/⟨v₀¹, v₀¹⟩, ⟨v, ∂ₜv₀¹⟩/⟨v₀¹, v₀¹⟩) = (∫Re v̂¹·v̄₀, ∫Im v̂¹·v̄₀)/(½∫|v₀|²).
    pub fn projections(&self, v: &FourierField) -> (f64, f64) {
        let dot: Vec<C64> = (0..self.np())
            .map(|i| v.profile(1, 0)[i] * self.v0[0][i].conj() + v.profile(1, 1)[i] * self.v0[1][i].conj())
            .collect();
        let p = quad::integrate(&dot, self.coeffs.grid.h) / self.v0_norm;
        (p.re, p.im)
    }

    /// Number of real unknowns, including ω and τ.
    pub fn unknowns(&self) -> usize {
        let per_k: usize = self.harmonics.iter().map(|&k| if k == 0 { 1 } else { 2 }).sum();
        2 * per_k * self.np() + 2
    }

    fn pack_field(&self, v: &FourierField, out: &mut Vec<f64>) {
        for &k in &self.harmonics {
            for j in 0..2 {
                for c in v.profile(k, j) {
                    out.push(c.re);
                    if k > 0 {
                        out.push(c.im);
                    }
                }
            }
        }
    }

    fn unpack_field(&self, x: &[f64]) -> FourierField {
        let mut v = self.zero_field();
        let mut pos = 0;
        for &k in &self.harmonics {
            for j in 0..2 {
                for c in v.profile_mut(k, j) {
                    c.re = x[pos];
                    pos += 1;
                    if k > 0 {
                        c.im = x[pos];
                        pos += 1;
                    }
                }
            }
        }
        v
    }

    /// Unknown vector (v̂ real and imaginary parts, ω, τ).
    pub fn pack(&self, orbit: &PeriodicOrbit) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.unknowns());
        self.pack_field(&orbit.v, &mut x);
        x.push(orbit.omega);
        x.push(orbit.tau);
        x
    }

    /// Stacked field residual followed by the amplitude and phase equations.
    pub fn residual(&self, orbit: &PeriodicOrbit) -> Result<Vec<f64>, EvalError> {
        self.residual_at(&self.pack(orbit), orbit.eps)
    }

    fn residual_at(&self, x: &[f64], eps: f64) -> Result<Vec<f64>, EvalError> {
        let n = x.len();
        let v = self.unpack_field(x);
        let r = self.field_residual(&v, x[n - 2], x[n - 1])?;
        let mut out = Vec::with_capacity(n);
        self.pack_field(&r, &mut out);
        let (amp, phase) = self.projections(&v);
        out.push(amp - eps);
        out.push(phase);
        Ok(out)
    }

    fn split_norms(r: &[f64]) -> (f64, f64) {
        let n = r.len();
        let field = r[..n - 2].iter().map(|v| v.abs()).fold(0.0, f64::max);
        (field, r[n - 2].abs().max(r[n - 1].abs()))
    }

    fn jacobian(&self, x: &[f64], r0: &[f64], eps: f64) -> Result<Mat<f64>, EvalError> {
        let n = x.len();
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let step = self.opts.fd_step * x[j].abs().max(1.0);
                let mut xp = x.to_vec();
                xp[j] += step;
                let rp = self.residual_at(&xp, eps)?;
                Ok(rp.iter().zip(r0).map(|(a, b)| (a - b) / step).collect())
            })
            .collect::<Result<_, EvalError>>()?;
        Ok(Mat::from_fn(n, n, |i, j| columns[j][i]))
    }

    fn factor(&self, jac: &Mat<f64>) -> Result<faer::linalg::solvers::PartialPivLu<f64>, PeriodicError> {
        let lu = jac.partial_piv_lu();
        let u = lu.U();
        let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let pivot_ratio = if max > 0.0 { min / max } else { 0.0 };
        if pivot_ratio.is_nan() || pivot_ratio < self.opts.pivot_tol {
            return Err(PeriodicError::JacobianSingular { pivot_ratio });
        }
        Ok(lu)
    }

    /// Damped Newton iteration on (v̂, ω, τ) at fixed ε, reusing a
    /// finite-difference Jacobian while it keeps contracting.
    pub fn newton_solve(&self, guess: &PeriodicOrbit, eps: f64) -> Result<PeriodicOrbit, PeriodicError> {
        if eps == 0.0 {
            return Ok(PeriodicOrbit {
                v: self.zero_field(),
                eps,
                residual_norm: 0.0,
                iterations: 0,
                lambda: self.lambda(),
                ..guess.clone()
            });
        }
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = self.pack(guess);
        let mut r = self.residual_at(&x, eps)?;
        let mut lu = None;
        let mut fresh = false;
        let mut iterations = 0;
        loop {
            let (field, constraint) = Self::split_norms(&r);
            if field <= self.opts.tol_orbit && constraint <= self.opts.tol_constraint {
                break;
            }
            if iterations >= self.opts.max_iter {
                return Err(PeriodicError::NoConvergence { eps, iterations, residual: field });
            }
            if lu.is_none() {
                lu = Some(self.factor(&self.jacobian(&x, &r, eps)?)?);
                fresh = true;
            }
            let rhs = Mat::from_fn(x.len(), 1, |i, _| -r[i]);
            let step = lu.as_ref().expect("factored above").solve(&rhs);
            let r_norm = norm(&r);
            let mut accepted = None;
            let mut t = 1.0;
            for _ in 0..12 {
                let trial: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + t * step[(i, 0)]).collect();
                let rt = self.residual_at(&trial, eps)?;
                if norm(&rt) < r_norm {
                    accepted = Some((trial, rt));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((trial, rt)) => {
                    let ratio = norm(&rt) / r_norm;
                    x = trial;
                    r = rt;
                    iterations += 1;
                    if ratio > 0.25 {
                        lu = None;
                    }
                    fresh = false;
                }
                None if fresh => {
                    return Err(PeriodicError::NoConvergence {
                        eps,
                        iterations,
                        residual: Self::split_norms(&r).0,
                    })
                }
                None => lu = None,
            }
        }
        let n = x.len();
        Ok(PeriodicOrbit {
            v: self.unpack_field(&x),
            omega: x[n - 2],
            tau: x[n - 1],
            eps,
            lambda: self.lambda(),
            residual_norm: Self::split_norms(&r).0,
            iterations,
        })
    }

    /// Sequential solves along `eps_grid`, each seeded by the previous orbit
    /// rescaled to the new amplitude, then a quadratic fit of τ(ε) and ω(ε)
    /// through the three smallest positive ε.
    pub fn continue_branch(&self, eps_grid: &[f64]) -> Result<BranchResult, PeriodicError> {
        let mut positive: Vec<f64> = eps_grid.iter().copied().filter(|e| *e > 0.0).collect();
        if positive.len() < 3 {
            return Err(PeriodicError::DegenerateFit(positive.len()));
        }
        let mut orbits: Vec<PeriodicOrbit> = Vec::with_capacity(eps_grid.len());
        for &eps in eps_grid {
            let guess = match orbits.last() {
                Some(prev) if prev.eps > 0.0 => PeriodicOrbit {
                    v: prev.v.scaled(eps / prev.eps),
                    ..prev.clone()
                },
                _ => self.predictor(eps),
            };
            let orbit = self.newton_solve(&guess, eps).map_err(|e| PeriodicError::BranchFailed {
                last_good: orbits.last().map(|o| o.eps),
                source: Box::new(e),
            })?;
            orbits.push(orbit);
        }
        positive.sort_by(f64::total_cmp);
        let pick: Vec<&PeriodicOrbit> = positive[..3]
            .iter()
            .map(|e| orbits.iter().find(|o| o.eps == *e).expect("solved above"))
            .collect();
        let eps: Vec<f64> = pick.iter().map(|o| o.eps).collect();
        let tau = quadratic_fit(&eps, &pick.iter().map(|o| o.tau).collect::<Vec<_>>());
        let omega = quadratic_fit(&eps, &pick.iter().map(|o| o.omega).collect::<Vec<_>>());
        Ok(BranchResult {
            orbits,
            fit_tau_intercept: tau[0],
            fit_tau_slope: tau[1],
            fit_tau_curvature: tau[2],
            fit_omega_intercept: omega[0],
            fit_omega_slope: omega[1],
            fit_omega_curvature: omega[2],
        })
    }

    /// (v₁, v₂)(t, ·) on the solver grid.
    pub fn sample_fields(&self, orbit: &PeriodicOrbit, t: f64) -> [Vec<f64>; 2] {
        [0, 1].map(|j| {
            (0..self.np())
                .map(|i| {
                    (0..=self.opts.n)
                        .map(|k| {
                            let z = orbit.v.profile(k, j)[i] * C64::from_polar(1.0, k as f64 * t);
                            if k == 0 {
                                z.re
                            } else {
                                2.0 * z.re
                            }
                        })
                        .sum()
                })
                .collect()
        })
    }

    pub fn collocation_times(&self) -> Vec<f64> {
        (0..self.samples)
            .map(|s| 2.0 * PI * s as f64 / self.samples as f64)
            .collect()
    }

    /// u = Jv with ω∂ₜu = (v₁ + v₂)/2 and ∂ₓu = (v₁ − v₂)/(2a).
    pub fn reconstruct_u(&self, orbit: &PeriodicOrbit) -> Reconstruction {
        let (n, np) = (self.opts.n, self.np());
        let a = &self.coeffs.at.a;
        let u_hat = self.u_harmonics(&orbit.v);
        let mut ut = vec![C64::default(); (n + 1) * np];
        let mut ux = vec![C64::default(); (n + 1) * np];
        for k in 0..=n {
            let (v1, v2) = (orbit.v.profile(k, 0), orbit.v.profile(k, 1));
            for i in 0..np {
                ut[k * np + i] = (v1[i] + v2[i]) / (2.0 * orbit.omega);
                ux[k * np + i] = (v1[i] - v2[i]) / (2.0 * a[i]);
            }
        }
        Reconstruction {
            times: self.collocation_times(),
            x: self.coeffs.grid.x.clone(),
            u: self.synthesize(&u_hat),
            u_t: self.synthesize(&ut),
            u_x: self.synthesize(&ux),
        }
    }

    /// Max over interior nodes of |ω²u_tt − a²u_xx − b(x, λ, u, u(t−ωτ), ωu_t, u_x)|,
    /// with spectral t-derivatives and fourth-order differences in x applied to u = Jv.
    pub fn pde_residual_check(&self, orbit: &PeriodicOrbit) -> Result<f64, EvalError> {
        let (n, np, h) = (self.opts.n, self.np(), self.coeffs.grid.h);
        let (omega, tau) = (orbit.omega, orbit.tau);
        let u_hat = self.u_harmonics(&orbit.v);
        let mut delayed = u_hat.clone();
        let mut wut = u_hat.clone();
        let mut wwutt = u_hat.clone();
        for k in 0..=n {
            let kw = k as f64 * omega;
            let rot = C64::from_polar(1.0, -kw * tau);
            for i in 0..np {
                let c = u_hat[k * np + i];
                delayed[k * np + i] = c * rot;
                wut[k * np + i] = I * kw * c;
                wwutt[k * np + i] = -kw * kw * c;
            }
        }
        let u = self.synthesize(&u_hat);
        let ud = self.synthesize(&delayed);
        let ut = self.synthesize(&wut);
        let utt = self.synthesize(&wwutt);
        let a = &self.coeffs.at.a;
        let x = &self.coeffs.grid.x;
        let mut worst: f64 = 0.0;
        for s in 0..self.samples {
            let ux = quad::derivative(&u[s], h);
            let uxx = quad::second_derivative(&u[s], h);
            for i in 2..np - 2 {
                let env = Env::new(x[i], self.lambda(), [u[s][i], ud[s][i], ut[s][i], ux[i]]);
                let res = utt[s][i] - a[i] * a[i] * uxx[i] - self.b.eval(&env)?;
                worst = worst.max(res.abs());
            }
        }
        Ok(worst)
    }

    /// Derivatives of the reduced bifurcation function with respect to ω and τ
    /// at the Hopf point: the first-harmonic response of the linearized residual,
    /// mapped back through the transport operator and paired with
    /// v* = (u* + iU*, u* − iU*) normalized to σ = 1.
    pub fn bifurcation_derivatives(&self, tol: &Tolerances) -> Result<(C64, C64), PeriodicError> {
        let mode = eigen::critical_mode(self.tau0, &self.coeffs, tol)?;
        let adj = &mode.adjoint;
        let np = self.np();
        let h = self.coeffs.grid.h;
        let eps = 1e-6;
        let delta = 1e-5;
        let v = self.predictor(eps).v;
        let project = |omega: f64, tau: f64| -> Result<Vec<[C64; 2]>, EvalError> {
            let r = self.field_residual(&v, omega, tau)?;
            // Re(e^{it}X) has first harmonic X/2.
            Ok((0..np)
                .map(|i| [r.profile(1, 0)[i] * (2.0 / eps), r.profile(1, 1)[i] * (2.0 / eps)])
                .collect())
        };
        let pair = |plus: Vec<[C64; 2]>, minus: Vec<[C64; 2]>| -> C64 {
            let d: [Vec<C64>; 2] =
                [0, 1].map(|j| (0..np).map(|i| (plus[i][j] - minus[i][j]) / (2.0 * delta)).collect());
            let d1 = quad::derivative(&d[0], h);
            let d2 = quad::derivative(&d[1], h);
            let c = &self.coeffs;
            let integrand: Vec<C64> = (0..np)
                .map(|i| {
                    let x1 = I * d[0][i] - c.at.a[i] * d1[i] - c.b1[i] * d[0][i];
                    let x2 = I * d[1][i] + c.at.a[i] * d2[i] - c.b2[i] * d[1][i];
                    let s1 = adj.u_star[i] + I * adj.big_u_star[i];
                    let s2 = adj.u_star[i] - I * adj.big_u_star[i];
                    x1 * s1.conj() + x2 * s2.conj()
                })
                .collect();
            0.5 * quad::integrate(&integrand, h)
        };
        let d_omega = pair(project(1.0 + delta, self.tau0)?, project(1.0 - delta, self.tau0)?);
        let d_tau = pair(project(1.0, self.tau0 + delta)?, project(1.0, self.tau0 - delta)?);
        Ok((d_omega, d_tau))
    }
}

/// Least-squares (c₀, c₁, c₂) for y ≈ c₀ + c₁ε + ½c₂ε².
pub fn quadratic_fit(eps: &[f64], y: &[f64]) -> [f64; 3] {
    let a = DMatrix::from_fn(eps.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => eps[i],
        _ => 0.5 * eps[i] * eps[i],
    });
    let sol = a
        .svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-300)
        .expect("SVD with both factors");
    [sol[0], sol[1], sol[2]]
}
