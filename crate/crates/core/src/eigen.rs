//! Critical delay, eigenfunction, adjoint and transversality data.
//!
//! Everything here is computed from the λ = 0 coefficients by complex
//! shooting from x = 0 with a fixed-step RK4 on the model grid.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::model::{self, LinearizedCoeffs, ModelError, ProblemSpec};
use crate::quad;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// |D(i, τ₀)| acceptance and adjoint boundary residual.
    pub eig: f64,
    /// Smallest |D(ik, τ₀)| accepted for k ≠ ±1.
    pub resonance: f64,
    pub rho: f64,
    pub sigma: f64,
    pub fredholm: f64,
    /// Agreement required between grids M and 2M.
    pub richardson: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eig: 1e-8,
            resonance: 1e-6,
            rho: 1e-8,
            sigma: 1e-8,
            fredholm: 1e-8,
            richardson: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("critical delay search did not converge within {iterations} iterations from any start")]
    NoConvergence { iterations: usize },
    #[error("smallest |D(i, tau)| found is {residual:e} at tau = {tau}, above tolerance {tol:e}")]
    ResidualAboveTolerance { tau: f64, residual: f64, tol: f64 },
    #[error("adjoint boundary residual {residual:e} exceeds {tol:e}")]
    AdjointInconsistent { residual: f64, tol: f64 },
    #[error("|sigma| = {0:e} is below tolerance")]
    SigmaZero(f64),
    #[error("|rho| = {0:e} is below tolerance")]
    RhoZero(f64),
    #[error("eigenfunction vanishes at x = 1")]
    DegenerateEigenfunction,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Solution of the shooting initial value problem u(0) = 0, u'(0) = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootResult {
    /// Boundary mismatch u'(1).
    pub d: C64,
    pub u: Vec<C64>,
    pub u_prime: Vec<C64>,
}

/// Integrates z' = A(x) z for a complex 2-vector with classical RK4, given
/// the matrix at every node and every cell midpoint.
fn rk4_linear(h: f64, nodes: &[[C64; 4]], mids: &[[C64; 4]], z0: [C64; 2]) -> Vec<[C64; 2]> {
    let apply = |a: &[C64; 4], z: [C64; 2]| [a[0] * z[0] + a[1] * z[1], a[2] * z[0] + a[3] * z[1]];
    let axpy = |z: [C64; 2], k: [C64; 2], s: f64| [z[0] + k[0] * s, z[1] + k[1] * s];
    let mut out = Vec::with_capacity(nodes.len());
    let mut z = z0;
    out.push(z);
    for m in 0..mids.len() {
        let k1 = apply(&nodes[m], z);
        let k2 = apply(&mids[m], axpy(z, k1, 0.5 * h));
        let k3 = apply(&mids[m], axpy(z, k2, 0.5 * h));
        let k4 = apply(&nodes[m + 1], axpy(z, k3, h));
        z = [
            z[0] + (k1[0] + (k2[0] + k3[0]) * 2.0 + k4[0]) * (h / 6.0),
            z[1] + (k1[1] + (k2[1] + k3[1]) * 2.0 + k4[1]) * (h / 6.0),
        ];
        out.push(z);
    }
    out
}

fn evp_matrix(mu: C64, tau: f64, a: f64, b3: f64, b4: f64, b5: f64, b6: f64) -> [C64; 4] {
    let q = mu * mu - mu * b5 - (-mu * tau).exp() * b4 - b3;
    let a2 = a * a;
    [C64::new(0.0, 0.0), C64::new(1.0, 0.0), q / a2, C64::new(-b6 / a2, 0.0)]
}

fn evp_matrices(mu: C64, tau: f64, s: &model::CoeffSamples) -> Vec<[C64; 4]> {
    (0..s.len())
        .map(|i| evp_matrix(mu, tau, s.a[i], s.b3[i], s.b4[i], s.b5[i], s.b6[i]))
        .collect()
}

/// Shoots (μ² − b₅⁰μ − b₄⁰e^{−μτ} − b₃⁰)u = a₀²u'' + b₆⁰u' from x = 0 with
/// u(0) = 0, u'(0) = 1 and returns D = u'(1).
pub fn shoot_evp(mu: C64, tau: f64, coeffs: &LinearizedCoeffs) -> ShootResult {
    let nodes = evp_matrices(mu, tau, &coeffs.zero);
    let mids = evp_matrices(mu, tau, &coeffs.zero_mid);
    let z = rk4_linear(coeffs.grid.h, &nodes, &mids, [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
    let (u, u_prime): (Vec<C64>, Vec<C64>) = z.into_iter().map(|z| (z[0], z[1])).unzip();
    ShootResult {
        d: *u_prime.last().expect("grid is non-empty"),
        u,
        u_prime,
    }
}

/// The characteristic function D(μ, τ).
pub fn characteristic(mu: C64, tau: f64, coeffs: &LinearizedCoeffs) -> C64 {
    shoot_evp(mu, tau, coeffs).d
}

/// Largest phase advance |μ|h/a per RK4 step used by the resonance scan.
const MAX_STEP_PHASE: f64 = 0.01;

/// D(μ, τ) with every grid cell split into `sub` RK4 steps; coefficients
/// between grid nodes come from cubic interpolation.
pub fn characteristic_refined(mu: C64, tau: f64, coeffs: &LinearizedCoeffs, sub: usize) -> C64 {
    if sub <= 1 {
        return characteristic(mu, tau, coeffs);
    }
    let z = &coeffs.zero;
    let h = coeffs.grid.h;
    let fine_h = h / sub as f64;
    let at = |x: f64| {
        let f = |v: &[f64]| quad::interpolate(v, h, x);
        evp_matrix(mu, tau, f(&z.a), f(&z.b3), f(&z.b4), f(&z.b5), f(&z.b6))
    };
    let steps = coeffs.grid.m * sub;
    let nodes: Vec<[C64; 4]> = (0..=steps).map(|i| at(i as f64 * fine_h)).collect();
    let mids: Vec<[C64; 4]> = (0..steps).map(|i| at((i as f64 + 0.5) * fine_h)).collect();
    rk4_linear(fine_h, &nodes, &mids, [C64::new(0.0, 0.0), C64::new(1.0, 0.0)])
        .last()
        .expect("grid is non-empty")[1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSearch {
    pub tau0: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Number of random restarts that were needed (0 when the guess converged).
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            max_iter: 100,
            restarts: 8,
            seed: 0,
        }
    }
}

enum RunOutcome {
    Converged(f64, f64, usize),
    Stalled(f64, f64),
    Exhausted,
}

/// Damped Gauss–Newton on |D(i, τ)|² in the single real unknown τ.
fn gauss_newton(tau_start: f64, coeffs: &LinearizedCoeffs, tol: f64, max_iter: usize) -> RunOutcome {
    let fd = 1e-6;
    let mut tau = tau_start;
    let mut r = characteristic(I, tau, coeffs);
    for it in 0..max_iter {
        if r.norm() < 1e-3 * tol {
            return RunOutcome::Converged(tau, r.norm(), it);
        }
        let j = (characteristic(I, tau + fd, coeffs) - characteristic(I, tau - fd, coeffs)) / (2.0 * fd);
        let jj = j.norm_sqr();
        if jj < 1e-28 {
            return RunOutcome::Stalled(tau, r.norm());
        }
        let step = -(j.conj() * r).re / jj;
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-6 {
            let cand = tau + t * step;
            let rc = characteristic(I, cand, coeffs);
            if rc.norm() < r.norm() {
                tau = cand;
                r = rc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (t * step).abs() < 1e-15 * (1.0 + tau.abs()) {
            return if r.norm() < tol {
                RunOutcome::Converged(tau, r.norm(), it + 1)
            } else {
                RunOutcome::Stalled(tau, r.norm())
            };
        }
    }
    if r.norm() < tol {
        RunOutcome::Converged(tau, r.norm(), max_iter)
    } else {
        RunOutcome::Exhausted
    }
}

/// Locates τ₀ with |D(i, τ₀)| < tol, starting at `tau_guess` and then from
/// seeded random starts in [τ_guess − π, τ_guess + π].
pub fn find_tau0(
    tau_guess: f64,
    coeffs: &LinearizedCoeffs,
    tol: f64,
    opts: &SearchOptions,
) -> Result<TauSearch, EigenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_stall: Option<(f64, f64)> = None;
    for attempt in 0..=opts.restarts {
        let start = if attempt == 0 {
            tau_guess
        } else {
            tau_guess + rng.gen_range(-PI..PI)
        };
        match gauss_newton(start, coeffs, tol, opts.max_iter) {
            RunOutcome::Converged(tau0, residual, iterations) if residual < tol => {
                return Ok(TauSearch {
                    tau0,
                    residual,
                    iterations,
                    restarts: attempt,
                })
            }
            RunOutcome::Converged(tau, res, _) | RunOutcome::Stalled(tau, res) => {
                if best_stall.is_none_or(|(_, r)| res < r) {
                    best_stall = Some((tau, res));
                }
            }
            RunOutcome::Exhausted => {}
        }
    }
    match best_stall {
        Some((tau, residual)) => Err(EigenError::ResidualAboveTolerance { tau, residual, tol }),
        None => Err(EigenError::NoConvergence {
            iterations: opts.max_iter,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceEntry {
    pub k: i64,
    pub abs_d: f64,
}

/// |D(ik, τ₀)| for k ∈ {0, ±2, …, ±K_max}, ordered by k. High harmonics are
/// integrated with extra substeps so the per-step phase stays small.
pub fn check_a2(tau0: f64, k_max: usize, coeffs: &LinearizedCoeffs) -> Vec<ResonanceEntry> {
    let k_max = k_max as i64;
    let a_min = coeffs.zero.a.iter().copied().fold(f64::INFINITY, f64::min);
    let ks: Vec<i64> = (-k_max..=k_max).filter(|k| k.abs() != 1).collect();
    ks.par_iter()
        .map(|&k| {
            let phase = (k.unsigned_abs().max(1) as f64) * coeffs.grid.h / a_min;
            let sub = (phase / MAX_STEP_PHASE).ceil().max(1.0) as usize;
            ResonanceEntry {
                k,
                abs_d: characteristic_refined(C64::new(0.0, k as f64), tau0, coeffs, sub).norm(),
            }
        })
        .collect()
}

/// Adjoint eigenfunction u* with u*(0) = 0 and the auxiliary function U*.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointPair {
    pub u_star: Vec<C64>,
    pub u_star_prime: Vec<C64>,
    #[serde(rename = "U_star")]
    pub big_u_star: Vec<C64>,
    /// Residual of the Robin condition at x = 1 for the unit-slope shooting solution.
    pub robin_residual: f64,
}

/// Shoots the adjoint problem
/// (−1 + ib₅⁰ − b₄⁰e^{iτ₀} − b₃⁰)u = (a₀²u)'' − (b₆⁰u)', u(0) = 0, u'(0) = 1,
/// in the variables w = a₀²u, p = (a₀²u)' − b₆⁰u, for which the Robin
/// condition at x = 1 reads p(1) = 0.
pub fn solve_adjoint(tau0: f64, coeffs: &LinearizedCoeffs, tol: f64) -> Result<AdjointPair, EigenError> {
    let rot = C64::from_polar(1.0, tau0);
    let matrix = |a: f64, b3: f64, b4: f64, b5: f64, b6: f64| {
        let q = C64::new(-1.0 - b3, b5) - rot * b4;
        let a2 = a * a;
        [C64::new(b6 / a2, 0.0), C64::new(1.0, 0.0), q / a2, C64::new(0.0, 0.0)]
    };
    let build = |s: &model::CoeffSamples| -> Vec<[C64; 4]> {
        (0..s.len())
            .map(|i| matrix(s.a[i], s.b3[i], s.b4[i], s.b5[i], s.b6[i]))
            .collect()
    };
    let z = &coeffs.zero;
    let a00 = z.a[0] * z.a[0];
    let wp = rk4_linear(
        coeffs.grid.h,
        &build(z),
        &build(&coeffs.zero_mid),
        [C64::new(0.0, 0.0), C64::new(a00, 0.0)],
    );
    let robin_residual = wp.last().expect("grid is non-empty")[1].norm();
    if robin_residual > tol {
        return Err(EigenError::AdjointInconsistent {
            residual: robin_residual,
            tol,
        });
    }
    let n = wp.len();
    let mut u_star = Vec::with_capacity(n);
    let mut u_star_prime = Vec::with_capacity(n);
    for (i, [w, p]) in wp.iter().enumerate() {
        let a2 = z.a[i] * z.a[i];
        let u = w / a2;
        u_star.push(u);
        u_star_prime.push((p + u * z.b6[i] - u * (2.0 * z.a[i] * z.a_x[i])) / a2);
    }
    let big_u_star = compute_big_u(tau0, coeffs, &u_star, &u_star_prime);
    Ok(AdjointPair {
        u_star,
        u_star_prime,
        big_u_star,
        robin_residual,
    })
}

/// U* = (b₆⁰/a₀ − 2a₀')u* − a₀u*' + (1/a₀)∫ₓ¹(b₃⁰ + b₄⁰e^{iτ₀})u*.
pub fn compute_big_u(tau0: f64, coeffs: &LinearizedCoeffs, u_star: &[C64], u_star_prime: &[C64]) -> Vec<C64> {
    let z = &coeffs.zero;
    let rot = C64::from_polar(1.0, tau0);
    let integrand: Vec<C64> = (0..u_star.len())
        .map(|i| u_star[i] * (rot * z.b4[i] + z.b3[i]))
        .collect();
    let tail = quad::tail(&integrand, coeffs.grid.h);
    (0..u_star.len())
        .map(|i| {
            let a = z.a[i];
            u_star[i] * (z.b6[i] / a - 2.0 * z.a_x[i]) - u_star_prime[i] * a + tail[i] / a
        })
        .collect()
}

/// Critical eigenfunction u₀ for μ = i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub mu: C64,
    pub tau: f64,
    pub u0: Vec<C64>,
    pub u0_prime: Vec<C64>,
    /// |D(i, τ)|
    pub residual: f64,
}

/// Shoots the eigenfunction at (i, τ₀) and scales it to u₀(1) = 1.
pub fn eigenpair(tau0: f64, coeffs: &LinearizedCoeffs) -> Result<Eigenpair, EigenError> {
    let shot = shoot_evp(I, tau0, coeffs);
    let end = *shot.u.last().expect("grid is non-empty");
    if end.norm() < 1e-300 {
        return Err(EigenError::DegenerateEigenfunction);
    }
    Ok(Eigenpair {
        mu: I,
        tau: tau0,
        u0: shot.u.iter().map(|u| u / end).collect(),
        u0_prime: shot.u_prime.iter().map(|u| u / end).collect(),
        residual: shot.d.norm(),
    })
}

/// Scales the adjoint to u*(1) = 1.
pub fn unit_adjoint(adj: &AdjointPair) -> Result<AdjointPair, EigenError> {
    let end = *adj.u_star.last().expect("grid is non-empty");
    if end.norm() < 1e-300 {
        return Err(EigenError::DegenerateEigenfunction);
    }
    Ok(scale_adjoint(adj, end.inv()))
}

fn scale_adjoint(adj: &AdjointPair, s: C64) -> AdjointPair {
    AdjointPair {
        u_star: adj.u_star.iter().map(|u| u * s).collect(),
        u_star_prime: adj.u_star_prime.iter().map(|u| u * s).collect(),
        big_u_star: adj.big_u_star.iter().map(|u| u * s).collect(),
        robin_residual: adj.robin_residual,
    }
}

/// σ = ∫(2i − b₅⁰ + τ₀e^{−iτ₀}b₄⁰)u₀ū* and ρ = Im((e^{−iτ₀}/σ)∫b₄⁰u₀ū*).
pub fn sigma_rho_values(eig: &Eigenpair, adj: &AdjointPair, coeffs: &LinearizedCoeffs) -> (C64, f64) {
    let z = &coeffs.zero;
    let tau0 = eig.tau;
    let rot = C64::from_polar(1.0, -tau0);
    let n = eig.u0.len();
    let s: Vec<C64> = (0..n)
        .map(|i| (C64::new(-z.b5[i], 2.0) + rot * (tau0 * z.b4[i])) * eig.u0[i] * adj.u_star[i].conj())
        .collect();
    let r: Vec<C64> = (0..n)
        .map(|i| eig.u0[i] * adj.u_star[i].conj() * z.b4[i])
        .collect();
    let sigma = quad::integrate(&s, coeffs.grid.h);
    let rho = (rot / sigma * quad::integrate(&r, coeffs.grid.h)).im;
    (sigma, rho)
}

/// Like [`sigma_rho_values`] but fails when σ or ρ vanish.
pub fn compute_sigma_rho(
    eig: &Eigenpair,
    adj: &AdjointPair,
    coeffs: &LinearizedCoeffs,
    tol: &Tolerances,
) -> Result<(C64, f64), EigenError> {
    let (sigma, rho) = sigma_rho_values(eig, adj, coeffs);
    if sigma.norm() < tol.sigma {
        return Err(EigenError::SigmaZero(sigma.norm()));
    }
    if !rho.is_finite() || rho.abs() < tol.rho {
        return Err(EigenError::RhoZero(rho.abs()));
    }
    Ok((sigma, rho))
}

/// Rescales u* ← u*/σ̄ (and U* with it) so that σ becomes 1; u₀ is unchanged.
pub fn normalize(eig: &Eigenpair, adj: &AdjointPair, sigma: C64) -> (Eigenpair, AdjointPair) {
    (eig.clone(), scale_adjoint(adj, sigma.conj().inv()))
}

/// The normalized critical mode used downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalMode {
    pub eigenpair: Eigenpair,
    pub adjoint: AdjointPair,
    pub sigma_raw: C64,
    pub rho: f64,
}

/// u₀, u* and (σ, ρ) at a known τ₀, normalized so that σ = 1.
pub fn critical_mode(tau0: f64, coeffs: &LinearizedCoeffs, tol: &Tolerances) -> Result<CriticalMode, EigenError> {
    let eig = eigenpair(tau0, coeffs)?;
    let adj = unit_adjoint(&solve_adjoint(tau0, coeffs, tol.eig)?)?;
    let (sigma_raw, rho) = compute_sigma_rho(&eig, &adj, coeffs, tol)?;
    let (eigenpair, adjoint) = normalize(&eig, &adj, sigma_raw);
    Ok(CriticalMode {
        eigenpair,
        adjoint,
        sigma_raw,
        rho,
    })
}

/// Newton iteration for a root μ of D(·, τ) near `mu_guess`.
pub fn find_eigenvalue(mu_guess: C64, tau: f64, coeffs: &LinearizedCoeffs, tol: f64) -> Option<C64> {
    let mut mu = mu_guess;
    for _ in 0..50 {
        let d = characteristic(mu, tau, coeffs);
        if d.norm() < tol {
            return Some(mu);
        }
        let h = 1e-6;
        let dd = (characteristic(mu + h, tau, coeffs) - characteristic(mu - h, tau, coeffs)) / (2.0 * h);
        if dd.norm() == 0.0 {
            return None;
        }
        mu -= d / dd;
    }
    (characteristic(mu, tau, coeffs).norm() < tol).then_some(mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Flags {
    pub a1: bool,
    pub a2: bool,
    pub sigma: bool,
    pub rho: bool,
    pub fredholm: bool,
    pub adjoint: bool,
    /// Nonresonance over every checked k, ignoring symmetry.
    pub a2_strict: bool,
    /// Grid M and 2M agree to the Richardson tolerance.
    pub high_confidence: bool,
}

impl Flags {
    /// All hypotheses hold. Confidence is reported separately.
    pub fn passed(&self) -> bool {
        self.a1 && self.a2 && self.sigma && self.rho && self.fredholm && self.adjoint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub m: usize,
    pub k_max: usize,
    pub tau_guess: f64,
    pub tol: Tolerances,
    pub search: SearchOptions,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            m: 256,
            k_max: 50,
            tau_guess: 1.0,
            tol: Tolerances::default(),
            search: SearchOptions::default(),
        }
    }
}

/// Everything needed downstream about the Hopf point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfCertificate {
    pub tau0: f64,
    pub grid_m: usize,
    pub search: TauSearch,
    pub eigenpair: Eigenpair,
    pub adjoint: AdjointPair,
    /// σ after normalization.
    pub sigma: C64,
    /// σ for u₀(1) = u*(1) = 1.
    pub sigma_raw: C64,
    pub rho: f64,
    pub fredholm: f64,
    pub a2_scan: Vec<ResonanceEntry>,
    pub a2_min: ResonanceEntry,
    /// b is odd in u, so only odd harmonics enter the branch and (A2) is
    /// checked for odd k.
    pub odd_symmetry: bool,
    pub richardson: Option<Richardson>,
    pub flags: Flags,
    pub seed: u64,
    pub caveats: Vec<String>,
}

/// Differences between the grid-M and grid-2M results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Richardson {
    pub m_fine: usize,
    pub tau0_diff: f64,
    pub sigma_diff: f64,
    pub rho_diff: f64,
}

/// Failure to locate the Hopf point at all; carries the flags for reporting.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{source}")]
pub struct CertifyFailure {
    pub flags: Flags,
    pub fredholm: f64,
    #[source]
    pub source: EigenError,
}

/// Checks (A1), (A2), (A3) and the Fredholm condition.
///
/// Returns `Err` only when no critical delay or no usable critical mode
/// exists. Other failed conditions are reported through `flags`.
pub fn certify(spec: &ProblemSpec, opts: &CertifyOptions) -> Result<HopfCertificate, CertifyFailure> {
    let fail = |flags: Flags, fredholm: f64, source: EigenError| CertifyFailure { flags, fredholm, source };
    let coeffs = model::linearize(spec, 0.0, opts.m).map_err(|e| fail(Flags::default(), 0.0, e.into()))?;
    let tol = &opts.tol;
    let fredholm = model::fredholm_integral(&coeffs);
    let mut flags = Flags {
        fredholm: fredholm.abs() > tol.fredholm,
        ..Flags::default()
    };
    let mut caveats = vec![format!(
        "nonresonance checked only for |k| <= {}; larger k are not certified",
        opts.k_max
    )];

    let search = find_tau0(opts.tau_guess, &coeffs, tol.eig, &opts.search).map_err(|e| fail(flags, fredholm, e))?;
    flags.a1 = true;
    let tau0 = search.tau0;

    let a2_scan = check_a2(tau0, opts.k_max, &coeffs);
    let a2_min = *a2_scan
        .iter()
        .min_by(|a, b| a.abs_d.total_cmp(&b.abs_d))
        .expect("scan includes k = 0");
    let odd_symmetry = spec.is_odd_in_u();
    let resonant: Vec<i64> = a2_scan
        .iter()
        .filter(|e| e.abs_d <= tol.resonance)
        .map(|e| e.k)
        .collect();
    flags.a2_strict = resonant.is_empty();
    flags.a2 = if odd_symmetry {
        resonant.iter().all(|k| k % 2 == 0)
    } else {
        flags.a2_strict
    };
    if !resonant.is_empty() {
        caveats.push(if flags.a2 {
            format!(
                "D(ik, tau0) vanishes for k in {resonant:?}; these even harmonics are excluded because b is odd in u and the branch carries odd harmonics only"
            )
        } else {
            format!("D(ik, tau0) vanishes for k in {resonant:?}")
        });
    }

    let eig = eigenpair(tau0, &coeffs).map_err(|e| fail(flags, fredholm, e))?;
    let adj = solve_adjoint(tau0, &coeffs, tol.eig)
        .and_then(|a| unit_adjoint(&a))
        .map_err(|e| fail(flags, fredholm, e))?;
    flags.adjoint = true;

    let (sigma_raw, rho) = sigma_rho_values(&eig, &adj, &coeffs);
    flags.sigma = sigma_raw.norm() >= tol.sigma;
    flags.rho = rho.is_finite() && rho.abs() >= tol.rho;
    let (eigenpair, adjoint, sigma) = if flags.sigma {
        let (e, a) = normalize(&eig, &adj, sigma_raw);
        let (s, _) = sigma_rho_values(&e, &a, &coeffs);
        (e, a, s)
    } else {
        caveats.push("sigma vanishes; eigenfunctions left unnormalized".into());
        (eig, adj, sigma_raw)
    };

    let richardson = richardson_check(spec, opts, tau0).ok();
    flags.high_confidence = richardson.is_some_and(|r| {
        r.tau0_diff <= tol.richardson && r.sigma_diff <= tol.richardson && r.rho_diff <= tol.richardson
    });
    if !flags.high_confidence {
        caveats.push(format!(
            "LOW-CONFIDENCE: grid M = {} and 2M disagree beyond {:e}",
            opts.m, tol.richardson
        ));
    }

    Ok(HopfCertificate {
        tau0,
        grid_m: opts.m,
        search,
        eigenpair,
        adjoint,
        sigma,
        sigma_raw,
        rho,
        fredholm,
        a2_scan,
        a2_min,
        odd_symmetry,
        richardson,
        flags,
        seed: opts.search.seed,
        caveats,
    })
}

fn richardson_check(spec: &ProblemSpec, opts: &CertifyOptions, tau0: f64) -> Result<Richardson, EigenError> {
    let m_fine = 2 * opts.m;
    let fine = model::linearize(spec, 0.0, m_fine)?;
    let search = find_tau0(tau0, &fine, opts.tol.eig, &opts.search)?;
    let eig = eigenpair(search.tau0, &fine)?;
    let adj = unit_adjoint(&solve_adjoint(search.tau0, &fine, opts.tol.eig)?)?;
    let coarse = model::linearize(spec, 0.0, opts.m)?;
    let eig_c = eigenpair(tau0, &coarse)?;
    let adj_c = unit_adjoint(&solve_adjoint(tau0, &coarse, opts.tol.eig)?)?;
    let (s_f, r_f) = sigma_rho_values(&eig, &adj, &fine);
    let (s_c, r_c) = sigma_rho_values(&eig_c, &adj_c, &coarse);
    Ok(Richardson {
        m_fine,
        tau0_diff: (search.tau0 - tau0).abs(),
        sigma_diff: (s_f - s_c).norm(),
        rho_diff: (r_f - r_c).abs(),
    })
}
