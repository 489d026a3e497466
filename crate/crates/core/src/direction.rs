//! Curvature of the delay along the bifurcating branch.
//!
//! For nonlinearities b = Σ β_j(x, λ, u_j) without quadratic terms the branch
//! satisfies τ(ε) = τ₀ + ½ τ₂ ε² + O(ε³) with
//!
//! ```text
//! τ₂ = −(1/(4ρ)) Re( (1/σ) ∫₀¹ g ū* dx ),
//! g  = (β₁⁰ + β₂⁰e^{−iτ₀} + iβ₃⁰)|u₀|²u₀ + β₄⁰|u₀'|²u₀',
//! ```
//!
//! where ε is the amplitude of the first harmonic in u = ε Re(e^{it}u₀) + O(ε²).

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::eigen::HopfCertificate;
use crate::exprlang::{Env, EvalError, Expr, Var};
use crate::model::{Nonlinearity, ProblemSpec};
use crate::quad::{self, Grid};

/// Largest mixed or quadratic partial derivative treated as zero.
pub const STRUCTURE_TOL: f64 = 1e-10;

pub const STABILITY_CAVEAT: &str = "supercriticality is a formal indicator only: no rigorous proof links the bifurcation direction to orbital stability for hyperbolic problems of this type";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DirectionError {
    #[error("b is not a sum of single-slot terms: d2b/du{i}du{j} = {value:e} at x = {x}")]
    NotSeparable { i: usize, j: usize, x: f64, value: f64 },
    #[error("beta{j} has a quadratic term: d2/du{j}^2 at u = 0 is {value:e} at x = {x}")]
    QuadraticTermPresent { j: usize, x: f64, value: f64 },
    #[error("rho = {0:e} vanishes; the direction is undefined")]
    RhoZero(f64),
    #[error("cubic coefficients sampled on M = {cubic} but certificate uses M = {cert}")]
    GridMismatch { cubic: usize, cert: usize },
    #[error("evaluating the nonlinearity: {0}")]
    Eval(#[from] EvalError),
}

/// β_j⁰(x) = ∂³β_j(x, 0, 0)/∂u_j³ on the model grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicCoeffs {
    pub grid_m: usize,
    pub beta: [Vec<f64>; 4],
}

fn single_slot_terms(spec: &ProblemSpec) -> [Expr; 4] {
    match &spec.b {
        Nonlinearity::Separable(betas) => betas.clone(),
        Nonlinearity::Joint(b) => std::array::from_fn(|j| {
            let mut e = b.clone();
            for k in 1..=4 {
                if k != j + 1 {
                    e = e.substitute(Var::u(k), 0.0);
                }
            }
            e
        }),
    }
}

/// Checks that b = Σ β_j(x, λ, u_j) with ∂²β_j(x, 0, 0) = 0 and samples β_j⁰.
pub fn check_structure(spec: &ProblemSpec, m: usize) -> Result<CubicCoeffs, DirectionError> {
    if let Nonlinearity::Joint(b) = &spec.b {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5e9);
        let points: Vec<Env> = (0..128)
            .map(|_| {
                let x = rng.gen_range(0.0..=1.0);
                let u: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                Env::new(x, if rng.gen_bool(0.5) { 0.0 } else { spec.lambda }, u)
            })
            .chain((0..=16).map(|i| Env::new(i as f64 / 16.0, 0.0, [0.0; 4])))
            .collect();
        for i in 1..=4 {
            for j in (i + 1)..=4 {
                let mixed = b.diff(Var::u(i), 1).diff(Var::u(j), 1);
                for env in &points {
                    let value = mixed.eval(env)?;
                    if value.abs() > STRUCTURE_TOL {
                        return Err(DirectionError::NotSeparable {
                            i,
                            j,
                            x: env.get(Var::X),
                            value,
                        });
                    }
                }
            }
        }
    }
    let terms = single_slot_terms(spec);
    let grid = Grid::uniform(m);
    let mut beta: [Vec<f64>; 4] = Default::default();
    for (j, term) in terms.iter().enumerate() {
        let var = Var::u(j + 1);
        let second = term.diff(var, 2);
        let third = term.diff(var, 3);
        let mut column = Vec::with_capacity(grid.len());
        for &x in &grid.x {
            let env = Env::new(x, 0.0, [0.0; 4]);
            let q = second.eval(&env)?;
            if q.abs() > STRUCTURE_TOL {
                return Err(DirectionError::QuadraticTermPresent { j: j + 1, x, value: q });
            }
            column.push(third.eval(&env)?);
        }
        beta[j] = column;
    }
    Ok(CubicCoeffs { grid_m: m, beta })
}

/// Result of the direction formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    /// τ₂ = d²τ/dε² at ε = 0.
    pub tau_curvature: f64,
    /// (1/σ)∫ g ū*
    pub projection: C64,
    /// ρ·τ₂; positive means supercritical.
    pub indicator: f64,
    pub supercritical: bool,
    pub caveat: String,
}

/// Critical-mode data entering the direction formula.
#[derive(Debug, Clone, Copy)]
pub struct ModeData<'a> {
    pub tau0: f64,
    pub sigma: C64,
    pub rho: f64,
    pub u0: &'a [C64],
    pub u0_prime: &'a [C64],
    pub u_star: &'a [C64],
    pub h: f64,
}

/// Evaluates the direction formula for arbitrary (not necessarily normalized) mode data.
pub fn direction_from_mode(mode: &ModeData, beta: &[Vec<f64>; 4]) -> Result<Direction, DirectionError> {
    if !mode.rho.is_finite() || mode.rho == 0.0 {
        return Err(DirectionError::RhoZero(mode.rho));
    }
    let rot = C64::from_polar(1.0, -mode.tau0);
    let g: Vec<C64> = (0..mode.u0.len())
        .map(|i| {
            let u = mode.u0[i];
            let up = mode.u0_prime[i];
            let w = rot * beta[1][i] + C64::new(beta[0][i], beta[2][i]);
            (w * u * u.norm_sqr() + up * (beta[3][i] * up.norm_sqr())) * mode.u_star[i].conj()
        })
        .collect();
    let projection = quad::integrate(&g, mode.h) / mode.sigma;
    let tau_curvature = -projection.re / (4.0 * mode.rho);
    let indicator = mode.rho * tau_curvature;
    Ok(Direction {
        tau_curvature,
        projection,
        indicator,
        supercritical: indicator > 0.0,
        caveat: STABILITY_CAVEAT.to_string(),
    })
}

/// Direction of the bifurcation for a certified Hopf point.
pub fn compute_direction(cert: &HopfCertificate, cubic: &CubicCoeffs) -> Result<Direction, DirectionError> {
    if cubic.grid_m != cert.grid_m {
        return Err(DirectionError::GridMismatch {
            cubic: cubic.grid_m,
            cert: cert.grid_m,
        });
    }
    let mode = ModeData {
        tau0: cert.tau0,
        sigma: cert.sigma,
        rho: cert.rho,
        u0: &cert.eigenpair.u0,
        u0_prime: &cert.eigenpair.u0_prime,
        u_star: &cert.adjoint.u_star,
        h: 1.0 / cert.grid_m as f64,
    };
    direction_from_mode(&mode, &cubic.beta)
}

/// Closed form for the family a = 2/π, b₃⁰ = b₆⁰ = 0, b₄⁰ = b₅⁰ = c(x),
/// β₄⁰ = 0, where τ₀ = π/2 and u₀ = u* = sin(πx/2) for every c.
///
/// With s = sin(πx/2), I_c = ∫c s², S = ∫(2 − (π/2)c)s², P_j = ∫β_j⁰ s⁴:
/// σ = −I_c + iS, ρ = I_c²/|σ|² and τ₂ = (I_c P₁ − S(P₃ − P₂)) / (4|σ|²ρ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineFamily {
    pub sigma: C64,
    pub rho: f64,
    pub tau_curvature: f64,
}

pub fn sine_family_direction(c: &[f64], beta1: &[f64], beta2: &[f64], beta3: &[f64], h: f64) -> SineFamily {
    let n = c.len();
    let s2: Vec<f64> = (0..n).map(|i| (PI * i as f64 * h / 2.0).sin().powi(2)).collect();
    let int = |f: &dyn Fn(usize) -> f64| quad::integrate(&(0..n).map(f).collect::<Vec<_>>(), h);
    let ic = int(&|i| c[i] * s2[i]);
    let s = int(&|i| (2.0 - PI / 2.0 * c[i]) * s2[i]);
    let p1 = int(&|i| beta1[i] * s2[i] * s2[i]);
    let p2 = int(&|i| beta2[i] * s2[i] * s2[i]);
    let p3 = int(&|i| beta3[i] * s2[i] * s2[i]);
    let sigma = C64::new(-ic, s);
    let rho = ic * ic / sigma.norm_sqr();
    SineFamily {
        sigma,
        rho,
        tau_curvature: (ic * p1 - s * (p3 - p2)) / (4.0 * sigma.norm_sqr() * rho),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{certify, CertifyOptions};
    use crate::exprlang::parse;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn joint(b: &str) -> ProblemSpec {
        ProblemSpec::new(parse("2/pi").unwrap(), Nonlinearity::Joint(parse(b).unwrap()), 0.0).unwrap()
    }

    fn cert_for(b: &str) -> HopfCertificate {
        let opts = CertifyOptions {
            tau_guess: 1.4,
            ..CertifyOptions::default()
        };
        certify(&joint(b), &opts).unwrap()
    }

    #[test]
    fn structure_of_worked_example() {
        let cubic = check_structure(&joint("u1^3/6 + u2 + u3"), 64).unwrap();
        assert!(cubic.beta[0].iter().all(|&v| (v - 1.0).abs() < 1e-14));
        for j in 1..4 {
            assert!(cubic.beta[j].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn structure_errors() {
        assert!(matches!(
            check_structure(&joint("u1^2"), 64),
            Err(DirectionError::QuadraticTermPresent { j: 1, .. })
        ));
        assert!(matches!(
            check_structure(&joint("u1*u2"), 64),
            Err(DirectionError::NotSeparable { i: 1, j: 2, .. })
        ));
        let separable = ProblemSpec::new(
            parse("1").unwrap(),
            Nonlinearity::Separable(["x*u1^3", "u2", "sin(u3)", "0"].map(|s| parse(s).unwrap())),
            0.0,
        )
        .unwrap();
        let cubic = check_structure(&separable, 32).unwrap();
        for (i, v) in cubic.beta[0].iter().enumerate() {
            assert_relative_eq!(*v, 6.0 * i as f64 / 32.0, epsilon = 1e-13);
        }
        assert!(cubic.beta[2].iter().all(|&v| (v + 1.0).abs() < 1e-14));
    }

    #[test]
    fn worked_example_direction() {
        let cert = cert_for("u1^3/6 + u2 + u3");
        let cubic = check_structure(&joint("u1^3/6 + u2 + u3"), cert.grid_m).unwrap();
        let d = compute_direction(&cert, &cubic).unwrap();
        assert_relative_eq!(d.tau_curvature, 3.0 / 16.0, epsilon = 1e-9);
        assert!(d.supercritical);

        let ones = vec![1.0; 257];
        let zeros = vec![0.0; 257];
        let closed = sine_family_direction(&ones, &ones, &zeros, &zeros, 1.0 / 256.0);
        assert_relative_eq!(closed.tau_curvature, 3.0 / 16.0, epsilon = 1e-9);
        assert!((closed.sigma - C64::new(-0.5, 1.0 - PI / 4.0)).norm() < 1e-12);
    }

    #[test]
    fn damping_cubic_direction() {
        let cert = cert_for("u3^3/6 + u2 + u3");
        let cubic = check_structure(&joint("u3^3/6 + u2 + u3"), cert.grid_m).unwrap();
        let d = compute_direction(&cert, &cubic).unwrap();
        let want = -3.0 / 8.0 * (1.0 - PI / 4.0);
        assert_relative_eq!(d.tau_curvature, want, epsilon = 1e-9);

        let ones = vec![1.0; 257];
        let zeros = vec![0.0; 257];
        let closed = sine_family_direction(&ones, &zeros, &zeros, &ones, 1.0 / 256.0);
        assert_relative_eq!(closed.tau_curvature, want, epsilon = 1e-9);
    }

    #[test]
    fn zero_cubic_terms() {
        let cert = cert_for("u1^3/6 + u2 + u3");
        let cubic = CubicCoeffs {
            grid_m: cert.grid_m,
            beta: std::array::from_fn(|_| vec![0.0; cert.grid_m + 1]),
        };
        assert_eq!(compute_direction(&cert, &cubic).unwrap().tau_curvature, 0.0);
        let wrong = CubicCoeffs {
            grid_m: 64,
            beta: std::array::from_fn(|_| vec![0.0; 65]),
        };
        assert!(matches!(
            compute_direction(&cert, &wrong),
            Err(DirectionError::GridMismatch { .. })
        ));
    }

    fn random_profile(seed: [f64; 3], offset: f64) -> String {
        format!(
            "{} + {}*sin({}*x)",
            offset + seed[0],
            seed[1],
            1.0 + 3.0 * seed[2].abs()
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn general_formula_matches_sine_family(
            c in prop::array::uniform3(-0.4..0.4f64),
            b in prop::array::uniform3(prop::array::uniform3(-1.0..1.0f64)),
        ) {
            let m = 128;
            let c_expr = random_profile(c, 1.0);
            let betas: Vec<String> = b.iter().map(|s| random_profile(*s, 0.0)).collect();
            let text = format!(
                "({c})*(u2 + u3) + ({b1})*u1^3/6 + ({b2})*u2^3/6 + ({b3})*u3^3/6",
                c = c_expr, b1 = betas[0], b2 = betas[1], b3 = betas[2]
            );
            let spec = joint(&text);
            let opts = CertifyOptions { tau_guess: PI / 2.0, m, ..CertifyOptions::default() };
            let cert = certify(&spec, &opts).unwrap();
            prop_assert!((cert.tau0 - PI / 2.0).abs() < 1e-8);
            let cubic = check_structure(&spec, m).unwrap();
            let general = compute_direction(&cert, &cubic).unwrap();

            let grid = Grid::uniform(m);
            let sample = |e: &str| -> Vec<f64> {
                let e = parse(e).unwrap();
                grid.x.iter().map(|&x| e.eval(&Env::new(x, 0.0, [0.0; 4])).unwrap()).collect()
            };
            let closed = sine_family_direction(&sample(&c_expr), &sample(&betas[0]), &sample(&betas[1]), &sample(&betas[2]), grid.h);
            prop_assert!((general.tau_curvature - closed.tau_curvature).abs() <= 1e-8 * (1.0 + closed.tau_curvature.abs()),
                "general {} closed {}", general.tau_curvature, closed.tau_curvature);
            prop_assert!((cert.rho - closed.rho).abs() <= 1e-8 * (1.0 + closed.rho.abs()));
        }

        #[test]
        fn eigenfunction_rescaling(re in -2.0..2.0f64, im in -2.0..2.0f64, phase in 0.0..(2.0 * PI)) {
            prop_assume!(re * re + im * im > 0.01);
            let cert = cert_for("u1^3/6 + u2^3 + u2 + u3 + u3^3 - 0.3*u4^3");
            let cubic = check_structure(&joint("u1^3/6 + u2^3 + u2 + u3 + u3^3 - 0.3*u4^3"), cert.grid_m).unwrap();
            let base = compute_direction(&cert, &cubic).unwrap();
            let run = |gamma: C64| {
                let u0: Vec<C64> = cert.eigenpair.u0.iter().map(|u| u * gamma).collect();
                let u0p: Vec<C64> = cert.eigenpair.u0_prime.iter().map(|u| u * gamma).collect();
                let us: Vec<C64> = cert.adjoint.u_star.iter().map(|u| u / gamma.conj()).collect();
                let mode = ModeData { tau0: cert.tau0, sigma: cert.sigma, rho: cert.rho, u0: &u0, u0_prime: &u0p, u_star: &us, h: 1.0 / cert.grid_m as f64 };
                direction_from_mode(&mode, &cubic.beta).unwrap().tau_curvature
            };
            let unimodular = run(C64::from_polar(1.0, phase));
            prop_assert!((unimodular - base.tau_curvature).abs() <= 1e-10 * (1.0 + base.tau_curvature.abs()));
            let gamma = C64::new(re, im);
            let scaled = run(gamma);
            prop_assert!((scaled - gamma.norm_sqr() * base.tau_curvature).abs() <= 1e-10 * (1.0 + scaled.abs()));
        }
    }
}
