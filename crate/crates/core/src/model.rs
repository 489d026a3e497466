//! Problem definition, linearized coefficients and characteristic kernels.

use thiserror::Error;

use crate::exprlang::{Env, EvalError, Expr, Var};
use crate::quad::{self, Grid};

/// Number of sample points used by the load-time checks on `a` and `b`.
pub const CHECK_SAMPLES: usize = 1024;
/// Largest |b(x,λ,0,0,0,0)| accepted as zero.
pub const REST_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("a(x, lambda) = {value} is not positive at x = {x}, lambda = {lambda}")]
    NonPositiveA { x: f64, lambda: f64, value: f64 },
    #[error("b(x, lambda, 0, 0, 0, 0) = {value} at x = {x}, lambda = {lambda}; zero must be a stationary solution")]
    NonzeroRest { x: f64, lambda: f64, value: f64 },
    #[error("{what} may not depend on `{var}`")]
    ForbiddenVariable { what: String, var: Var },
    #[error("evaluating {what} at x = {x}: {source}")]
    Eval {
        what: String,
        x: f64,
        #[source]
        source: EvalError,
    },
    #[error("grid needs M >= 16, got {0}")]
    GridTooCoarse(usize),
}

/// The nonlinearity, either as one joint expression or as a sum of
/// single-slot terms β_j(x, λ, u_j).
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    Joint(Expr),
    Separable([Expr; 4]),
}

impl Nonlinearity {
    /// The full right-hand side as a single expression.
    pub fn joint(&self) -> Expr {
        match self {
            Nonlinearity::Joint(e) => e.clone(),
            Nonlinearity::Separable(betas) => betas
                .iter()
                .cloned()
                .reduce(|acc, e| acc + e)
                .expect("four terms"),
        }
    }
}

/// Coefficients a(x, λ) and b(x, λ, u1, u2, u3, u4) of the scaled problem
/// together with the parameter value λ.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub a: Expr,
    pub b: Nonlinearity,
    pub lambda: f64,
    pub delay_sign_allowed: bool,
}

fn eval_at(e: &Expr, what: &str, env: &Env) -> Result<f64, ModelError> {
    e.eval(env).map_err(|source| ModelError::Eval {
        what: what.to_string(),
        x: env.get(Var::X),
        source,
    })
}

impl ProblemSpec {
    /// Builds and validates a spec: `a` positive and `b` vanishing at u = 0,
    /// both sampled on [0,1] at the given λ and at λ = 0.
    pub fn new(a: Expr, b: Nonlinearity, lambda: f64) -> Result<Self, ModelError> {
        let spec = ProblemSpec {
            a,
            b,
            lambda,
            delay_sign_allowed: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for var in [Var::U1, Var::U2, Var::U3, Var::U4] {
            if self.a.references(var) {
                return Err(ModelError::ForbiddenVariable {
                    what: "a".into(),
                    var,
                });
            }
        }
        if let Nonlinearity::Separable(betas) = &self.b {
            for (j, beta) in betas.iter().enumerate() {
                for k in 1..=4 {
                    if k != j + 1 && beta.references(Var::u(k)) {
                        return Err(ModelError::ForbiddenVariable {
                            what: format!("beta{}", j + 1),
                            var: Var::u(k),
                        });
                    }
                }
            }
        }
        let b = self.b.joint();
        let lambdas = if self.lambda == 0.0 {
            vec![0.0]
        } else {
            vec![self.lambda, 0.0]
        };
        for &lambda in &lambdas {
            for i in 0..CHECK_SAMPLES {
                let x = i as f64 / (CHECK_SAMPLES - 1) as f64;
                let env = Env::new(x, lambda, [0.0; 4]);
                let a = eval_at(&self.a, "a", &env)?;
                if a <= 0.0 {
                    return Err(ModelError::NonPositiveA { x, lambda, value: a });
                }
                let rest = eval_at(&b, "b", &env)?;
                if rest.abs() > REST_TOL {
                    return Err(ModelError::NonzeroRest { x, lambda, value: rest });
                }
            }
        }
        Ok(())
    }

    /// True if b(x, λ, −u) = −b(x, λ, u) at a fixed set of sample points.
    /// Such problems are equivariant under v(t) ↦ −v(t + π), so the branch
    /// contains odd time harmonics only.
    pub fn is_odd_in_u(&self) -> bool {
        use rand::{Rng, SeedableRng};
        let b = self.b.joint();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x0dd);
        for _ in 0..256 {
            let x = rng.gen_range(0.0..=1.0);
            let lambda = if rng.gen_bool(0.5) { 0.0 } else { self.lambda };
            let u: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let plus = b.eval(&Env::new(x, lambda, u));
            let minus = b.eval(&Env::new(x, lambda, u.map(|v| -v)));
            match (plus, minus) {
                (Ok(p), Ok(m)) if (p + m).abs() <= 1e-12 * (1.0 + p.abs()) => {}
                _ => return false,
            }
        }
        true
    }

    /// ∂_j b at u = 0 as an expression in (x, λ), for j = 3..=6 in the
    /// numbering where slot u_k is argument k + 2.
    pub fn linear_coefficient(&self, j: usize) -> Expr {
        assert!((3..=6).contains(&j), "linear coefficient index {j} outside 3..=6");
        let mut d = self.b.joint().diff(Var::u(j - 2), 1);
        for k in 1..=4 {
            d = d.substitute(Var::u(k), 0.0);
        }
        d
    }
}

/// a, ∂ₓa and the four linear coefficients sampled at a set of points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoeffSamples {
    pub a: Vec<f64>,
    pub a_x: Vec<f64>,
    pub b3: Vec<f64>,
    pub b4: Vec<f64>,
    pub b5: Vec<f64>,
    pub b6: Vec<f64>,
}

impl CoeffSamples {
    fn sample(spec: &ProblemSpec, lambda: f64, points: &[f64]) -> Result<Self, ModelError> {
        let a_x = spec.a.diff(Var::X, 1);
        let bj: Vec<Expr> = (3..=6).map(|j| spec.linear_coefficient(j)).collect();
        let eval_all = |e: &Expr, what: &str| -> Result<Vec<f64>, ModelError> {
            points
                .iter()
                .map(|&x| eval_at(e, what, &Env::new(x, lambda, [0.0; 4])))
                .collect()
        };
        Ok(CoeffSamples {
            a: eval_all(&spec.a, "a")?,
            a_x: eval_all(&a_x, "d/dx a")?,
            b3: eval_all(&bj[0], "b3")?,
            b4: eval_all(&bj[1], "b4")?,
            b5: eval_all(&bj[2], "b5")?,
            b6: eval_all(&bj[3], "b6")?,
        })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Linearization of the problem on a uniform grid.
///
/// `at` holds the coefficients at the working λ and `zero` at λ = 0, where
/// the Hopf point lives. `zero_mid` samples λ = 0 at cell midpoints for the
/// fourth-order shooting integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedCoeffs {
    pub grid: Grid,
    pub lambda: f64,
    pub at: CoeffSamples,
    pub zero: CoeffSamples,
    pub zero_mid: CoeffSamples,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Samples the linearization of `spec` at `lambda` on M + 1 nodes.
pub fn linearize(spec: &ProblemSpec, lambda: f64, m: usize) -> Result<LinearizedCoeffs, ModelError> {
    if m < 16 {
        return Err(ModelError::GridTooCoarse(m));
    }
    let grid = Grid::uniform(m);
    let mids: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) * grid.h).collect();
    let at = CoeffSamples::sample(spec, lambda, &grid.x)?;
    let zero = CoeffSamples::sample(spec, 0.0, &grid.x)?;
    let zero_mid = CoeffSamples::sample(spec, 0.0, &mids)?;
    let (b1, b2) = split_coefficients(&at);
    Ok(LinearizedCoeffs {
        grid,
        lambda,
        at,
        zero,
        zero_mid,
        b1,
        b2,
    })
}

/// b₁ = (−∂ₓa + b₅ + b₆/a)/2 and b₂ = (∂ₓa + b₅ − b₆/a)/2.
pub fn split_coefficients(s: &CoeffSamples) -> (Vec<f64>, Vec<f64>) {
    let n = s.len();
    let mut b1 = Vec::with_capacity(n);
    let mut b2 = Vec::with_capacity(n);
    for i in 0..n {
        let r = s.b6[i] / s.a[i];
        b1.push(0.5 * (-s.a_x[i] + s.b5[i] + r));
        b2.push(0.5 * (s.a_x[i] + s.b5[i] - r));
    }
    (b1, b2)
}

/// ∫₀¹ b₅⁰/a₀, nonzero iff the Fredholm condition holds.
pub fn fredholm_integral(coeffs: &LinearizedCoeffs) -> f64 {
    let f: Vec<f64> = coeffs
        .zero
        .b5
        .iter()
        .zip(&coeffs.zero.a)
        .map(|(b, a)| b / a)
        .collect();
    quad::integrate(&f, coeffs.grid.h)
}

/// Characteristic kernels at the working λ:
/// A(x,ξ) = ∫_ξ^x 1/a, c₁(x,ξ) = exp ∫_x^ξ b₁/a, c₂(x,ξ) = exp ∫_ξ^x b₂/a.
#[derive(Debug, Clone, PartialEq)]
pub struct CharKernels {
    pub h: f64,
    /// ∫₀ˣ 1/a
    pub travel: Vec<f64>,
    /// ∫₀ˣ b₁/a
    pub f1: Vec<f64>,
    /// ∫₀ˣ b₂/a
    pub f2: Vec<f64>,
}

pub fn kernels(coeffs: &LinearizedCoeffs) -> CharKernels {
    let a = &coeffs.at.a;
    let h = coeffs.grid.h;
    let inv: Vec<f64> = a.iter().map(|v| 1.0 / v).collect();
    let g1: Vec<f64> = coeffs.b1.iter().zip(a).map(|(b, a)| b / a).collect();
    let g2: Vec<f64> = coeffs.b2.iter().zip(a).map(|(b, a)| b / a).collect();
    CharKernels {
        h,
        travel: quad::cumulative(&inv, h),
        f1: quad::cumulative(&g1, h),
        f2: quad::cumulative(&g2, h),
    }
}

impl CharKernels {
    fn at(&self, table: &[f64], x: f64) -> f64 {
        quad::interpolate(table, self.h, x)
    }

    /// A(x, ξ) = ∫_ξ^x dη / a(η).
    pub fn travel_time(&self, x: f64, xi: f64) -> f64 {
        self.at(&self.travel, x) - self.at(&self.travel, xi)
    }

    pub fn c1(&self, x: f64, xi: f64) -> f64 {
        (self.at(&self.f1, xi) - self.at(&self.f1, x)).exp()
    }

    pub fn c2(&self, x: f64, xi: f64) -> f64 {
        (self.at(&self.f2, x) - self.at(&self.f2, xi)).exp()
    }

    /// Node-indexed versions, without interpolation.
    pub fn travel_time_nodes(&self, i: usize, j: usize) -> f64 {
        self.travel[i] - self.travel[j]
    }

    pub fn c1_nodes(&self, i: usize, j: usize) -> f64 {
        (self.f1[j] - self.f1[i]).exp()
    }

    pub fn c2_nodes(&self, i: usize, j: usize) -> f64 {
        (self.f2[i] - self.f2[j]).exp()
    }
}
