//! Solution families of the fundamental equation of information
//!
//! `f(x) + g(g_w(e-x) y) = h(y) + k(g̃_w(e-y) x)` on `D₀`,
//!
//! and the scalar equation `F(x) + G(y/(1-x)) = H(y) + K(x/(1-y))`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jordan::{self, Algebra, Element, Region};
use crate::log_cauchy::{self, parse_reals, split_top_level, LogCauchyFn};
use crate::mult::{AlgorithmKind, MultAlgorithm};
use crate::sampler::Sampler;

/// A real function on `D`. Must be side-effect free.
pub type DomainFn = Arc<dyn Fn(&Element) -> Result<f64> + Send + Sync>;

/// Tolerance of the construction-time logarithmicity check.
pub const CONSTRUCTION_WLOG_TOL: f64 = 1e-8;
const CONSTRUCTION_SAMPLES: usize = 24;
const CONSTRUCTION_SEED: u64 = 0x5eed_1060;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    SynthesizedTheorem,
    SynthesizedCor1,
    SynthesizedCor3,
    SynthesizedMixed,
    Opaque,
}

/// `(h₁, h₂, h₃, C₁..C₄)` of a synthesized quadruple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Components {
    pub h1: LogCauchyFn,
    pub h2: LogCauchyFn,
    pub h3: LogCauchyFn,
    pub c: [f64; 4],
}

impl Components {
    pub fn constraint_defect(&self) -> f64 {
        constraint_defect(&self.c)
    }
}

pub fn constraint_defect(c: &[f64; 4]) -> f64 {
    (c[0] + c[1] - c[2] - c[3]).abs()
}

#[derive(Clone)]
pub struct SolutionQuadruple {
    f: DomainFn,
    g: DomainFn,
    h: DomainFn,
    k: DomainFn,
    w: MultAlgorithm,
    wt: MultAlgorithm,
    provenance: Provenance,
    components: Option<Components>,
}

impl fmt::Debug for SolutionQuadruple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolutionQuadruple")
            .field("w", &self.w.label())
            .field("wt", &self.wt.label())
            .field("provenance", &self.provenance)
            .field("components", &self.components)
            .finish()
    }
}

/// `f, g, h, k` of the general solution for the given components.
fn synthesize(c: &Components, w: &MultAlgorithm, wt: &MultAlgorithm) -> [DomainFn; 4] {
    let alg = w.algebra();
    let e = Element::identity(alg);
    let we = w.w_e().clone();
    let wte = wt.w_e().clone();

    let (h1, h2, h3, cc) = (c.h1.clone(), c.h2.clone(), c.h3.clone(), c.c);
    let e1 = e.clone();
    let f: DomainFn = Arc::new(move |x: &Element| {
        let ex = e1.try_sub(x)?;
        Ok(h1.eval(&ex)? + h2.eval(x)? + h3.eval(&ex)? + cc[0])
    });

    let (h1, h3) = (c.h1.clone(), c.h3.clone());
    let e2 = e.clone();
    let g: DomainFn = Arc::new(move |x: &Element| {
        let wx = we.apply(x)?;
        Ok(h1.eval(&e2.try_sub(&wx)?)? + h3.eval(&wx)? + cc[1])
    });

    let (h1, h2, h3) = (c.h1.clone(), c.h2.clone(), c.h3.clone());
    let e3 = e.clone();
    let h: DomainFn = Arc::new(move |x: &Element| {
        let ex = e3.try_sub(x)?;
        Ok(h1.eval(&ex)? + h2.eval(&ex)? + h3.eval(x)? + cc[2])
    });

    let (h1, h2) = (c.h1.clone(), c.h2.clone());
    let k: DomainFn = Arc::new(move |x: &Element| {
        let wx = wte.apply(x)?;
        Ok(h1.eval(&e.try_sub(&wx)?)? + h2.eval(&wx)? + cc[3])
    });
    [f, g, h, k]
}

fn check_wlog(fun: &LogCauchyFn, w: &MultAlgorithm, name: &str) -> Result<()> {
    let mut s = Sampler::seeded(w.algebra(), CONSTRUCTION_SEED);
    for _ in 0..CONSTRUCTION_SAMPLES {
        let x = s.sample_cone(0.2, 5.0);
        let y = s.sample_cone(0.2, 5.0);
        let scale = 1.0 + fun.eval(&w.w_apply(&x, &y)?)?.abs();
        let r = log_cauchy::wlog_residual(fun, w, &x, &y)?;
        if r.is_nan() || r.abs() > CONSTRUCTION_WLOG_TOL * scale {
            return Err(Error::Construction(format!(
                "{name} = {fun} is not {}-logarithmic (residual {r:e})",
                w.label()
            )));
        }
    }
    Ok(())
}

impl SolutionQuadruple {
    /// General solution built from `h₁` (w- and w̃-logarithmic), `h₂`
    /// (w̃-logarithmic), `h₃` (w-logarithmic) and `C₁+C₂ = C₃+C₄`.
    pub fn build(
        h1: LogCauchyFn,
        h2: LogCauchyFn,
        h3: LogCauchyFn,
        c: [f64; 4],
        w: MultAlgorithm,
        wt: MultAlgorithm,
    ) -> Result<Self> {
        let alg = w.algebra();
        alg.check_same(&wt.algebra())?;
        for h in [&h1, &h2, &h3] {
            alg.check_same(&h.algebra())?;
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Construction("constants must be finite".into()));
        }
        let scale = 1.0 + c.iter().map(|v| v.abs()).sum::<f64>();
        if constraint_defect(&c) > 1e-12 * scale {
            return Err(Error::Construction(format!(
                "constants violate C1 + C2 = C3 + C4 (defect {:e})",
                constraint_defect(&c)
            )));
        }
        check_wlog(&h1, &w, "h1")?;
        check_wlog(&h1, &wt, "h1")?;
        check_wlog(&h2, &wt, "h2")?;
        check_wlog(&h3, &w, "h3")?;
        Ok(Self::from_components_unchecked(
            Components { h1, h2, h3, c },
            w,
            wt,
            Provenance::SynthesizedTheorem,
        ))
    }

    /// Closures for the given components with no logarithmicity or constant
    /// checks; used for reconstructions.
    pub fn from_components_unchecked(
        components: Components,
        w: MultAlgorithm,
        wt: MultAlgorithm,
        provenance: Provenance,
    ) -> Self {
        let [f, g, h, k] = synthesize(&components, &w, &wt);
        SolutionQuadruple {
            f,
            g,
            h,
            k,
            w,
            wt,
            provenance,
            components: Some(components),
        }
    }

    /// `h_i = κ_i log det`, `w = w̃ = w₁`.
    pub fn cor1(algebra: Algebra, kappa: [f64; 3], c: [f64; 4]) -> Result<Self> {
        let w = MultAlgorithm::sqrt_p(algebra);
        let [k1, k2, k3] = kappa.map(|k| LogCauchyFn::det_log(algebra, k));
        let mut q = Self::build(k1, k2, k3, c, w.clone(), w)?;
        q.provenance = Provenance::SynthesizedCor1;
        Ok(q)
    }

    /// `h_i = log Δ_{s_i}`, `w = w̃ = w₂`.
    pub fn cor3(algebra: Algebra, s: [Vec<f64>; 3], c: [f64; 4]) -> Result<Self> {
        let w = MultAlgorithm::cholesky(algebra)?;
        let [s1, s2, s3] = s;
        let mut q = Self::build(
            LogCauchyFn::power_log(algebra, s1)?,
            LogCauchyFn::power_log(algebra, s2)?,
            LogCauchyFn::power_log(algebra, s3)?,
            c,
            w.clone(),
            w,
        )?;
        q.provenance = Provenance::SynthesizedCor3;
        Ok(q)
    }

    /// `w = w₂`, `w̃ = w₁`: `h₁ = κ₁ log det`, `h₂ = κ₂ log det`, `h₃ = log Δ_{s₃}`.
    pub fn mixed(algebra: Algebra, k1: f64, k2: f64, s3: Vec<f64>, c: [f64; 4]) -> Result<Self> {
        let mut q = Self::build(
            LogCauchyFn::det_log(algebra, k1),
            LogCauchyFn::det_log(algebra, k2),
            LogCauchyFn::power_log(algebra, s3)?,
            c,
            MultAlgorithm::cholesky(algebra)?,
            MultAlgorithm::sqrt_p(algebra),
        )?;
        q.provenance = Provenance::SynthesizedMixed;
        Ok(q)
    }

    /// Black-box quadruple; nothing is checked.
    pub fn opaque(
        f: DomainFn,
        g: DomainFn,
        h: DomainFn,
        k: DomainFn,
        w: MultAlgorithm,
        wt: MultAlgorithm,
    ) -> Result<Self> {
        w.algebra().check_same(&wt.algebra())?;
        Ok(SolutionQuadruple {
            f,
            g,
            h,
            k,
            w,
            wt,
            provenance: Provenance::Opaque,
            components: None,
        })
    }

    /// Same functions with the components hidden.
    pub fn to_opaque(&self) -> Self {
        SolutionQuadruple {
            provenance: Provenance::Opaque,
            components: None,
            ..self.clone()
        }
    }

    /// Opaque copy with `bump` added to `f`.
    pub fn perturb_f(&self, bump: Arc<dyn Fn(&Element) -> f64 + Send + Sync>) -> Self {
        let f = self.f.clone();
        let f: DomainFn = Arc::new(move |x: &Element| Ok(f(x)? + bump(x)));
        SolutionQuadruple {
            f,
            provenance: Provenance::Opaque,
            components: None,
            ..self.clone()
        }
    }

    /// Adds `(c₁, c₂, c₃, c₄)` with `c₁+c₂ = c₃+c₄` to the four functions.
    pub fn shift_constants(&self, c: [f64; 4]) -> Result<Self> {
        let scale = 1.0 + c.iter().map(|v| v.abs()).sum::<f64>();
        if constraint_defect(&c) > 1e-12 * scale {
            return Err(Error::Construction("shift violates c1 + c2 = c3 + c4".into()));
        }
        let shift = |fun: &DomainFn, v: f64| -> DomainFn {
            let fun = fun.clone();
            Arc::new(move |x: &Element| Ok(fun(x)? + v))
        };
        let components = self.components.clone().map(|mut comp| {
            for (a, b) in comp.c.iter_mut().zip(c) {
                *a += b;
            }
            comp
        });
        Ok(SolutionQuadruple {
            f: shift(&self.f, c[0]),
            g: shift(&self.g, c[1]),
            h: shift(&self.h, c[2]),
            k: shift(&self.k, c[3]),
            components,
            ..self.clone()
        })
    }

    /// `(h, k, f, g)` with `(w̃, w)`: the image under `x ↔ y`.
    pub fn swapped(&self) -> Self {
        let components = self.components.as_ref().map(|c| Components {
            h1: c.h1.clone(),
            h2: c.h3.clone(),
            h3: c.h2.clone(),
            c: [c.c[2], c.c[3], c.c[0], c.c[1]],
        });
        SolutionQuadruple {
            f: self.h.clone(),
            g: self.k.clone(),
            h: self.f.clone(),
            k: self.g.clone(),
            w: self.wt.clone(),
            wt: self.w.clone(),
            provenance: self.provenance,
            components,
        }
    }

    pub fn algebra(&self) -> Algebra {
        self.w.algebra()
    }
    pub fn w(&self) -> &MultAlgorithm {
        &self.w
    }
    pub fn wt(&self) -> &MultAlgorithm {
        &self.wt
    }
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
    pub fn components(&self) -> Option<&Components> {
        self.components.as_ref()
    }

    pub fn f(&self, x: &Element) -> Result<f64> {
        (self.f)(x)
    }
    pub fn g(&self, x: &Element) -> Result<f64> {
        (self.g)(x)
    }
    pub fn h(&self, x: &Element) -> Result<f64> {
        (self.h)(x)
    }
    pub fn k(&self, x: &Element) -> Result<f64> {
        (self.k)(x)
    }
}

/// `true` when `x, y` and `x + y` all lie in `D`.
pub fn in_d0(x: &Element, y: &Element) -> bool {
    match x.try_add(y) {
        Ok(s) => {
            jordan::membership(x, Region::D)
                && jordan::membership(y, Region::D)
                && jordan::membership(&s, Region::D)
        }
        Err(_) => false,
    }
}

/// The two arguments `g_w(e-x) y` and `g̃_w(e-y) x` of `g` and `k`.
pub fn inner_arguments(q: &SolutionQuadruple, x: &Element, y: &Element) -> Result<(Element, Element)> {
    Ok((
        q.w.gw_apply(&x.complement(), y)?,
        q.wt.gw_apply(&y.complement(), x)?,
    ))
}

/// `f(x) + g(g_w(e-x)y) - h(y) - k(g̃_w(e-y)x)` for `(x, y) ∈ D₀`.
pub fn fei_residual(q: &SolutionQuadruple, x: &Element, y: &Element) -> Result<f64> {
    if !in_d0(x, y) {
        return Err(Error::Domain("(x, y) is not in D0".into()));
    }
    let (u, v) = inner_arguments(q, x, y)?;
    Ok(q.f(x)? + q.g(&u)? - q.h(y)? - q.k(&v)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub worst_pair: Option<(Element, Element)>,
    pub samples: usize,
    pub seed: u64,
    /// Signed residual per sample, in sample order.
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl ResidualReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_abs <= tol
    }
}

/// Evaluates `residual` on every pair (in parallel, deterministic order).
pub fn sweep<F>(pairs: &[(Element, Element)], seed: u64, residual: F) -> Result<ResidualReport>
where
    F: Fn(&Element, &Element) -> Result<f64> + Sync,
{
    let residuals = pairs
        .par_iter()
        .map(|(x, y)| residual(x, y))
        .collect::<Result<Vec<f64>>>()?;
    let mut worst = None;
    let mut max_abs: f64 = 0.0;
    for (i, r) in residuals.iter().enumerate() {
        // NaN counts as the worst possible residual
        let a = if r.is_nan() { f64::INFINITY } else { r.abs() };
        if worst.is_none() || a > max_abs {
            max_abs = a;
            worst = Some(i);
        }
    }
    let mean_abs = if residuals.is_empty() {
        0.0
    } else {
        residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64
    };
    Ok(ResidualReport {
        max_abs,
        mean_abs,
        worst_pair: worst.map(|i| pairs[i].clone()),
        samples: pairs.len(),
        seed,
        residuals,
    })
}

/// [`fei_residual`] over the given `D₀` pairs.
pub fn fei_sweep(q: &SolutionQuadruple, pairs: &[(Element, Element)], seed: u64) -> Result<ResidualReport> {
    sweep(pairs, seed, |x, y| fei_residual(q, x, y))
}

/// The scalar family `F, G, H, K` with `H_i = κ_i log`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaksaQuadruple {
    pub kappa: [f64; 3],
    pub c: [f64; 4],
}

fn ln1m(x: f64) -> f64 {
    (-x).ln_1p()
}

impl MaksaQuadruple {
    pub fn new(kappa: [f64; 3], c: [f64; 4]) -> Result<Self> {
        let scale = 1.0 + c.iter().map(|v| v.abs()).sum::<f64>();
        if constraint_defect(&c) > 1e-12 * scale {
            return Err(Error::Construction("constants violate C1 + C2 = C3 + C4".into()));
        }
        Ok(MaksaQuadruple { kappa, c })
    }

    /// No constant check; for negative controls.
    pub fn new_unchecked(kappa: [f64; 3], c: [f64; 4]) -> Self {
        MaksaQuadruple { kappa, c }
    }

    pub fn f(&self, x: f64) -> f64 {
        let [k1, k2, k3] = self.kappa;
        (k1 + k3) * ln1m(x) + k2 * x.ln() + self.c[0]
    }
    pub fn g(&self, x: f64) -> f64 {
        let [k1, _, k3] = self.kappa;
        k1 * ln1m(x) + k3 * x.ln() + self.c[1]
    }
    pub fn h(&self, x: f64) -> f64 {
        let [k1, k2, k3] = self.kappa;
        (k1 + k2) * ln1m(x) + k3 * x.ln() + self.c[2]
    }
    pub fn k(&self, x: f64) -> f64 {
        let [k1, k2, _] = self.kappa;
        k1 * ln1m(x) + k2 * x.ln() + self.c[3]
    }

    /// `F(x) + G(y/(1-x)) - H(y) - K(x/(1-y))`.
    pub fn residual(&self, x: f64, y: f64) -> Result<f64> {
        if !(x > 0.0 && y > 0.0 && x + y < 1.0) {
            return Err(Error::Domain(format!("({x}, {y}) is not in D0")));
        }
        Ok(self.f(x) + self.g(y / (1.0 - x)) - self.h(y) - self.k(x / (1.0 - y)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarResidualReport {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub worst_point: Option<(f64, f64)>,
    pub samples: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

pub fn maksa_sweep(q: &MaksaQuadruple, grid: &[(f64, f64)]) -> Result<ScalarResidualReport> {
    let residuals = grid
        .iter()
        .map(|&(x, y)| q.residual(x, y))
        .collect::<Result<Vec<f64>>>()?;
    let mut worst = None;
    let mut max_abs: f64 = 0.0;
    for (i, r) in residuals.iter().enumerate() {
        if worst.is_none() || r.abs() > max_abs {
            max_abs = r.abs();
            worst = Some(grid[i]);
        }
    }
    let mean_abs = if residuals.is_empty() {
        0.0
    } else {
        residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64
    };
    Ok(ScalarResidualReport {
        max_abs,
        mean_abs,
        worst_point: worst,
        samples: grid.len(),
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReductionReport {
    pub matrix_residual: f64,
    pub componentwise_residual: f64,
    pub difference: f64,
}

fn is_plain_sqrt_p(w: &MultAlgorithm) -> bool {
    matches!(w.kind(), AlgorithmKind::SqrtP)
}

/// Compares the matrix residual at `(u diag(x) uᵀ, u diag(y) uᵀ)` with the
/// component-wise residual of `f_u(v) = f(u diag(v) uᵀ)`.
pub fn reduction_residual(q: &SolutionQuadruple, u: &DMatrix<f64>, x: &[f64], y: &[f64]) -> Result<ReductionReport> {
    let Some(r) = q.algebra().matrix_order() else {
        return Err(Error::Unsupported("reduction needs the symmetric algebra".into()));
    };
    if !is_plain_sqrt_p(&q.w) || !is_plain_sqrt_p(&q.wt) {
        return Err(Error::Unsupported("reduction needs w = w~ = w1".into()));
    }
    if u.nrows() != r || u.ncols() != r || x.len() != r || y.len() != r {
        return Err(Error::Domain("dimension mismatch in reduction".into()));
    }
    let orth = (u.transpose() * u - DMatrix::identity(r, r)).amax();
    if orth > 1e-10 {
        return Err(Error::Domain(format!("u is not orthogonal (defect {orth:e})")));
    }
    if x.iter().zip(y).any(|(&a, &b)| !(a > 0.0 && b > 0.0 && a + b < 1.0)) {
        return Err(Error::Domain("(x, y) is not in the product D0".into()));
    }
    let lift = |v: &[f64]| -> Result<Element> {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v));
        Element::from_matrix(&(u * d * u.transpose()))
    };
    let matrix_residual = fei_residual(q, &lift(x)?, &lift(y)?)?;

    let gx: Vec<f64> = y.iter().zip(x).map(|(b, a)| b / (1.0 - a)).collect();
    let ky: Vec<f64> = x.iter().zip(y).map(|(a, b)| a / (1.0 - b)).collect();
    let componentwise_residual = q.f(&lift(x)?)? + q.g(&lift(&gx)?)? - q.h(&lift(y)?)? - q.k(&lift(&ky)?)?;
    Ok(ReductionReport {
        matrix_residual,
        componentwise_residual,
        difference: (matrix_residual - componentwise_residual).abs(),
    })
}

/// Parsed family specification.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilySpec {
    Theorem {
        h1: String,
        h2: String,
        h3: String,
        c: [f64; 4],
    },
    Cor1 { kappa: [f64; 3], c: [f64; 4] },
    Cor3 { s: [Vec<f64>; 3], c: [f64; 4] },
    Mixed { k1: f64, k2: f64, s3: Vec<f64>, c: [f64; 4] },
    Maksa { kappa: [f64; 3], c: [f64; 4] },
}

fn four(v: Vec<f64>) -> Result<[f64; 4]> {
    v.try_into()
        .map_err(|v: Vec<f64>| Error::Parse(format!("expected 4 constants, got {}", v.len())))
}

fn three(v: Vec<f64>) -> Result<[f64; 3]> {
    v.try_into()
        .map_err(|v: Vec<f64>| Error::Parse(format!("expected 3 values, got {}", v.len())))
}

impl FamilySpec {
    /// Parses
    /// `theorem:h1=<fn>,h2=<fn>,h3=<fn>,C=<c1,c2,c3,c4>`, `cor1:<κ1,κ2,κ3>`,
    /// `cor3:<s1;s2;s3>`, `mixed:<κ1,κ2;s3>` or `maksa:<κ1,κ2,κ3>`.
    /// The last four accept an optional `@<c1,c2,c3,c4>` suffix (default 0).
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (head, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("family spec `{spec}` missing ':'")))?;
        if head == "theorem" {
            return Self::parse_theorem(rest);
        }
        let (body, c) = match rest.split_once('@') {
            Some((b, c)) => (b, four(parse_reals(c)?)?),
            None => (rest, [0.0; 4]),
        };
        match head {
            "cor1" => Ok(FamilySpec::Cor1 { kappa: three(parse_reals(body)?)?, c }),
            "maksa" => Ok(FamilySpec::Maksa { kappa: three(parse_reals(body)?)?, c }),
            "cor3" => {
                let parts = body.split(';').map(parse_reals).collect::<Result<Vec<_>>>()?;
                let s: [Vec<f64>; 3] = parts
                    .try_into()
                    .map_err(|_| Error::Parse("cor3 needs three power vectors".into()))?;
                Ok(FamilySpec::Cor3 { s, c })
            }
            "mixed" => {
                let (ks, s3) = body
                    .split_once(';')
                    .ok_or_else(|| Error::Parse("mixed spec is `k1,k2;s3`".into()))?;
                let ks = parse_reals(ks)?;
                if ks.len() != 2 {
                    return Err(Error::Parse("mixed spec needs two det exponents".into()));
                }
                Ok(FamilySpec::Mixed {
                    k1: ks[0],
                    k2: ks[1],
                    s3: parse_reals(s3)?,
                    c,
                })
            }
            other => Err(Error::Parse(format!("unknown family `{other}`"))),
        }
    }

    fn parse_theorem(rest: &str) -> Result<Self> {
        // items without '=' continue the previous value (`powerlog:2,1`, `C=1,2,0,3`)
        let mut entries: Vec<(String, String)> = Vec::new();
        for item in split_top_level(rest, ',') {
            match (item.split_once('='), entries.last_mut()) {
                (Some((key, value)), _) => entries.push((key.trim().to_string(), value.to_string())),
                (None, Some((_, value))) => {
                    value.push(',');
                    value.push_str(item);
                }
                (None, None) => return Err(Error::Parse(format!("theorem item `{item}` missing '='"))),
            }
        }
        let mut fns: [Option<String>; 3] = [None, None, None];
        let mut c = None;
        for (key, value) in entries {
            match key.as_str() {
                "h1" => fns[0] = Some(value),
                "h2" => fns[1] = Some(value),
                "h3" => fns[2] = Some(value),
                "C" => c = Some(four(parse_reals(&value)?)?),
                other => return Err(Error::Parse(format!("unknown theorem key `{other}`"))),
            }
        }
        let [h1, h2, h3] = fns;
        let missing = |n: &str| Error::Parse(format!("theorem spec missing {n}"));
        Ok(FamilySpec::Theorem {
            h1: h1.ok_or_else(|| missing("h1"))?,
            h2: h2.ok_or_else(|| missing("h2"))?,
            h3: h3.ok_or_else(|| missing("h3"))?,
            c: c.unwrap_or([0.0; 4]),
        })
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, FamilySpec::Maksa { .. })
    }

    pub fn maksa(&self) -> Option<Result<MaksaQuadruple>> {
        match self {
            FamilySpec::Maksa { kappa, c } => Some(MaksaQuadruple::new(*kappa, *c)),
            _ => None,
        }
    }

    /// Builds the quadruple; `w` and `wt` override the family's algorithms.
    pub fn build(
        &self,
        algebra: Algebra,
        w: Option<MultAlgorithm>,
        wt: Option<MultAlgorithm>,
    ) -> Result<SolutionQuadruple> {
        let mut q = match self {
            FamilySpec::Cor1 { kappa, c } => SolutionQuadruple::cor1(algebra, *kappa, *c)?,
            FamilySpec::Cor3 { s, c } => SolutionQuadruple::cor3(algebra, s.clone(), *c)?,
            FamilySpec::Mixed { k1, k2, s3, c } => {
                SolutionQuadruple::mixed(algebra, *k1, *k2, s3.clone(), *c)?
            }
            FamilySpec::Theorem { h1, h2, h3, c } => {
                let w = w.clone().unwrap_or_else(|| MultAlgorithm::sqrt_p(algebra));
                let wt = wt.clone().unwrap_or_else(|| MultAlgorithm::sqrt_p(algebra));
                let q = SolutionQuadruple::build(
                    LogCauchyFn::parse(h1, algebra)?,
                    LogCauchyFn::parse(h2, algebra)?,
                    LogCauchyFn::parse(h3, algebra)?,
                    *c,
                    w,
                    wt,
                )?;
                return Ok(q);
            }
            FamilySpec::Maksa { .. } => {
                return Err(Error::Unsupported(
                    "the scalar family has no cone quadruple; use the scalar sweep".into(),
                ))
            }
        };
        let overridden = w.as_ref().is_some_and(|a| a != &q.w) || wt.as_ref().is_some_and(|a| a != &q.wt);
        if overridden {
            let comp = q.components.clone().expect("synthesized");
            let prov = q.provenance;
            q = SolutionQuadruple::build(
                comp.h1,
                comp.h2,
                comp.h3,
                comp.c,
                w.unwrap_or_else(|| q.w.clone()),
                wt.unwrap_or_else(|| q.wt.clone()),
            )?;
            q.provenance = prov;
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{scalar_grid, Sampler};
    use approx::assert_relative_eq;

    fn sym(r: usize) -> Algebra {
        Algebra::sym_real(r).unwrap()
    }

    #[test]
    fn constant_quadruple() {
        let alg = sym(2);
        let z = LogCauchyFn::zero(alg);
        let w = MultAlgorithm::sqrt_p(alg);
        let q = SolutionQuadruple::build(z.clone(), z.clone(), z, [1.0, 2.0, 0.0, 3.0], w.clone(), w).unwrap();
        let pairs = Sampler::seeded(alg, 1).d0_pairs(100);
        assert_eq!(fei_sweep(&q, &pairs, 1).unwrap().max_abs, 0.0);
    }

    #[test]
    fn constraint_and_logarithmicity_are_enforced() {
        let alg = sym(2);
        assert!(matches!(
            SolutionQuadruple::cor1(alg, [1.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]),
            Err(Error::Construction(_))
        ));
        let w1 = MultAlgorithm::sqrt_p(alg);
        let bad = LogCauchyFn::power_log(alg, vec![1.0, 0.0]).unwrap();
        let z = LogCauchyFn::zero(alg);
        assert!(matches!(
            SolutionQuadruple::build(z.clone(), bad, z, [0.0; 4], w1.clone(), w1),
            Err(Error::Construction(_))
        ));
    }

    #[test]
    fn cor1_matches_closed_form() {
        let alg = sym(3);
        let q = SolutionQuadruple::cor1(alg, [1.0, -0.5, 2.0], [1.0, 1.0, 2.0, 0.0]).unwrap();
        let mut s = Sampler::seeded(alg, 2);
        for _ in 0..20 {
            let x = s.sample_d();
            let ld = jordan::log_det(&x).unwrap();
            let ldc = jordan::log_det(&x.complement()).unwrap();
            assert_relative_eq!(q.f(&x).unwrap(), ldc - 0.5 * ld + 2.0 * ldc + 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn families_solve_the_equation() {
        for r in [2, 3] {
            let alg = sym(r);
            let s = |v: &[f64]| v[..r].to_vec();
            let quads = [
                SolutionQuadruple::cor1(alg, [1.0, -0.5, 2.0], [1.0, 1.0, 2.0, 0.0]).unwrap(),
                SolutionQuadruple::cor3(
                    alg,
                    [s(&[1.0, 0.5, -1.0]), s(&[2.0, 1.0, 0.0]), s(&[0.3, -0.7, 1.1])],
                    [0.5, 0.0, 0.25, 0.25],
                )
                .unwrap(),
                SolutionQuadruple::mixed(alg, 0.8, -1.2, s(&[2.0, 1.0, 0.0]), [0.0, 1.0, 1.0, 0.0]).unwrap(),
            ];
            let pairs = Sampler::seeded(alg, 7).d0_pairs(300);
            for q in &quads {
                let rep = fei_sweep(q, &pairs, 7).unwrap();
                assert!(rep.max_abs <= 1e-8, "{q:?}: {}", rep.max_abs);
                assert!(rep.max_abs >= rep.mean_abs);
            }
        }
    }

    #[test]
    fn twisted_algorithms_solve_the_equation() {
        let alg = sym(3);
        let w = MultAlgorithm::parse("ktwist:11", alg).unwrap();
        let wt = MultAlgorithm::parse("ktwist:12:w2", alg).unwrap();
        let q = SolutionQuadruple::build(
            LogCauchyFn::det_log(alg, 0.6),
            LogCauchyFn::det_log(alg, -1.0),
            LogCauchyFn::det_log(alg, 1.5),
            [0.1, 0.2, 0.3, 0.0],
            w,
            wt,
        )
        .unwrap();
        let pairs = Sampler::seeded(alg, 8).d0_pairs(200);
        assert!(fei_sweep(&q, &pairs, 8).unwrap().max_abs <= 1e-8);
    }

    #[test]
    fn lorentz_cor1() {
        let alg = Algebra::lorentz(4).unwrap();
        let q = SolutionQuadruple::cor1(alg, [0.4, 1.0, -2.0], [0.0; 4]).unwrap();
        let pairs = Sampler::seeded(alg, 3).d0_pairs(200);
        assert!(fei_sweep(&q, &pairs, 3).unwrap().max_abs <= 1e-8);
        assert!(SolutionQuadruple::cor3(alg, [vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]], [0.0; 4]).is_err());
    }

    #[test]
    fn perturbation_is_detected() {
        let alg = sym(2);
        let q = SolutionQuadruple::cor1(alg, [1.0, 0.5, 0.5], [0.0; 4]).unwrap();
        let p = q.perturb_f(Arc::new(|x: &Element| 0.1 * x.norm().powi(2)));
        let pairs = Sampler::seeded(alg, 4).d0_pairs(1000);
        assert!(fei_sweep(&p, &pairs, 4).unwrap().max_abs > 0.01);
    }

    #[test]
    fn outside_d0_is_rejected() {
        let alg = sym(2);
        let q = SolutionQuadruple::cor1(alg, [1.0, 1.0, 1.0], [0.0; 4]).unwrap();
        let x = Element::identity(alg).scale(0.6);
        assert!(matches!(fei_residual(&q, &x, &x), Err(Error::Domain(_))));
    }

    #[test]
    fn scalar_restriction_matches_maksa() {
        let alg = sym(3);
        let q = SolutionQuadruple::cor1(alg, [1.0, -0.5, 2.0], [1.0, 1.0, 2.0, 0.0]).unwrap();
        // f(αe) = 3κ log(1-α) + ... : the scalar family with κ scaled by the rank
        let m = MaksaQuadruple::new([3.0, -1.5, 6.0], [1.0, 1.0, 2.0, 0.0]).unwrap();
        let e = Element::identity(alg);
        for (a, b) in scalar_grid(12, 0.05) {
            let r = fei_residual(&q, &e.scale(a), &e.scale(b)).unwrap();
            assert!((r - m.residual(a, b).unwrap()).abs() < 1e-12);
            assert_relative_eq!(q.f(&e.scale(a)).unwrap(), m.f(a), epsilon = 1e-12);
        }
    }

    #[test]
    fn maksa_examples() {
        let grid = scalar_grid(141, 0.01);
        assert!(grid.len() >= 10_000);
        let zero = MaksaQuadruple::new([0.0; 3], [0.0; 4]).unwrap();
        assert_eq!(maksa_sweep(&zero, &grid).unwrap().max_abs, 0.0);
        let q = MaksaQuadruple::new([1.0, -0.5, 2.0], [1.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(maksa_sweep(&q, &grid).unwrap().max_abs <= 1e-12);
        let ent = MaksaQuadruple::new([0.0, 1.0, 1.0], [0.3, 0.0, 0.3, 0.0]).unwrap();
        assert!(maksa_sweep(&ent, &grid).unwrap().max_abs <= 1e-12);
        assert_relative_eq!(ent.f(0.3), 0.3f64.ln() + 0.7f64.ln() + 0.3, epsilon = 1e-15);
        assert!(MaksaQuadruple::new([0.0; 3], [1.0, 0.0, 0.0, 0.0]).is_err());
        let bad = MaksaQuadruple::new_unchecked([1.0, 1.0, 1.0], [1e-3, 0.0, 0.0, 0.0]);
        assert!(maksa_sweep(&bad, &grid).unwrap().max_abs >= 1e-3 * (1.0 - 1e-9));
        assert!(zero.residual(0.6, 0.5).is_err());
    }

    #[test]
    fn reduction_examples() {
        let alg = sym(3);
        let q = SolutionQuadruple::cor1(alg, [1.0, -0.5, 2.0], [1.0, 1.0, 2.0, 0.0]).unwrap();
        let id = DMatrix::identity(3, 3);
        let quarter = [0.25; 3];
        let rep = reduction_residual(&q, &id, &quarter, &quarter).unwrap();
        assert!(rep.matrix_residual.abs() < 1e-13 && rep.componentwise_residual.abs() < 1e-13);

        let mut s = Sampler::seeded(alg, 5);
        for _ in 0..100 {
            let u = s.random_orthogonal(3);
            let x: Vec<f64> = (0..3).map(|_| s.uniform(0.05, 0.6)).collect();
            let y: Vec<f64> = x.iter().map(|a| s.uniform(0.02, 0.95 - a)).collect();
            let rep = reduction_residual(&q, &u, &x, &y).unwrap();
            assert!(rep.difference <= 1e-10);
            assert!(rep.matrix_residual.abs() <= 1e-8);
        }
        let w2q = SolutionQuadruple::cor3(alg, [vec![1.0; 3], vec![1.0; 3], vec![1.0; 3]], [0.0; 4]).unwrap();
        assert!(reduction_residual(&w2q, &id, &quarter, &quarter).is_err());
    }

    #[test]
    fn swap_and_shift_preserve_solutions() {
        let alg = sym(2);
        let q = SolutionQuadruple::mixed(alg, 0.8, -1.2, vec![2.0, 1.0], [0.0, 1.0, 1.0, 0.0]).unwrap();
        let pairs = Sampler::seeded(alg, 6).d0_pairs(200);
        assert!(fei_sweep(&q.swapped(), &pairs, 6).unwrap().max_abs <= 1e-8);
        assert!(fei_sweep(&q.swapped().to_opaque(), &pairs, 6).unwrap().max_abs <= 1e-8);
        let sh = q.shift_constants([1.0, 2.0, 0.5, 2.5]).unwrap();
        assert!(fei_sweep(&sh, &pairs, 6).unwrap().max_abs <= 1e-8);
        assert!(q.shift_constants([1.0, 0.0, 0.0, 0.0]).is_err());
        // swapped components rebuild the swapped functions
        let sw = q.swapped();
        let c = sw.components().unwrap().clone();
        let rebuilt = SolutionQuadruple::build(c.h1, c.h2, c.h3, c.c, sw.w().clone(), sw.wt().clone()).unwrap();
        for (x, _) in &pairs[..20] {
            assert!((rebuilt.g(x).unwrap() - sw.g(x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn family_spec_parsing() {
        assert_eq!(
            FamilySpec::parse("cor1:1,-0.5,2").unwrap(),
            FamilySpec::Cor1 { kappa: [1.0, -0.5, 2.0], c: [0.0; 4] }
        );
        assert_eq!(
            FamilySpec::parse("cor3:1,0;2,1;0,0@1,1,2,0").unwrap(),
            FamilySpec::Cor3 {
                s: [vec![1.0, 0.0], vec![2.0, 1.0], vec![0.0, 0.0]],
                c: [1.0, 1.0, 2.0, 0.0]
            }
        );
        let t = FamilySpec::parse("theorem:h1=detlog:1,h2=sum:[detlog:1;powerlog:1,0],h3=powerlog:2,1,C=1,2,0,3").unwrap();
        assert_eq!(
            t,
            FamilySpec::Theorem {
                h1: "detlog:1".into(),
                h2: "sum:[detlog:1;powerlog:1,0]".into(),
                h3: "powerlog:2,1".into(),
                c: [1.0, 2.0, 0.0, 3.0]
            }
        );
        let alg = sym(2);
        let w2 = MultAlgorithm::cholesky(alg).unwrap();
        assert!(t.build(alg, Some(w2.clone()), Some(w2)).is_ok());
        assert!(t.build(alg, None, None).is_err());
        assert!(FamilySpec::parse("mixed:1,2;2,1").unwrap().build(alg, None, None).is_ok());
        for bad in ["cor1:1,2", "nope:1", "cor3:1;2", "theorem:h1=detlog:1", "cor1"] {
            assert!(FamilySpec::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn domain_closure() {
        for alg in [sym(2), sym(3), Algebra::lorentz(3).unwrap()] {
            let w1 = MultAlgorithm::sqrt_p(alg);
            let mut algs = vec![w1];
            if alg.is_sym_real() {
                algs.push(MultAlgorithm::cholesky(alg).unwrap());
                algs.push(MultAlgorithm::alpha_interp(alg, 0.25).unwrap());
            }
            let pairs = Sampler::seeded(alg, 9).d0_pairs(300);
            for w in &algs {
                for (x, y) in &pairs {
                    let u = w.gw_apply(&x.complement(), y).unwrap();
                    assert!(jordan::membership(&u, Region::D));
                }
            }
        }
    }
}
