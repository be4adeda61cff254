//! Limit extrapolation, log-basis fitting, and recovery of `(h₁, h₂, h₃, C)`
//! from an opaque solution quadruple.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::fei::{self, Components, Provenance, SolutionQuadruple};
use crate::jordan::{self, Algebra, Element};
use crate::log_cauchy::{self, LogCauchyFn};
use crate::mult::MultAlgorithm;
use crate::sampler::{Sampler, SamplerConfig};

/// Number of `α^j` correction terms in the limit model.
pub const DEFAULT_CORRECTION_ORDER: usize = 4;
/// Limit fits with a larger residual are reported as failed.
pub const LIMIT_FIT_THRESHOLD: f64 = 1e-7;
/// Log-basis fits with a larger residual are reported as failed.
pub const FIT_THRESHOLD: f64 = 1e-6;
/// Relative singular-value cutoff of the least-squares designs.
const RANK_TOL: f64 = 1e-11;

/// `α_j = 2^{-j}`, `j = 4..=16`.
pub fn default_alpha_grid() -> Vec<f64> {
    (4..=16).map(|j| 2f64.powi(-j)).collect()
}

/// Least squares with column equilibration; returns `(coefficients, max |residual|)`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let (n, p) = a.shape();
    if n < p || p == 0 {
        return Err(Error::Rank(format!("{n} samples for {p} unknowns")));
    }
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let s = a.column(j).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax.is_nan() || smax <= 0.0 || smin < RANK_TOL * smax {
        return Err(Error::Rank(format!(
            "singular values span [{smin:e}, {smax:e}]"
        )));
    }
    let mut coef = svd
        .solve(b, 0.0)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    for (j, s) in scales.iter().enumerate() {
        coef[j] /= s;
    }
    let residual = (a * &coef - b).amax();
    Ok((coef, residual))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitEstimate {
    /// Extrapolated `lim_{α→0} (v(α) - κ log α)`.
    pub constant_part: f64,
    /// `κ`.
    pub log_slope: f64,
    pub fit_residual: f64,
    pub alpha_grid: Vec<f64>,
}

/// Fits `v(α) ≈ c + κ log α + Σ_{j=1..order} a_j α^j` on the grid.
pub fn limit_extrapolate_with<F>(v: F, grid: &[f64], order: usize) -> Result<LimitEstimate>
where
    F: Fn(f64) -> Result<f64>,
{
    if grid.len() < order + 2 {
        return Err(Error::Rank(format!(
            "limit model of order {order} needs at least {} grid points",
            order + 2
        )));
    }
    if grid.iter().any(|a| a.is_nan() || *a <= 0.0) || grid.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Domain("alpha grid must be positive and strictly decreasing".into()));
    }
    let mut values = Vec::with_capacity(grid.len());
    for &a in grid {
        let val = v(a).map_err(|e| Error::Recovery {
            stage: "limit".into(),
            detail: format!("evaluation failed at alpha = {a:e}: {e}"),
        })?;
        if !val.is_finite() {
            return Err(Error::Recovery {
                stage: "limit".into(),
                detail: format!("non-finite value at alpha = {a:e}"),
            });
        }
        values.push(val);
    }
    let a = DMatrix::from_fn(grid.len(), order + 2, |i, j| match j {
        0 => 1.0,
        1 => grid[i].ln(),
        j => grid[i].powi(j as i32 - 1),
    });
    let (coef, fit_residual) = least_squares(&a, &DVector::from_vec(values))?;
    Ok(LimitEstimate {
        constant_part: coef[0],
        log_slope: coef[1],
        fit_residual,
        alpha_grid: grid.to_vec(),
    })
}

/// [`limit_extrapolate_with`] at the default correction order.
pub fn limit_extrapolate<F>(v: F, grid: &[f64]) -> Result<LimitEstimate>
where
    F: Fn(f64) -> Result<f64>,
{
    limit_extrapolate_with(v, grid, DEFAULT_CORRECTION_ORDER)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBasis {
    /// `log det x`.
    Det,
    /// `log Δ_k(x)`, `k = 1..r`.
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogFit {
    pub form: LogCauchyFn,
    pub intercept: f64,
    pub residual: f64,
}

/// Fits `value ≈ f(x) [+ intercept]` with `f` in the given basis.
pub fn fit_log_basis(
    algebra: Algebra,
    samples: &[(Element, f64)],
    basis: LogBasis,
    with_intercept: bool,
) -> Result<LogFit> {
    for (x, _) in samples {
        algebra.check_same(&x.algebra())?;
    }
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|(x, _)| match basis {
            LogBasis::Det => Ok(vec![jordan::log_det(x)?]),
            LogBasis::Power => jordan::log_leading_minors(x),
        })
        .collect::<Result<_>>()?;
    let p = match basis {
        LogBasis::Det => 1,
        LogBasis::Power => algebra
            .matrix_order()
            .ok_or_else(|| Error::Unsupported("power basis needs the symmetric algebra".into()))?,
    };
    let cols = p + usize::from(with_intercept);
    let a = DMatrix::from_fn(samples.len(), cols, |i, j| if j < p { rows[i][j] } else { 1.0 });
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|(_, v)| *v));
    let (coef, residual) = least_squares(&a, &b)?;
    let intercept = if with_intercept { coef[p] } else { 0.0 };
    let form = match basis {
        LogBasis::Det => LogCauchyFn::det_log(algebra, coef[0]),
        LogBasis::Power => LogCauchyFn::power_log(algebra, exponents_from_increments(&coef.as_slice()[..p]))?,
    };
    Ok(LogFit {
        form,
        intercept,
        residual,
    })
}

/// `s` from `d_k = s_k - s_{k+1}` with `s_{r+1} = 0`.
fn exponents_from_increments(d: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; d.len()];
    let mut acc = 0.0;
    for k in (0..d.len()).rev() {
        acc += d[k];
        s[k] = acc;
    }
    s
}

/// Least-squares `κ` in `value ≈ κ log det x`; returns `(κ, max residual)`.
pub fn fit_det_log(samples: &[(Element, f64)]) -> Result<(f64, f64)> {
    let Some((first, _)) = samples.first() else {
        return Err(Error::Rank("no samples".into()));
    };
    let lds = samples
        .iter()
        .map(|(x, _)| jordan::log_det(x))
        .collect::<Result<Vec<f64>>>()?;
    let lo = lds.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = lds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if samples.len() < 2 || hi - lo <= 1e-12 {
        return Err(Error::Rank("need at least two samples with distinct det".into()));
    }
    let fit = fit_log_basis(first.algebra(), samples, LogBasis::Det, false)?;
    match fit.form.form() {
        log_cauchy::LogForm::DetLog { kappa } => Ok((*kappa, fit.residual)),
        _ => unreachable!("det basis yields a det-log"),
    }
}

/// Least-squares `s` in `value ≈ log Δ_s(x)`; returns `(s, max residual)`.
pub fn fit_power_vector(samples: &[(Element, f64)], r: usize) -> Result<(Vec<f64>, f64)> {
    let alg = Algebra::sym_real(r)?;
    let fit = fit_log_basis(alg, samples, LogBasis::Power, false)?;
    Ok((fit.form.power_vector().expect("symmetric algebra"), fit.residual))
}

/// Basis able to represent functions that are logarithmic for both `w` and `w̃`.
pub fn joint_basis(w: &MultAlgorithm, wt: &MultAlgorithm) -> LogBasis {
    match (log_cauchy::basis_for(w), log_cauchy::basis_for(wt)) {
        (LogBasis::Power, LogBasis::Power) => LogBasis::Power,
        _ => LogBasis::Det,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryConfig {
    pub alpha_grid: Vec<f64>,
    pub correction_order: usize,
    /// Number of sample points per stage.
    pub samples: usize,
    pub seed: u64,
    pub eigen_margin: f64,
    pub limit_threshold: f64,
    pub fit_threshold: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            alpha_grid: default_alpha_grid(),
            correction_order: DEFAULT_CORRECTION_ORDER,
            samples: 24,
            seed: 0,
            eigen_margin: crate::sampler::DEFAULT_EIGEN_MARGIN,
            limit_threshold: LIMIT_FIT_THRESHOLD,
            fit_threshold: FIT_THRESHOLD,
        }
    }
}

impl RecoveryConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn sampler(&self, algebra: Algebra, stream: u64) -> Result<Sampler> {
        Sampler::new(
            SamplerConfig::new(algebra, self.seed.wrapping_mul(0x9e37_79b9).wrapping_add(stream))
                .with_margin(self.eigen_margin),
        )
    }
}

/// Outcome of one recovery stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub value: f64,
    pub threshold: f64,
    pub ok: bool,
}

impl StageReport {
    fn new(stage: &str, value: f64, threshold: f64) -> Self {
        StageReport {
            stage: stage.into(),
            value,
            threshold,
            ok: value <= threshold,
        }
    }
}

/// A component recovered through a limit, then fitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRecovery {
    pub fit: LogCauchyFn,
    pub fit_residual: f64,
    /// Worst limit-model residual over the sample points.
    pub limit_residual: f64,
    /// Worst `|κ|` of the limits (zero for solutions).
    pub max_log_slope: f64,
}

/// Tabulates `x ↦ lim_{α→0} {a(αx) - b(αe)} - (same at x = e)` and fits it.
fn limit_component<A, B>(
    a: A,
    b: B,
    xs: &[Element],
    basis: LogBasis,
    cfg: &RecoveryConfig,
) -> Result<LimitRecovery>
where
    A: Fn(&Element) -> Result<f64> + Sync,
    B: Fn(&Element) -> Result<f64> + Sync,
{
    let alg = xs
        .first()
        .map(|x| x.algebra())
        .ok_or_else(|| Error::Rank("no sample points".into()))?;
    let e = Element::identity(alg);
    let limit = |x: &Element| {
        limit_extrapolate_with(
            |al| Ok(a(&x.scale(al))? - b(&e.scale(al))?),
            &cfg.alpha_grid,
            cfg.correction_order,
        )
    };
    let at_e = limit(&e)?;
    let estimates = xs.par_iter().map(limit).collect::<Result<Vec<_>>>()?;
    let mut limit_residual = at_e.fit_residual;
    let mut max_log_slope = at_e.log_slope.abs();
    let mut table = Vec::with_capacity(xs.len());
    for (x, est) in xs.iter().zip(&estimates) {
        limit_residual = limit_residual.max(est.fit_residual);
        max_log_slope = max_log_slope.max(est.log_slope.abs());
        table.push((x.clone(), est.constant_part - at_e.constant_part));
    }
    let fit = fit_log_basis(alg, &table, basis, false)?;
    Ok(LimitRecovery {
        fit: fit.form,
        fit_residual: fit.residual,
        limit_residual,
        max_log_slope,
    })
}

fn sample_points(cfg: &RecoveryConfig, alg: Algebra, stream: u64) -> Result<Vec<Element>> {
    let mut s = cfg.sampler(alg, stream)?;
    Ok((0..cfg.samples).map(|_| s.sample_d()).collect())
}

/// `ĥ₂(x) = l₁(x) - l₁(e)` with `l₁(x) = lim_{α→0} {f(αx) - k(αe)}`, fitted
/// in the basis of `w̃`.
pub fn recover_h2(q: &SolutionQuadruple, xs: &[Element], cfg: &RecoveryConfig) -> Result<LimitRecovery> {
    limit_component(|x| q.f(x), |x| q.k(x), xs, log_cauchy::basis_for(q.wt()), cfg)
}

/// `ĥ₃(x) = l₃(x) - l₃(e)` with `l₃(x) = lim_{α→0} {h(αx) - g(αe)}`, fitted
/// in the basis of `w`.
pub fn recover_h3(q: &SolutionQuadruple, xs: &[Element], cfg: &RecoveryConfig) -> Result<LimitRecovery> {
    limit_component(|x| q.h(x), |x| q.g(x), xs, log_cauchy::basis_for(q.w()), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveredComponents {
    pub h1_fit: LogCauchyFn,
    pub h2_fit: LogCauchyFn,
    pub h3_fit: LogCauchyFn,
    #[serde(rename = "C")]
    pub c: [f64; 4],
    pub constraint_defect: f64,
    pub reconstruction_residual: f64,
    pub stages: Vec<StageReport>,
    pub alpha_grid: Vec<f64>,
}

/// Reconstruction residuals above this mark a failed recovery.
pub const RECONSTRUCTION_THRESHOLD: f64 = 1e-5;
/// Constant-sum defects above this mark a failed recovery.
pub const CONSTRAINT_THRESHOLD: f64 = 1e-6;

impl RecoveredComponents {
    pub fn succeeded(&self) -> bool {
        self.stages.iter().all(|s| s.ok)
    }

    pub fn failed_stages(&self) -> Vec<&StageReport> {
        self.stages.iter().filter(|s| !s.ok).collect()
    }

    pub fn components(&self) -> Components {
        Components {
            h1: self.h1_fit.clone(),
            h2: self.h2_fit.clone(),
            h3: self.h3_fit.clone(),
            c: self.c,
        }
    }

    /// `{h1: {form, params}, h2, h3, C, residuals, grid}`.
    pub fn report(&self) -> serde_json::Value {
        let residuals: serde_json::Map<String, serde_json::Value> = self
            .stages
            .iter()
            .map(|s| (s.stage.clone(), json!({"value": s.value, "threshold": s.threshold, "ok": s.ok})))
            .collect();
        json!({
            "h1": fn_report(&self.h1_fit),
            "h2": fn_report(&self.h2_fit),
            "h3": fn_report(&self.h3_fit),
            "C": self.c,
            "residuals": residuals,
            "grid": self.alpha_grid,
        })
    }
}

/// `{form, params}` of a log-Cauchy function.
pub fn fn_report(f: &LogCauchyFn) -> serde_json::Value {
    match f.form() {
        log_cauchy::LogForm::DetLog { kappa } => json!({"form": "detlog", "params": {"kappa": kappa}}),
        log_cauchy::LogForm::PowerLog { s } => json!({"form": "powerlog", "params": {"s": s}}),
        log_cauchy::LogForm::Sum { parts } => {
            json!({"form": "sum", "params": parts.iter().map(fn_report).collect::<Vec<_>>()})
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Recovers `(ĥ₁, ĥ₂, ĥ₃, Ĉ)` from the four functions of `q` alone.
///
/// `h₂` and `h₃` come from the limits `l₁`, `l₃`; then
/// `h₁(z) + C₂ = g(w_e⁻¹(e - z)) - h₃(e - z)` on `D`, and `C₁, C₃, C₄` are
/// mean residuals. Stages whose residual exceeds its threshold are flagged
/// in [`RecoveredComponents::stages`]; hard numerical failures are errors.
pub fn recover_components(q: &SolutionQuadruple, cfg: &RecoveryConfig) -> Result<RecoveredComponents> {
    let alg = q.algebra();
    let e = Element::identity(alg);
    let xs = sample_points(cfg, alg, 1)?;
    let mut stages = Vec::new();

    let h2 = recover_h2(q, &xs, cfg)?;
    stages.push(StageReport::new("h2_limit", h2.limit_residual, cfg.limit_threshold));
    stages.push(StageReport::new("h2_fit", h2.fit_residual, cfg.fit_threshold));
    let h3 = recover_h3(q, &xs, cfg)?;
    stages.push(StageReport::new("h3_limit", h3.limit_residual, cfg.limit_threshold));
    stages.push(StageReport::new("h3_fit", h3.fit_residual, cfg.fit_threshold));
    let (h2, h3) = (h2.fit, h3.fit);

    let we_inv = q.w().w_e().inverse()?;
    let zs = sample_points(cfg, alg, 2)?;
    let table = zs
        .iter()
        .map(|z| {
            let ez = z.complement();
            Ok((z.clone(), q.g(&we_inv.apply(&ez)?)? - h3.eval(&ez)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let h1_fit = fit_log_basis(alg, &table, joint_basis(q.w(), q.wt()), true)?;
    stages.push(StageReport::new("h1_fit", h1_fit.residual, cfg.fit_threshold));
    let h1 = h1_fit.form;
    let c2 = h1_fit.intercept;

    let wte = q.wt().w_e();
    let mut r1 = Vec::new();
    let mut r3 = Vec::new();
    let mut r4 = Vec::new();
    for x in &xs {
        let ex = x.complement();
        r1.push(q.f(x)? - h1.eval(&ex)? - h2.eval(x)? - h3.eval(&ex)?);
        r3.push(q.h(x)? - h1.eval(&ex)? - h2.eval(&ex)? - h3.eval(x)?);
        let wx = wte.apply(x)?;
        r4.push(q.k(x)? - h1.eval(&e.try_sub(&wx)?)? - h2.eval(&wx)?);
    }
    let c = [mean(&r1), c2, mean(&r3), mean(&r4)];
    let spread = |r: &[f64], m: f64| r.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    stages.push(StageReport::new(
        "constants",
        spread(&r1, c[0]).max(spread(&r3, c[2])).max(spread(&r4, c[3])),
        cfg.fit_threshold,
    ));
    let constraint_defect = fei::constraint_defect(&c);
    stages.push(StageReport::new("constraint", constraint_defect, CONSTRAINT_THRESHOLD));

    let components = Components { h1, h2, h3, c };
    let rebuilt = SolutionQuadruple::from_components_unchecked(
        components.clone(),
        q.w().clone(),
        q.wt().clone(),
        Provenance::Opaque,
    );
    let fresh = sample_points(cfg, alg, 3)?;
    let mut reconstruction_residual: f64 = 0.0;
    for x in &fresh {
        for (a, b) in [
            (q.f(x)?, rebuilt.f(x)?),
            (q.g(x)?, rebuilt.g(x)?),
            (q.h(x)?, rebuilt.h(x)?),
            (q.k(x)?, rebuilt.k(x)?),
        ] {
            reconstruction_residual = reconstruction_residual.max((a - b).abs());
        }
    }
    stages.push(StageReport::new(
        "reconstruction",
        reconstruction_residual,
        RECONSTRUCTION_THRESHOLD,
    ));

    Ok(RecoveredComponents {
        h1_fit: components.h1,
        h2_fit: components.h2,
        h3_fit: components.h3,
        c,
        constraint_defect,
        reconstruction_residual,
        stages,
        alpha_grid: cfg.alpha_grid.clone(),
    })
}

/// Coefficients `(a, b, c)` of `F(α) ≈ a log(1-α) + b log α + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarLogFit {
    pub log_one_minus: f64,
    pub log: f64,
    pub constant: f64,
    pub residual: f64,
}

/// Fits the scalar restrictions `α ↦ f(αe), g(αe), h(αe), k(αe)`.
pub fn scalar_restriction_fit(q: &SolutionQuadruple, alphas: &[f64]) -> Result<[ScalarLogFit; 4]> {
    let e = Element::identity(q.algebra());
    let a = DMatrix::from_fn(alphas.len(), 3, |i, j| match j {
        0 => (-alphas[i]).ln_1p(),
        1 => alphas[i].ln(),
        _ => 1.0,
    });
    let fit = |fun: &dyn Fn(&Element) -> Result<f64>| -> Result<ScalarLogFit> {
        let b = alphas
            .iter()
            .map(|&al| fun(&e.scale(al)))
            .collect::<Result<Vec<f64>>>()?;
        let (c, residual) = least_squares(&a, &DVector::from_vec(b))?;
        Ok(ScalarLogFit {
            log_one_minus: c[0],
            log: c[1],
            constant: c[2],
            residual,
        })
    };
    Ok([
        fit(&|x| q.f(x))?,
        fit(&|x| q.g(x))?,
        fit(&|x| q.h(x))?,
        fit(&|x| q.k(x))?,
    ])
}

/// Largest disagreement between the scalar fits and the slopes implied by
/// the recovered components.
pub fn scalar_cross_check(rec: &RecoveredComponents, fits: &[ScalarLogFit; 4]) -> f64 {
    let (s1, s2, s3) = (
        rec.h1_fit.scalar_slope(),
        rec.h2_fit.scalar_slope(),
        rec.h3_fit.scalar_slope(),
    );
    let expected = [
        (s1 + s3, s2, rec.c[0]),
        (s1, s3, rec.c[1]),
        (s1 + s2, s3, rec.c[2]),
        (s1, s2, rec.c[3]),
    ];
    fits.iter()
        .zip(expected)
        .map(|(f, (a, b, c))| {
            (f.log_one_minus - a)
                .abs()
                .max((f.log - b).abs())
                .max((f.constant - c).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn sym(r: usize) -> Algebra {
        Algebra::sym_real(r).unwrap()
    }

    #[test]
    fn limit_examples() {
        let grid = default_alpha_grid();
        assert_eq!(grid.len(), 13);
        let est = limit_extrapolate(|a| Ok(3.0 + 2.0 * a.ln()), &grid).unwrap();
        assert_relative_eq!(est.constant_part, 3.0, epsilon = 1e-10);
        assert_relative_eq!(est.log_slope, 2.0, epsilon = 1e-10);
        assert!(est.fit_residual <= 1e-12);

        let est = limit_extrapolate(|a| Ok(5.0 + a), &grid).unwrap();
        assert!((est.constant_part - 5.0).abs() <= 1e-3);
        assert!(est.log_slope.abs() <= 1e-3);

        // the plain model is biased on the same data
        let plain = limit_extrapolate_with(|a| Ok(5.0 + a), &grid, 0).unwrap();
        assert!((plain.constant_part - 5.0).abs() > 1e-3);
    }

    #[test]
    fn limit_errors() {
        let grid = default_alpha_grid();
        let err = limit_extrapolate(|a| Ok(if a < 1e-4 { f64::NAN } else { 1.0 }), &grid).unwrap_err();
        match err {
            Error::Recovery { detail, .. } => assert!(detail.contains("alpha")),
            other => panic!("{other:?}"),
        }
        assert!(limit_extrapolate(|_| Ok(1.0), &[0.1, 0.2, 0.05]).is_err());
        assert!(limit_extrapolate(|_| Ok(1.0), &[0.1, 0.05]).is_err());
    }

    #[test]
    fn cor1_limit_matches_closed_form() {
        let alg = sym(2);
        let q = SolutionQuadruple::cor1(alg, [1.0, 0.7, -2.0], [1.0, 0.5, 0.5, 1.0]).unwrap();
        let x = Element::from_diagonal(&[0.5, 0.8]).unwrap();
        let e = Element::identity(alg);
        let est = limit_extrapolate(|a| Ok(q.f(&x.scale(a))? - q.k(&e.scale(a))?), &default_alpha_grid()).unwrap();
        let expected = 0.7 * jordan::log_det(&x).unwrap() + (1.0 - 1.0);
        assert!((est.constant_part - expected).abs() <= 1e-8);
        assert!(est.log_slope.abs() <= 1e-8);
    }

    fn det_samples(alg: Algebra, f: &LogCauchyFn, n: usize, seed: u64) -> Vec<(Element, f64)> {
        let mut s = Sampler::seeded(alg, seed);
        (0..n)
            .map(|_| {
                let x = s.sample_cone(0.1, 5.0);
                let v = f.eval(&x).unwrap();
                (x, v)
            })
            .collect()
    }

    #[test]
    fn fit_det_log_examples() {
        let alg = sym(3);
        let data = det_samples(alg, &LogCauchyFn::det_log(alg, 3.0), 30, 1);
        let (k, res) = fit_det_log(&data).unwrap();
        assert_relative_eq!(k, 3.0, epsilon = 1e-12);
        assert!(res <= 1e-12);

        let mut s = Sampler::seeded(alg, 2);
        let noisy: Vec<_> = data.iter().map(|(x, v)| (x.clone(), v + 1e-8 * s.uniform(-1.0, 1.0))).collect();
        assert!((fit_det_log(&noisy).unwrap().0 - 3.0).abs() <= 1e-7);

        let alg2 = sym(2);
        let pl = det_samples(alg2, &LogCauchyFn::power_log(alg2, vec![1.0, 0.0]).unwrap(), 30, 3);
        assert!(fit_det_log(&pl).unwrap().1 > 0.01);

        let e = Element::identity(alg);
        let flat = vec![(e.clone(), 0.0), (e.clone(), 0.0)];
        assert!(matches!(fit_det_log(&flat), Err(Error::Rank(_))));
        assert!(matches!(fit_det_log(&data[..1]), Err(Error::Rank(_))));
    }

    #[test]
    fn fit_power_vector_examples() {
        let alg = sym(2);
        let data = det_samples(alg, &LogCauchyFn::power_log(alg, vec![2.0, 1.0]).unwrap(), 20, 4);
        let (s, res) = fit_power_vector(&data, 2).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
        assert!(res <= 1e-12);

        let alg3 = sym(3);
        let data = det_samples(alg3, &LogCauchyFn::det_log(alg3, -0.8), 20, 5);
        let (s, res) = fit_power_vector(&data, 3).unwrap();
        for v in &s {
            assert!((v + 0.8).abs() <= 1e-10);
        }
        assert!(res <= 1e-10);

        let e = Element::identity(alg);
        let degenerate: Vec<_> = (1..5).map(|i| (e.scale(i as f64), 0.0)).collect();
        assert!(matches!(fit_power_vector(&degenerate, 2), Err(Error::Rank(_))));
    }

    #[test]
    fn w1_logarithmic_data_fits_constant_power_vector() {
        // K-invariant w₁-logarithmic data: the power fit collapses to constant s
        let alg = sym(3);
        let data = det_samples(alg, &LogCauchyFn::det_log(alg, 1.25), 40, 6);
        let (s, _) = fit_power_vector(&data, 3).unwrap();
        let spread = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - s.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread <= 1e-8);
    }

    #[test]
    fn recover_h2_examples() {
        let alg = sym(2);
        let cfg = RecoveryConfig::default();
        let q = SolutionQuadruple::cor1(alg, [1.0, 0.7, -0.3], [0.2, 0.3, 0.4, 0.1]).unwrap().to_opaque();
        let xs = sample_points(&cfg, alg, 1).unwrap();
        let rec = recover_h2(&q, &xs, &cfg).unwrap();
        let x = Element::from_diagonal(&[0.5, 0.5]).unwrap();
        assert!((rec.fit.eval(&x).unwrap() - 0.7 * 0.25f64.ln()).abs() <= 1e-6);

        let zero = SolutionQuadruple::cor1(alg, [0.0; 3], [0.0; 4]).unwrap().to_opaque();
        let rec = recover_h2(&zero, &xs, &cfg).unwrap();
        assert!(rec.fit.eval(&x).unwrap().abs() <= 1e-12);

        let q3 = SolutionQuadruple::cor3(alg, [vec![0.5, 0.5], vec![1.0, 0.0], vec![2.0, -1.0]], [0.0; 4])
            .unwrap()
            .to_opaque();
        let rec = recover_h2(&q3, &xs, &cfg).unwrap();
        let s = rec.fit.power_vector().unwrap();
        assert!((s[0] - 1.0).abs() <= 1e-6 && s[1].abs() <= 1e-6, "{s:?}");
    }

    fn assert_close(a: &LogCauchyFn, b: &LogCauchyFn, tol: f64) {
        let (pa, pb) = (a.power_vector().unwrap(), b.power_vector().unwrap());
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() <= tol, "{pa:?} vs {pb:?}");
        }
    }

    #[test]
    fn round_trip_families() {
        let alg = sym(3);
        let quads = [
            SolutionQuadruple::cor1(alg, [1.0, -0.5, 2.0], [1.0, 1.0, 2.0, 0.0]).unwrap(),
            SolutionQuadruple::mixed(alg, 0.4, -0.9, vec![2.0, 1.0, 0.0], [0.5, -1.0, 0.0, -0.5]).unwrap(),
            SolutionQuadruple::cor3(
                alg,
                [vec![1.0, 0.5, -0.5], vec![0.0, 1.0, 2.0], vec![1.5, 0.0, 0.3]],
                [0.0, 1.0, 0.5, 0.5],
            )
            .unwrap(),
        ];
        for q in &quads {
            let rec = recover_components(&q.to_opaque(), &RecoveryConfig::default()).unwrap();
            assert!(rec.succeeded(), "{:?}", rec.failed_stages());
            let truth = q.components().unwrap();
            assert_close(&rec.h1_fit, &truth.h1, 1e-5);
            assert_close(&rec.h2_fit, &truth.h2, 1e-5);
            assert_close(&rec.h3_fit, &truth.h3, 1e-5);
            for (a, b) in rec.c.iter().zip(truth.c) {
                assert!((a - b).abs() <= 1e-5);
            }
            assert!(rec.constraint_defect <= 1e-6);
            assert!(rec.reconstruction_residual <= 1e-5);

            let report = rec.report();
            for key in ["h1", "h2", "h3", "C", "residuals", "grid"] {
                assert!(report.get(key).is_some(), "{key}");
            }
        }
    }

    #[test]
    fn twisted_round_trip() {
        let alg = sym(2);
        let w = MultAlgorithm::parse("ktwist:3", alg).unwrap();
        let wt = MultAlgorithm::sqrt_p(alg);
        let q = SolutionQuadruple::build(
            LogCauchyFn::det_log(alg, 0.5),
            LogCauchyFn::det_log(alg, 1.5),
            LogCauchyFn::det_log(alg, -1.0),
            [0.0, 1.0, 0.25, 0.75],
            w,
            wt,
        )
        .unwrap();
        let rec = recover_components(&q.to_opaque(), &RecoveryConfig::default()).unwrap();
        assert!(rec.succeeded(), "{:?}", rec.failed_stages());
    }

    #[test]
    fn constants_only_quadruple() {
        let alg = sym(2);
        let q = SolutionQuadruple::cor1(alg, [0.0; 3], [1.0, 2.0, 0.0, 3.0]).unwrap();
        let rec = recover_components(&q.to_opaque(), &RecoveryConfig::default()).unwrap();
        assert!(rec.succeeded());
        for f in [&rec.h1_fit, &rec.h2_fit, &rec.h3_fit] {
            assert!(f.scalar_slope().abs() <= 1e-9);
        }
        for (a, b) in rec.c.iter().zip([1.0, 2.0, 0.0, 3.0]) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn non_solution_is_flagged() {
        let alg = sym(2);
        let q = SolutionQuadruple::cor1(alg, [1.0, 0.5, 0.5], [0.0; 4]).unwrap();
        let p = q.perturb_f(Arc::new(|x: &Element| 0.1 * x.norm().powi(2)));
        let rec = recover_components(&p, &RecoveryConfig::default()).unwrap();
        assert!(!rec.succeeded());
    }

    #[test]
    fn recovered_components_are_homogeneous_and_logarithmic() {
        let alg = sym(3);
        let q = SolutionQuadruple::mixed(alg, 0.4, -0.9, vec![2.0, 1.0, 0.0], [0.0; 4]).unwrap();
        let rec = recover_components(&q.to_opaque(), &RecoveryConfig::default()).unwrap();
        let mut s = Sampler::seeded(alg, 77);
        let e = Element::identity(alg);
        for _ in 0..50 {
            let x = s.sample_cone(0.2, 5.0);
            let y = s.sample_cone(0.2, 5.0);
            let beta = s.uniform(0.1, 10.0);
            for h in [&rec.h1_fit, &rec.h2_fit, &rec.h3_fit] {
                let d = h.eval(&x.scale(beta)).unwrap() - h.eval(&x).unwrap() - h.eval(&e.scale(beta)).unwrap();
                assert!(d.abs() <= 1e-6);
            }
            for w in [q.w(), q.wt()] {
                assert!(log_cauchy::wlog_residual(&rec.h1_fit, w, &x, &y).unwrap().abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn scalar_cross_check_agrees() {
        let alg = sym(2);
        let q = SolutionQuadruple::cor3(alg, [vec![1.0, 0.5], vec![0.0, 1.0], vec![1.5, 0.0]], [0.0, 1.0, 0.5, 0.5]).unwrap();
        let rec = recover_components(&q.to_opaque(), &RecoveryConfig::default()).unwrap();
        let alphas: Vec<f64> = (1..40).map(|i| i as f64 / 40.0).collect();
        let fits = scalar_restriction_fit(&q, &alphas).unwrap();
        for f in &fits {
            assert!(f.residual <= 1e-10);
        }
        assert!(scalar_cross_check(&rec, &fits) <= 1e-6);
    }

    #[test]
    fn grid_refinement_converges() {
        let alg = sym(2);
        let q = SolutionQuadruple::cor1(alg, [1.0, 0.7, -0.3], [0.0; 4]).unwrap();
        let x = Element::from_diagonal(&[0.5, 0.8]).unwrap();
        let e = Element::identity(alg);
        let target = 0.7 * jordan::log_det(&x).unwrap();
        let l1 = |z: &Element, grid: &[f64]| {
            limit_extrapolate_with(|a| Ok(q.f(&z.scale(a))? - q.k(&e.scale(a))?), grid, 0)
                .unwrap()
                .constant_part
        };
        let mut errors = Vec::new();
        for shift in 0..4 {
            let grid: Vec<f64> = (4 + shift..=16 + shift).map(|j| 2f64.powi(-j)).collect();
            errors.push((l1(&x, &grid) - l1(&e, &grid) - target).abs());
        }
        assert!(errors.windows(2).all(|p| p[1] < p[0]), "{errors:?}");
    }
}
