//! w-logarithmic Cauchy functions: `f(x) + f(w(e)y) = f(w(x)y)` on `V²`.
//!
//! The continuous building blocks are `κ log det x` (w-logarithmic for every
//! multiplication algorithm) and `log Δ_s(x)` (w-logarithmic for the Cholesky
//! algorithm), plus finite sums of these.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jordan::{self, Algebra, Element, LinearOperator, Region};
use crate::mult::{AlgorithmKind, MultAlgorithm};
use crate::recovery::{self, LogBasis};

/// Defects at or below this count as a pass.
pub const PASS_THRESHOLD: f64 = 1e-8;
/// Defects at or above this count as a genuine violation.
pub const FAIL_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

pub fn classify_defect(defect: f64) -> Verdict {
    if defect <= PASS_THRESHOLD {
        Verdict::Pass
    } else if defect >= FAIL_THRESHOLD || defect.is_nan() {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum LogForm {
    /// `κ log det x`.
    DetLog { kappa: f64 },
    /// `log Δ_s(x)`.
    PowerLog { s: Vec<f64> },
    Sum { parts: Vec<LogCauchyFn> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogCauchyFn {
    algebra: Algebra,
    #[serde(flatten)]
    form: LogForm,
}

impl LogCauchyFn {
    pub fn det_log(algebra: Algebra, kappa: f64) -> Self {
        LogCauchyFn {
            algebra,
            form: LogForm::DetLog { kappa },
        }
    }

    pub fn zero(algebra: Algebra) -> Self {
        LogCauchyFn::det_log(algebra, 0.0)
    }

    pub fn power_log(algebra: Algebra, s: Vec<f64>) -> Result<Self> {
        let Some(r) = algebra.matrix_order() else {
            return Err(Error::Unsupported(
                "power-log functions need the symmetric algebra".into(),
            ));
        };
        if s.len() != r {
            return Err(Error::Construction(format!(
                "power vector has length {}, rank is {r}",
                s.len()
            )));
        }
        Ok(LogCauchyFn {
            algebra,
            form: LogForm::PowerLog { s },
        })
    }

    pub fn sum(algebra: Algebra, parts: Vec<LogCauchyFn>) -> Result<Self> {
        for p in &parts {
            algebra.check_same(&p.algebra)?;
        }
        Ok(LogCauchyFn {
            algebra,
            form: LogForm::Sum { parts },
        })
    }

    pub fn algebra(&self) -> Algebra {
        self.algebra
    }

    pub fn form(&self) -> &LogForm {
        &self.form
    }

    /// Value at `x ∈ V`.
    pub fn eval(&self, x: &Element) -> Result<f64> {
        self.algebra.check_same(&x.algebra())?;
        if !jordan::membership(x, Region::Cone) {
            return Err(Error::Domain(format!("{self}: argument is not in the cone")));
        }
        self.eval_unchecked(x)
    }

    fn eval_unchecked(&self, x: &Element) -> Result<f64> {
        match &self.form {
            LogForm::DetLog { kappa } => {
                if *kappa == 0.0 {
                    Ok(0.0)
                } else {
                    Ok(kappa * jordan::log_det(x)?)
                }
            }
            LogForm::PowerLog { s } => jordan::log_power_function(x, s),
            LogForm::Sum { parts } => parts.iter().map(|p| p.eval_unchecked(x)).sum(),
        }
    }

    /// Coefficient `c` in `f(βe) = c log β`.
    pub fn scalar_slope(&self) -> f64 {
        match &self.form {
            LogForm::DetLog { kappa } => kappa * self.algebra.rank() as f64,
            // log Δ_s(βe) = Σ_k (s_k - s_{k+1}) k log β = (Σ_k s_k) log β
            LogForm::PowerLog { s } => s.iter().sum(),
            LogForm::Sum { parts } => parts.iter().map(|p| p.scalar_slope()).sum(),
        }
    }

    /// Equivalent power vector (symmetric algebra): `κ log det = log Δ_{(κ,..,κ)}`.
    pub fn power_vector(&self) -> Option<Vec<f64>> {
        let r = self.algebra.matrix_order()?;
        match &self.form {
            LogForm::DetLog { kappa } => Some(vec![*kappa; r]),
            LogForm::PowerLog { s } => Some(s.clone()),
            LogForm::Sum { parts } => {
                let mut acc = vec![0.0; r];
                for p in parts {
                    for (a, v) in acc.iter_mut().zip(p.power_vector()?) {
                        *a += v;
                    }
                }
                Some(acc)
            }
        }
    }

    /// Parses `detlog:<κ>`, `powerlog:<s1,..,sr>` or `sum:[<fn>;<fn>;..]`.
    pub fn parse(spec: &str, algebra: Algebra) -> Result<Self> {
        let spec = spec.trim();
        let (head, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("function spec `{spec}` missing ':'")))?;
        match head.trim() {
            "detlog" => Ok(LogCauchyFn::det_log(algebra, parse_real(rest)?)),
            "powerlog" => LogCauchyFn::power_log(algebra, parse_reals(rest)?)
                .map_err(|e| Error::Parse(e.to_string())),
            "sum" => {
                let inner = rest
                    .trim()
                    .strip_prefix('[')
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(|| Error::Parse(format!("sum spec `{rest}` must be bracketed")))?;
                let parts = split_top_level(inner, ';')
                    .into_iter()
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| LogCauchyFn::parse(p, algebra))
                    .collect::<Result<Vec<_>>>()?;
                LogCauchyFn::sum(algebra, parts)
            }
            other => Err(Error::Parse(format!("unknown function kind `{other}`"))),
        }
    }

    /// `(form, params)` for reports.
    pub fn describe(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data serialises")
    }
}

impl fmt::Display for LogCauchyFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.form {
            LogForm::DetLog { kappa } => write!(f, "detlog:{kappa}"),
            LogForm::PowerLog { s } => {
                let s: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                write!(f, "powerlog:{}", s.join(","))
            }
            LogForm::Sum { parts } => {
                let p: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
                write!(f, "sum:[{}]", p.join(";"))
            }
        }
    }
}

pub(crate) fn parse_real(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad number `{s}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse(format!("non-finite number `{s}`")))
    }
}

pub(crate) fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_real).collect()
}

/// Splits on `sep` outside square brackets.
pub(crate) fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

/// `f(x) + f(w(e)y) - f(w(x)y)`; zero certifies w-logarithmicity at `(x, y)`.
pub fn wlog_residual(f: &LogCauchyFn, w: &MultAlgorithm, x: &Element, y: &Element) -> Result<f64> {
    let wey = w.w_e().apply(y)?;
    let wxy = w.w_apply(x, y)?;
    Ok(f.eval(x)? + f.eval(&wey)? - f.eval(&wxy)?)
}

/// Basis in which the w-logarithmic functions of `w` are fitted.
pub fn basis_for(w: &MultAlgorithm) -> LogBasis {
    match w.base_kind() {
        AlgorithmKind::Cholesky if w.algebra().is_sym_real() => LogBasis::Power,
        _ => LogBasis::Det,
    }
}

/// Fitted Pexider decomposition `a = f + a₀`, `b = f∘w(e) + b₀`,
/// `c = f + a₀ + b₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PexiderFit {
    pub f: LogCauchyFn,
    pub a0: f64,
    pub b0: f64,
    pub fit_residual: f64,
    /// Max pointwise defect of the three decomposition identities.
    pub decomposition_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PexiderReport {
    /// `max |a(x) + b(y) - c(w(x)y)|`.
    pub residual: f64,
    pub fit: Option<PexiderFit>,
}

/// Checks `a(x) + b(y) = c(w(x)y)` on the sample pairs and, when it holds to
/// `tol`, recovers the w-logarithmic `f` and the constants `a₀`, `b₀`.
pub fn pexider_check(
    a: &dyn Fn(&Element) -> f64,
    b: &dyn Fn(&Element) -> f64,
    c: &dyn Fn(&Element) -> f64,
    w: &MultAlgorithm,
    samples: &[(Element, Element)],
    tol: f64,
) -> Result<PexiderReport> {
    let mut residual: f64 = 0.0;
    let mut images = Vec::with_capacity(samples.len());
    for (x, y) in samples {
        let z = w.w_apply(x, y)?;
        residual = residual.max((a(x) + b(y) - c(&z)).abs());
        images.push(z);
    }
    if residual.is_nan() || residual > tol {
        return Ok(PexiderReport { residual, fit: None });
    }

    // a(x) = f(x) + a₀: affine fit over every sample point
    let points: Vec<(Element, f64)> = samples
        .iter()
        .flat_map(|(x, y)| [x.clone(), y.clone()])
        .map(|p| {
            let v = a(&p);
            (p, v)
        })
        .collect();
    let fit = recovery::fit_log_basis(w.algebra(), &points, basis_for(w), true)?;
    let f = fit.form;
    let a0 = fit.intercept;
    let we = w.w_e();
    let b0 = {
        let vals = samples
            .iter()
            .map(|(_, y)| Ok(b(y) - f.eval(&we.apply(y)?)?))
            .collect::<Result<Vec<f64>>>()?;
        vals.iter().sum::<f64>() / vals.len() as f64
    };

    let mut decomposition: f64 = 0.0;
    for ((x, y), z) in samples.iter().zip(&images) {
        decomposition = decomposition
            .max((a(x) - f.eval(x)? - a0).abs())
            .max((b(y) - f.eval(&we.apply(y)?)? - b0).abs())
            .max((c(z) - f.eval(z)? - a0 - b0).abs());
    }
    Ok(PexiderReport {
        residual,
        fit: Some(PexiderFit {
            f,
            a0,
            b0,
            fit_residual: fit.residual,
            decomposition_residual: decomposition,
        }),
    })
}

/// `max |f(kx) - f(x)|` over the given `k ∈ K` and sample points.
pub fn k_invariance_defect(f: &LogCauchyFn, ks: &[LinearOperator], xs: &[Element]) -> Result<f64> {
    for k in ks {
        if k.identity_defect() > 1e-10 {
            return Err(Error::Domain(format!(
                "operator does not fix e (defect {:e})",
                k.identity_defect()
            )));
        }
        if k.isometry_defect() > 1e-10 {
            return Err(Error::Domain("operator is not an isometry".into()));
        }
    }
    let mut worst: f64 = 0.0;
    for x in xs {
        let fx = f.eval(x)?;
        for k in ks {
            worst = worst.max((f.eval(&k.apply(x)?)? - fx).abs());
        }
    }
    Ok(worst)
}

impl FromStr for Verdict {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pass" => Ok(Verdict::Pass),
            "inconclusive" => Ok(Verdict::Inconclusive),
            "fail" => Ok(Verdict::Fail),
            _ => Err(Error::Parse(format!("unknown verdict `{s}`"))),
        }
    }
}
