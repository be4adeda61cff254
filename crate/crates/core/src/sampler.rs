//! Reproducible random elements of `V`, `D` and pairs in `D₀`.
//!
//! Every sweep owns its own [`Sampler`]; the stream is a pure function of the
//! seed (ChaCha20), so fixed seeds give byte-identical samples on every
//! platform.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jordan::{self, Algebra, Element, LinearOperator};

pub const DEFAULT_EIGEN_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub algebra: Algebra,
    pub seed: u64,
    /// Spectra of `D` samples stay inside `(margin, 1 - margin)`.
    pub eigen_margin: f64,
    pub count: usize,
}

impl SamplerConfig {
    pub fn new(algebra: Algebra, seed: u64) -> Self {
        SamplerConfig {
            algebra,
            seed,
            eigen_margin: DEFAULT_EIGEN_MARGIN,
            count: 1000,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.eigen_margin = margin;
        self
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eigen_margin > 0.0 && self.eigen_margin < 0.5) {
            return Err(Error::Domain(format!(
                "eigen margin must lie in (0, 1/2), got {}",
                self.eigen_margin
            )));
        }
        Ok(())
    }
}

pub struct Sampler {
    cfg: SamplerConfig,
    rng: ChaCha20Rng,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sampler {
            cfg,
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
        })
    }

    /// Default margin, given algebra and seed.
    pub fn seeded(algebra: Algebra, seed: u64) -> Self {
        Sampler::new(SamplerConfig::new(algebra, seed)).expect("default config is valid")
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn algebra(&self) -> Algebra {
        self.cfg.algebra
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Unconstrained element with standard normal coordinates.
    pub fn sample_algebra(&mut self) -> Element {
        let d = self.cfg.algebra.vector_dim();
        let coords = (0..d).map(|_| self.gaussian()).collect();
        Element::new(self.cfg.algebra, coords).expect("finite gaussian coordinates")
    }

    /// Element with the given spectrum and a random frame.
    pub fn sample_with_spectrum(&mut self, spectrum: &[f64]) -> Element {
        match self.cfg.algebra {
            Algebra::SymReal { rank } => {
                assert_eq!(spectrum.len(), rank, "spectrum length must equal rank");
                let u = self.random_orthogonal(rank);
                let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(spectrum));
                jordan::pack(&(&u * d * u.transpose()))
            }
            Algebra::Lorentz { n } => {
                assert_eq!(spectrum.len(), 2, "Lorentz spectrum has two eigenvalues");
                let dir = self.unit_vector(n);
                let mut coords = Vec::with_capacity(n + 1);
                coords.push(0.5 * (spectrum[0] + spectrum[1]));
                coords.extend(dir.iter().map(|u| 0.5 * (spectrum[0] - spectrum[1]) * u));
                Element::new(self.cfg.algebra, coords).expect("finite spectrum")
            }
        }
    }

    /// Element of `D` with eigenvalues uniform in `(margin, 1 - margin)`.
    pub fn sample_d(&mut self) -> Element {
        let m = self.cfg.eigen_margin;
        let spectrum: Vec<f64> = (0..self.cfg.algebra.rank())
            .map(|_| self.uniform(m, 1.0 - m))
            .collect();
        self.sample_with_spectrum(&spectrum)
    }

    /// Element of the cone with log-uniform eigenvalues in `[lo, hi]`.
    pub fn sample_cone(&mut self, lo: f64, hi: f64) -> Element {
        assert!(lo > 0.0 && hi >= lo, "cone spectrum range must be positive");
        let (a, b) = (lo.ln(), hi.ln());
        let spectrum: Vec<f64> = (0..self.cfg.algebra.rank())
            .map(|_| self.uniform(a, b).exp())
            .collect();
        self.sample_with_spectrum(&spectrum)
    }

    /// `(x, y) ∈ D₀`: draw `x, z ∈ D` and set `y = P((e-x)^{1/2}) z`, so that
    /// `e - x - y = P((e-x)^{1/2})(e - z)` stays in the cone.
    pub fn sample_d0_pair(&mut self) -> (Element, Element) {
        let x = self.sample_d();
        let z = self.sample_d();
        let y = d0_partner(&x, &z).expect("x lies in D");
        (x, y)
    }

    /// `count` pairs from [`Sampler::sample_d0_pair`].
    pub fn d0_pairs(&mut self, count: usize) -> Vec<(Element, Element)> {
        (0..count).map(|_| self.sample_d0_pair()).collect()
    }

    pub fn unit_vector(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| self.gaussian()).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                return v.into_iter().map(|a| a / norm).collect();
            }
        }
    }

    /// Random rotation (determinant +1) from the QR factorisation of a
    /// Gaussian matrix, with the sign convention that makes it Haar.
    pub fn random_orthogonal(&mut self, n: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        if q.determinant() < 0.0 {
            q.column_mut(0).neg_mut();
        }
        q
    }

    /// Random element of `K`: conjugation by a rotation (symmetric) or a
    /// rotation of the spatial part (Lorentz).
    pub fn random_k(&mut self) -> LinearOperator {
        match self.cfg.algebra {
            Algebra::SymReal { rank } => {
                let q = self.random_orthogonal(rank);
                conjugation_operator(&q)
            }
            Algebra::Lorentz { n } => {
                let q = self.random_orthogonal(n);
                let mut m = DMatrix::zeros(n + 1, n + 1);
                m[(0, 0)] = 1.0;
                m.view_mut((1, 1), (n, n)).copy_from(&q);
                LinearOperator::new(self.cfg.algebra, m).expect("finite rotation")
            }
        }
    }
}

/// `y ↦ a y aᵀ` as an operator on packed symmetric matrices.
pub fn conjugation_operator(a: &DMatrix<f64>) -> LinearOperator {
    let alg = Algebra::SymReal { rank: a.nrows() };
    LinearOperator::from_fn(alg, |b| {
        let m = b.to_matrix()?;
        Ok(jordan::pack(&(a * m * a.transpose())))
    })
    .expect("finite conjugation")
}

/// `P((e - x)^{1/2}) z`.
pub fn d0_partner(x: &Element, z: &Element) -> Result<Element> {
    let root = jordan::sqrt_element(&x.complement())?;
    jordan::quad_apply(&root, z)
}

/// Uniform triangular grid of `(α, β)` with `α, β ≥ margin` and
/// `α + β ≤ 1 - margin`; `count` points per axis.
pub fn scalar_grid(count: usize, margin: f64) -> Vec<(f64, f64)> {
    assert!(count >= 1, "grid needs at least one point per axis");
    assert!(margin > 0.0 && margin < 1.0 / 3.0, "margin must lie in (0, 1/3)");
    if count == 1 {
        return vec![(margin, margin)];
    }
    let step = (1.0 - 3.0 * margin) / (count - 1) as f64;
    let axis: Vec<f64> = (0..count).map(|i| margin + step * i as f64).collect();
    let mut out = Vec::new();
    for (i, &a) in axis.iter().enumerate() {
        for &b in axis.iter().take(count - i) {
            out.push((a, b));
        }
    }
    out
}
