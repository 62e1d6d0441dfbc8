use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::grad::Objective;

/// `L(θ) = ½ Σ λᵢ (θᵢ − offsetᵢ)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub eigenvalues: Vec<f64>,
    /// Minimizer location; empty means the origin.
    #[serde(default)]
    pub offset: Vec<f64>,
}

impl QuadraticSpec {
    pub fn isotropic(n: usize, lambda: f64) -> Self {
        Self {
            eigenvalues: vec![lambda; n],
            offset: Vec::new(),
        }
    }

    /// 100 directions for the GD delay experiment at η = 0.02: 90 eigenvalues
    /// spread over [1, 99] and 10 over [101, 110], straddling 2/η = 100.
    pub fn gd_delay_100d() -> Self {
        let mut eig: Vec<f64> = (0..90).map(|i| 1.0 + 98.0 * i as f64 / 89.0).collect();
        eig.extend((0..10).map(|i| 101.0 + i as f64));
        Self {
            eigenvalues: eig,
            offset: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    eig: Vec<f64>,
    offset: Vec<f64>,
}

impl Quadratic {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        Self::from_spec(&QuadraticSpec {
            eigenvalues,
            offset: Vec::new(),
        })
    }

    pub fn from_spec(spec: &QuadraticSpec) -> Result<Self> {
        let n = spec.eigenvalues.len();
        if n == 0 {
            return Err(Error::InvalidParameter("quadratic needs at least one eigenvalue".into()));
        }
        ensure_finite(&spec.eigenvalues, "eigenvalues")?;
        let offset = if spec.offset.is_empty() {
            vec![0.0; n]
        } else {
            ensure_dim(n, spec.offset.len())?;
            ensure_finite(&spec.offset, "offset")?;
            spec.offset.clone()
        };
        Ok(Self {
            eig: spec.eigenvalues.clone(),
            offset,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn lambda_max(&self) -> f64 {
        self.eig.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.eig.len()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        ensure_dim(self.dim(), theta.len())?;
        let l: f64 = theta
            .iter()
            .zip(&self.offset)
            .zip(&self.eig)
            .map(|((t, o), l)| 0.5 * l * (t - o) * (t - o))
            .sum();
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::DivergedEvaluation("loss"))
        }
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let l = self.loss(theta)?;
        let g: Vec<f64> = theta
            .iter()
            .zip(&self.offset)
            .zip(&self.eig)
            .map(|((t, o), l)| l * (t - o))
            .collect();
        ensure_finite(&g, "gradient")?;
        Ok((l, g))
    }

    fn hvp_exact(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), theta.len())?;
        ensure_dim(self.dim(), v.len())?;
        Ok(v.iter().zip(&self.eig).map(|(v, l)| l * v).collect())
    }
}
