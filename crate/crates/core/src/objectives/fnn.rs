use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::grad::Objective;
use crate::params::{Block, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// `y = Σₖ sin(xₖ) + sin(4xₖ)` with inputs uniform on [−π, π].
    SineMix,
    /// `y = w*ᵀx + xᵀ diag(v*) x` with standard Gaussian inputs and
    /// `w*, v* ~ N(0, 1/d)`.
    LinearPlusDiagQuadratic,
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine-mix" => Ok(Target::SineMix),
            "linear-plus-diag-quadratic" => Ok(Target::LinearPlusDiagQuadratic),
            other => Err(Error::InvalidParameter(format!("unknown target '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnTaskSpec {
    pub input_dim: usize,
    pub width: usize,
    pub n_samples: usize,
    pub noise_std: f64,
    pub target: Target,
    /// Every parameter starts as `N(0, init_variance_scale / width)`.
    pub init_variance_scale: f64,
    pub seed: u64,
}

impl FnnTaskSpec {
    /// One-dimensional `sin(x) + sin(4x)` fit.
    pub fn sine(width: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            input_dim: 1,
            width,
            n_samples,
            noise_std: 0.0,
            target: Target::SineMix,
            init_variance_scale: 1.0,
            seed,
        }
    }

    /// 50-d teacher with linear and diagonal quadratic terms.
    pub fn teacher_50d(seed: u64) -> Self {
        Self {
            input_dim: 50,
            width: 1000,
            n_samples: 200,
            noise_std: 0.1,
            target: Target::LinearPlusDiagQuadratic,
            init_variance_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.n_samples == 0 {
            return Err(Error::InvalidParameter(
                "input_dim, width and n_samples must be at least 1".into(),
            ));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidParameter(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(self.init_variance_scale >= 0.0) || !self.init_variance_scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "init_variance_scale must be >= 0, got {}",
                self.init_variance_scale
            )));
        }
        Ok(())
    }

    /// Draws the dataset from the spec seed.
    pub fn generate_dataset(&self) -> Result<Dataset> {
        self.validate()?;
        let d = self.input_dim;
        let n = self.n_samples;
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut inputs = Vec::with_capacity(n * d);
        let mut targets = Vec::with_capacity(n);
        match self.target {
            Target::SineMix => {
                let u = Uniform::new_inclusive(-std::f64::consts::PI, std::f64::consts::PI)
                    .expect("finite interval");
                for _ in 0..n {
                    let mut y = 0.0;
                    for _ in 0..d {
                        let x: f64 = u.sample(&mut rng);
                        y += x.sin() + (4.0 * x).sin();
                        inputs.push(x);
                    }
                    targets.push(y);
                }
            }
            Target::LinearPlusDiagQuadratic => {
                let s = (1.0 / d as f64).sqrt();
                let w: Vec<f64> = (0..d).map(|_| s * std_normal.sample(&mut rng)).collect();
                let v: Vec<f64> = (0..d).map(|_| s * std_normal.sample(&mut rng)).collect();
                for _ in 0..n {
                    let mut y = 0.0;
                    for k in 0..d {
                        let x: f64 = std_normal.sample(&mut rng);
                        y += w[k] * x + v[k] * x * x;
                        inputs.push(x);
                    }
                    targets.push(y);
                }
            }
        }
        if self.noise_std > 0.0 {
            for y in &mut targets {
                *y += self.noise_std * std_normal.sample(&mut rng);
            }
        }
        Dataset::new(d, inputs, targets)
    }
}

/// `f(x) = Σⱼ aⱼ tanh(wⱼ·x + bⱼ) + c` fit by `L = (1/2n) Σ (f(xᵢ) − yᵢ)²`.
///
/// Parameter layout: `hidden.weight` (width × input_dim, row per unit),
/// `hidden.bias`, `output.weight`, `output.bias`.
#[derive(Debug, Clone)]
pub struct FnnTask {
    spec: FnnTaskSpec,
    data: Dataset,
}

struct Forward {
    h: Vec<f64>,
    r: f64,
}

impl FnnTask {
    pub fn new(spec: FnnTaskSpec) -> Result<Self> {
        let data = spec.generate_dataset()?;
        Ok(Self { spec, data })
    }

    /// Uses an externally supplied dataset in place of the seeded one.
    pub fn with_dataset(spec: FnnTaskSpec, data: Dataset) -> Result<Self> {
        spec.validate()?;
        ensure_dim(spec.input_dim, data.input_dim)?;
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &FnnTaskSpec {
        &self.spec
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    /// Initial parameters from an RNG stream independent of the data stream.
    pub fn init_params(&self) -> ParamVector {
        let mut rng = ChaCha20Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(1);
        let sd = (self.spec.init_variance_scale / self.spec.width as f64).sqrt();
        let values: Vec<f64> = if sd > 0.0 {
            let dist = Normal::new(0.0, sd).expect("positive sd");
            (0..self.dim()).map(|_| dist.sample(&mut rng)).collect()
        } else {
            vec![0.0; self.dim()]
        };
        ParamVector::with_blocks(values, self.blocks()).expect("layout partitions the vector")
    }

    /// Network output at one input.
    pub fn predict(&self, theta: &[f64], x: &[f64]) -> f64 {
        let (d, m) = (self.spec.input_dim, self.spec.width);
        let (w, b, a, c) = split(theta, d, m);
        let mut f = c;
        for j in 0..m {
            let z = dot(&w[j * d..(j + 1) * d], x) + b[j];
            f += a[j] * z.tanh();
        }
        f
    }

    fn forward(&self, theta: &[f64], i: usize, h: &mut Vec<f64>) -> Forward {
        let (d, m) = (self.spec.input_dim, self.spec.width);
        let (w, b, a, c) = split(theta, d, m);
        let x = self.data.row(i);
        h.clear();
        let mut f = c;
        for j in 0..m {
            let hj = (dot(&w[j * d..(j + 1) * d], x) + b[j]).tanh();
            f += a[j] * hj;
            h.push(hj);
        }
        Forward {
            h: std::mem::take(h),
            r: f - self.data.targets[i],
        }
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        ensure_dim(self.dim(), theta.len())?;
        ensure_finite(theta, "parameters")
    }
}

fn split(theta: &[f64], d: usize, m: usize) -> (&[f64], &[f64], &[f64], f64) {
    let (w, rest) = theta.split_at(m * d);
    let (b, rest) = rest.split_at(m);
    let (a, c) = rest.split_at(m);
    (w, b, a, c[0])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Objective for FnnTask {
    fn dim(&self) -> usize {
        self.spec.width * (self.spec.input_dim + 2) + 1
    }

    fn blocks(&self) -> Vec<Block> {
        let (d, m) = (self.spec.input_dim, self.spec.width);
        vec![
            Block::new("hidden.weight", 0, m * d),
            Block::new("hidden.bias", m * d, m),
            Block::new("output.weight", m * d + m, m),
            Block::new("output.bias", m * d + 2 * m, 1),
        ]
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        let mut buf = Vec::with_capacity(self.spec.width);
        let mut s = 0.0;
        for i in 0..self.data.len() {
            let fw = self.forward(theta, i, &mut buf);
            s += fw.r * fw.r;
            buf = fw.h;
        }
        let l = s / (2.0 * self.data.len() as f64);
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::DivergedEvaluation("loss"))
        }
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(theta)?;
        let (d, m) = (self.spec.input_dim, self.spec.width);
        let n = self.data.len();
        let (_, _, a, _) = split(theta, d, m);
        let mut g = vec![0.0; self.dim()];
        let mut buf = Vec::with_capacity(m);
        let mut s = 0.0;
        for i in 0..n {
            let fw = self.forward(theta, i, &mut buf);
            let r = fw.r;
            s += r * r;
            let x = self.data.row(i);
            let (gw, rest) = g.split_at_mut(m * d);
            let (gb, rest) = rest.split_at_mut(m);
            let (ga, gc) = rest.split_at_mut(m);
            gc[0] += r;
            for j in 0..m {
                let hj = fw.h[j];
                ga[j] += r * hj;
                let e = r * a[j] * (1.0 - hj * hj);
                gb[j] += e;
                for (gwk, xk) in gw[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gwk += e * xk;
                }
            }
            buf = fw.h;
        }
        let inv = 1.0 / n as f64;
        g.iter_mut().for_each(|x| *x *= inv);
        let l = s * 0.5 * inv;
        if !l.is_finite() {
            return Err(Error::DivergedEvaluation("loss"));
        }
        ensure_finite(&g, "gradient")?;
        Ok((l, g))
    }

    /// Forward-mode perturbation of the backward pass (Pearlmutter's R-op).
    fn hvp_exact(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        ensure_dim(self.dim(), v.len())?;
        let (d, m) = (self.spec.input_dim, self.spec.width);
        let n = self.data.len();
        let (_, _, a, _) = split(theta, d, m);
        let (dw, db, da, dc) = split(v, d, m);
        let mut out = vec![0.0; self.dim()];
        let mut buf = Vec::with_capacity(m);
        let mut dh = vec![0.0; m];
        for i in 0..n {
            let fw = self.forward(theta, i, &mut buf);
            let r = fw.r;
            let x = self.data.row(i);
            let mut dr = dc;
            for j in 0..m {
                let hj = fw.h[j];
                let dz = dot(&dw[j * d..(j + 1) * d], x) + db[j];
                dh[j] = (1.0 - hj * hj) * dz;
                dr += da[j] * hj + a[j] * dh[j];
            }
            let (ow, rest) = out.split_at_mut(m * d);
            let (ob, rest) = rest.split_at_mut(m);
            let (oa, oc) = rest.split_at_mut(m);
            oc[0] += dr;
            for j in 0..m {
                let hj = fw.h[j];
                let hp = 1.0 - hj * hj;
                let dhp = -2.0 * hj * dh[j];
                oa[j] += dr * hj + r * dh[j];
                let e = dr * a[j] * hp + r * da[j] * hp + r * a[j] * dhp;
                ob[j] += e;
                for (owk, xk) in ow[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *owk += e * xk;
                }
            }
            buf = fw.h;
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        ensure_finite(&out, "hessian-vector product")?;
        Ok(out)
    }
}
