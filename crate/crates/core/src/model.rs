//! Problem instances and synthetic corrupted-batch data.
//!
//! Algorithm code only ever sees [`Batch`] values. Inlier/outlier provenance
//! lives next to the batches in a [`Dataset`] or inside a [`GeneratorSampler`]
//! and is read by the harness and the oracles, never by the estimators.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub sigma: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub k: usize,
    pub seed: u64,
}

impl ProblemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidParameter(s.to_string()));
        if self.d == 0 || self.n == 0 || self.m == 0 || self.k == 0 {
            return bad("d, n, m and k must be positive");
        }
        if !(self.alpha > 0.0 && (self.alpha <= 0.5 || self.alpha == 1.0)) {
            return bad("alpha must lie in (0, 1/2] or equal 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be a finite nonnegative number");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("R must be positive");
        }
        if self.sigma > self.radius {
            return bad("sigma must not exceed R");
        }
        Ok(())
    }

    pub fn validate_with(&self, cov: &CovariateModel) -> Result<()> {
        self.validate()?;
        if 2 * self.k > cov.delta {
            return Err(Error::InvalidParameter(format!(
                "2k = {} exceeds the certifiable degree {} of {:?}",
                2 * self.k,
                cov.delta,
                cov.kind
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateKind {
    StandardGaussian,
    RademacherProduct,
    WhitenedUniformCube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub kind: CovariateKind,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "Delta")]
    pub delta: usize,
}

/// `(2k - 1)!!`
pub fn double_factorial_odd(k: usize) -> f64 {
    (1..=k).map(|i| (2 * i - 1) as f64).product()
}

/// Largest even degree we are willing to certify for any covariate model.
pub const DEFAULT_DELTA: usize = 16;

impl CovariateModel {
    /// Model with the configured moment constant for half-degree `k`.
    pub fn new(kind: CovariateKind, k: usize) -> Self {
        CovariateModel {
            kind,
            q: double_factorial_odd(k).max(1.0),
            delta: DEFAULT_DELTA,
        }
    }

    pub fn sample_into(&self, rng: &mut impl Rng, out: &mut [f64]) {
        match self.kind {
            CovariateKind::StandardGaussian => {
                for v in out {
                    *v = StandardNormal.sample(rng);
                }
            }
            CovariateKind::RademacherProduct => {
                for v in out {
                    *v = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                }
            }
            CovariateKind::WhitenedUniformCube => {
                let h = 3f64.sqrt();
                for v in out {
                    *v = rng.random_range(-h..h);
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let mut x = vec![0.0; d];
        self.sample_into(rng, &mut x);
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

/// `n` labeled points stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    d: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Batch {
    pub fn new(d: usize, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("d must be positive".into()));
        }
        if xs.len() != d * ys.len() {
            return Err(Error::DimensionMismatch {
                expected: d * ys.len(),
                found: xs.len(),
            });
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite entry in batch".into()));
        }
        Ok(Batch { d, xs, ys })
    }

    pub fn from_points(points: &[LabeledPoint]) -> Result<Self> {
        let d = points.first().ok_or(Error::EmptyBatch)?.x.len();
        let mut xs = Vec::with_capacity(d * points.len());
        for p in points {
            if p.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.x.len(),
                });
            }
            xs.extend_from_slice(&p.x);
        }
        Batch::new(d, xs, points.iter().map(|p| p.y).collect())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn points(&self) -> Vec<LabeledPoint> {
        (0..self.n())
            .map(|i| LabeledPoint {
                x: self.x(i).to_vec(),
                y: self.ys[i],
            })
            .collect()
    }

}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "strategy")]
pub enum Provenance {
    Inlier,
    Outlier(String),
}

impl Provenance {
    pub fn is_inlier(&self) -> bool {
        matches!(self, Provenance::Inlier)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum AdversaryModel {
    /// Outlier batches are clean regressions for a decoy drawn uniformly from the list.
    DecoyRegressors { decoys: Vec<Vec<f64>> },
    /// Every outlier batch has batch statistic exactly `target` and is fit
    /// perfectly by it.
    PointMass { target: Vec<f64> },
    /// Gaussian covariates with Cauchy labels of the given scale.
    HeavyTailLabels { scale: f64 },
    /// Gaussian covariates with labels independent of them, variance `sigma^2 + R^2`.
    GaussianNoiseBatches,
}

impl AdversaryModel {
    pub fn tag(&self) -> &'static str {
        match self {
            AdversaryModel::DecoyRegressors { .. } => "decoy-regressors",
            AdversaryModel::PointMass { .. } => "point-mass",
            AdversaryModel::HeavyTailLabels { .. } => "heavy-tail-labels",
            AdversaryModel::GaussianNoiseBatches => "gaussian-noise-batches",
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            AdversaryModel::DecoyRegressors { decoys } => {
                if decoys.is_empty() {
                    return Err(Error::InvalidParameter("decoy list is empty".into()));
                }
                for v in decoys {
                    check_dim(v, d)?;
                }
            }
            AdversaryModel::PointMass { target } => check_dim(target, d)?,
            AdversaryModel::HeavyTailLabels { scale } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidParameter("scale must be positive".into()));
                }
            }
            AdversaryModel::GaussianNoiseBatches => {}
        }
        Ok(())
    }

    /// Draws one outlier batch. Choices between decoys come from `pick`, so a
    /// decoy batch consumes `rng` exactly like an inlier batch would.
    pub fn sample_batch(&self, params: &ProblemParams, cov: &CovariateModel, rng: &mut impl Rng, pick: &mut impl Rng) -> Batch {
        let (d, n) = (params.d, params.n);
        match self {
            AdversaryModel::DecoyRegressors { decoys } => {
                let j = pick.random_range(0..decoys.len());
                regression_batch(params, cov, &decoys[j], rng)
            }
            AdversaryModel::PointMass { target } => point_mass_batch(d, n, target, rng),
            AdversaryModel::HeavyTailLabels { scale } => {
                let cauchy = Cauchy::new(0.0, *scale).expect("validated scale");
                let mut xs = vec![0.0; d * n];
                let mut ys = vec![0.0; n];
                for i in 0..n {
                    fill_gaussian(rng, &mut xs[i * d..(i + 1) * d]);
                    // Cauchy draws can overflow to inf only with vanishing probability;
                    // clamp so batches stay finite.
                    ys[i] = cauchy.sample(rng).clamp(-1e150, 1e150);
                }
                Batch { d, xs, ys }
            }
            AdversaryModel::GaussianNoiseBatches => {
                let sd = (params.sigma * params.sigma + params.radius * params.radius).sqrt();
                let mut xs = vec![0.0; d * n];
                let mut ys = vec![0.0; n];
                for i in 0..n {
                    fill_gaussian(rng, &mut xs[i * d..(i + 1) * d]);
                    let g: f64 = StandardNormal.sample(rng);
                    ys[i] = sd * g;
                }
                Batch { d, xs, ys }
            }
        }
    }
}

fn check_dim(v: &[f64], d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: v.len(),
        });
    }
    Ok(())
}

fn fill_gaussian(rng: &mut impl Rng, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}

/// Clean regression batch for an arbitrary coefficient vector. Inlier and decoy
/// batches both come from here.
fn regression_batch(params: &ProblemParams, cov: &CovariateModel, beta: &[f64], rng: &mut impl Rng) -> Batch {
    let (d, n) = (params.d, params.n);
    let mut xs = vec![0.0; d * n];
    let mut ys = vec![0.0; n];
    for i in 0..n {
        let x = &mut xs[i * d..(i + 1) * d];
        cov.sample_into(rng, x);
        let xi: f64 = StandardNormal.sample(rng);
        ys[i] = linalg::dot(x, beta) + params.sigma * xi;
    }
    Batch { d, xs, ys }
}

/// Noiseless batch whose points satisfy `sum_i x_i x_i^T = n P` for a projection
/// `P` fixing `target`, so `Z_B = target` exactly and `target` fits every label.
fn point_mass_batch(d: usize, n: usize, target: &[f64], rng: &mut impl Rng) -> Batch {
    let r = n.min(d);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    let tn = linalg::norm(target);
    if n < d && tn > 0.0 {
        basis.push(target.iter().map(|v| v / tn).collect());
    }
    while basis.len() < r {
        let mut v = vec![0.0; d];
        fill_gaussian(rng, &mut v);
        for _ in 0..2 {
            for b in &basis {
                let p = linalg::dot(&v, b);
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= p * c);
            }
        }
        let nv = linalg::norm(&v);
        if nv > 1e-8 {
            basis.push(v.iter().map(|a| a / nv).collect());
        }
    }
    let scale = (n as f64).sqrt();
    let xs: Vec<f64> = if n >= d {
        // Orthonormal columns: a random n x d matrix with U^T U = I.
        let mut g = DMatrix::<f64>::zeros(n, d);
        for v in g.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let q = g.qr().q();
        let mut xs = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                xs.push(scale * q[(i, j)]);
            }
        }
        xs
    } else {
        basis.iter().flat_map(|b| b.iter().map(|v| scale * v)).collect()
    };
    let ys = (0..n).map(|i| linalg::dot(&xs[i * d..(i + 1) * d], target)).collect();
    Batch { d, xs, ys }
}

pub fn sample_inlier_batch(
    params: &ProblemParams,
    cov: &CovariateModel,
    beta_star: &[f64],
    rng: &mut impl Rng,
) -> Result<Batch> {
    check_dim(beta_star, params.d)?;
    if linalg::norm(beta_star) > params.radius * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter("||beta_star|| exceeds R".into()));
    }
    Ok(regression_batch(params, cov, beta_star, rng))
}

/// Generated batches together with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub batches: Vec<Batch>,
    pub provenance: Vec<Provenance>,
}

impl Dataset {
    pub fn inlier_fraction(&self) -> f64 {
        if self.provenance.is_empty() {
            return 0.0;
        }
        self.provenance.iter().filter(|p| p.is_inlier()).count() as f64 / self.provenance.len() as f64
    }

    pub fn inlier_indices(&self) -> Vec<usize> {
        (0..self.provenance.len()).filter(|&i| self.provenance[i].is_inlier()).collect()
    }
}

pub fn sample_dataset(
    params: &ProblemParams,
    cov: &CovariateModel,
    beta_star: &[f64],
    adv: &AdversaryModel,
) -> Result<Dataset> {
    let mut sampler = GeneratorSampler::new(params.clone(), cov.clone(), beta_star.to_vec(), adv.clone())?;
    let batches = sampler.draw(params.m)?;
    Ok(Dataset {
        batches,
        provenance: sampler.provenance_log().to_vec(),
    })
}

/// Source of fresh batches for the driver.
pub trait BatchSampler {
    fn draw(&mut self, count: usize) -> Result<Vec<Batch>>;

    /// Number of batches handed out so far.
    fn drawn(&self) -> usize;
}

/// Generates batch `i` from a seed derived from `(params.seed, i)`.
#[derive(Debug, Clone)]
pub struct GeneratorSampler {
    params: ProblemParams,
    cov: CovariateModel,
    beta_star: Vec<f64>,
    adv: AdversaryModel,
    provenance: Vec<Provenance>,
    record: bool,
    cursor: u64,
}

impl GeneratorSampler {
    pub fn new(params: ProblemParams, cov: CovariateModel, beta_star: Vec<f64>, adv: AdversaryModel) -> Result<Self> {
        params.validate_with(&cov)?;
        adv.validate(params.d)?;
        check_dim(&beta_star, params.d)?;
        if linalg::norm(&beta_star) > params.radius * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter("||beta_star|| exceeds R".into()));
        }
        Ok(GeneratorSampler {
            params,
            cov,
            beta_star,
            adv,
            provenance: Vec::new(),
            record: true,
            cursor: 0,
        })
    }

    /// Stop keeping the provenance log (long driver runs do not need it).
    pub fn without_log(mut self) -> Self {
        self.record = false;
        self
    }

    pub fn batch_at(&self, index: u64) -> (Batch, Provenance) {
        let mut rng: ChaCha8Rng = rng_for(self.params.seed, "batch", &[index]);
        // One uniform draw decides the provenance, whatever alpha is, so batch
        // contents depend only on (seed, index) and the model that generated them.
        let coin: f64 = rng.random();
        if coin < self.params.alpha {
            (
                regression_batch(&self.params, &self.cov, &self.beta_star, &mut rng),
                Provenance::Inlier,
            )
        } else {
            let mut pick: ChaCha8Rng = rng_for(self.params.seed, "adversary", &[index]);
            (
                self.adv.sample_batch(&self.params, &self.cov, &mut rng, &mut pick),
                Provenance::Outlier(self.adv.tag().to_string()),
            )
        }
    }

    /// Provenance of every batch drawn so far, in draw order.
    pub fn provenance_log(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn beta_star(&self) -> &[f64] {
        &self.beta_star
    }
}

impl BatchSampler for GeneratorSampler {
    fn draw(&mut self, count: usize) -> Result<Vec<Batch>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let (b, p) = self.batch_at(self.cursor);
            self.cursor += 1;
            out.push(b);
            if self.record {
                self.provenance.push(p);
            }
        }
        Ok(out)
    }

    fn drawn(&self) -> usize {
        self.cursor as usize
    }
}

/// Serves batches from a fixed pool, in order.
#[derive(Debug, Clone)]
pub struct PoolSampler {
    batches: Vec<Batch>,
    cursor: usize,
    reuse: bool,
    drawn: usize,
}

impl PoolSampler {
    pub fn new(batches: Vec<Batch>) -> Self {
        PoolSampler {
            batches,
            cursor: 0,
            reuse: false,
            drawn: 0,
        }
    }

    /// Wrap around instead of failing when the pool runs out.
    pub fn reusing(mut self) -> Self {
        self.reuse = true;
        self
    }
}

impl BatchSampler for PoolSampler {
    fn draw(&mut self, count: usize) -> Result<Vec<Batch>> {
        if self.batches.is_empty() && count > 0 {
            return Err(Error::SamplerExhausted { drawn: self.drawn });
        }
        if !self.reuse && self.cursor + count > self.batches.len() {
            return Err(Error::SamplerExhausted { drawn: self.drawn });
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            if self.cursor == self.batches.len() {
                self.cursor = 0;
            }
            out.push(self.batches[self.cursor].clone());
            self.cursor += 1;
        }
        self.drawn += count;
        Ok(out)
    }

    fn drawn(&self) -> usize {
        self.drawn
    }
}
