//! Random multi-task regression instances.
//!
//! Each array is drawn from its own ChaCha8 stream (`set_stream`), so the
//! design, the coefficients, the sparsity mask and the noise do not depend on
//! one another's sizes and are reproducible across platforms.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{CoefMatrix, MultiTaskProblem};

const STREAM_DESIGN: u64 = 1;
const STREAM_COEF: u64 = 2;
const STREAM_MASK: u64 = 3;
const STREAM_NOISE: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Scale factor: `n = 20 i` tasks.
    pub scale: usize,
    pub features: usize,
    pub samples_per_task: usize,
    pub tasks_per_scale: usize,
    pub seed: u64,
    /// Fraction of coefficients set to zero.
    pub sparsity: f64,
    pub design_stddev: f64,
    pub noise_stddev: f64,
}

impl SyntheticSpec {
    pub fn new(scale: usize, seed: u64) -> Self {
        Self {
            scale,
            features: 36,
            samples_per_task: 128,
            tasks_per_scale: 20,
            seed,
            sparsity: 0.6,
            design_stddev: 37f64.sqrt(),
            noise_stddev: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.tasks_per_scale * self.scale
    }

    pub fn d(&self) -> usize {
        self.features
    }

    pub fn m(&self) -> usize {
        self.n() * self.samples_per_task
    }

    /// Number of zero coefficients, `floor(sparsity * d * n)`.
    pub fn zero_count(&self) -> usize {
        (self.sparsity * (self.d() * self.n()) as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 || self.features == 0 || self.samples_per_task == 0 || self.tasks_per_scale == 0 {
            return Err(Error::InvalidInput("synthetic dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::InvalidInput(format!("sparsity must lie in [0, 1], got {}", self.sparsity)));
        }
        if !(self.design_stddev >= 0.0) || !(self.noise_stddev >= 0.0) {
            return Err(Error::InvalidInput("standard deviations must be nonnegative".into()));
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws `(problem, true coefficients)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(MultiTaskProblem, CoefMatrix)> {
    spec.validate()?;
    let (d, n, mj) = (spec.d(), spec.n(), spec.samples_per_task);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut rng = stream(spec.seed, STREAM_DESIGN);
    let blocks: Vec<Array2<f64>> = (0..n)
        .map(|_| Array2::from_shape_simple_fn((mj, d), || spec.design_stddev * std_normal.sample(&mut rng)))
        .collect();

    let mut rng = stream(spec.seed, STREAM_COEF);
    let mut coef: Vec<f64> = (0..d * n).map(|_| std_normal.sample(&mut rng)).collect();
    let mut rng = stream(spec.seed, STREAM_MASK);
    for k in sample(&mut rng, d * n, spec.zero_count()) {
        coef[k] = 0.0;
    }
    let truth = CoefMatrix::from_column_major(d, n, coef)?;

    let mut rng = stream(spec.seed, STREAM_NOISE);
    let mut y = Vec::with_capacity(n * mj);
    for (j, block) in blocks.iter().enumerate() {
        let fit = block.dot(&ndarray::ArrayView1::from(truth.column(j)));
        y.extend(fit.iter().map(|v| v + spec.noise_stddev * std_normal.sample(&mut rng)));
    }
    Ok((MultiTaskProblem::new(blocks, y)?, truth))
}
