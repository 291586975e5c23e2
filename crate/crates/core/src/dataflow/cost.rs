//! Push and pull cost functions and their calibration.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{AggSpec, Uda};

use super::DataflowError;

/// Piecewise-linear function of the input count, extrapolated linearly
/// beyond its outermost points and clamped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    points: Vec<(f64, f64)>,
}

impl Curve {
    /// `points` sorted by strictly increasing `k`, all values non-negative.
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self, DataflowError> {
        if points.is_empty() {
            return Err(DataflowError::Invalid("curve needs at least one point".into()));
        }
        if points.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(DataflowError::Invalid("curve points must have increasing k".into()));
        }
        if points.iter().any(|&(k, y)| !k.is_finite() || !y.is_finite() || y < 0.0) {
            return Err(DataflowError::Invalid("curve values must be finite and non-negative".into()));
        }
        Ok(Curve { points })
    }

    pub fn constant(c: f64) -> Self {
        Curve { points: vec![(1.0, c)] }
    }

    /// `slope * k`.
    pub fn linear(slope: f64) -> Self {
        Curve { points: vec![(1.0, slope), (2.0, 2.0 * slope)] }
    }

    /// `1 + log2(k)`.
    pub fn logarithmic() -> Self {
        Curve { points: (0..=10).map(|i| (f64::from(1 << i), 1.0 + f64::from(i))).collect() }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, k: f64) -> f64 {
        let p = &self.points;
        if p.len() == 1 {
            return p[0].1;
        }
        let seg = match p.iter().position(|&(x, _)| x >= k) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => p.len() - 2,
        };
        let ((x0, y0), (x1, y1)) = (p[seg], p[seg + 1]);
        (y0 + (y1 - y0) * (k - x0) / (x1 - x0)).max(0.0)
    }

    /// Fits a non-decreasing curve through noisy measurements by pooling
    /// adjacent violators.
    pub fn fit_monotone(samples: &[(f64, f64)]) -> Result<Self, DataflowError> {
        // (k, summed y, weight)
        let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
        for &(k, y) in samples {
            blocks.push((k, y, 1.0));
            while blocks.len() >= 2 {
                let n = blocks.len();
                let (a, b) = (blocks[n - 2], blocks[n - 1]);
                if a.1 / a.2 <= b.1 / b.2 {
                    break;
                }
                blocks.truncate(n - 2);
                blocks.push((a.0, a.1 + b.1, a.2 + b.2));
            }
        }
        let mut points = Vec::new();
        let mut block = 0;
        for &(k, _) in samples {
            while block + 1 < blocks.len() && k >= blocks[block + 1].0 {
                block += 1;
            }
            points.push((k, (blocks[block].1 / blocks[block].2).max(0.0)));
        }
        Curve::from_points(points)
    }
}

/// Per-aggregate costs of one push into and one pull of a node with `k`
/// inputs. Writers count as nodes with `window_factor` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub push: Curve,
    pub pull: Curve,
    pub window_factor: f64,
}

impl CostModel {
    /// Constant push cost and linear pull cost.
    pub fn constant_push_linear_pull(window_factor: f64) -> Self {
        CostModel { push: Curve::constant(1.0), pull: Curve::linear(1.0), window_factor }
    }

    /// Textbook shapes per built-in: SUM and COUNT push in constant time;
    /// the ordered multisets behind MIN, MAX and TOP-K push in logarithmic
    /// time. Pulls are linear for all.
    pub fn for_aggregate(spec: AggSpec, window_factor: f64) -> Self {
        let push = match spec {
            AggSpec::Sum | AggSpec::Count => Curve::constant(1.0),
            _ => Curve::logarithmic(),
        };
        CostModel { push, pull: Curve::linear(1.0), window_factor }
    }

    pub fn push_cost(&self, k: f64) -> f64 {
        self.push.eval(k)
    }

    pub fn pull_cost(&self, k: f64) -> f64 {
        self.pull.eval(k)
    }
}

/// Input counts probed by [`calibrate`]: powers of two up to 1024.
pub fn calibration_points() -> Vec<usize> {
    (0..=10).map(|i| 1usize << i).collect()
}

/// Median nanoseconds of `reps` runs of `f`.
fn median_ns(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut t: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_nanos() as f64
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[t.len() / 2]
}

/// Raw timings `(k, push ns, pull ns)` of an aggregate: a push is one
/// replace-update of a state built from `k` inputs, a pull merges `k` input
/// states and finalizes.
pub fn measure<U: Uda>(uda: &U, ks: &[usize], reps: usize, seed: u64) -> Vec<(usize, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ks.iter()
        .map(|&k| {
            let inputs: Vec<U::State> = (0..k)
                .map(|_| {
                    let mut s = uda.initialize();
                    uda.update(&mut s, None, Some(rng.random_range(0..1000)));
                    s
                })
                .collect();
            let mut merged = uda.initialize();
            for s in &inputs {
                uda.merge(&mut merged, s);
            }
            const BATCH: usize = 64;
            let mut old = 0;
            let push = median_ns(reps, || {
                for i in 0..BATCH as i64 {
                    let new = (old + 7 * i) % 1000;
                    uda.update(&mut merged, Some(old), Some(new));
                    uda.update(&mut merged, Some(new), Some(old));
                }
                old = black_box(old);
            }) / (2 * BATCH) as f64;
            let pull = median_ns(reps, || {
                let mut acc = uda.initialize();
                for s in &inputs {
                    uda.merge(&mut acc, s);
                }
                black_box(uda.finalize(&acc));
            });
            (k, push, pull)
        })
        .collect()
}

/// Learns push and pull curves from timings, normalized so that a pull over
/// one input costs 1.
pub fn calibrate<U: Uda>(uda: &U, window_factor: f64, reps: usize, seed: u64) -> Result<CostModel, DataflowError> {
    let samples = measure(uda, &calibration_points(), reps.max(1), seed);
    let unit = samples[0].2.max(1.0);
    let push: Vec<(f64, f64)> = samples.iter().map(|&(k, h, _)| (k as f64, h / unit)).collect();
    let pull: Vec<(f64, f64)> = samples.iter().map(|&(k, _, l)| (k as f64, l / unit)).collect();
    Ok(CostModel {
        push: Curve::fit_monotone(&push)?,
        pull: Curve::fit_monotone(&pull)?,
        window_factor,
    })
}
