//! Per-iteration timing, plus a windowless kernel estimator whose dictionary
//! grows with every sample. The latter is the reference whose cost rises over
//! time, in contrast with the fixed-size random feature model.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::rff::GaussianKernel;
use crate::scalar::Scalar;
use crate::series::{LagBuffer, TimeSeries};

/// Functional stochastic gradient descent with an exact additive Gaussian
/// kernel: `f_n(x) = sum_s c[n][s] sum_{n', p} k(x[n', p], x_s[n', p])`.
/// Every step appends the current regressor to the dictionary.
#[derive(Debug, Clone)]
pub struct GrowingDictionary<F> {
    nodes: usize,
    order: usize,
    kernel: GaussianKernel<F>,
    step: F,
    buffer: LagBuffer<F>,
    dictionary: Vec<F>,
    coefficients: Vec<Vec<F>>,
    scratch: Vec<F>,
}

impl<F: Scalar> GrowingDictionary<F> {
    pub fn new(nodes: usize, order: usize, kernel: GaussianKernel<F>, step: F) -> Result<Self> {
        if !(step > F::zero()) {
            return Err(Error::invalid("step must be positive"));
        }
        Ok(Self {
            nodes,
            order,
            kernel,
            step,
            buffer: LagBuffer::new(nodes, order)?,
            dictionary: Vec::new(),
            coefficients: vec![Vec::new(); nodes],
            scratch: vec![F::zero(); nodes * order],
        })
    }

    pub fn dictionary_len(&self) -> usize {
        self.coefficients[0].len()
    }

    /// Buffers during warm-up, then predicts, updates and grows. Returns the
    /// predictions once warm.
    pub fn feed(&mut self, sample: &[F]) -> Result<Option<Vec<F>>> {
        if !self.buffer.is_full() {
            self.buffer.push(sample)?;
            return Ok(None);
        }
        if sample.len() != self.nodes {
            return Err(Error::DimensionMismatch { expected: self.nodes, found: sample.len() });
        }
        let width = self.nodes * self.order;
        for lag in 0..self.order {
            for src in 0..self.nodes {
                self.scratch[lag * self.nodes + src] = self.buffer.lagged(src, lag);
            }
        }
        // Kernel row against every stored regressor, shared by all targets.
        let row: Vec<F> = self
            .dictionary
            .chunks_exact(width)
            .map(|x| x.iter().zip(&self.scratch).map(|(&a, &b)| self.kernel.eval(a, b)).sum())
            .collect();
        let mut predictions = Vec::with_capacity(self.nodes);
        for (coef, &y) in self.coefficients.iter_mut().zip(sample) {
            let pred: F = coef.iter().zip(&row).map(|(&c, &k)| c * k).sum();
            predictions.push(pred);
            coef.push(-self.step * (pred - y));
        }
        self.dictionary.extend_from_slice(&self.scratch);
        self.buffer.push(sample)?;
        Ok(Some(predictions))
    }
}

/// Feeds every sample of `series` to `feed` and records the wall-clock seconds
/// of each call that performed an update, as `(t, seconds)`.
pub fn time_stream<F: Scalar>(
    series: &TimeSeries<F>,
    mut feed: impl FnMut(&[F]) -> Result<bool>,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(series.len());
    for (t, row) in series.rows().enumerate() {
        let start = Instant::now();
        let stepped = feed(row)?;
        let elapsed = start.elapsed().as_secs_f64();
        if stepped {
            out.push((t, elapsed));
        }
    }
    Ok(out)
}

/// Elementwise minimum over repeated timing passes of the same stream; strips
/// scheduler noise while keeping the per-iteration cost profile.
pub fn min_over_repeats(passes: &[Vec<(usize, f64)>]) -> Result<Vec<(usize, f64)>> {
    let first = passes.first().ok_or_else(|| Error::invalid("no timing passes"))?;
    if passes.iter().any(|p| p.len() != first.len()) {
        return Err(Error::invalid("timing passes differ in length"));
    }
    Ok((0..first.len())
        .map(|i| (first[i].0, passes.iter().map(|p| p[i].1).fold(f64::INFINITY, f64::min)))
        .collect())
}

/// Mean seconds over samples with `from <= t < to`.
pub fn window_mean(timings: &[(usize, f64)], from: usize, to: usize) -> Option<f64> {
    let v: Vec<f64> = timings.iter().filter(|(t, _)| (from..to).contains(t)).map(|&(_, s)| s).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Least-squares slope of seconds against `t`.
pub fn fitted_slope(timings: &[(usize, f64)]) -> Option<f64> {
    if timings.len() < 2 {
        return None;
    }
    let n = timings.len() as f64;
    let mt = timings.iter().map(|&(t, _)| t as f64).sum::<f64>() / n;
    let ms = timings.iter().map(|&(_, s)| s).sum::<f64>() / n;
    let cov: f64 = timings.iter().map(|&(t, s)| (t as f64 - mt) * (s - ms)).sum();
    let var: f64 = timings.iter().map(|&(t, _)| (t as f64 - mt).powi(2)).sum();
    (var > 0.0).then(|| cov / var)
}
