//! Topology readout and evaluation: pseudo-adjacency norms, normalization,
//! miss-detection / false-alarm rates and prediction error curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::CoefficientState;
use crate::scalar::{stable_norm, Scalar};

/// Group norms `b[n, n', p] = |alpha[n][n'][p]|_2`, indexed `(target, source, lag)`
/// in row-major order like [`crate::synth::Topology`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct PseudoAdjacency<F> {
    pub t: usize,
    pub nodes: usize,
    pub order: usize,
    pub values: Vec<F>,
}

impl<F: Scalar> PseudoAdjacency<F> {
    pub fn new(t: usize, nodes: usize, order: usize, values: Vec<F>) -> Result<Self> {
        if values.len() != nodes * nodes * order {
            return Err(Error::DimensionMismatch { expected: nodes * nodes * order, found: values.len() });
        }
        if values.iter().any(|v| !(*v >= F::zero()) || !v.is_finite()) {
            return Err(Error::invalid("pseudo-adjacency entries must be finite and nonnegative"));
        }
        Ok(Self { t, nodes, order, values })
    }

    #[inline]
    pub fn slot(&self, target: usize, source: usize, lag: usize) -> usize {
        (target * self.nodes + source) * self.order + lag
    }

    pub fn get(&self, target: usize, source: usize, lag: usize) -> F {
        self.values[self.slot(target, source, lag)]
    }

    pub fn max(&self) -> F {
        self.values.iter().fold(F::zero(), |m, &v| m.max(v))
    }

    /// Every entry divided by the global maximum.
    pub fn normalize(&self) -> Result<Self> {
        let m = self.max();
        if m == F::zero() {
            return Err(Error::UndefinedNormalization);
        }
        Ok(Self { values: self.values.iter().map(|&v| v / m).collect(), ..self.clone() })
    }

    /// Like [`Self::normalize`], but an all-zero matrix is returned unchanged.
    pub fn normalize_or_zero(&self) -> Self {
        self.normalize().unwrap_or_else(|_| self.clone())
    }
}

/// Reads the pseudo-adjacency off a coefficient state at time `t`.
pub fn extract_pseudo_adjacency<F: Scalar>(state: &CoefficientState<F>, t: usize) -> PseudoAdjacency<F> {
    let layout = state.layout();
    let (nodes, order) = (layout.nodes, layout.order);
    let mut values = Vec::with_capacity(nodes * nodes * order);
    for target in 0..nodes {
        for source in 0..nodes {
            for lag in 0..order {
                values.push(state.group_norm(target, source, lag));
            }
        }
    }
    PseudoAdjacency { t, nodes, order, values }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    /// Detection threshold on (normalized) group norms.
    pub delta: f64,
    pub exclude_self_loops: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { delta: 0.05, exclude_self_loops: true }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::Config(format!("detection delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// One run's estimates and the matching ground-truth active masks, aligned in time.
#[derive(Debug, Clone)]
pub struct DetectionRun<F> {
    pub estimates: Vec<PseudoAdjacency<F>>,
    pub truth: Vec<Vec<bool>>,
}

/// Miss-detection and false-alarm curves; `None` where the denominator is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurves {
    pub t: Vec<usize>,
    pub miss: Vec<Option<f64>>,
    pub false_alarm: Vec<Option<f64>>,
}

/// Empirical `P_MD[t]` and `P_FA[t]` pooled over runs:
///
/// * miss: `b < delta` among truly active slots,
/// * false alarm: `b > delta` among truly inactive slots,
///
/// with self-loops excluded when configured.
pub fn pmd_pfa<F: Scalar>(runs: &[DetectionRun<F>], cfg: &DetectionConfig) -> Result<DetectionCurves> {
    cfg.validate()?;
    let first = runs.first().ok_or_else(|| Error::invalid("at least one run is required"))?;
    let len = first.estimates.len();
    for run in runs {
        if run.estimates.len() != len || run.truth.len() != len {
            return Err(Error::Data("runs must share one time axis".into()));
        }
        for (e, f) in run.estimates.iter().zip(&first.estimates) {
            if e.t != f.t {
                return Err(Error::Data(format!("time axes differ: t={} vs t={}", e.t, f.t)));
            }
        }
    }
    let delta = F::of(cfg.delta);
    let mut curves = DetectionCurves { t: Vec::with_capacity(len), miss: Vec::new(), false_alarm: Vec::new() };
    for i in 0..len {
        let (mut missed, mut positives, mut alarms, mut negatives) = (0u64, 0u64, 0u64, 0u64);
        for run in runs {
            let est = &run.estimates[i];
            let truth = &run.truth[i];
            if truth.len() != est.values.len() {
                return Err(Error::DimensionMismatch { expected: est.values.len(), found: truth.len() });
            }
            for target in 0..est.nodes {
                for source in 0..est.nodes {
                    if cfg.exclude_self_loops && target == source {
                        continue;
                    }
                    for lag in 0..est.order {
                        let s = est.slot(target, source, lag);
                        let b = est.values[s];
                        if truth[s] {
                            positives += 1;
                            missed += u64::from(b < delta);
                        } else {
                            negatives += 1;
                            alarms += u64::from(b > delta);
                        }
                    }
                }
            }
        }
        curves.t.push(first.estimates[i].t);
        curves.miss.push((positives > 0).then(|| missed as f64 / positives as f64));
        curves.false_alarm.push((negatives > 0).then(|| alarms as f64 / negatives as f64));
    }
    Ok(curves)
}

/// Ensemble MSE: mean over runs of the squared error at each time index.
pub fn mse_ensemble<F: Scalar>(observed: &[Vec<F>], predicted: &[Vec<F>]) -> Result<Vec<F>> {
    if observed.is_empty() || observed.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: observed.len(), found: predicted.len() });
    }
    let len = observed[0].len();
    for (y, yh) in observed.iter().zip(predicted) {
        if y.len() != len || yh.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: y.len().min(yh.len()) });
        }
    }
    let runs = F::of(observed.len() as f64);
    Ok((0..len)
        .map(|t| {
            observed.iter().zip(predicted).map(|(y, yh)| (y[t] - yh[t]) * (y[t] - yh[t])).sum::<F>() / runs
        })
        .collect())
}

/// Single-run MSE: trailing moving average of squared errors over `window`
/// samples (fewer at the start of the series).
pub fn mse_moving<F: Scalar>(observed: &[F], predicted: &[F], window: usize) -> Result<Vec<F>> {
    if observed.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: observed.len(), found: predicted.len() });
    }
    if window == 0 {
        return Err(Error::invalid("MSE window must be at least 1"));
    }
    let sq: Vec<F> = observed.iter().zip(predicted).map(|(&y, &yh)| (y - yh) * (y - yh)).collect();
    moving_average(&sq, window)
}

/// Trailing mean over `window` samples (fewer at the start).
pub fn moving_average<F: Scalar>(values: &[F], window: usize) -> Result<Vec<F>> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    // Window sums recomputed directly; prefix-sum differences lose precision.
    Ok((0..values.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(window);
            values[start..=t].iter().copied().sum::<F>() / F::of((t + 1 - start) as f64)
        })
        .collect())
}

/// Per-node norms of groups at `(target, source, lag)`, a convenience for traces.
pub fn group_norm_trace<F: Scalar>(states: &[CoefficientState<F>], target: usize, source: usize, lag: usize) -> Vec<F> {
    states.iter().map(|s| stable_norm(s.group(target, source, lag))).collect()
}
