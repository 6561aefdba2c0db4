use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{group_shrink_in_place, CoefficientState, EstimatorConfig, GroupLayout};
use crate::error::{Error, Result};
use crate::rff::FeatureMaps;
use crate::scalar::{dot, Scalar};
use crate::series::LagBuffer;

/// Maps the lag buffer to the stacked regressor the online update works on.
pub trait FeatureBuilder<F: Scalar> {
    fn nodes(&self) -> usize;
    fn order(&self) -> usize;
    /// Length of one `(lag, source)` group.
    fn group_len(&self) -> usize;
    fn fill(&self, history: &LagBuffer<F>, out: &mut [F]) -> Result<()>;

    fn layout(&self) -> GroupLayout {
        GroupLayout::new(self.nodes(), self.order(), self.group_len())
    }
}

fn check_history<F: Scalar>(layout: GroupLayout, history: &LagBuffer<F>, out: &[F]) -> Result<()> {
    if history.nodes() != layout.nodes || history.order() != layout.order {
        return Err(Error::DimensionMismatch { expected: layout.nodes, found: history.nodes() });
    }
    if !history.is_full() {
        return Err(Error::WarmupIncomplete { needed: layout.order, have: history.filled() });
    }
    if out.len() != layout.dim() {
        return Err(Error::DimensionMismatch { expected: layout.dim(), found: out.len() });
    }
    Ok(())
}

impl<F: Scalar> FeatureBuilder<F> for FeatureMaps<F> {
    fn nodes(&self) -> usize {
        FeatureMaps::nodes(self)
    }

    fn order(&self) -> usize {
        FeatureMaps::order(self)
    }

    fn group_len(&self) -> usize {
        2 * self.num_frequencies()
    }

    fn fill(&self, history: &LagBuffer<F>, out: &mut [F]) -> Result<()> {
        let layout = self.layout();
        check_history(layout, history, out)?;
        for lag in 0..layout.order {
            for src in 0..layout.nodes {
                self.map_for(src, lag).feature_map_into(history.lagged(src, lag), &mut out[layout.range(src, lag)])?;
            }
        }
        Ok(())
    }
}

/// Raw lagged samples as regressors: groups of size one, the linear VAR case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaggedSamples {
    pub nodes: usize,
    pub order: usize,
}

impl<F: Scalar> FeatureBuilder<F> for LaggedSamples {
    fn nodes(&self) -> usize {
        self.nodes
    }

    fn order(&self) -> usize {
        self.order
    }

    fn group_len(&self) -> usize {
        1
    }

    fn fill(&self, history: &LagBuffer<F>, out: &mut [F]) -> Result<()> {
        let layout = <Self as FeatureBuilder<F>>::layout(self);
        check_history(layout, history, out)?;
        for lag in 0..self.order {
            for src in 0..self.nodes {
                out[layout.offset(src, lag)] = history.lagged(src, lag);
            }
        }
        Ok(())
    }
}

/// Per-step output: predictions made before the update and their losses.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<F> {
    /// Time index of the sample just consumed.
    pub t: usize,
    pub predictions: Vec<F>,
    pub losses: Vec<F>,
}

/// Streaming estimator with a fixed per-step cost of `O(N * dim)`.
#[derive(Debug, Clone)]
pub struct OnlineEstimator<F: Scalar, B> {
    config: EstimatorConfig,
    features: B,
    lambda: F,
    state: CoefficientState<F>,
    buffer: LagBuffer<F>,
    z: Vec<F>,
    // samples consumed, including warm-up
    seen: usize,
}

/// The random Fourier feature estimator.
pub type RfEstimator<F> = OnlineEstimator<F, FeatureMaps<F>>;

/// The same update on raw lagged samples.
pub type LinearBaseline<F> = OnlineEstimator<F, LaggedSamples>;

impl<F: Scalar> RfEstimator<F> {
    pub fn from_config(config: &EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let maps = config.feature_maps()?;
        Self::with_features(config, maps)
    }
}

impl<F: Scalar> LinearBaseline<F> {
    pub fn from_config(config: &EstimatorConfig) -> Result<Self> {
        config.validate()?;
        Self::with_features(config, LaggedSamples { nodes: config.nodes, order: config.order })
    }
}

impl<F: Scalar, B: FeatureBuilder<F>> OnlineEstimator<F, B> {
    pub fn with_features(config: &EstimatorConfig, features: B) -> Result<Self> {
        config.validate()?;
        if features.nodes() != config.nodes || features.order() != config.order {
            return Err(Error::Config("feature builder dimensions disagree with the configuration".into()));
        }
        let layout = features.layout();
        Ok(Self {
            config: config.clone(),
            lambda: F::of(config.lambda),
            state: CoefficientState::zeros(layout),
            buffer: LagBuffer::new(config.nodes, config.order)?,
            z: vec![F::zero(); layout.dim()],
            features,
            seen: 0,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn features(&self) -> &B {
        &self.features
    }

    pub fn state(&self) -> &CoefficientState<F> {
        &self.state
    }

    /// Number of samples consumed so far, warm-up included.
    pub fn samples_seen(&self) -> usize {
        self.seen
    }

    pub fn is_warm(&self) -> bool {
        self.buffer.is_full()
    }

    /// Feature vector built for the next step, from the current buffer.
    pub fn current_features(&self) -> Result<Vec<F>> {
        let mut z = vec![F::zero(); self.state.layout().dim()];
        self.features.fill(&self.buffer, &mut z)?;
        Ok(z)
    }

    /// Buffers a warm-up sample. Fails once the buffer is already full.
    pub fn warm_up(&mut self, sample: &[F]) -> Result<()> {
        if self.buffer.is_full() {
            return Err(Error::invalid("warm-up is complete; use step"));
        }
        self.check_sample(sample)?;
        self.buffer.push(sample)?;
        self.seen += 1;
        Ok(())
    }

    /// Warm-up while the buffer is filling, then one update per sample.
    pub fn feed(&mut self, sample: &[F]) -> Result<Option<StepOutput<F>>> {
        if self.buffer.is_full() {
            self.step(sample).map(Some)
        } else {
            self.warm_up(sample).map(|_| None)
        }
    }

    fn check_sample(&self, sample: &[F]) -> Result<()> {
        if sample.len() != self.config.nodes {
            return Err(Error::DimensionMismatch { expected: self.config.nodes, found: sample.len() });
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at t={}", self.seen)));
        }
        Ok(())
    }

    /// Consumes sample `y[t]`: builds `z_t` from the buffered lags, predicts,
    /// and applies the group update to every `(target, lag, source)` group.
    pub fn step(&mut self, sample: &[F]) -> Result<StepOutput<F>> {
        if !self.buffer.is_full() {
            return Err(Error::WarmupIncomplete { needed: self.config.order, have: self.buffer.filled() });
        }
        self.check_sample(sample)?;
        self.features.fill(&self.buffer, &mut self.z)?;

        let gamma = F::of(self.config.step.at(self.state.iterations));
        let threshold = gamma * self.lambda;
        let layout = self.state.layout;
        let nodes = self.config.nodes;
        let mut predictions = Vec::with_capacity(nodes);
        let mut losses = Vec::with_capacity(nodes);
        let z = &self.z;

        for (alpha, &y) in self.state.alpha.iter_mut().zip(sample) {
            let prediction = dot(alpha, z);
            let residual = prediction - y;
            predictions.push(prediction);
            losses.push(F::of(0.5) * residual * residual);
            for (group, zg) in alpha.chunks_exact_mut(layout.group_len).zip(z.chunks_exact(layout.group_len)) {
                for (a, &zi) in group.iter_mut().zip(zg) {
                    *a -= gamma * (zi * residual);
                }
                group_shrink_in_place(group, threshold);
            }
        }
        if !self.state.is_finite() {
            return Err(Error::Diverged { t: self.seen, detail: "coefficients became non-finite".into() });
        }
        self.state.iterations += 1;
        self.buffer.push(sample)?;
        let t = self.seen;
        self.seen += 1;
        Ok(StepOutput { t, predictions, losses })
    }

    pub fn checkpoint(&self) -> Checkpoint<F, B>
    where
        B: Clone,
    {
        Checkpoint {
            config: self.config.clone(),
            features: self.features.clone(),
            state: self.state.clone(),
            buffer: self.buffer.samples(),
            samples_seen: self.seen,
        }
    }

    pub fn resume(checkpoint: Checkpoint<F, B>) -> Result<Self> {
        let Checkpoint { config, features, state, buffer, samples_seen } = checkpoint;
        let mut est = Self::with_features(&config, features)?;
        if state.layout != est.state.layout {
            return Err(Error::Data("checkpoint state layout does not match its configuration".into()));
        }
        if !state.is_finite() {
            return Err(Error::Data("checkpoint state contains non-finite coefficients".into()));
        }
        est.buffer = LagBuffer::from_samples(config.nodes, config.order, &buffer)?;
        est.state = state;
        est.seen = samples_seen;
        Ok(est)
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar, B: Serialize + DeserializeOwned")]
pub struct Checkpoint<F, B> {
    pub config: EstimatorConfig,
    pub features: B,
    pub state: CoefficientState<F>,
    /// Buffered samples, oldest first.
    pub buffer: Vec<Vec<F>>,
    pub samples_seen: usize,
}

/// Running mean of coefficient iterates.
#[derive(Debug, Clone)]
pub struct IterateAverage<F> {
    sum: Vec<Vec<F>>,
    layout: GroupLayout,
    count: usize,
}

impl<F: Scalar> IterateAverage<F> {
    pub fn new(layout: GroupLayout) -> Self {
        Self { sum: vec![vec![F::zero(); layout.dim()]; layout.nodes], layout, count: 0 }
    }

    pub fn add(&mut self, state: &CoefficientState<F>) {
        for (acc, row) in self.sum.iter_mut().zip(state.rows()) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> CoefficientState<F> {
        let c = F::of(self.count.max(1) as f64);
        let rows = self.sum.iter().map(|r| r.iter().map(|&v| v / c).collect()).collect();
        CoefficientState { layout: self.layout, alpha: rows, iterations: self.count as u64 }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{comid_group_update, gradient, StepSchedule};
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn cfg(nodes: usize, order: usize, d: usize, lambda: f64, gamma: f64) -> EstimatorConfig {
        EstimatorConfig {
            nodes,
            order,
            features: d,
            lambda,
            step: StepSchedule::Constant { gamma },
            kernel_variance: 0.5,
            rff_seed: 3,
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn step_before_warm_up_fails() {
        let mut est = RfEstimator::<f64>::from_config(&cfg(2, 2, 3, 0.1, 0.1)).unwrap();
        assert!(matches!(est.step(&[0.1, 0.2]), Err(Error::WarmupIncomplete { needed: 2, have: 0 })));
        est.warm_up(&[0.1, 0.2]).unwrap();
        assert!(matches!(est.step(&[0.1, 0.2]), Err(Error::WarmupIncomplete { needed: 2, have: 1 })));
        est.warm_up(&[0.3, 0.4]).unwrap();
        assert!(est.warm_up(&[0.3, 0.4]).is_err());
        assert!(est.step(&[0.3, 0.4]).is_ok());
        assert!(est.step(&[0.3]).is_err());
    }

    #[test]
    fn first_step_without_penalty_is_plain_sgd() {
        let gamma = 0.05;
        let mut est = RfEstimator::<f64>::from_config(&cfg(3, 1, 4, 0.0, gamma)).unwrap();
        est.feed(&[0.2, -0.1, 0.4]).unwrap();
        let z = est.current_features().unwrap();
        let y = [1.5, -0.7, 0.3];
        let out = est.step(&y).unwrap();
        assert_eq!(out.predictions, vec![0.0; 3]);
        for n in 0..3 {
            for (a, zi) in est.state().row(n).iter().zip(&z) {
                assert_eq!(*a, -gamma * (zi * -y[n]));
                assert!((a - gamma * y[n] * zi).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn large_penalty_zeroes_every_group() {
        let mut est = RfEstimator::<f64>::from_config(&cfg(3, 2, 5, 1e6, 0.1)).unwrap();
        est.feed(&[0.2, -0.1, 0.4]).unwrap();
        est.feed(&[1.0, 2.0, -3.0]).unwrap();
        est.feed(&[5.0, -5.0, 2.0]).unwrap();
        assert!(est.state().rows().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn joint_update_equals_per_group_updates() {
        let c = cfg(3, 2, 4, 0.05, 0.3);
        let mut est = RfEstimator::<f64>::from_config(&c).unwrap();
        let mut rng = seed::rng(4);
        for _ in 0..20 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            est.feed(&s).unwrap();
        }
        let before = est.state().clone();
        let z = est.current_features().unwrap();
        let y = [0.3, -0.2, 0.9];
        est.step(&y).unwrap();
        let layout = before.layout();
        for n in 0..3 {
            let v = gradient(before.row(n), &z, y[n]).unwrap();
            for lag in 0..2 {
                for src in 0..3 {
                    let r = layout.range(src, lag);
                    let expected = comid_group_update(&before.row(n)[r.clone()], &v[r], 0.3, 0.05).unwrap();
                    assert_eq!(est.state().group(n, src, lag), expected.as_slice());
                }
            }
        }
    }

    #[test]
    fn three_step_hand_trace() {
        // N = P = D = 1 with frequency pinned so the trace can be followed by hand.
        use crate::rff::{GaussianKernel, RffMap};
        let c = cfg(1, 1, 1, 0.1, 0.5);
        let map = RffMap::from_frequencies(GaussianKernel::new(1.0).unwrap(), vec![1.0], 0).unwrap();
        let maps = FeatureMaps::from_maps(vec![map], 1, 1).unwrap();
        let mut est = OnlineEstimator::with_features(&c, maps).unwrap();
        let ys = [0.5f64, 1.0, -0.5, 2.0];
        est.feed(&[ys[0]]).unwrap();

        let (gamma, lambda) = (0.5f64, 0.1f64);
        let mut alpha = [0.0f64, 0.0];
        for t in 1..4 {
            let x = ys[t - 1];
            let z = [x.sin(), x.cos()];
            let pred = alpha[0] * z[0] + alpha[1] * z[1];
            let r = pred - ys[t];
            let u = [alpha[0] - gamma * z[0] * r, alpha[1] - gamma * z[1] * r];
            let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
            let f = (1.0 - gamma * lambda / nu).max(0.0);
            alpha = [u[0] * f, u[1] * f];
            let out = est.step(&[ys[t]]).unwrap();
            assert!((out.predictions[0] - pred).abs() < 1e-14);
            assert!((est.state().row(0)[0] - alpha[0]).abs() < 1e-14);
            assert!((est.state().row(0)[1] - alpha[1]).abs() < 1e-14);
        }
        // First step: z = (sin .5, cos .5), r = -1, u = 0.5 z with |u| = 0.5 > 0.05.
        assert_eq!(est.state().iterations(), 3);
    }

    #[test]
    fn linear_baseline_reduces_to_scalar_lms() {
        let c = cfg(1, 1, 1, 0.0, 0.1);
        let mut est = LinearBaseline::<f64>::from_config(&c).unwrap();
        let ys = [1.0f64, 0.8, 0.5, 0.9, -0.3];
        est.feed(&[ys[0]]).unwrap();
        let mut w = 0.0f64;
        for t in 1..ys.len() {
            let e = ys[t] - w * ys[t - 1];
            w += 0.1 * e * ys[t - 1];
            est.step(&[ys[t]]).unwrap();
            assert!((est.state().row(0)[0] - w).abs() < 1e-15);
        }
        let mut cold = LinearBaseline::<f64>::from_config(&cfg(2, 2, 1, 0.0, 0.1)).unwrap();
        assert!(matches!(cold.step(&[0.0, 0.0]), Err(Error::WarmupIncomplete { .. })));
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        let c = cfg(3, 2, 6, 0.02, 0.2);
        let mut rng = seed::rng(10);
        let data: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut full = RfEstimator::<f64>::from_config(&c).unwrap();
        let mut half = RfEstimator::<f64>::from_config(&c).unwrap();
        for s in &data[..30] {
            full.feed(s).unwrap();
            half.feed(s).unwrap();
        }
        let text = serde_json::to_string(&half.checkpoint()).unwrap();
        let ckpt: Checkpoint<f64, FeatureMaps<f64>> = serde_json::from_str(&text).unwrap();
        let mut resumed = RfEstimator::resume(ckpt).unwrap();
        for s in &data[30..] {
            let a = full.feed(s).unwrap().unwrap();
            let b = resumed.feed(s).unwrap().unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(full.state(), resumed.state());
    }

    #[test]
    fn divergent_step_is_reported() {
        let mut est = RfEstimator::<f64>::from_config(&cfg(2, 1, 3, 0.0, 1e300)).unwrap();
        est.feed(&[0.1, 0.2]).unwrap();
        let mut failed = false;
        for _ in 0..10 {
            if let Err(e) = est.feed(&[1e10, -1e10]) {
                assert!(matches!(e, Error::Diverged { .. }));
                failed = true;
                break;
            }
        }
        assert!(failed);
    }

    #[test]
    fn iterate_average_is_arithmetic_mean() {
        let layout = GroupLayout::new(1, 1, 2);
        let mut avg = IterateAverage::<f64>::new(layout);
        avg.add(&CoefficientState::from_rows(layout, vec![vec![1.0, 2.0]], 1).unwrap());
        avg.add(&CoefficientState::from_rows(layout, vec![vec![3.0, -2.0]], 2).unwrap());
        assert_eq!(avg.mean().row(0), &[2.0, 0.0]);
    }
}
