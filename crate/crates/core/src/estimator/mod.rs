//! Sparse online estimation of nonlinear VAR coefficients.
//!
//! Each node `n` keeps a stacked coefficient vector `alpha_n` made of one
//! group per `(lag, source)` pair. Groups are laid out in lexicographic order
//! of `(lag, source, feature)`, matching the stacked feature vector `z_t`.
//! The per-step update linearizes the squared loss, takes a gradient step and
//! applies group soft-thresholding, which zeroes whole groups exactly.

mod batch;
mod online;

pub use batch::{batch_oracle, batch_objective, BatchFit, BatchOptions};
pub use online::{
    Checkpoint, FeatureBuilder, IterateAverage, LaggedSamples, LinearBaseline, OnlineEstimator, RfEstimator,
    StepOutput,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rff::{FeatureMaps, MapSharing};
use crate::scalar::{dot, stable_norm, Scalar};
use crate::series::LagBuffer;

/// Step size `gamma_t` used by the update at iteration `k` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `gamma_t = gamma`.
    Constant { gamma: f64 },
    /// `gamma_t = 1 / gamma`; `gamma` weights the proximity term instead of the step.
    Reciprocal { gamma: f64 },
    /// `gamma_t = gamma / sqrt(k + 1)`.
    InvSqrt { gamma: f64 },
}

impl StepSchedule {
    pub fn gamma(&self) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } | StepSchedule::Reciprocal { gamma } | StepSchedule::InvSqrt { gamma } => {
                gamma
            }
        }
    }

    pub fn at(&self, iteration: u64) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::Reciprocal { gamma } => gamma.recip(),
            StepSchedule::InvSqrt { gamma } => gamma / ((iteration + 1) as f64).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let g = self.gamma();
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::Config(format!("step gamma must be positive and finite, got {g}")));
        }
        Ok(())
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Constant { gamma: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub nodes: usize,
    pub order: usize,
    /// Number of random frequencies `D`; each group has `2D` coefficients.
    pub features: usize,
    pub lambda: f64,
    pub step: StepSchedule,
    pub kernel_variance: f64,
    pub rff_seed: u64,
    pub map_sharing: MapSharing,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            nodes: 5,
            order: 2,
            features: 50,
            lambda: 0.1,
            step: StepSchedule::default(),
            kernel_variance: 0.1,
            rff_seed: 0,
            map_sharing: MapSharing::Shared,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.order == 0 {
            return Err(Error::Config("estimator nodes and order must be at least 1".into()));
        }
        if self.features == 0 {
            return Err(Error::Config("estimator features (D) must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        if !(self.kernel_variance > 0.0) || !self.kernel_variance.is_finite() {
            return Err(Error::Config("kernel_variance must be positive".into()));
        }
        self.step.validate()
    }

    /// Samples the random feature maps described by this configuration.
    pub fn feature_maps<F: Scalar>(&self) -> Result<FeatureMaps<F>> {
        let kernel = crate::rff::GaussianKernel::new(F::of(self.kernel_variance))?;
        FeatureMaps::sample(kernel, self.features, self.rff_seed, self.map_sharing, self.nodes, self.order)
    }
}

/// Index arithmetic for the stacked coefficient and feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLayout {
    pub nodes: usize,
    pub order: usize,
    pub group_len: usize,
}

impl GroupLayout {
    pub fn new(nodes: usize, order: usize, group_len: usize) -> Self {
        Self { nodes, order, group_len }
    }

    pub fn groups(&self) -> usize {
        self.nodes * self.order
    }

    pub fn dim(&self) -> usize {
        self.groups() * self.group_len
    }

    /// Start of the group for `source` at 0-based `lag`.
    #[inline]
    pub fn offset(&self, source: usize, lag: usize) -> usize {
        (lag * self.nodes + source) * self.group_len
    }

    pub fn range(&self, source: usize, lag: usize) -> std::ops::Range<usize> {
        let o = self.offset(source, lag);
        o..o + self.group_len
    }

    /// `(source, lag)` of the group containing stacked index `i`.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        let g = i / self.group_len;
        (g % self.nodes, g / self.nodes)
    }
}

/// Stacked coefficients for every target node plus the iteration counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct CoefficientState<F> {
    layout: GroupLayout,
    alpha: Vec<Vec<F>>,
    iterations: u64,
}

impl<F: Scalar> CoefficientState<F> {
    pub fn zeros(layout: GroupLayout) -> Self {
        Self { layout, alpha: vec![vec![F::zero(); layout.dim()]; layout.nodes], iterations: 0 }
    }

    pub fn from_rows(layout: GroupLayout, alpha: Vec<Vec<F>>, iterations: u64) -> Result<Self> {
        if alpha.len() != layout.nodes {
            return Err(Error::DimensionMismatch { expected: layout.nodes, found: alpha.len() });
        }
        if let Some(r) = alpha.iter().find(|r| r.len() != layout.dim()) {
            return Err(Error::DimensionMismatch { expected: layout.dim(), found: r.len() });
        }
        Ok(Self { layout, alpha, iterations })
    }

    pub fn layout(&self) -> GroupLayout {
        self.layout
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn row(&self, node: usize) -> &[F] {
        &self.alpha[node]
    }

    pub fn row_mut(&mut self, node: usize) -> &mut [F] {
        &mut self.alpha[node]
    }

    pub fn rows(&self) -> &[Vec<F>] {
        &self.alpha
    }

    /// Coefficient group `alpha[target][source][lag]`.
    pub fn group(&self, target: usize, source: usize, lag: usize) -> &[F] {
        &self.alpha[target][self.layout.range(source, lag)]
    }

    pub fn group_norm(&self, target: usize, source: usize, lag: usize) -> F {
        stable_norm(self.group(target, source, lag))
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().flatten().all(|v| v.is_finite())
    }
}

/// Stacked feature vector `z_t` of length `2 P N D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<F> {
    layout: GroupLayout,
    values: Vec<F>,
}

impl<F: Scalar> FeatureVector<F> {
    pub fn layout(&self) -> GroupLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    pub fn block(&self, source: usize, lag: usize) -> &[F] {
        &self.values[self.layout.range(source, lag)]
    }

    pub fn into_vec(self) -> Vec<F> {
        self.values
    }
}

/// Builds `z_t` from the last `P` samples: block `(lag, source)` is the feature
/// map of `y_source[t - 1 - lag]`.
pub fn build_feature_vector<F: Scalar>(history: &LagBuffer<F>, maps: &FeatureMaps<F>) -> Result<FeatureVector<F>> {
    let layout = GroupLayout::new(maps.nodes(), maps.order(), 2 * maps.num_frequencies());
    let mut values = vec![F::zero(); layout.dim()];
    maps.fill(history, &mut values)?;
    Ok(FeatureVector { layout, values })
}

fn check_dims<F>(alpha: &[F], z: &[F]) -> Result<()> {
    if alpha.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: z.len(), found: alpha.len() });
    }
    Ok(())
}

/// One-step-ahead prediction `alpha_n . z_t`.
pub fn predict<F: Scalar>(alpha: &[F], z: &[F]) -> Result<F> {
    check_dims(alpha, z)?;
    Ok(dot(alpha, z))
}

/// `0.5 (y - alpha . z)^2`.
pub fn instantaneous_loss<F: Scalar>(alpha: &[F], z: &[F], y: F) -> Result<F> {
    let r = y - predict(alpha, z)?;
    Ok(F::of(0.5) * r * r)
}

/// Gradient of the instantaneous loss, `z (alpha . z - y)`.
pub fn gradient<F: Scalar>(alpha: &[F], z: &[F], y: F) -> Result<Vec<F>> {
    let r = predict(alpha, z)? - y;
    Ok(z.iter().map(|&zi| zi * r).collect())
}

/// Shrinks `u` in place to `u [1 - threshold / |u|]_+`. Groups whose norm is at
/// or below the threshold become exact zeros.
#[inline]
pub fn group_shrink_in_place<F: Scalar>(u: &mut [F], threshold: F) {
    let norm = stable_norm(u);
    if norm <= threshold {
        u.iter_mut().for_each(|v| *v = F::zero());
    } else if threshold > F::zero() {
        let factor = F::one() - threshold / norm;
        u.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Closed-form composite mirror descent update of one coefficient group:
/// a gradient step `u = group - gamma_t grad` followed by multidimensional
/// shrinkage with threshold `gamma_t lambda`.
pub fn comid_group_update<F: Scalar>(group: &[F], grad: &[F], gamma_t: F, lambda: F) -> Result<Vec<F>> {
    check_dims(group, grad)?;
    if !(gamma_t > F::zero()) || !gamma_t.is_finite() {
        return Err(Error::invalid(format!("step size must be positive and finite, got {gamma_t}")));
    }
    if !(lambda >= F::zero()) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be nonnegative and finite, got {lambda}")));
    }
    if group.iter().chain(grad).any(|v| !v.is_finite()) {
        return Err(Error::invalid("group update inputs must be finite"));
    }
    let mut u: Vec<F> = group.iter().zip(grad).map(|(&a, &g)| a - gamma_t * g).collect();
    group_shrink_in_place(&mut u, gamma_t * lambda);
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rff::{sample_frequencies, GaussianKernel, RffMap};
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vec(rng: &mut seed::Rng, len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn layout_is_lexicographic_in_lag_source_feature() {
        let l = GroupLayout::new(3, 2, 4);
        assert_eq!(l.dim(), 24);
        assert_eq!(l.offset(0, 0), 0);
        assert_eq!(l.offset(2, 0), 8);
        assert_eq!(l.offset(0, 1), 12);
        assert_eq!(l.offset(2, 1), 20);
        for i in 0..l.dim() {
            let (s, p) = l.locate(i);
            assert!(l.range(s, p).contains(&i));
        }
    }

    #[test]
    fn feature_vector_single_node_at_zero() {
        let map = RffMap::from_frequencies(GaussianKernel::new(1.0).unwrap(), vec![0.4, -1.2], 0).unwrap();
        let maps = FeatureMaps::from_maps(vec![map], 1, 1).unwrap();
        let history = LagBuffer::from_samples(1, 1, &[vec![0.0]]).unwrap();
        let z = build_feature_vector(&history, &maps).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert_eq!(z.as_slice().len(), 4);
        assert_eq!(z.as_slice()[0], 0.0);
        assert_eq!(z.as_slice()[1], 0.0);
        assert!((z.as_slice()[2] - h).abs() < 1e-15);
        assert!((z.as_slice()[3] - h).abs() < 1e-15);
    }

    #[test]
    fn feature_vector_blocks_match_direct_evaluation() {
        let (nodes, order, d) = (4, 3, 5);
        let maps = FeatureMaps::sample(GaussianKernel::new(0.2).unwrap(), d, 9, MapSharing::PerSlot, nodes, order)
            .unwrap();
        let mut rng = seed::rng(2);
        let samples: Vec<Vec<f64>> = (0..order).map(|_| random_vec(&mut rng, nodes, 2.0)).collect();
        let history = LagBuffer::from_samples(nodes, order, &samples).unwrap();
        let z = build_feature_vector(&history, &maps).unwrap();
        let norm2: f64 = z.as_slice().iter().map(|v| v * v).sum();
        assert!((norm2 - (nodes * order) as f64).abs() < 1e-12);
        // Naive triple loop over (p, n', d) against the stacked index.
        let mut i = 0;
        for p in 0..order {
            for src in 0..nodes {
                let y = samples[order - 1 - p][src];
                let direct = maps.map_for(src, p).feature_map(y).unwrap();
                for k in 0..2 * d {
                    assert_eq!(z.as_slice()[i], direct[k]);
                    i += 1;
                }
            }
        }
        // lag index 1 is p = 2, source index 2 is n' = 3
        let block = z.block(2, 1);
        assert_eq!(block, maps.map_for(2, 1).feature_map(samples[order - 2][2]).unwrap().as_slice());
    }

    #[test]
    fn feature_vector_requires_full_history() {
        let maps = FeatureMaps::sample(GaussianKernel::new(0.2).unwrap(), 3, 1, MapSharing::Shared, 2, 2).unwrap();
        let history = LagBuffer::from_samples(2, 2, &[vec![0.1, 0.2]]).unwrap();
        assert!(matches!(build_feature_vector(&history, &maps), Err(Error::WarmupIncomplete { .. })));
    }

    #[test]
    fn predict_cases() {
        let z = vec![0.5, -0.5, 0.5, 0.5];
        assert_eq!(predict(&[0.0; 4], &z).unwrap(), 0.0);
        assert_eq!(predict(&z, &z).unwrap(), 1.0);
        assert!(predict(&[0.0; 3], &z).is_err());

        let mut rng = seed::rng(5);
        let a = random_vec(&mut rng, 12, 1.0);
        let b = random_vec(&mut rng, 12, 1.0);
        let mut naive = 0.0;
        for i in 0..12 {
            naive += a[i] * b[i];
        }
        assert!((predict(&a, &b).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn loss_cases() {
        let z = vec![0.6, 0.8];
        assert_eq!(instantaneous_loss(&[1.0, 1.0], &z, 1.4).unwrap(), 0.0);
        assert_eq!(instantaneous_loss(&[0.0, 0.0], &z, 2.0).unwrap(), 2.0);
        let mut rng = seed::rng(6);
        let a = random_vec(&mut rng, 6, 1.0);
        let zz = random_vec(&mut rng, 6, 1.0);
        let r = 0.3 - a.iter().zip(&zz).map(|(x, y)| x * y).sum::<f64>();
        assert!((instantaneous_loss(&a, &zz, 0.3).unwrap() - 0.5 * r * r).abs() < 1e-14);
        assert!(instantaneous_loss(&a, &zz[..5], 0.3).is_err());
    }

    #[test]
    fn gradient_cases() {
        let z = vec![0.6, 0.8];
        assert_eq!(gradient(&[1.0, 1.0], &z, 1.4).unwrap(), vec![0.0, 0.0]);
        assert_eq!(gradient(&[0.0, 0.0], &z, 1.0).unwrap(), vec![-0.6, -0.8]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seed::rng(8);
        let eps = 1e-5;
        for _ in 0..20 {
            let a = random_vec(&mut rng, 10, 1.0);
            let z = random_vec(&mut rng, 10, 1.0);
            let y = rng.random_range(-2.0..2.0);
            let g = gradient(&a, &z, y).unwrap();
            for i in 0..10 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[i] += eps;
                am[i] -= eps;
                let fd = (instantaneous_loss(&ap, &z, y).unwrap() - instantaneous_loss(&am, &z, y).unwrap()) / (2.0 * eps);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn comid_update_closed_forms() {
        let g = [3.0f64, 4.0];
        let zero = [0.0, 0.0];
        // lambda = 0 is a plain gradient step
        let out = comid_group_update(&[1.0, 2.0], &[0.5, -1.0], 0.1, 0.0).unwrap();
        assert_eq!(out, vec![1.0 - 0.1 * 0.5, 2.0 + 0.1 * 1.0]);
        // |u| = 0.5 inside the threshold ball of radius 1
        assert_eq!(comid_group_update(&[0.3, 0.4], &zero, 1.0, 1.0).unwrap(), vec![0.0, 0.0]);
        // |u| = 5, threshold 1
        let out = comid_group_update(&g, &zero, 1.0, 1.0).unwrap();
        assert!((out[0] - 2.4).abs() < 1e-15 && (out[1] - 3.2).abs() < 1e-15);
        // boundary |u| == gamma lambda yields zero
        assert_eq!(comid_group_update(&g, &zero, 1.0, 5.0).unwrap(), vec![0.0, 0.0]);
        // |u| = 0 with positive lambda
        assert_eq!(comid_group_update(&zero, &zero, 1.0, 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn comid_update_rejects_bad_inputs() {
        assert!(comid_group_update(&[1.0], &[1.0], 0.0, 1.0).is_err());
        assert!(comid_group_update(&[1.0], &[1.0], 1.0, -1.0).is_err());
        assert!(comid_group_update(&[f64::NAN], &[1.0], 1.0, 1.0).is_err());
        assert!(comid_group_update(&[1.0], &[f64::INFINITY], 1.0, 1.0).is_err());
        assert!(comid_group_update(&[1.0, 2.0], &[1.0], 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn shrinkage_is_exactly_sparse_or_strictly_shrunk(
            group in proptest::collection::vec(-5.0f64..5.0, 1..16),
            gamma in 0.01f64..2.0,
            lambda in 0.0f64..3.0,
        ) {
            let grad: Vec<f64> = group.iter().map(|v| 0.3 * v - 0.1).collect();
            let out = comid_group_update(&group, &grad, gamma, lambda).unwrap();
            let u: Vec<f64> = group.iter().zip(&grad).map(|(a, g)| a - gamma * g).collect();
            let nu = stable_norm(&u);
            if nu <= gamma * lambda {
                prop_assert!(out.iter().all(|&v| v == 0.0));
            } else {
                let no = stable_norm(&out);
                prop_assert!((no - (nu - gamma * lambda)).abs() < 1e-10);
                // same direction
                let cos = dot(&out, &u) / (no * nu);
                prop_assert!((cos - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn approx_kernel_paths_agree(seed in 0u64..1000, x in -5.0f64..5.0, xp in -5.0f64..5.0, c in -10.0f64..10.0) {
            let map = sample_frequencies(GaussianKernel::new(0.5).unwrap(), 16, seed).unwrap();
            let a = map.kernel_approx(x, xp).unwrap();
            prop_assert!((a - map.kernel_approx_cosine(x, xp)).abs() < 1e-10);
            prop_assert!((a - map.kernel_approx(x + c, xp + c).unwrap()).abs() < 1e-10);
            let z = map.feature_map(x).unwrap();
            prop_assert!((stable_norm(&z) - 1.0).abs() < 1e-10);
        }
    }
}
