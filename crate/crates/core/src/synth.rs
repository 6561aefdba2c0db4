//! Synthetic data from the additive nonlinear VAR model
//!
//! ```text
//! y_n[t] = sum_{n', p} a[n, n', p] * f[n, n', p](y_n'[t - p]) + u_n[t]
//! ```
//!
//! where every `f` is a finite Gaussian-kernel expansion with frozen centers
//! and weights. Topologies are either fixed, switch one edge at a regular
//! interval, or drift slowly.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rff::GaussianKernel;
use crate::scalar::Scalar;
use crate::seed::{self, Rng};
use crate::series::{LagBuffer, TimeSeries};

/// Samples whose magnitude exceeds this abort generation.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

const DRIFT_AMPLITUDE: f64 = 0.01;
const DRIFT_FREQUENCY: f64 = 0.03;

// Independent random streams derived from the generator seed.
const STREAM_TOPOLOGY: u64 = 0;
const STREAM_BANK: u64 = 1;
const STREAM_SAMPLES: u64 = 2;
const STREAM_SWITCH: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    #[default]
    None,
    /// Every active coefficient drifts.
    AllActive,
    /// Only the designated edge (first active slot in `(n, n', p)` order) drifts.
    DesignatedEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub nodes: usize,
    pub order: usize,
    pub length: usize,
    pub edge_probability: f64,
    /// Samples between edge switches; 0 disables switching.
    pub switch_interval: usize,
    pub drift: DriftMode,
    /// Active coefficients are drawn from `Uniform(weight_low, weight_high)`.
    pub weight_low: f64,
    pub weight_high: f64,
    pub noise_std: f64,
    /// Variance of the Gaussian kernel inside each nonlinearity.
    pub kernel_variance: f64,
    /// Variance of the zero-mean Gaussian expansion weights.
    pub weight_variance: f64,
    /// Kernel centers per nonlinearity.
    pub centers: usize,
    /// Redraw the initial topology until it has at least this many active slots.
    pub min_active: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            nodes: 5,
            order: 2,
            length: 3000,
            edge_probability: 0.1,
            switch_interval: 0,
            drift: DriftMode::None,
            weight_low: 0.0,
            weight_high: 1.0,
            noise_std: 0.01,
            kernel_variance: 0.01,
            weight_variance: 30.0,
            centers: 10,
            min_active: 0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.nodes == 0 || self.order == 0 {
            return fail("generator nodes and order must be at least 1");
        }
        if self.length <= self.order {
            return fail("generator length must exceed the model order");
        }
        if !(0.0..=1.0).contains(&self.edge_probability) {
            return fail("edge_probability must lie in [0, 1]");
        }
        if !(self.weight_low.is_finite() && self.weight_high.is_finite())
            || self.weight_low > self.weight_high
        {
            return fail("weight range must be finite with weight_low <= weight_high");
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return fail("noise_std must be a finite nonnegative number");
        }
        if !(self.kernel_variance > 0.0) || !self.kernel_variance.is_finite() {
            return fail("kernel_variance must be positive");
        }
        if !(self.weight_variance >= 0.0) || !self.weight_variance.is_finite() {
            return fail("weight_variance must be nonnegative");
        }
        if self.centers == 0 {
            return fail("centers must be at least 1");
        }
        if self.min_active > self.slots() {
            return fail("min_active exceeds the number of slots");
        }
        if self.min_active > 0 && self.edge_probability == 0.0 {
            return fail("min_active > 0 is unreachable with edge_probability 0");
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        self.nodes * self.nodes * self.order
    }
}

/// Ground-truth coefficients `a[n, n', p]` with their active mask.
///
/// Slots are indexed `(target, source, lag)` in row-major order; `lag` is
/// 0-based, so lag 0 is `p = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Topology<F> {
    nodes: usize,
    order: usize,
    coefficients: Vec<F>,
    active: Vec<bool>,
}

impl<F: Scalar> Topology<F> {
    pub fn empty(nodes: usize, order: usize) -> Self {
        let slots = nodes * nodes * order;
        Self { nodes, order, coefficients: vec![F::zero(); slots], active: vec![false; slots] }
    }

    /// Validating constructor for topologies read back from disk.
    pub fn from_parts(nodes: usize, order: usize, coefficients: Vec<F>, active: Vec<bool>) -> Result<Self> {
        let slots = nodes * nodes * order;
        if coefficients.len() != slots || active.len() != slots {
            return Err(Error::DimensionMismatch { expected: slots, found: coefficients.len().min(active.len()) });
        }
        if coefficients.iter().zip(&active).any(|(c, &a)| !c.is_finite() || (!a && *c != F::zero())) {
            return Err(Error::Data("inactive slots must have zero coefficients".into()));
        }
        Ok(Self { nodes, order, coefficients, active })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn slot(&self, target: usize, source: usize, lag: usize) -> usize {
        (target * self.nodes + source) * self.order + lag
    }

    pub fn coefficient(&self, target: usize, source: usize, lag: usize) -> F {
        self.coefficients[self.slot(target, source, lag)]
    }

    pub fn is_active(&self, target: usize, source: usize, lag: usize) -> bool {
        self.active[self.slot(target, source, lag)]
    }

    pub fn coefficients(&self) -> &[F] {
        &self.coefficients
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Activates a slot with the given coefficient.
    pub fn set_edge(&mut self, target: usize, source: usize, lag: usize, value: F) {
        let s = self.slot(target, source, lag);
        self.coefficients[s] = value;
        self.active[s] = true;
    }

    pub fn clear_edge(&mut self, target: usize, source: usize, lag: usize) {
        let s = self.slot(target, source, lag);
        self.coefficients[s] = F::zero();
        self.active[s] = false;
    }

    /// First active slot in index order; the edge that drifts under
    /// [`DriftMode::DesignatedEdge`] and the one traced in drift experiments.
    pub fn designated_edge(&self) -> Option<usize> {
        self.active.iter().position(|&a| a)
    }

    /// Deactivates one uniformly chosen active slot and activates one uniformly
    /// chosen previously inactive slot with a fresh `Uniform(low, high)` weight.
    /// Returns `(removed, added)` slot indices.
    pub fn switch_edge(&mut self, rng: &mut Rng, low: f64, high: f64) -> Result<(usize, usize)> {
        let active: Vec<usize> = (0..self.active.len()).filter(|&s| self.active[s]).collect();
        let inactive: Vec<usize> = (0..self.active.len()).filter(|&s| !self.active[s]).collect();
        let (Some(&removed), Some(&added)) = (active.choose(rng), inactive.choose(rng)) else {
            return Err(Error::NoSwitchPossible);
        };
        self.coefficients[removed] = F::zero();
        self.active[removed] = false;
        self.coefficients[added] = F::of(uniform(rng, low, high));
        self.active[added] = true;
        Ok((removed, added))
    }

    /// The topology one step after `t` under `a[t+1] = a[t] + 0.01 sin(0.03 t)`.
    pub fn slow_drift(&self, t: usize) -> Self {
        self.drifted(t, DriftMode::AllActive)
    }

    pub fn drifted(&self, t: usize, mode: DriftMode) -> Self {
        let mut next = self.clone();
        let inc = F::of(DRIFT_AMPLITUDE * (DRIFT_FREQUENCY * t as f64).sin());
        match mode {
            DriftMode::None => {}
            DriftMode::AllActive => {
                for (c, &a) in next.coefficients.iter_mut().zip(&self.active) {
                    if a {
                        *c += inc;
                    }
                }
            }
            DriftMode::DesignatedEdge => {
                if let Some(s) = self.designated_edge() {
                    next.coefficients[s] += inc;
                }
            }
        }
        next
    }
}

fn uniform(rng: &mut Rng, low: f64, high: f64) -> f64 {
    if low == high {
        low
    } else {
        rng.random_range(low..high)
    }
}

/// Draws the initial topology from the seed in `cfg`: every slot is active
/// independently with probability `edge_probability`.
pub fn init_topology<F: Scalar>(cfg: &GeneratorConfig) -> Result<Topology<F>> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, STREAM_TOPOLOGY));
    loop {
        let mut topo = Topology::empty(cfg.nodes, cfg.order);
        for s in 0..topo.active.len() {
            if rng.random_bool(cfg.edge_probability) {
                topo.active[s] = true;
                topo.coefficients[s] = F::of(uniform(&mut rng, cfg.weight_low, cfg.weight_high));
            }
        }
        if topo.active_count() >= cfg.min_active {
            return Ok(topo);
        }
    }
}

/// Frozen nonlinearities `f(y) = sum_m w_m k(y, c_m)`, one per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct NonlinearityBank<F> {
    kernel: GaussianKernel<F>,
    centers_per_slot: usize,
    centers: Vec<F>,
    weights: Vec<F>,
}

impl<F: Scalar> NonlinearityBank<F> {
    pub fn sample(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let kernel = GaussianKernel::new(F::of(cfg.kernel_variance))?;
        let weight_dist = Normal::new(0.0, cfg.weight_variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = seed::rng(seed::derive_seed(cfg.seed, STREAM_BANK));
        let total = cfg.slots() * cfg.centers;
        let mut centers = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for _ in 0..total {
            let c: f64 = StandardNormal.sample(&mut rng);
            centers.push(F::of(c));
            weights.push(F::of(weight_dist.sample(&mut rng)));
        }
        Ok(Self { kernel, centers_per_slot: cfg.centers, centers, weights })
    }

    /// Bank with explicit per-slot centers and weights, each of length `slots * m`.
    pub fn from_parts(kernel: GaussianKernel<F>, m: usize, centers: Vec<F>, weights: Vec<F>) -> Result<Self> {
        if m == 0 || centers.len() != weights.len() || !centers.len().is_multiple_of(m) {
            return Err(Error::invalid("centers and weights must have equal length, a multiple of m >= 1"));
        }
        Ok(Self { kernel, centers_per_slot: m, centers, weights })
    }

    pub fn kernel(&self) -> GaussianKernel<F> {
        self.kernel
    }

    pub fn centers(&self, slot: usize) -> &[F] {
        &self.centers[slot * self.centers_per_slot..(slot + 1) * self.centers_per_slot]
    }

    pub fn weights(&self, slot: usize) -> &[F] {
        &self.weights[slot * self.centers_per_slot..(slot + 1) * self.centers_per_slot]
    }

    pub fn eval(&self, slot: usize, y: F) -> F {
        self.centers(slot)
            .iter()
            .zip(self.weights(slot))
            .map(|(&c, &w)| w * self.kernel.eval(y, c))
            .sum()
    }
}

/// One model step: `y_n[t]` for every node from the buffered history.
pub fn step<F: Scalar>(
    topo: &Topology<F>,
    bank: &NonlinearityBank<F>,
    history: &LagBuffer<F>,
    noise: &[F],
) -> Result<Vec<F>> {
    let (n_nodes, order) = (topo.nodes, topo.order);
    if history.nodes() != n_nodes || history.order() != order {
        return Err(Error::DimensionMismatch { expected: n_nodes * order, found: history.nodes() * history.order() });
    }
    if !history.is_full() {
        return Err(Error::WarmupIncomplete { needed: order, have: history.filled() });
    }
    if noise.len() != n_nodes {
        return Err(Error::DimensionMismatch { expected: n_nodes, found: noise.len() });
    }
    for src in 0..n_nodes {
        for lag in 0..order {
            if !history.lagged(src, lag).is_finite() {
                return Err(Error::Diverged { t: 0, detail: "non-finite history".into() });
            }
        }
    }
    let mut out = Vec::with_capacity(n_nodes);
    for n in 0..n_nodes {
        let mut y = noise[n];
        for src in 0..n_nodes {
            for lag in 0..order {
                let s = topo.slot(n, src, lag);
                if topo.active[s] {
                    y += topo.coefficients[s] * bank.eval(s, history.lagged(src, lag));
                }
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// A topology valid from time index `t` until the next snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct TopologySnapshot<F> {
    pub t: usize,
    pub topology: Topology<F>,
}

/// Piecewise-constant record of the ground truth over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct TopologyTrack<F> {
    snapshots: Vec<TopologySnapshot<F>>,
}

impl<F: Scalar> TopologyTrack<F> {
    pub fn constant(topology: Topology<F>) -> Self {
        Self { snapshots: vec![TopologySnapshot { t: 0, topology }] }
    }

    pub fn from_snapshots(snapshots: Vec<TopologySnapshot<F>>) -> Result<Self> {
        if snapshots.is_empty() || snapshots[0].t != 0 {
            return Err(Error::Data("topology track must start with a snapshot at t=0".into()));
        }
        if snapshots.windows(2).any(|w| w[0].t >= w[1].t) {
            return Err(Error::Data("topology snapshots must have increasing t".into()));
        }
        Ok(Self { snapshots })
    }

    fn record(&mut self, t: usize, topology: Topology<F>) {
        self.snapshots.push(TopologySnapshot { t, topology });
    }

    pub fn snapshots(&self) -> &[TopologySnapshot<F>] {
        &self.snapshots
    }

    /// Topology in effect at time `t`.
    pub fn at(&self, t: usize) -> &Topology<F> {
        let i = self.snapshots.partition_point(|s| s.t <= t);
        &self.snapshots[i.saturating_sub(1)].topology
    }

    /// Times at which the active set changed.
    pub fn change_times(&self) -> Vec<usize> {
        self.snapshots
            .windows(2)
            .filter(|w| w[0].topology.active != w[1].topology.active)
            .map(|w| w[1].t)
            .collect()
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData<F> {
    pub series: TimeSeries<F>,
    pub truth: TopologyTrack<F>,
    pub bank: NonlinearityBank<F>,
}

/// Generates `cfg.length` samples: the first `order` are i.i.d. standard normal,
/// the rest follow the model. Switches happen before samples at multiples of
/// `switch_interval`; drift updates the coefficients before every sample.
pub fn generate<F: Scalar>(cfg: &GeneratorConfig) -> Result<SyntheticData<F>> {
    cfg.validate()?;
    let mut topo = init_topology::<F>(cfg)?;
    let bank = NonlinearityBank::sample(cfg)?;
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, STREAM_SAMPLES));
    let mut switch_rng = seed::rng(seed::derive_seed(cfg.seed, STREAM_SWITCH));
    let noise_dist = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;

    let mut series = TimeSeries::with_capacity(cfg.nodes, cfg.length)?;
    let mut history = LagBuffer::new(cfg.nodes, cfg.order)?;
    let mut truth = TopologyTrack::constant(topo.clone());
    let drifting = cfg.drift != DriftMode::None;

    for t in 0..cfg.length {
        if drifting && t > 0 {
            topo = topo.drifted(t - 1, cfg.drift);
            truth.record(t, topo.clone());
        }
        if cfg.switch_interval > 0 && t > cfg.order && t % cfg.switch_interval == 0 {
            topo.switch_edge(&mut switch_rng, cfg.weight_low, cfg.weight_high)?;
            if drifting {
                truth.snapshots.last_mut().expect("recorded above").topology = topo.clone();
            } else {
                truth.record(t, topo.clone());
            }
        }
        let sample: Vec<F> = if t < cfg.order {
            (0..cfg.nodes).map(|_| F::of(StandardNormal.sample(&mut rng))).collect()
        } else {
            let noise: Vec<F> = (0..cfg.nodes).map(|_| F::of(noise_dist.sample(&mut rng))).collect();
            step(&topo, &bank, &history, &noise)?
        };
        if let Some(v) = sample.iter().find(|v| !(v.abs().as_f64() <= DIVERGENCE_LIMIT)) {
            return Err(Error::Diverged { t, detail: format!("sample magnitude {v} exceeds {DIVERGENCE_LIMIT}") });
        }
        history.push(&sample)?;
        series.push(&sample)?;
    }
    Ok(SyntheticData { series, truth, bank })
}
