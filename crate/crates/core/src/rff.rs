//! Gaussian kernel and its random Fourier feature approximation.
//!
//! The kernel is `k(x, x') = exp(-(x - x')^2 / (2 s2))` where `s2` is the
//! configured variance. Its spectral density is a zero-mean Gaussian with
//! variance `1 / s2`, so frequencies drawn from that density give the map
//!
//! ```text
//! z(x) = [sin(v_1 x), ..., sin(v_D x), cos(v_1 x), ..., cos(v_D x)] / sqrt(D)
//! ```
//!
//! whose inner products `z(x) . z(x')` are unbiased estimates of `k(x, x')`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::seed;

/// Gaussian kernel parameterized by its variance (squared bandwidth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRecord<F>", into = "KernelRecord<F>")]
#[serde(bound = "F: Scalar")]
pub struct GaussianKernel<F> {
    variance: F,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct KernelRecord<F> {
    variance: F,
}

impl<F: Scalar> TryFrom<KernelRecord<F>> for GaussianKernel<F> {
    type Error = Error;
    fn try_from(r: KernelRecord<F>) -> Result<Self> {
        GaussianKernel::new(r.variance)
    }
}

impl<F: Scalar> From<GaussianKernel<F>> for KernelRecord<F> {
    fn from(k: GaussianKernel<F>) -> Self {
        KernelRecord { variance: k.variance }
    }
}

impl<F: Scalar> GaussianKernel<F> {
    pub fn new(variance: F) -> Result<Self> {
        if !(variance > F::zero()) || !variance.is_finite() {
            return Err(Error::invalid(format!(
                "kernel variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self { variance })
    }

    pub fn variance(&self) -> F {
        self.variance
    }

    /// Exact kernel value `exp(-(x - x')^2 / (2 variance))`.
    pub fn eval(&self, x: F, x_prime: F) -> F {
        let d = x - x_prime;
        (-(d * d) / (F::of(2.0) * self.variance)).exp()
    }

    /// Standard deviation of the spectral density, `1 / sqrt(variance)`.
    pub fn frequency_std(&self) -> F {
        self.variance.sqrt().recip()
    }
}

/// A fixed draw of `D` frequencies defining a `2D`-dimensional feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RffRecord<F>", into = "RffRecord<F>")]
#[serde(bound = "F: Scalar")]
pub struct RffMap<F> {
    seed: u64,
    kernel: GaussianKernel<F>,
    frequencies: Vec<F>,
    scale: F,
}

/// On-disk layout: `{seed, D, variance, frequencies}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "F: Scalar")]
struct RffRecord<F> {
    seed: u64,
    #[serde(rename = "D")]
    d: usize,
    variance: F,
    frequencies: Vec<F>,
}

impl<F: Scalar> TryFrom<RffRecord<F>> for RffMap<F> {
    type Error = Error;
    fn try_from(r: RffRecord<F>) -> Result<Self> {
        if r.frequencies.len() != r.d {
            return Err(Error::DimensionMismatch { expected: r.d, found: r.frequencies.len() });
        }
        RffMap::from_frequencies(GaussianKernel::new(r.variance)?, r.frequencies, r.seed)
    }
}

impl<F: Scalar> From<RffMap<F>> for RffRecord<F> {
    fn from(m: RffMap<F>) -> Self {
        RffRecord {
            seed: m.seed,
            d: m.frequencies.len(),
            variance: m.kernel.variance,
            frequencies: m.frequencies,
        }
    }
}

/// Draws `d` i.i.d. frequencies from `N(0, 1 / variance)` with a ChaCha8 stream
/// seeded by `seed`.
pub fn sample_frequencies<F: Scalar>(
    kernel: GaussianKernel<F>,
    d: usize,
    seed: u64,
) -> Result<RffMap<F>> {
    if d == 0 {
        return Err(Error::invalid("number of random features D must be at least 1"));
    }
    let normal = Normal::new(0.0, kernel.frequency_std().as_f64())
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let frequencies = (0..d).map(|_| F::of(normal.sample(&mut rng))).collect();
    RffMap::from_frequencies(kernel, frequencies, seed)
}

impl<F: Scalar> RffMap<F> {
    /// Builds a map from explicit frequencies. `seed` is kept as provenance only.
    pub fn from_frequencies(kernel: GaussianKernel<F>, frequencies: Vec<F>, seed: u64) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::invalid("number of random features D must be at least 1"));
        }
        if frequencies.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("frequencies must be finite"));
        }
        let scale = F::of(frequencies.len() as f64).sqrt().recip();
        Ok(Self { seed, kernel, frequencies, scale })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kernel(&self) -> GaussianKernel<F> {
        self.kernel
    }

    pub fn frequencies(&self) -> &[F] {
        &self.frequencies
    }

    /// Number of sampled frequencies `D`.
    pub fn num_frequencies(&self) -> usize {
        self.frequencies.len()
    }

    /// Length of the feature vector, `2D`.
    pub fn dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    pub fn feature_map(&self, x: F) -> Result<Vec<F>> {
        let mut out = vec![F::zero(); self.dim()];
        self.feature_map_into(x, &mut out)?;
        Ok(out)
    }

    /// Writes `z(x)` into `out`, which must have length `2D`.
    pub fn feature_map_into(&self, x: F, out: &mut [F]) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("feature map input must be finite, got {x}")));
        }
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: out.len() });
        }
        let d = self.frequencies.len();
        let (sin_half, cos_half) = out.split_at_mut(d);
        for ((&v, s), c) in self.frequencies.iter().zip(sin_half).zip(cos_half) {
            let (sv, cv) = (v * x).sin_cos();
            *s = sv * self.scale;
            *c = cv * self.scale;
        }
        Ok(())
    }

    /// `z(x) . z(x')`, the random-feature estimate of the kernel.
    pub fn kernel_approx(&self, x: F, x_prime: F) -> Result<F> {
        let a = self.feature_map(x)?;
        let b = self.feature_map(x_prime)?;
        Ok(dot(&a, &b))
    }

    /// The same estimate written as `(1/D) sum_i cos(v_i (x - x'))`.
    pub fn kernel_approx_cosine(&self, x: F, x_prime: F) -> F {
        let diff = x - x_prime;
        let sum: F = self.frequencies.iter().map(|&v| (v * diff).cos()).sum();
        sum / F::of(self.frequencies.len() as f64)
    }
}

/// How random feature maps are assigned to the `(lag, source)` kernel slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSharing {
    /// A single map shared by every slot.
    #[default]
    Shared,
    /// An independently seeded map per `(lag, source)` slot.
    PerSlot,
}

/// The set of feature maps used to build stacked feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FeatureMaps<F> {
    nodes: usize,
    order: usize,
    maps: Vec<RffMap<F>>,
}

impl<F: Scalar> FeatureMaps<F> {
    /// Samples maps for `nodes` sources and `order` lags. Per-slot maps use
    /// seeds derived from `seed` by slot index.
    pub fn sample(
        kernel: GaussianKernel<F>,
        d: usize,
        seed: u64,
        sharing: MapSharing,
        nodes: usize,
        order: usize,
    ) -> Result<Self> {
        let maps = match sharing {
            MapSharing::Shared => vec![sample_frequencies(kernel, d, seed)?],
            MapSharing::PerSlot => (0..nodes * order)
                .map(|slot| sample_frequencies(kernel, d, seed::derive_seed(seed, slot as u64)))
                .collect::<Result<_>>()?,
        };
        Self::from_maps(maps, nodes, order)
    }

    pub fn from_maps(maps: Vec<RffMap<F>>, nodes: usize, order: usize) -> Result<Self> {
        if maps.len() != 1 && maps.len() != nodes * order {
            return Err(Error::DimensionMismatch { expected: nodes * order, found: maps.len() });
        }
        let d = maps[0].num_frequencies();
        if maps.iter().any(|m| m.num_frequencies() != d) {
            return Err(Error::invalid("all feature maps must share the same D"));
        }
        Ok(Self { nodes, order, maps })
    }

    pub fn num_frequencies(&self) -> usize {
        self.maps[0].num_frequencies()
    }

    pub fn is_shared(&self) -> bool {
        self.maps.len() == 1
    }

    pub fn maps(&self) -> &[RffMap<F>] {
        &self.maps
    }

    /// Map for source node `source` at lag index `lag` (0-based, lag 0 means `t-1`).
    pub fn map_for(&self, source: usize, lag: usize) -> &RffMap<F> {
        if self.maps.len() == 1 {
            &self.maps[0]
        } else {
            &self.maps[lag * self.nodes + source]
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn order(&self) -> usize {
        self.order
    }
}
