//! Multivariate time series storage and the lag buffer feeding the estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Samples `y_n[t]` for `n in 0..nodes`, stored time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct TimeSeries<F> {
    nodes: usize,
    values: Vec<F>,
}

impl<F: Scalar> TimeSeries<F> {
    pub fn new(nodes: usize) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::invalid("time series needs at least one node"));
        }
        Ok(Self { nodes, values: Vec::new() })
    }

    pub fn with_capacity(nodes: usize, len: usize) -> Result<Self> {
        let mut s = Self::new(nodes)?;
        s.values.reserve(nodes * len);
        Ok(s)
    }

    /// Builds a series from rows of length `nodes`.
    pub fn from_rows<R: AsRef<[F]>>(nodes: usize, rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut s = Self::new(nodes)?;
        for row in rows {
            s.push(row.as_ref())?;
        }
        Ok(s)
    }

    pub fn push(&mut self, sample: &[F]) -> Result<()> {
        if sample.len() != self.nodes {
            return Err(Error::DimensionMismatch { expected: self.nodes, found: sample.len() });
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at t={}", self.len())));
        }
        self.values.extend_from_slice(sample);
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sample(&self, t: usize) -> &[F] {
        &self.values[t * self.nodes..(t + 1) * self.nodes]
    }

    pub fn get(&self, node: usize, t: usize) -> F {
        self.values[t * self.nodes + node]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.values.chunks_exact(self.nodes)
    }

    /// Per-node zero-mean unit-variance scaling. Constant nodes are only centered.
    pub fn standardized(&self) -> Self {
        let len = F::of(self.len().max(1) as f64);
        let mut out = self.clone();
        for n in 0..self.nodes {
            let mean = self.rows().map(|r| r[n]).sum::<F>() / len;
            let var = self.rows().map(|r| (r[n] - mean) * (r[n] - mean)).sum::<F>() / len;
            let sd = var.sqrt();
            for row in out.values.chunks_exact_mut(self.nodes) {
                row[n] -= mean;
                if sd > F::zero() {
                    row[n] /= sd;
                }
            }
        }
        out
    }
}

/// Ring buffer of the last `order` samples of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct LagBuffer<F> {
    nodes: usize,
    order: usize,
    data: Vec<F>,
    // slot index of the most recent sample
    head: usize,
    filled: usize,
}

impl<F: Scalar> LagBuffer<F> {
    pub fn new(nodes: usize, order: usize) -> Result<Self> {
        if nodes == 0 || order == 0 {
            return Err(Error::invalid("lag buffer needs nodes >= 1 and order >= 1"));
        }
        Ok(Self { nodes, order, data: vec![F::zero(); nodes * order], head: order - 1, filled: 0 })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.order
    }

    pub fn push(&mut self, sample: &[F]) -> Result<()> {
        if sample.len() != self.nodes {
            return Err(Error::DimensionMismatch { expected: self.nodes, found: sample.len() });
        }
        self.head = (self.head + 1) % self.order;
        self.data[self.head * self.nodes..(self.head + 1) * self.nodes].copy_from_slice(sample);
        self.filled = (self.filled + 1).min(self.order);
        Ok(())
    }

    /// `y_source[t - 1 - lag]` where `t` is the next time index to be observed.
    #[inline]
    pub fn lagged(&self, source: usize, lag: usize) -> F {
        let slot = (self.head + self.order - lag) % self.order;
        self.data[slot * self.nodes + source]
    }

    /// Buffered samples, oldest first.
    pub fn samples(&self) -> Vec<Vec<F>> {
        (0..self.filled)
            .rev()
            .map(|lag| (0..self.nodes).map(|n| self.lagged(n, lag)).collect())
            .collect()
    }

    pub fn from_samples(nodes: usize, order: usize, samples: &[Vec<F>]) -> Result<Self> {
        if samples.len() > order {
            return Err(Error::invalid(format!(
                "lag buffer holds {order} samples, {} supplied",
                samples.len()
            )));
        }
        let mut b = Self::new(nodes, order)?;
        for s in samples {
            b.push(s)?;
        }
        Ok(b)
    }
}
