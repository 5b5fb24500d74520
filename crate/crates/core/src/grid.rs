//! Uniform time grids for discretization and synthesis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the uniform-spacing check.
const UNIFORM_REL_TOL: f64 = 1e-12;

/// An ordered uniform grid t0 = tau_0 < ... < tau_N = t0 + T.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    nodes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    t0: f64,
    #[serde(rename = "T")]
    horizon: f64,
    n_intervals: usize,
}

impl Serialize for TimeGrid {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        GridRepr {
            t0: self.t0,
            horizon: self.horizon,
            n_intervals: self.n_intervals(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for TimeGrid {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = GridRepr::deserialize(de)?;
        TimeGrid::uniform(repr.t0, repr.horizon, repr.n_intervals)
            .map_err(serde::de::Error::custom)
    }
}

impl TimeGrid {
    /// Build a uniform grid with `n_intervals >= 2` intervals.
    pub fn uniform(t0: f64, horizon: f64, n_intervals: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_intervals < 2 {
            return Err(Error::Domain(format!(
                "grid needs at least 2 intervals, got {n_intervals}"
            )));
        }
        let nodes = (0..=n_intervals)
            .map(|k| t0 + horizon * k as f64 / n_intervals as f64)
            .collect();
        Ok(TimeGrid { t0, horizon, nodes })
    }

    /// Validate an explicit node list (must be uniform within tolerance).
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Domain("grid needs at least 3 nodes".into()));
        }
        let t0 = nodes[0];
        let horizon = nodes[nodes.len() - 1] - t0;
        if !(horizon > 0.0) {
            return Err(Error::Domain("grid nodes must span a positive horizon".into()));
        }
        let h = horizon / (nodes.len() - 1) as f64;
        for (k, w) in nodes.windows(2).enumerate() {
            let step = w[1] - w[0];
            if (step - h).abs() > UNIFORM_REL_TOL * horizon.abs().max(1.0) {
                return Err(Error::Domain(format!(
                    "node spacing at index {k} deviates from uniform ({step} vs {h})"
                )));
            }
        }
        Ok(TimeGrid { t0, horizon, nodes })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.horizon
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_intervals() as f64
    }

    /// Same span with `factor` times as many intervals.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        TimeGrid::uniform(self.t0, self.horizon, self.n_intervals() * factor.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_endpoints_exact() {
        let g = TimeGrid::uniform(0.0, 10.0, 100).unwrap();
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(*g.nodes().last().unwrap(), 10.0);
        assert_eq!(g.n_intervals(), 100);
        assert!((g.step() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_single_interval() {
        assert!(TimeGrid::uniform(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn rejects_nonuniform_nodes() {
        assert!(TimeGrid::from_nodes(vec![0.0, 0.1, 0.300001, 0.4]).is_err());
    }

    #[test]
    fn refine_multiplies_intervals() {
        let g = TimeGrid::uniform(0.0, 5.0, 300).unwrap();
        assert_eq!(g.refined(10).unwrap().n_intervals(), 3000);
    }
}
