//! Cell-centered tensor-product grids over the joint state/parameter box.
//!
//! Each axis is split into `count` equal cells and a node is placed at every
//! cell midpoint, so integrals against the grid reduce to a midpoint rule
//! with the constant weight `h_1 * h_2 * ... * h_K`. State axes always come
//! before parameter axes; the linear ordering of the joint grid is row-major
//! (last axis fastest), which is also the ordering used by the tensor-train
//! cores built on top of it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Role of a grid axis in the joint density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    State,
    Parameter,
}

/// One axis of the discretization box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub label: String,
    pub lower: f64,
    pub upper: f64,
    /// Number of cells (= number of midpoint nodes).
    pub count: usize,
    pub kind: AxisKind,
}

impl GridSpec {
    pub fn state(label: &str, lower: f64, upper: f64, count: usize) -> Self {
        GridSpec { label: label.to_string(), lower, upper, count, kind: AxisKind::State }
    }

    pub fn parameter(label: &str, lower: f64, upper: f64, count: usize) -> Self {
        GridSpec { label: label.to_string(), lower, upper, count, kind: AxisKind::Parameter }
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid axis `{0}`: lower bound {1} is not below upper bound {2}")]
    EmptyInterval(String, f64, f64),
    #[error("grid axis `{0}`: needs at least 2 cells, got {1}")]
    TooFewCells(String, usize),
    #[error("grid axis `{0}`: bound is not finite")]
    NonFiniteBound(String),
    #[error("duplicate grid axis label `{0}`")]
    DuplicateLabel(String),
    #[error("state axis `{0}` listed after a parameter axis; state axes must come first")]
    StateAfterParameter(String),
    #[error("grid has no axes")]
    Empty,
}

/// A validated tensor-product grid.
#[derive(Debug, Clone)]
pub struct DiscretizedDomain {
    specs: Vec<GridSpec>,
    steps: Vec<f64>,
    n_state: usize,
}

/// Validates the axis list and builds the domain.
pub fn build_grid(specs: Vec<GridSpec>) -> Result<DiscretizedDomain, GridError> {
    if specs.is_empty() {
        return Err(GridError::Empty);
    }
    let mut seen_parameter = false;
    for (i, s) in specs.iter().enumerate() {
        if !(s.lower.is_finite() && s.upper.is_finite()) {
            return Err(GridError::NonFiniteBound(s.label.clone()));
        }
        if s.lower >= s.upper {
            return Err(GridError::EmptyInterval(s.label.clone(), s.lower, s.upper));
        }
        if s.count < 2 {
            return Err(GridError::TooFewCells(s.label.clone(), s.count));
        }
        if specs[..i].iter().any(|t| t.label == s.label) {
            return Err(GridError::DuplicateLabel(s.label.clone()));
        }
        match s.kind {
            AxisKind::Parameter => seen_parameter = true,
            AxisKind::State if seen_parameter => {
                return Err(GridError::StateAfterParameter(s.label.clone()));
            }
            AxisKind::State => {}
        }
    }
    let steps = specs.iter().map(|s| (s.upper - s.lower) / s.count as f64).collect();
    let n_state = specs.iter().filter(|s| s.kind == AxisKind::State).count();
    Ok(DiscretizedDomain { specs, steps, n_state })
}

impl DiscretizedDomain {
    pub fn ndims(&self) -> usize {
        self.specs.len()
    }

    pub fn n_state_dims(&self) -> usize {
        self.n_state
    }

    pub fn specs(&self) -> &[GridSpec] {
        &self.specs
    }

    pub fn spec(&self, dim: usize) -> &GridSpec {
        &self.specs[dim]
    }

    /// Mode sizes (cells per axis), in grid order.
    pub fn mode_sizes(&self) -> Vec<usize> {
        self.specs.iter().map(|s| s.count).collect()
    }

    /// Axis index for a label, if present.
    pub fn dim_of(&self, label: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.label == label)
    }

    /// Cell width along `dim`.
    pub fn step(&self, dim: usize) -> f64 {
        self.steps[dim]
    }

    /// Midpoint node `k` along `dim`: `lower + (k + 1/2) * h`.
    pub fn node(&self, dim: usize, k: usize) -> f64 {
        debug_assert!(k < self.specs[dim].count);
        self.specs[dim].lower + (k as f64 + 0.5) * self.steps[dim]
    }

    /// All nodes along `dim`.
    pub fn nodes(&self, dim: usize) -> Vec<f64> {
        (0..self.specs[dim].count).map(|k| self.node(dim, k)).collect()
    }

    /// Physical coordinates of a multi-index.
    pub fn coords(&self, multi: &[usize]) -> Vec<f64> {
        multi.iter().enumerate().map(|(d, &k)| self.node(d, k)).collect()
    }

    /// Midpoint quadrature weight, identical for every node.
    pub fn quadrature_weight(&self) -> f64 {
        self.steps.iter().product()
    }

    /// Total number of grid nodes (product of mode sizes).
    pub fn total_nodes(&self) -> usize {
        self.specs.iter().map(|s| s.count).product()
    }

    /// Row-major linear index (last axis fastest).
    pub fn multi_to_linear(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.specs.len());
        let mut lin = 0;
        for (d, &k) in multi.iter().enumerate() {
            debug_assert!(k < self.specs[d].count);
            lin = lin * self.specs[d].count + k;
        }
        lin
    }

    /// Inverse of [`multi_to_linear`](Self::multi_to_linear).
    pub fn linear_to_multi(&self, mut lin: usize) -> Vec<usize> {
        let mut multi = vec![0; self.specs.len()];
        for d in (0..self.specs.len()).rev() {
            let n = self.specs[d].count;
            multi[d] = lin % n;
            lin /= n;
        }
        debug_assert_eq!(lin, 0);
        multi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_nodes_on_unit_interval() {
        let dom = build_grid(vec![GridSpec::state("x", 0.0, 1.0, 4)]).unwrap();
        let nodes = dom.nodes(0);
        assert_eq!(nodes, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn nodes_stay_strictly_inside_the_box() {
        let dom = build_grid(vec![GridSpec::state("x", -2.0, 3.0, 7)]).unwrap();
        for k in 0..7 {
            let x = dom.node(0, k);
            assert!(x > -2.0 && x < 3.0);
        }
    }

    #[test]
    fn index_round_trip_is_a_bijection() {
        let dom = build_grid(vec![
            GridSpec::state("a", 0.0, 1.0, 3),
            GridSpec::state("b", 0.0, 1.0, 4),
            GridSpec::parameter("c", 0.0, 1.0, 5),
        ])
        .unwrap();
        let mut seen = vec![false; dom.total_nodes()];
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    let lin = dom.multi_to_linear(&[i, j, k]);
                    assert!(!seen[lin]);
                    seen[lin] = true;
                    assert_eq!(dom.linear_to_multi(lin), vec![i, j, k]);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn last_axis_is_fastest() {
        let dom = build_grid(vec![
            GridSpec::state("a", 0.0, 1.0, 3),
            GridSpec::state("b", 0.0, 1.0, 4),
        ])
        .unwrap();
        assert_eq!(dom.multi_to_linear(&[0, 1]), 1);
        assert_eq!(dom.multi_to_linear(&[1, 0]), 4);
    }

    #[test]
    fn quadrature_integrates_constants_exactly() {
        let dom = build_grid(vec![
            GridSpec::state("a", 0.0, 2.0, 9),
            GridSpec::parameter("b", -1.0, 1.0, 5),
        ])
        .unwrap();
        let vol: f64 = dom.quadrature_weight() * dom.total_nodes() as f64;
        assert!((vol - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(matches!(
            build_grid(vec![GridSpec::state("x", 1.0, 1.0, 4)]),
            Err(GridError::EmptyInterval(..))
        ));
        assert!(matches!(
            build_grid(vec![GridSpec::state("x", 0.0, 1.0, 1)]),
            Err(GridError::TooFewCells(..))
        ));
        assert!(matches!(
            build_grid(vec![
                GridSpec::state("x", 0.0, 1.0, 4),
                GridSpec::state("x", 0.0, 1.0, 4)
            ]),
            Err(GridError::DuplicateLabel(..))
        ));
        assert!(matches!(
            build_grid(vec![
                GridSpec::parameter("p", 0.0, 1.0, 4),
                GridSpec::state("x", 0.0, 1.0, 4)
            ]),
            Err(GridError::StateAfterParameter(..))
        ));
    }
}
