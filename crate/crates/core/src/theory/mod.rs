//! Entropy oracles, landscape sweeps, curvature checks and equilibrium search.

mod curvature;
mod empirical;
mod joint;
mod nash;
mod oracle;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{RatError, Result};

pub use curvature::{check_curvature, CurvatureReport, CurvatureVerdict, MidpointCheck};
pub use empirical::{empirical_landscape, EmpiricalSetup};
pub use joint::DiscreteJoint;
pub use nash::{find_pure_nash, find_pure_nash_brute_force, PayoffTable};
pub use oracle::{
    check_noncolinearity, one_hot_embeddings, oracle_attention_landscape,
    oracle_conditional_entropy, oracle_rationale_landscape, Colinearity,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandscapeKind {
    RationaleOracle,
    AttentionOracle,
    RationaleEmpirical,
    AttentionEmpirical,
}

impl fmt::Display for LandscapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LandscapeKind::RationaleOracle => "rationale-oracle",
            LandscapeKind::AttentionOracle => "attention-oracle",
            LandscapeKind::RationaleEmpirical => "rationale-empirical",
            LandscapeKind::AttentionEmpirical => "attention-empirical",
        })
    }
}

/// Loss as a function of the weight `g` on the first unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub points: Vec<f64>,
    pub losses: Vec<f64>,
    pub failed: Vec<bool>,
    pub kind: LandscapeKind,
}

impl LandscapeGrid {
    pub fn new(points: Vec<f64>, losses: Vec<f64>, kind: LandscapeKind) -> Result<Self> {
        let failed = vec![false; points.len()];
        Self::with_failures(points, losses, failed, kind)
    }

    pub fn with_failures(
        points: Vec<f64>,
        losses: Vec<f64>,
        failed: Vec<bool>,
        kind: LandscapeKind,
    ) -> Result<Self> {
        validate_grid(&points)?;
        if losses.len() != points.len() || failed.len() != points.len() {
            return Err(RatError::Config(
                "landscape columns differ in length".into(),
            ));
        }
        Ok(Self {
            points,
            losses,
            failed,
            kind,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,loss,kind,failed\n");
        for ((g, l), f) in self.points.iter().zip(&self.losses).zip(&self.failed) {
            out.push_str(&format!("{g},{l},{},{f}\n", self.kind));
        }
        out
    }

    /// Largest amount by which an interior point exceeds both corners.
    pub fn interior_excess(&self) -> f64 {
        let n = self.losses.len();
        let corner = self.losses[0].max(self.losses[n - 1]);
        self.losses[1..n - 1]
            .iter()
            .zip(&self.failed[1..n - 1])
            .filter(|(_, f)| !**f)
            .map(|(l, _)| l - corner)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn validate_grid(points: &[f64]) -> Result<()> {
    if points.len() < 2 {
        return Err(RatError::Config("grid needs at least two points".into()));
    }
    if points[0] != 0.0 || *points.last().unwrap() != 1.0 {
        return Err(RatError::Config(
            "grid must include both endpoints 0 and 1".into(),
        ));
    }
    if points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RatError::Config("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `n` evenly spaced points from 0 to 1 inclusive.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2, "grid needs at least two points");
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape_rules() {
        assert!(validate_grid(&uniform_grid(21)).is_ok());
        assert_eq!(uniform_grid(21)[20], 1.0);
        assert!(validate_grid(&[0.0, 0.5]).is_err());
        assert!(validate_grid(&[0.0, 0.6, 0.5, 1.0]).is_err());
    }

    #[test]
    fn csv_has_fixed_header() {
        let g = LandscapeGrid::new(
            vec![0.0, 1.0],
            vec![0.5, 0.25],
            LandscapeKind::AttentionOracle,
        )
        .unwrap();
        assert_eq!(
            g.to_csv(),
            "grid,loss,kind,failed\n0,0.5,attention-oracle,false\n1,0.25,attention-oracle,false\n"
        );
    }
}
