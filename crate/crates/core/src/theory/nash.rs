use serde::{Deserialize, Serialize};

use crate::error::{RatError, Result};

/// Two-player normal-form game; `cells[i][j] = (row payoff, column payoff)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub cells: Vec<Vec<(f64, f64)>>,
}

impl PayoffTable {
    pub fn new(cells: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let rows = cells.len();
        let cols = cells.first().map_or(0, Vec::len);
        let t = Self {
            row_labels: (0..rows).map(|i| format!("row{i}")).collect(),
            col_labels: (0..cols).map(|j| format!("col{j}")).collect(),
            cells,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.col_labels.len();
        if self.cells.is_empty() || cols == 0 {
            return Err(RatError::Config("payoff table is empty".into()));
        }
        if self.cells.len() != self.row_labels.len() || self.cells.iter().any(|r| r.len() != cols) {
            return Err(RatError::Config("payoff table is ragged".into()));
        }
        if self
            .cells
            .iter()
            .flatten()
            .any(|(a, b)| !a.is_finite() || !b.is_finite())
        {
            return Err(RatError::Config("payoffs must be finite".into()));
        }
        Ok(())
    }

    /// The accordance game between a generator choosing a sentence and a
    /// predictor overfitting one.
    pub fn interlocking_example() -> Self {
        Self {
            row_labels: vec!["select X1".into(), "select X2".into()],
            col_labels: vec!["overfit X1".into(), "overfit X2".into()],
            cells: vec![
                vec![(-1.0, -1.0), (-10.0, -10.0)],
                vec![(-20.0, -20.0), (-2.0, -2.0)],
            ],
        }
    }
}

/// Cells where each payoff is maximal against the other player's choice.
pub fn find_pure_nash(table: &PayoffTable) -> Vec<(usize, usize)> {
    let rows = table.cells.len();
    let cols = table.cells.first().map_or(0, Vec::len);
    let col_best: Vec<f64> = (0..cols)
        .map(|j| {
            (0..rows)
                .map(|i| table.cells[i][j].0)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let row_best: Vec<f64> = table
        .cells
        .iter()
        .map(|r| r.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut out = Vec::new();
    for (i, row) in table.cells.iter().enumerate() {
        for (j, &(a, b)) in row.iter().enumerate() {
            if a == col_best[j] && b == row_best[i] {
                out.push((i, j));
            }
        }
    }
    out
}

/// Reference search: a cell is an equilibrium when no unilateral deviation
/// strictly improves the deviator.
pub fn find_pure_nash_brute_force(table: &PayoffTable) -> Vec<(usize, usize)> {
    let rows = table.cells.len();
    let cols = table.cells.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let row_dev = (0..rows).any(|k| table.cells[k][j].0 > table.cells[i][j].0);
            let col_dev = (0..cols).any(|k| table.cells[i][k].1 > table.cells[i][j].1);
            if !row_dev && !col_dev {
                out.push((i, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interlocking_game_has_two_equilibria() {
        assert_eq!(
            find_pure_nash(&PayoffTable::interlocking_example()),
            vec![(0, 0), (1, 1)]
        );
    }

    #[test]
    fn dominant_row_gives_one_equilibrium() {
        let t = PayoffTable::new(vec![
            vec![(0.0, 0.0), (0.0, 0.0)],
            vec![(-1.0, -1.0), (-1.0, -1.0)],
        ])
        .unwrap();
        // Column player is indifferent in row 0, so both columns stand.
        assert_eq!(find_pure_nash(&t), vec![(0, 0), (0, 1)]);
        let t = PayoffTable::new(vec![
            vec![(0.0, 0.0), (0.0, -1.0)],
            vec![(-1.0, -1.0), (-1.0, -1.0)],
        ])
        .unwrap();
        assert_eq!(find_pure_nash(&t), vec![(0, 0)]);
    }

    #[test]
    fn constant_table_is_all_equilibria() {
        let t = PayoffTable::new(vec![vec![(3.0, 3.0); 3]; 2]).unwrap();
        assert_eq!(find_pure_nash(&t).len(), 6);
    }

    #[test]
    fn ragged_or_non_finite_tables_are_rejected() {
        assert!(PayoffTable::new(vec![vec![(0.0, 0.0)], vec![]]).is_err());
        assert!(PayoffTable::new(vec![vec![(f64::NAN, 0.0)]]).is_err());
    }

    proptest! {
        #[test]
        fn agrees_with_deviation_search(v in prop::collection::vec((-3i32..3, -3i32..3), 9)) {
            let cells = v.chunks(3).map(|r| r.iter().map(|&(a, b)| (a as f64, b as f64)).collect()).collect();
            let t = PayoffTable::new(cells).unwrap();
            prop_assert_eq!(find_pure_nash(&t), find_pure_nash_brute_force(&t));
        }
    }
}
