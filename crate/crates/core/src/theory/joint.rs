use crate::error::{RatError, Result};

/// Exact joint distribution over `(X_1, ..., X_T, Y)` with finite alphabets.
///
/// Stored densely; index order is row-major over positions then label.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    alphabets: Vec<Vec<String>>,
    num_classes: usize,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(alphabets: Vec<Vec<String>>, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        let cells = alphabets.iter().map(Vec::len).product::<usize>() * num_classes;
        if probs.len() != cells {
            return Err(RatError::Config(format!(
                "joint needs {cells} cells, got {}",
                probs.len()
            )));
        }
        if alphabets.iter().any(Vec::is_empty) || num_classes == 0 {
            return Err(RatError::Config("empty alphabet".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(RatError::Config(
                "joint probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(RatError::Config(format!("joint sums to {total}, not 1")));
        }
        Ok(Self {
            alphabets,
            num_classes,
            probs,
        })
    }

    pub fn from_fn(
        alphabets: Vec<Vec<String>>,
        num_classes: usize,
        f: impl Fn(&[usize], usize) -> f64,
    ) -> Result<Self> {
        let sizes: Vec<usize> = alphabets.iter().map(Vec::len).collect();
        let mut probs = Vec::new();
        for values in Assignments::new(&sizes) {
            for y in 0..num_classes {
                probs.push(f(&values, y));
            }
        }
        Self::new(alphabets, num_classes, probs)
    }

    pub fn num_positions(&self) -> usize {
        self.alphabets.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn alphabet(&self, t: usize) -> &[String] {
        &self.alphabets[t]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `(values, label, probability)` for every cell.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, usize, f64)> + '_ {
        let sizes: Vec<usize> = self.alphabets.iter().map(Vec::len).collect();
        let c = self.num_classes;
        Assignments::new(&sizes)
            .enumerate()
            .flat_map(move |(i, values)| {
                (0..c).map(move |y| (values.clone(), y, self.probs[i * c + y]))
            })
    }
}

/// Odometer over the product of alphabet sizes.
struct Assignments {
    sizes: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Assignments {
    fn new(sizes: &[usize]) -> Self {
        let next = if sizes.iter().all(|&s| s > 0) {
            Some(vec![0; sizes.len()])
        } else {
            None
        };
        Self {
            sizes: sizes.to_vec(),
            next,
        }
    }
}

impl Iterator for Assignments {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut t = succ.len();
        loop {
            if t == 0 {
                break;
            }
            t -= 1;
            succ[t] += 1;
            if succ[t] < self.sizes[t] {
                self.next = Some(succ);
                break;
            }
            succ[t] = 0;
        }
        Some(current)
    }
}
