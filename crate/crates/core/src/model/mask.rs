use rand::Rng;

use crate::data::{Example, Granularity};
use crate::error::{RatError, Result};
use crate::vocab::MASKED;

/// Generator output for one example.
///
/// Sentence mode holds a distribution over segments; token mode holds one
/// independent keep-probability per token.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDistribution {
    pub weights: Vec<f64>,
    pub granularity: Granularity,
}

impl SelectionDistribution {
    pub fn new(weights: Vec<f64>, granularity: Granularity) -> Result<Self> {
        let d = Self {
            weights,
            granularity,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(RatError::Config("selection over zero units".into()));
        }
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(RatError::Config(
                "selection weights must lie in [0, 1]".into(),
            ));
        }
        if self.granularity == Granularity::Sentence {
            let s: f64 = self.weights.iter().sum();
            if (s - 1.0).abs() >= 1e-9 {
                return Err(RatError::Config(format!("selection sums to {s}, not 1")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the largest weight, ties to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    Sampled,
    TopQ,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationaleMask {
    pub bits: Vec<bool>,
    pub source: MaskSource,
}

impl RationaleMask {
    pub fn one_hot(len: usize, i: usize) -> Self {
        let mut bits = vec![false; len];
        bits[i] = true;
        Self {
            bits,
            source: MaskSource::Fixed,
        }
    }

    pub fn all(len: usize) -> Self {
        Self {
            bits: vec![true; len],
            source: MaskSource::Fixed,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| i)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }

    /// Per-token keep flags.
    pub fn token_flags(&self, ex: &Example, granularity: Granularity) -> Result<Vec<bool>> {
        let ranges = ex.unit_ranges(granularity);
        if ranges.len() != self.bits.len() {
            return Err(RatError::MaskLength {
                expected: ranges.len(),
                got: self.bits.len(),
            });
        }
        let mut flags = vec![false; ex.tokens.len()];
        for (r, &keep) in ranges.into_iter().zip(&self.bits) {
            if keep {
                flags[r].iter_mut().for_each(|f| *f = true);
            }
        }
        Ok(flags)
    }
}

/// Draw a mask from `(1 - explore) * dist + explore * uniform`.
///
/// Sentence mode draws exactly one segment; token mode draws every token
/// independently, mixing each probability toward one half.
pub fn sample_mask(
    dist: &SelectionDistribution,
    rng: &mut impl Rng,
    explore: f64,
) -> Result<RationaleMask> {
    if !(0.0..=1.0).contains(&explore) {
        return Err(RatError::Config(format!(
            "explore {explore} outside [0, 1]"
        )));
    }
    let n = dist.len();
    let bits = match dist.granularity {
        Granularity::Sentence => {
            let u: f64 = rng.gen();
            let uniform = 1.0 / n as f64;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in dist.weights.iter().enumerate() {
                acc += (1.0 - explore) * w + explore * uniform;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let mut bits = vec![false; n];
            bits[pick] = true;
            bits
        }
        Granularity::Token => dist
            .weights
            .iter()
            .map(|&w| rng.gen::<f64>() < (1.0 - explore) * w + explore * 0.5)
            .collect(),
    };
    Ok(RationaleMask {
        bits,
        source: MaskSource::Sampled,
    })
}

/// Number of units kept by a `q` percent selection over `t` units.
pub fn topq_count(q: f64, t: usize) -> usize {
    ((q * t as f64 / 100.0).round() as usize).clamp(1, t)
}

/// Keep the `max(1, round(q T / 100))` largest weights, ties to lower index.
pub fn topq_mask(dist: &SelectionDistribution, q: f64) -> Result<RationaleMask> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(RatError::Config(format!("q {q} outside (0, 100]")));
    }
    let k = topq_count(q, dist.len());
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.weights[b].total_cmp(&dist.weights[a]).then(a.cmp(&b)));
    let mut bits = vec![false; dist.len()];
    for &i in &order[..k] {
        bits[i] = true;
    }
    Ok(RationaleMask {
        bits,
        source: MaskSource::TopQ,
    })
}

/// Replace every token outside the kept units with `MASKED`.
pub fn apply_mask(
    ex: &Example,
    mask: &RationaleMask,
    granularity: Granularity,
) -> Result<Vec<usize>> {
    let flags = mask.token_flags(ex, granularity)?;
    Ok(ex
        .tokens
        .iter()
        .zip(flags)
        .map(|(&t, keep)| if keep { t } else { MASKED })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sentence(w: Vec<f64>) -> SelectionDistribution {
        SelectionDistribution::new(w, Granularity::Sentence).unwrap()
    }

    fn counts(dist: &SelectionDistribution, explore: f64, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = vec![0; dist.len()];
        for _ in 0..n {
            let m = sample_mask(dist, &mut rng, explore).unwrap();
            assert_eq!(m.count(), 1);
            c[m.selected().next().unwrap()] += 1;
        }
        c
    }

    #[test]
    fn degenerate_distribution_always_picks_its_arm() {
        assert_eq!(counts(&sentence(vec![1.0, 0.0]), 0.0, 1000), vec![1000, 0]);
    }

    #[test]
    fn fair_coin_within_binomial_bound() {
        let c = counts(&sentence(vec![0.5, 0.5]), 0.0, 10_000);
        assert!((c[0] as i64 - 5000).abs() <= 150, "{c:?}");
    }

    #[test]
    fn exploration_mixes_with_uniform() {
        let c = counts(&sentence(vec![1.0, 0.0]), 0.2, 10_000);
        assert!((c[1] as f64 / 10_000.0 - 0.1).abs() <= 0.01, "{c:?}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let d = SelectionDistribution::new(vec![0.3, 0.6, 0.9], Granularity::Token).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            assert_eq!(
                sample_mask(&d, &mut a, 0.2).unwrap(),
                sample_mask(&d, &mut b, 0.2).unwrap()
            );
        }
        assert!(sample_mask(&d, &mut a, 1.5).is_err());
    }

    #[test]
    fn topq_examples() {
        assert_eq!(
            topq_mask(&sentence(vec![0.5, 0.3, 0.2]), 34.0)
                .unwrap()
                .bits,
            vec![true, false, false]
        );
        assert_eq!(
            topq_mask(&sentence(vec![0.25; 4]), 50.0).unwrap().bits,
            vec![true, true, false, false]
        );
        assert!(topq_mask(&sentence(vec![0.5, 0.3, 0.2]), 100.0)
            .unwrap()
            .bits
            .iter()
            .all(|b| *b));
        assert!(topq_mask(&sentence(vec![1.0]), 0.0).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        let ex = Example::new(vec![10, 11, 12, 13], vec![0, 2], 0, None).unwrap();
        assert_eq!(
            apply_mask(&ex, &RationaleMask::all(2), Granularity::Sentence).unwrap(),
            ex.tokens
        );
        assert_eq!(
            apply_mask(&ex, &RationaleMask::one_hot(2, 0), Granularity::Sentence).unwrap(),
            vec![10, 11, MASKED, MASKED]
        );
        let ex = Example::new(vec![10, 11, 12], vec![0], 0, None).unwrap();
        let m = RationaleMask {
            bits: vec![true, false, true],
            source: MaskSource::Fixed,
        };
        assert_eq!(
            apply_mask(&ex, &m, Granularity::Token).unwrap(),
            vec![10, MASKED, 12]
        );
        assert!(matches!(
            apply_mask(&ex, &RationaleMask::all(2), Granularity::Token),
            Err(RatError::MaskLength {
                expected: 3,
                got: 2
            })
        ));
    }

    proptest! {
        #[test]
        fn topq_keeps_exactly_k(w in prop::collection::vec(0.0f64..1.0, 1..30), q in 0.5f64..100.0) {
            let d = SelectionDistribution { weights: w.clone(), granularity: Granularity::Token };
            let m = topq_mask(&d, q).unwrap();
            let k = ((q * w.len() as f64 / 100.0).round() as usize).max(1);
            prop_assert_eq!(m.count(), k);
            let min_kept = m.selected().map(|i| w[i]).fold(f64::INFINITY, f64::min);
            prop_assert!(w.iter().enumerate().filter(|(i, _)| !m.bits[*i]).all(|(_, &x)| x <= min_kept));
        }
    }
}
