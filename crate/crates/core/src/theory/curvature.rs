use serde::{Deserialize, Serialize};

use crate::theory::LandscapeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureVerdict {
    Concave,
    Convex,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidpointCheck {
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    /// `f(beta a + (1 - beta) b)`.
    pub value: f64,
    /// `beta f(a) + (1 - beta) f(b)`.
    pub chord: f64,
    pub concave_ok: bool,
    pub convex_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub kind: String,
    pub tolerance: f64,
    pub points: Vec<f64>,
    pub second_differences: Vec<f64>,
    pub concave: bool,
    pub convex: bool,
    /// Concave wins when the landscape is both (affine).
    pub verdict: CurvatureVerdict,
    pub midpoints: Vec<MidpointCheck>,
    pub midpoint_concave: bool,
    pub midpoint_convex: bool,
}

const BETAS: [f64; 3] = [0.25, 0.5, 0.75];

/// Second differences plus midpoint inequalities over every pair of grid
/// points whose `beta` combination lands on another grid point.
///
/// Failed grid points are skipped.
pub fn check_curvature(grid: &LandscapeGrid, tol: f64) -> CurvatureReport {
    let f = &grid.losses;
    let ok = |i: usize| !grid.failed[i];
    let second: Vec<f64> = (1..f.len().saturating_sub(1))
        .map(|j| {
            if ok(j - 1) && ok(j) && ok(j + 1) {
                f[j - 1] - 2.0 * f[j] + f[j + 1]
            } else {
                f64::NAN
            }
        })
        .collect();
    let valid = || second.iter().filter(|d| !d.is_nan());
    let concave = valid().all(|&d| d <= tol);
    let convex = valid().all(|&d| d >= -tol);

    let pts = &grid.points;
    let mut midpoints = Vec::new();
    for i in 0..pts.len() {
        for k in i + 1..pts.len() {
            for &beta in &BETAS {
                let x = beta * pts[i] + (1.0 - beta) * pts[k];
                let Some(m) = pts.iter().position(|&p| (p - x).abs() < 1e-9) else {
                    continue;
                };
                if m == i || m == k || !(ok(i) && ok(k) && ok(m)) {
                    continue;
                }
                let chord = beta * f[i] + (1.0 - beta) * f[k];
                midpoints.push(MidpointCheck {
                    beta,
                    a: pts[i],
                    b: pts[k],
                    value: f[m],
                    chord,
                    concave_ok: f[m] >= chord - tol,
                    convex_ok: f[m] <= chord + tol,
                });
            }
        }
    }
    let verdict = if concave {
        CurvatureVerdict::Concave
    } else if convex {
        CurvatureVerdict::Convex
    } else {
        CurvatureVerdict::Mixed
    };
    CurvatureReport {
        kind: grid.kind.to_string(),
        tolerance: tol,
        points: pts.clone(),
        midpoint_concave: midpoints.iter().all(|m| m.concave_ok),
        midpoint_convex: midpoints.iter().all(|m| m.convex_ok),
        second_differences: second,
        concave,
        convex,
        verdict,
        midpoints,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{uniform_grid, LandscapeKind};

    fn grid_of(f: impl Fn(f64) -> f64) -> LandscapeGrid {
        let pts = uniform_grid(21);
        let losses = pts.iter().map(|&x| f(x)).collect();
        LandscapeGrid::new(pts, losses, LandscapeKind::RationaleEmpirical).unwrap()
    }

    #[test]
    fn affine_is_both_and_reported_concave() {
        let r = check_curvature(&grid_of(|x| 0.5 - 0.5 * x), 1e-9);
        assert!(r.second_differences.iter().all(|d| d.abs() < 1e-12));
        assert!(r.concave && r.convex);
        assert_eq!(r.verdict, CurvatureVerdict::Concave);
        assert!(r.midpoint_concave && r.midpoint_convex);
        assert!(!r.midpoints.is_empty());
    }

    #[test]
    fn known_shapes() {
        assert_eq!(
            check_curvature(&grid_of(|x| -x * x), 1e-9).verdict,
            CurvatureVerdict::Concave
        );
        assert_eq!(
            check_curvature(&grid_of(|x| x * x), 1e-9).verdict,
            CurvatureVerdict::Convex
        );
        let wavy = check_curvature(&grid_of(|x| (6.0 * x).sin()), 1e-9);
        assert_eq!(wavy.verdict, CurvatureVerdict::Mixed);
        assert!(!wavy.midpoint_concave && !wavy.midpoint_convex);
    }

    #[test]
    fn midpoints_land_on_grid_points() {
        let r = check_curvature(&grid_of(|x| x), 1e-9);
        for m in &r.midpoints {
            let x = m.beta * m.a + (1.0 - m.beta) * m.b;
            assert!(((x * 20.0).round() - x * 20.0).abs() < 1e-9);
        }
    }
}
