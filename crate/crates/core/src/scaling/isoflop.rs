//! Per-budget quadratic fits in `ln N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::RunPoint;

/// Loss against model size at one compute budget, with its fitted parabola.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoflopCurve {
    pub budget: f64,
    /// (N, loss)
    pub samples: Vec<(f64, f64)>,
    /// `[a, b, c]` of `loss ≈ a·x² + b·x + c` with `x = ln N`.
    pub coefficients: [f64; 3],
    pub n_opt: f64,
    pub loss_min: f64,
}

impl IsoflopCurve {
    pub fn predict(&self, n: f64) -> f64 {
        let [a, b, c] = self.coefficients;
        let x = n.ln();
        (a * x + b) * x + c
    }
}

/// Least-squares parabola in `ln N` through the samples of one budget.
///
/// The fit is computed around the mean of `ln N` for conditioning and the
/// vertex `exp(−b/2a)` gives the loss-minimizing size.
pub fn isoflop_fit(budget: f64, samples: &[(f64, f64)]) -> Result<IsoflopCurve> {
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Fit(format!(
            "isoflop fit at budget {budget:e} needs 3 distinct model sizes, got {}",
            distinct.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| !(s.0 > 0.0 && s.1.is_finite())) {
        return Err(Error::InvalidArgument(format!("invalid isoflop sample {s:?}")));
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let center = xs.iter().sum::<f64>() / xs.len() as f64;
    // Normal equations for y ≈ p·u² + q·u + r with u = x − center.
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (x, s) in xs.iter().zip(samples) {
        let u = x - center;
        let row = [u * u, u, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            aty[i] += row[i] * s.1;
        }
    }
    let [p, q, r] = solve3(ata, aty)?;
    if !(p > 0.0) {
        return Err(Error::Fit(format!(
            "isoflop parabola at budget {budget:e} is not convex (leading coefficient {p:e})"
        )));
    }
    let u_opt = -q / (2.0 * p);
    let x_opt = center + u_opt;
    Ok(IsoflopCurve {
        budget,
        samples: samples.to_vec(),
        coefficients: [p, q - 2.0 * p * center, p * center * center - q * center + r],
        n_opt: x_opt.exp(),
        loss_min: (p * u_opt + q) * u_opt + r,
    })
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Result<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Fit("singular least-squares system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let tail: f64 = (i + 1..3).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - tail) / a[i][i];
    }
    Ok(x)
}

/// Groups points by compute budget (relative tolerance 1e-6), ascending.
pub fn group_by_budget(points: &[RunPoint]) -> Vec<(f64, Vec<(f64, f64)>)> {
    let mut sorted: Vec<&RunPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.flops.total_cmp(&b.flops).then(a.n_params.total_cmp(&b.n_params)));
    let mut groups: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for p in sorted {
        match groups.last_mut() {
            Some((c, members)) if (p.flops - *c).abs() <= 1e-6 * c.abs() => {
                members.push((p.n_params, p.loss));
            }
            _ => groups.push((p.flops, vec![(p.n_params, p.loss)])),
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_parabola_vertex() {
        // loss = 0.2·(x − ln 3e8)² + 2.5
        let x0 = 3e8f64.ln();
        let samples: Vec<(f64, f64)> = [5e7, 1e8, 2e8, 4e8, 9e8, 2e9]
            .iter()
            .map(|&n: &f64| (n, 0.2 * (n.ln() - x0).powi(2) + 2.5))
            .collect();
        let c = isoflop_fit(1e19, &samples).unwrap();
        assert!((c.n_opt / 3e8 - 1.0).abs() < 1e-10);
        assert!((c.loss_min / 2.5 - 1.0).abs() < 1e-10);
        assert!((c.predict(1e8) - samples[1].1).abs() < 1e-9);
    }

    #[test]
    fn symmetric_samples_center() {
        let center = 1e9f64;
        let samples: Vec<(f64, f64)> = [-2.0, -1.0, 0.0, 1.0, 2.0]
            .iter()
            .map(|&k: &f64| (center * k.exp(), 3.0 + (k * k) * 0.1 + (k * k * k * k) * 0.01))
            .collect();
        let c = isoflop_fit(1e20, &samples).unwrap();
        assert!((c.n_opt / center - 1.0).abs() < 1e-10);
    }

    #[test]
    fn too_few_or_concave_samples_fail() {
        assert!(isoflop_fit(1.0, &[(1.0, 1.0), (2.0, 0.5), (2.0, 0.7)]).is_err());
        let concave: Vec<(f64, f64)> = [1e8, 2e8, 4e8].iter().map(|&n: &f64| (n, -(n.ln() - 19.0).powi(2))).collect();
        assert!(matches!(isoflop_fit(1.0, &concave), Err(Error::Fit(_))));
    }

    #[test]
    fn grouping_by_budget() {
        let pts = vec![
            RunPoint::at_budget(1e19, 1e8, 3.0).unwrap(),
            RunPoint::at_budget(1e18, 1e8, 3.5).unwrap(),
            RunPoint::at_budget(1e19, 2e8, 2.9).unwrap(),
        ];
        let g = group_by_budget(&pts);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].1.len(), 1);
        assert_eq!(g[1].1, vec![(1e8, 3.0), (2e8, 2.9)]);
    }
}
