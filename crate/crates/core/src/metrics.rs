//! Performance metrics: the minimum distance index and correlation matching.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Minimum-cost assignment of every row to a distinct column (`rows ≤ cols`).
/// Returns the column of each row and the total cost.
pub fn assignment(cost: &Mat) -> (Vec<usize>, f64) {
    let (n, m) = (cost.nrows(), cost.ncols());
    assert!(n <= m, "assignment needs at least as many columns as rows");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // Shortest augmenting paths with potentials; arrays are 1-based with slot 0 as the root.
    let mut u = alloc::vec![0.0; n + 1];
    let mut v = alloc::vec![0.0; m + 1];
    let mut p = alloc::vec![0usize; m + 1];
    let mut way = alloc::vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = alloc::vec![f64::INFINITY; m + 1];
        let mut used = alloc::vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = alloc::vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            cols[p[j] - 1] = j - 1;
        }
    }
    let total = cols.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    (cols, total)
}

/// Minimum distance index with its optimal matching.
#[derive(Debug, Clone, PartialEq)]
pub struct MdiValue {
    pub value: f64,
    /// Row `i` of `Γ̂Ω` is matched to unit vector `assignment[i]`.
    pub assignment: Vec<usize>,
    /// Optimal scale of row `i`.
    pub scales: Vec<f64>,
    /// Minimal total squared distance, `(p − 1) · value²` before rounding.
    pub total_cost: f64,
}

/// `(p − 1)^{−1/2} inf_C ‖C Γ̂ Ω − I‖` over matrices `C` with exactly one
/// nonzero entry in each row and column.
pub fn mdi(gamma_hat: &Mat, omega: &Mat) -> Result<MdiValue> {
    if !gamma_hat.is_square() || gamma_hat.shape() != omega.shape() {
        return Err(Error::Dimension(alloc::format!(
            "unmixing {:?} and mixing {:?} must be square and equal in size",
            gamma_hat.shape(),
            omega.shape()
        )));
    }
    let g = gamma_hat * omega;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("unmixing product"));
    }
    let p = g.nrows();
    let norms: Vec<f64> = (0..p).map(|i| g.row(i).iter().map(|v| v * v).sum()).collect();
    if let Some(i) = norms.iter().position(|&s| s == 0.0) {
        return Err(Error::ZeroRow(i));
    }
    // Residual of the best multiple of row i against e_j: the mass off column j.
    let cost = Mat::from_fn(p, p, |i, j| {
        let off: f64 = (0..p).filter(|&k| k != j).map(|k| g[(i, k)] * g[(i, k)]).sum();
        off / norms[i]
    });
    let (cols, total) = assignment(&cost);
    let scales = cols.iter().enumerate().map(|(i, &j)| g[(i, j)] / norms[i]).collect();
    let value = if p == 1 { 0.0 } else { (total / (p - 1) as f64).sqrt().min(1.0) };
    Ok(MdiValue {
        value,
        assignment: cols,
        scales,
        total_cost: total,
    })
}

/// `n (p − 1) MDI²`.
pub fn nmdi(gamma_hat: &Mat, omega: &Mat, n: usize) -> Result<f64> {
    let v = mdi(gamma_hat, omega)?.value;
    Ok(nmdi_from_mdi(v, n, gamma_hat.nrows()))
}

pub fn nmdi_from_mdi(mdi: f64, n: usize, p: usize) -> f64 {
    n as f64 * p.saturating_sub(1) as f64 * mdi * mdi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Matching {
    /// Each reference column takes its best estimate independently.
    #[default]
    Greedy,
    /// Distinct estimates for distinct references, maximizing the total.
    OneToOne,
}

/// Best absolute correlation of each reference column with the estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatch {
    pub values: Vec<f64>,
    /// Estimate column matched to each reference column.
    pub matching: Vec<usize>,
}

fn standardized_columns(m: &Mat) -> Result<Vec<Vec<f64>>> {
    let n = m.nrows() as f64;
    (0..m.ncols())
        .map(|c| {
            let col = m.column(c);
            let mean = col.iter().sum::<f64>() / n;
            let dev: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let ss: f64 = dev.iter().map(|d| d * d).sum();
            if ss.is_nan() || ss <= 0.0 || dev.iter().all(|d| *d == 0.0) {
                return Err(Error::ConstantColumn(c));
            }
            let s = ss.sqrt();
            Ok(dev.into_iter().map(|d| d / s).collect())
        })
        .collect()
}

/// Pearson correlation matrix between the columns of `a` (rows) and `b` (columns).
pub fn correlation_matrix(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(alloc::format!("{} versus {} rows", a.nrows(), b.nrows())));
    }
    if a.nrows() < 3 {
        return Err(Error::TooFewObservations { n: a.nrows(), p: a.ncols().max(b.ncols()) });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let sa = standardized_columns(a)?;
    let sb = standardized_columns(b)?;
    Ok(Mat::from_fn(sa.len(), sb.len(), |i, j| {
        let r: f64 = sa[i].iter().zip(&sb[j]).map(|(x, y)| x * y).sum();
        r.clamp(-1.0, 1.0)
    }))
}

/// For each reference column, the largest absolute correlation with any
/// estimated column. Reference columns are checked for constancy first.
pub fn max_abs_correlations(z_hat: &Mat, z_ref: &Mat, mode: Matching) -> Result<CorrelationMatch> {
    let corr = correlation_matrix(z_ref, z_hat)?.abs();
    let q = corr.nrows();
    match mode {
        Matching::Greedy => {
            let mut values = Vec::with_capacity(q);
            let mut matching = Vec::with_capacity(q);
            for j in 0..q {
                let (mut best, mut arg) = (-1.0, 0);
                for l in 0..corr.ncols() {
                    if corr[(j, l)] > best {
                        best = corr[(j, l)];
                        arg = l;
                    }
                }
                values.push(best);
                matching.push(arg);
            }
            Ok(CorrelationMatch { values, matching })
        }
        Matching::OneToOne => {
            if q > corr.ncols() {
                return Err(Error::Dimension(alloc::format!(
                    "one-to-one matching of {q} references needs at least as many estimates, got {}",
                    corr.ncols()
                )));
            }
            let cost = corr.map(|c| 1.0 - c);
            let (matching, _) = assignment(&cost);
            let values = matching.iter().enumerate().map(|(j, &l)| corr[(j, l)]).collect();
            Ok(CorrelationMatch { values, matching })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn brute_assignment(cost: &Mat) -> f64 {
        fn rec(cost: &Mat, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.nrows() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cost.ncols() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[(row, j)] + rec(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost.ncols()])
    }

    #[test]
    fn assignment_small_cases() {
        let c = Mat::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let (cols, total) = assignment(&c);
        assert_eq!(total, brute_assignment(&c));
        assert_eq!(total, 5.0);
        let mut seen = cols.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);

        let rect = Mat::from_row_slice(2, 4, &[9.0, 2.0, 7.0, 8.0, 6.0, 4.0, 3.0, 7.0]);
        let (cols, total) = assignment(&rect);
        assert_eq!(total, 5.0);
        assert_eq!(cols, vec![1, 2]);
        assert_eq!(total, brute_assignment(&rect));
    }

    #[test]
    fn mdi_identity_and_group_action() {
        assert_eq!(mdi(&Mat::identity(3, 3), &Mat::identity(3, 3)).unwrap().value, 0.0);
        let c = Mat::from_row_slice(3, 3, &[0.0, -2.0, 0.0, 0.0, 0.0, 0.5, 3.0, 0.0, 0.0]);
        assert!(mdi(&c, &Mat::identity(3, 3)).unwrap().value < 1e-12);
        assert_eq!(mdi(&Mat::identity(1, 1), &Mat::identity(1, 1)).unwrap().value, 0.0);
        let z = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(mdi(&z, &Mat::identity(2, 2)), Err(Error::ZeroRow(1)));
    }

    #[test]
    fn mdi_worst_case_is_one() {
        // Every row spread evenly over all columns.
        let g = Mat::from_element(3, 3, 1.0);
        let m = mdi(&g, &Mat::identity(3, 3)).unwrap();
        // cost = 2/3 per row, total 2, value √(2/2) = 1.
        assert!((m.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nmdi_arithmetic() {
        assert_eq!(nmdi_from_mdi(0.0, 100, 3), 0.0);
        assert_eq!(nmdi_from_mdi(1.0, 100, 3), 200.0);
        let g = Mat::from_row_slice(2, 2, &[1.0, 0.1, -0.2, 1.0]);
        let m = mdi(&g, &Mat::identity(2, 2)).unwrap();
        let v = nmdi(&g, &Mat::identity(2, 2), 50).unwrap();
        assert!((v - 50.0 * m.value * m.value).abs() < 1e-12);
    }

    #[test]
    fn correlation_matching() {
        let z = Mat::from_fn(50, 3, |i, j| libm::sin((i * (j + 2)) as f64 * 0.37) + (j as f64) * 0.01 * i as f64);
        let same = max_abs_correlations(&z, &z, Matching::Greedy).unwrap();
        assert_eq!(same.matching, vec![0, 1, 2]);
        assert!(same.values.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let mut shuffled = Mat::zeros(50, 3);
        shuffled.set_column(0, &(-z.column(2)));
        shuffled.set_column(1, &z.column(0));
        shuffled.set_column(2, &(z.column(1) * -3.0));
        for mode in [Matching::Greedy, Matching::OneToOne] {
            let m = max_abs_correlations(&shuffled, &z, mode).unwrap();
            assert_eq!(m.matching, vec![1, 2, 0]);
            assert!(m.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }

        let mut constant = z.clone();
        constant.column_mut(1).fill(2.0);
        assert_eq!(max_abs_correlations(&constant, &z, Matching::Greedy), Err(Error::ConstantColumn(1)));
        assert!(matches!(
            max_abs_correlations(&Mat::zeros(2, 1), &Mat::zeros(2, 1), Matching::Greedy),
            Err(Error::TooFewObservations { .. })
        ));
    }
}
