use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

string_enum! {
    pub enum VifStatus {
        Finite => "finite",
        /// The column is an exact linear combination of the others.
        Infinite => "infinite",
        /// The column has no variance; it is left out of `max_vif`.
        ZeroVariance => "zero_variance",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifEntry {
    pub column: String,
    pub vif: f64,
    pub status: VifStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifReport {
    pub entries: Vec<VifEntry>,
    /// Largest VIF among columns with variance; infinite if any column is
    /// exactly collinear.
    pub max_vif: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum VifError {
    #[error("need at least {needed} rows for {columns} columns, got {rows}")]
    TooFewRows { needed: usize, columns: usize, rows: usize },
    #[error("{columns} column names for a {cols}-column matrix")]
    Names { columns: usize, cols: usize },
}

const COLLINEAR: f64 = 1e-10;

/// VIF of each column from regressing it on the others plus an intercept.
/// Works on centered cross-products, with a pseudo-inverse for the
/// other columns so exact collinearity among them is tolerated.
pub fn vif(x: &DMatrix<f64>, columns: &[String]) -> Result<VifReport, VifError> {
    let (n, p) = x.shape();
    if columns.len() != p {
        return Err(VifError::Names { columns: columns.len(), cols: p });
    }
    if n < p + 1 {
        return Err(VifError::TooFewRows { needed: p + 1, columns: p, rows: n });
    }
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cross = centered.transpose() * &centered;
    let varying: Vec<usize> = (0..p).filter(|&j| cross[(j, j)] > 1e-12 * n as f64).collect();

    let mut entries = Vec::with_capacity(p);
    for j in 0..p {
        let name = columns[j].clone();
        if !varying.contains(&j) {
            entries.push(VifEntry { column: name, vif: f64::NAN, status: VifStatus::ZeroVariance });
            continue;
        }
        let others: Vec<usize> = varying.iter().copied().filter(|&k| k != j).collect();
        let sst = cross[(j, j)];
        let ssr_fraction = if others.is_empty() {
            1.0
        } else {
            let k = others.len();
            let a = DMatrix::from_fn(k, k, |r, c| cross[(others[r], others[c])]);
            let b = DVector::from_fn(k, |r, _| cross[(others[r], j)]);
            let coef = a.svd(true, true).solve(&b, 1e-12).expect("svd with vectors");
            ((sst - b.dot(&coef)) / sst).max(0.0)
        };
        if ssr_fraction < COLLINEAR {
            entries.push(VifEntry { column: name, vif: f64::INFINITY, status: VifStatus::Infinite });
        } else {
            entries.push(VifEntry { column: name, vif: (1.0 / ssr_fraction).max(1.0), status: VifStatus::Finite });
        }
    }
    let max_vif = entries
        .iter()
        .filter(|e| e.status != VifStatus::ZeroVariance)
        .map(|e| e.vif)
        .fold(1.0, f64::max);
    Ok(VifReport { entries, max_vif })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("c{j}")).collect()
    }

    #[test]
    fn orthogonal_columns() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let r = vif(&x, &names(2)).unwrap();
        for e in &r.entries {
            assert!((e.vif - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_column_is_infinite() {
        let x = DMatrix::from_row_slice(5, 3, &[1., 1., 0., 0., 0., 1., 1., 1., 1., 0., 0., 0., 1., 1., 1.]);
        let r = vif(&x, &names(3)).unwrap();
        assert_eq!(r.entries[0].status, VifStatus::Infinite);
        assert_eq!(r.entries[1].status, VifStatus::Infinite);
        assert_eq!(r.max_vif, f64::INFINITY);
    }

    #[test]
    fn two_columns_with_known_correlation() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [2.0, 1.0, 4.0, 3.0, 6.0, 7.0];
        // sample correlation computed directly
        let ma = a.iter().sum::<f64>() / 6.0;
        let mb = b.iter().sum::<f64>() / 6.0;
        let sab: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let r = sab / (saa * sbb).sqrt();
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { a[i] } else { b[i] });
        let rep = vif(&x, &names(2)).unwrap();
        for e in &rep.entries {
            assert!((e.vif - 1.0 / (1.0 - r * r)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_variance_and_row_count() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let r = vif(&x, &names(2)).unwrap();
        assert_eq!(r.entries[0].status, VifStatus::ZeroVariance);
        assert_eq!(r.max_vif, 1.0);
        assert!(matches!(vif(&DMatrix::zeros(2, 2), &names(2)), Err(VifError::TooFewRows { .. })));
    }
}
