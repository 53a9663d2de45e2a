//! Conditional logistic regression for matched sets.
//!
//! The log-likelihood of a design is the sum over sets of
//! `x_case . beta - log(sum_j exp(x_j . beta))`, evaluated with a
//! max-shifted log-sum-exp. Fitting uses Newton steps on the analytic
//! gradient and Hessian, halving the step until the likelihood does not
//! decrease.

mod vif;

pub use vif::{vif, VifEntry, VifError, VifReport, VifStatus};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Normal quantile used for Wald intervals.
pub const WALD_Z: f64 = 1.96;

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("row has {found} values, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite value in column {column}")]
    NonFinite { column: String },
    #[error("a matched set needs at least one control")]
    NoControls,
}

/// Matched sets stored row-major; the first row of each set is its case.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedDesign {
    columns: Vec<String>,
    x: Vec<f64>,
    /// Row offsets of each set, with a final sentinel.
    bounds: Vec<usize>,
}

impl MatchedDesign {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            x: Vec::new(),
            bounds: vec![0],
        }
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_sets(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        *self.bounds.last().expect("sentinel")
    }

    fn check_row(&self, row: &[f64]) -> Result<(), DesignError> {
        if row.len() != self.p() {
            return Err(DesignError::Dimension {
                expected: self.p(),
                found: row.len(),
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite {
                column: self.columns[j].clone(),
            });
        }
        Ok(())
    }

    pub fn push_set<R: AsRef<[f64]>>(&mut self, case: &[f64], controls: &[R]) -> Result<(), DesignError> {
        if controls.is_empty() {
            return Err(DesignError::NoControls);
        }
        self.check_row(case)?;
        for c in controls {
            self.check_row(c.as_ref())?;
        }
        self.x.extend_from_slice(case);
        for c in controls {
            self.x.extend_from_slice(c.as_ref());
        }
        self.bounds.push(self.n_rows() + 1 + controls.len());
        Ok(())
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.p();
        &self.x[r * p..(r + 1) * p]
    }

    /// Rows of set `s`, case first.
    pub fn set_rows(&self, s: usize) -> impl Iterator<Item = &[f64]> + '_ {
        (self.bounds[s]..self.bounds[s + 1]).map(move |r| self.row(r))
    }

    pub fn set_size(&self, s: usize) -> usize {
        self.bounds[s + 1] - self.bounds[s]
    }

    /// Copy keeping only the given columns, in the given order.
    pub fn select(&self, keep: &[usize]) -> MatchedDesign {
        let mut x = Vec::with_capacity(self.n_rows() * keep.len());
        for r in 0..self.n_rows() {
            let row = self.row(r);
            x.extend(keep.iter().map(|&j| row[j]));
        }
        MatchedDesign {
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            x,
            bounds: self.bounds.clone(),
        }
    }

    /// Pooled rows as a dense matrix, ignoring set structure.
    pub fn pooled(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_rows(), self.p(), &self.x)
    }
}

#[derive(Debug, Clone)]
pub struct LogLik {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Value, gradient and Hessian at `beta`, reduced over sets in order.
pub fn cond_loglik(beta: &[f64], design: &MatchedDesign) -> LogLik {
    let p = design.p();
    assert_eq!(beta.len(), p, "beta has the wrong dimension");
    let mut value = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let mut eta = Vec::new();
    let mut xbar = vec![0.0; p];
    let mut d = vec![0.0; p];
    for s in 0..design.n_sets() {
        eta.clear();
        eta.extend(design.set_rows(s).map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()));
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = eta.iter().map(|e| (e - m).exp()).sum();
        value += eta[0] - (m + sum.ln());

        xbar.iter_mut().for_each(|v| *v = 0.0);
        for (row, e) in design.set_rows(s).zip(&eta) {
            let w = (e - m).exp() / sum;
            for (acc, v) in xbar.iter_mut().zip(row) {
                *acc += w * v;
            }
        }
        let case = design.row(design.bounds[s]);
        for j in 0..p {
            grad[j] += case[j] - xbar[j];
        }
        for (row, e) in design.set_rows(s).zip(&eta) {
            let w = (e - m).exp() / sum;
            for j in 0..p {
                d[j] = row[j] - xbar[j];
            }
            for a in 0..p {
                let wa = w * d[a];
                for b in 0..=a {
                    hess[(a, b)] -= wa * d[b];
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            hess[(b, a)] = hess[(a, b)];
        }
    }
    LogLik {
        value,
        gradient: grad,
        hessian: hess,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub separation_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 25,
            max_halvings: 20,
            separation_threshold: 15.0,
        }
    }
}

string_enum! {
    pub enum DropReason {
        ConstantWithinSets => "constant_within_sets",
        Collinear => "collinear",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub column: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    /// Columns kept for estimation, aligned with the vectors below.
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub aor: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub separation: bool,
    pub gradient_max_norm: f64,
    pub dropped_columns: Vec<DroppedColumn>,
    pub n_sets: usize,
    pub n_rows: usize,
}

impl ModelResult {
    pub fn index_of(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("design has no matched sets")]
    Empty,
    #[error("information matrix is singular; non-identifiable columns: {}", .columns.join(", "))]
    Singular { columns: Vec<String> },
}

fn constant_within_sets(design: &MatchedDesign, j: usize) -> bool {
    (0..design.n_sets()).all(|s| {
        let mut rows = design.set_rows(s);
        let first = rows.next().expect("non-empty set")[j];
        rows.all(|r| r[j] == first)
    })
}

/// Columns that cannot be estimated: constant inside every set, or
/// linearly dependent on earlier columns once set means are removed.
pub fn screen_columns(design: &MatchedDesign) -> (Vec<usize>, Vec<DroppedColumn>) {
    let p = design.p();
    let mut candidates = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..p {
        if constant_within_sets(design, j) {
            dropped.push(DroppedColumn {
                column: design.columns[j].clone(),
                reason: DropReason::ConstantWithinSets,
            });
        } else {
            candidates.push(j);
        }
    }
    // Gram matrix of the within-set centered design.
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut mean = vec![0.0; p];
    let mut c = vec![0.0; p];
    for s in 0..design.n_sets() {
        let n = design.set_size(s) as f64;
        mean.iter_mut().for_each(|v| *v = 0.0);
        for row in design.set_rows(s) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        for row in design.set_rows(s) {
            for j in 0..p {
                c[j] = row[j] - mean[j];
            }
            for a in 0..p {
                for b in 0..=a {
                    gram[(a, b)] += c[a] * c[b];
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let mut keep: Vec<usize> = Vec::new();
    for j in candidates {
        let gjj = gram[(j, j)];
        let residual = if keep.is_empty() {
            gjj
        } else {
            let k = keep.len();
            let gkk = DMatrix::from_fn(k, k, |a, b| gram[(keep[a], keep[b])]);
            let gkj = DVector::from_fn(k, |a, _| gram[(keep[a], j)]);
            match gkk.cholesky() {
                Some(ch) => gjj - gkj.dot(&ch.solve(&gkj)),
                None => 0.0,
            }
        };
        if residual > 1e-9 * gjj.max(1.0) {
            keep.push(j);
        } else {
            dropped.push(DroppedColumn {
                column: design.columns[j].clone(),
                reason: DropReason::Collinear,
            });
        }
    }
    (keep, dropped)
}

/// Columns loading on the weakest direction of a symmetric matrix.
fn weak_columns(info: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let eig = SymmetricEigen::new(info.clone());
    let (i, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let v = eig.eigenvectors.column(i);
    names
        .iter()
        .zip(v.iter())
        .filter(|(_, c)| c.abs() > 0.1)
        .map(|(n, _)| n.clone())
        .collect()
}

/// Newton fit with step-halving after column screening.
pub fn fit(design: &MatchedDesign, config: &FitConfig) -> Result<ModelResult, FitError> {
    if design.n_sets() == 0 {
        return Err(FitError::Empty);
    }
    let (keep, dropped_columns) = screen_columns(design);
    let d = design.select(&keep);
    let p = d.p();
    let mut beta = vec![0.0; p];
    let mut ll = cond_loglik(&beta, &d);
    let mut iterations = 0;
    let mut converged = false;
    let mut separation = false;
    loop {
        let gmax = ll.gradient.amax();
        if gmax < config.tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iter {
            break;
        }
        let info = -&ll.hessian;
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&ll.gradient),
            None => {
                return Err(FitError::Singular {
                    columns: weak_columns(&info, d.columns()),
                })
            }
        };
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let next = cond_loglik(&trial, &d);
            if next.value.is_finite() && next.value >= ll.value - 1e-12 * ll.value.abs().max(1.0) {
                accepted = Some((trial, next));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, next)) = accepted else { break };
        let increased = next.value > ll.value;
        beta = trial;
        ll = next;
        if increased && beta.iter().any(|b| b.abs() > config.separation_threshold) {
            separation = true;
            break;
        }
    }
    if separation {
        converged = false;
    }

    let info = -&ll.hessian;
    let se: Vec<f64> = if p == 0 {
        vec![]
    } else {
        match info.clone().try_inverse() {
            Some(inv) => (0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect(),
            None => vec![f64::NAN; p],
        }
    };
    let aor = beta.iter().map(|b| b.exp()).collect();
    let ci_low = beta.iter().zip(&se).map(|(b, s)| (b - WALD_Z * s).exp()).collect();
    let ci_high = beta.iter().zip(&se).map(|(b, s)| (b + WALD_Z * s).exp()).collect();
    Ok(ModelResult {
        columns: d.columns().to_vec(),
        gradient_max_norm: ll.gradient.amax(),
        beta,
        se,
        aor,
        ci_low,
        ci_high,
        loglik: ll.value,
        iterations,
        converged,
        separation,
        dropped_columns,
        n_sets: design.n_sets(),
        n_rows: design.n_rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_col(sets: &[(f64, &[f64])]) -> MatchedDesign {
        let mut d = MatchedDesign::new(vec!["x".into()]);
        for (case, controls) in sets {
            let rows: Vec<[f64; 1]> = controls.iter().map(|&c| [c]).collect();
            d.push_set(&[*case], &rows).unwrap();
        }
        d
    }

    #[test]
    fn loglik_examples() {
        let d = one_col(&[(1.0, &[0.0, 0.0, 0.0, 0.0])]);
        let ll = cond_loglik(&[2f64.ln()], &d);
        assert!((ll.value - (2.0f64 / 6.0).ln()).abs() < 1e-12);

        let d = one_col(&[(1.0, &[0.0, 2.0]), (0.5, &[1.0]), (3.0, &[1.0, 1.0, 1.0, 1.0])]);
        let ll = cond_loglik(&[0.0], &d);
        let want = -(3f64.ln() + 2f64.ln() + 5f64.ln());
        assert!((ll.value - want).abs() < 1e-12);
    }

    #[test]
    fn discordant_pairs() {
        let mut sets: Vec<(f64, &[f64])> = Vec::new();
        sets.extend(std::iter::repeat((1.0, &[0.0][..])).take(6));
        sets.extend(std::iter::repeat((0.0, &[1.0][..])).take(3));
        sets.extend(std::iter::repeat((1.0, &[1.0][..])).take(4));
        let r = fit(&one_col(&sets), &FitConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.aor[0] - 2.0).abs() < 1e-6, "{r:?}");
        // se of the discordant-pair estimator: sqrt(1/b + 1/c)
        assert!((r.se[0] - (1.0 / 6.0 + 1.0 / 3.0f64).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn separation_is_flagged() {
        let sets: Vec<(f64, &[f64])> = (0..10).map(|_| (1.0, &[0.0, 0.0, 0.0, 0.0][..])).collect();
        let r = fit(&one_col(&sets), &FitConfig::default()).unwrap();
        assert!(r.separation);
        assert!(!r.converged);
    }

    #[test]
    fn constant_columns_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut with = MatchedDesign::new(vec!["x".into(), "age".into()]);
        let mut without = MatchedDesign::new(vec!["x".into()]);
        for s in 0..60 {
            let age = (s % 7) as f64;
            let xs: Vec<f64> = (0..5).map(|_| f64::from(rng.gen_bool(0.4))).collect();
            with.push_set(&[xs[0], age], &xs[1..].iter().map(|&x| [x, age]).collect::<Vec<_>>()).unwrap();
            without.push_set(&[xs[0]], &xs[1..].iter().map(|&x| [x]).collect::<Vec<_>>()).unwrap();
        }
        let a = fit(&with, &FitConfig::default()).unwrap();
        let b = fit(&without, &FitConfig::default()).unwrap();
        assert_eq!(a.dropped_columns, [DroppedColumn { column: "age".into(), reason: DropReason::ConstantWithinSets }]);
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.se, b.se);
    }

    #[test]
    fn collinear_columns_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut d = MatchedDesign::new(vec!["a".into(), "b".into(), "a_twice".into()]);
        for _ in 0..50 {
            let rows: Vec<[f64; 3]> = (0..5)
                .map(|_| {
                    let a = f64::from(rng.gen_bool(0.5));
                    [a, f64::from(rng.gen_bool(0.3)), 2.0 * a]
                })
                .collect();
            d.push_set(&rows[0], &rows[1..]).unwrap();
        }
        let r = fit(&d, &FitConfig::default()).unwrap();
        assert_eq!(r.columns, ["a", "b"]);
        assert_eq!(r.dropped_columns[0].reason, DropReason::Collinear);
    }

    #[test]
    fn design_errors() {
        let mut d = MatchedDesign::new(vec!["x".into()]);
        assert_eq!(d.push_set(&[1.0], &[[0.0, 1.0]]), Err(DesignError::Dimension { expected: 1, found: 2 }));
        assert!(matches!(d.push_set(&[f64::NAN], &[[0.0]]), Err(DesignError::NonFinite { .. })));
        assert_eq!(d.push_set::<[f64; 1]>(&[1.0], &[]), Err(DesignError::NoControls));
        assert_eq!(fit(&d, &FitConfig::default()), Err(FitError::Empty));
    }

    fn random_design(rng: &mut ChaCha8Rng, sets: usize, p: usize) -> MatchedDesign {
        let mut d = MatchedDesign::new((0..p).map(|j| format!("x{j}")).collect());
        for _ in 0..sets {
            let size = rng.gen_range(2..=5);
            let rows: Vec<Vec<f64>> = (0..size).map(|_| (0..p).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
            d.push_set(&rows[0], &rows[1..]).unwrap();
        }
        d
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn hessian_is_negative_semidefinite(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.gen_range(1..=4);
            let d = random_design(&mut rng, 20, p);
            let beta: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let h = cond_loglik(&beta, &d).hessian;
            let eig = SymmetricEigen::new(h);
            prop_assert!(eig.eigenvalues.iter().all(|&e| e <= 1e-10));
        }

        #[test]
        fn within_set_shift_invariance(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = 2;
            let d = random_design(&mut rng, 40, p);
            let mut shifted = MatchedDesign::new(d.columns().to_vec());
            for s in 0..d.n_sets() {
                let shift: Vec<f64> = (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let rows: Vec<Vec<f64>> = d.set_rows(s).map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
                shifted.push_set(&rows[0], &rows[1..]).unwrap();
            }
            let beta = [0.3, -0.7];
            prop_assert!((cond_loglik(&beta, &d).value - cond_loglik(&beta, &shifted).value).abs() < 1e-9);
            let (a, b) = (fit(&d, &FitConfig::default()).unwrap(), fit(&shifted, &FitConfig::default()).unwrap());
            for j in 0..p {
                prop_assert!((a.beta[j] - b.beta[j]).abs() < 1e-7);
                prop_assert!((a.se[j] - b.se[j]).abs() < 1e-7);
            }
        }

        #[test]
        fn invariant_to_set_and_control_order(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_design(&mut rng, 30, 2);
            let mut order: Vec<usize> = (0..d.n_sets()).collect();
            order.shuffle(&mut rng);
            let mut permuted = MatchedDesign::new(d.columns().to_vec());
            for &s in &order {
                let rows: Vec<&[f64]> = d.set_rows(s).collect();
                let mut controls = rows[1..].to_vec();
                controls.shuffle(&mut rng);
                permuted.push_set(rows[0], &controls).unwrap();
            }
            let (a, b) = (fit(&d, &FitConfig::default()).unwrap(), fit(&permuted, &FitConfig::default()).unwrap());
            for j in 0..2 {
                prop_assert!((a.beta[j] - b.beta[j]).abs() < 1e-9);
            }
        }

        #[test]
        fn wald_interval_brackets_estimate(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_design(&mut rng, 50, 2);
            let r = fit(&d, &FitConfig::default()).unwrap();
            for j in 0..2 {
                prop_assert!(r.aor[j] > 0.0);
                prop_assert!(r.ci_low[j] < r.aor[j] && r.aor[j] < r.ci_high[j]);
                prop_assert!((r.ci_low[j] - (r.beta[j] - WALD_Z * r.se[j]).exp()).abs() < 1e-12);
            }
        }
    }
}
