//! Multivariate Wiener filters and kin-graph selection.
//!
//! `W_j(ω)` estimates `x_j` from every other series. Over an exact spectrum
//! `W_ji ≠ 0` exactly when `i` and `j` are kin (adjacent or two hops apart in
//! the tree), so thresholding a per-pair summary of the filters yields the
//! kin graph.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::graph::UndirectedGraph;
use crate::spectral::{SpectralDensityField, WelchStats, C64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WienerError {
    #[error("at least two series are required, got {0}")]
    TooFewSeries(usize),
    #[error("ridge must be finite and non-negative, got {0}")]
    InvalidRidge(f64),
    #[error("numerically singular block at ω = {omega} (target {target:?}, condition estimate {condition:e})")]
    SingularBlock {
        omega: f64,
        target: Option<String>,
        condition: f64,
    },
    #[error("scores are all equal and nonzero; no gap to cut")]
    Degenerate,
    #[error("invalid threshold policy: {0}")]
    InvalidPolicy(String),
    #[error("scores export: {0}")]
    Export(String),
}

pub type Result<T> = std::result::Result<T, WienerError>;

pub const DEFAULT_RIDGE_RATIO: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e14;

/// Per-bin filters. `filters[f][(j, i)]` is `W_ji(ω_f)`, the weight of
/// source `i` in the estimate of target `j`. The diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerFilterBank {
    labels: Vec<String>,
    grid: Vec<f64>,
    filters: Vec<DMatrix<C64>>,
    ridge: Vec<f64>,
    stats: Option<WelchStats>,
}

impl WienerFilterBank {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn filters(&self) -> &[DMatrix<C64>] {
        &self.filters
    }

    /// Ridge used at each bin.
    pub fn ridge(&self) -> &[f64] {
        &self.ridge
    }

    pub fn stats(&self) -> Option<&WelchStats> {
        self.stats.as_ref()
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    /// `W_j(ω_f)` as a row over sources `i ≠ j`, in label order.
    pub fn target_row(&self, j: usize, f: usize) -> Vec<C64> {
        let w = &self.filters[f];
        (0..self.labels.len())
            .filter(|&i| i != j)
            .map(|i| w[(j, i)])
            .collect()
    }

    pub fn max_abs_deviation(&self, other: &WienerFilterBank) -> f64 {
        self.filters
            .iter()
            .zip(&other.filters)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max)
    }
}

fn bin_ridge(phi: &DMatrix<C64>, ridge: Option<f64>) -> f64 {
    ridge.unwrap_or_else(|| DEFAULT_RIDGE_RATIO * phi.trace().re / phi.nrows() as f64)
}

fn check_inputs(field: &SpectralDensityField, ridge: Option<f64>) -> Result<()> {
    if field.node_count() < 2 {
        return Err(WienerError::TooFewSeries(field.node_count()));
    }
    if let Some(e) = ridge {
        if !(e >= 0.0 && e.is_finite()) {
            return Err(WienerError::InvalidRidge(e));
        }
    }
    Ok(())
}

/// Cholesky factor of a Hermitian matrix, rejecting numerically singular
/// ones. The condition number is estimated from the factor's diagonal.
fn factor(mat: DMatrix<C64>, omega: f64, target: Option<&str>) -> Result<Cholesky<C64, Dyn>> {
    let singular = |condition: f64| WienerError::SingularBlock {
        omega,
        target: target.map(str::to_owned),
        condition,
    };
    let chol = Cholesky::new(mat).ok_or_else(|| singular(f64::INFINITY))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .map(|z| z.re.abs())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
            (lo.min(d), hi.max(d))
        });
    let condition = (hi / lo).powi(2);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(singular(condition));
    }
    Ok(chol)
}

fn bank_from_bins(
    field: &SpectralDensityField,
    bins: Vec<(DMatrix<C64>, f64)>,
) -> WienerFilterBank {
    let (filters, ridge) = bins.into_iter().unzip();
    WienerFilterBank {
        labels: field.labels().to_vec(),
        grid: field.grid().to_vec(),
        filters,
        ridge,
        stats: field.stats().copied(),
    }
}

/// Solves `W_j (Φ_{j̄j̄} + εI) = Φ_{jj̄}` for every target `j` and bin.
/// With `ridge = None` each bin uses `1e-6 · trace Φ / m`.
pub fn wiener_filters(
    field: &SpectralDensityField,
    ridge: Option<f64>,
) -> Result<WienerFilterBank> {
    check_inputs(field, ridge)?;
    let m = field.node_count();
    let labels = field.labels();
    let bins = field
        .grid()
        .par_iter()
        .zip(field.matrices().par_iter())
        .map(|(&omega, phi)| {
            let eps = bin_ridge(phi, ridge);
            let mut w = DMatrix::zeros(m, m);
            for j in 0..m {
                let rest: Vec<usize> = (0..m).filter(|&i| i != j).collect();
                let mut block = phi.select_rows(&rest).select_columns(&rest);
                for d in 0..m - 1 {
                    block[(d, d)] += eps;
                }
                let chol = factor(block, omega, Some(&labels[j]))?;
                // The block is Hermitian, so W_jᴴ solves block · x = Φ_{j̄j}.
                let rhs = DVector::from_iterator(m - 1, rest.iter().map(|&i| phi[(i, j)]));
                let x = chol.solve(&rhs);
                for (k, &i) in rest.iter().enumerate() {
                    w[(j, i)] = x[k].conj();
                }
            }
            Ok((w, eps))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(bank_from_bins(field, bins))
}

/// Same filters from one inverse per bin: `W_ji = −Q_ji / Q_jj` with
/// `Q = (Φ + εI)⁻¹`.
pub fn inverse_psd_filters(
    field: &SpectralDensityField,
    ridge: Option<f64>,
) -> Result<WienerFilterBank> {
    check_inputs(field, ridge)?;
    let m = field.node_count();
    let bins = field
        .grid()
        .par_iter()
        .zip(field.matrices().par_iter())
        .map(|(&omega, phi)| {
            let eps = bin_ridge(phi, ridge);
            let mut reg = phi.clone();
            for d in 0..m {
                reg[(d, d)] += eps;
            }
            let q = factor(reg, omega, None)?.inverse();
            let w = DMatrix::from_fn(m, m, |j, i| {
                if i == j {
                    C64::new(0.0, 0.0)
                } else {
                    -q[(j, i)] / q[(j, j)]
                }
            });
            Ok((w, eps))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(bank_from_bins(field, bins))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// RMS of `|W_ji|` over the grid.
    FilterRms,
    /// Grid mean of the partial coherence `|W_ji W_ij|`.
    PartialCoherence,
    /// Partial coherence mean standardised against its null distribution
    /// under the Welch averaging statistics (a z-score, clipped at 0).
    StandardizedPartialCoherence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingScores {
    labels: Vec<String>,
    scores: DMatrix<f64>,
    symmetrized: bool,
    kind: ScoreKind,
}

impl CouplingScores {
    pub fn new(
        labels: Vec<String>,
        scores: DMatrix<f64>,
        symmetrized: bool,
        kind: ScoreKind,
    ) -> Self {
        assert_eq!(scores.nrows(), labels.len());
        assert!(scores.is_square());
        Self {
            labels,
            scores,
            symmetrized,
            kind,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[(i, j)]
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrized
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    /// `s_ij = s_ji = max(r_ij, r_ji)`.
    pub fn symmetrize(&self) -> Self {
        let s = &self.scores;
        Self {
            labels: self.labels.clone(),
            scores: DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)].max(s[(j, i)])),
            symmetrized: true,
            kind: self.kind,
        }
    }

    /// Upper-triangle pairs `(i, j, s_ij)` with `i < j`.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let m = self.labels.len();
        (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, self.scores[(i, j)]))
            .collect()
    }

    /// CSV with a label header row and one row per node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| WienerError::Export(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (i, l) in self.labels.iter().enumerate() {
            let mut row = vec![l.clone()];
            row.extend(self.scores.row(i).iter().map(|x| format!("{x:e}")));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| WienerError::Export(e.to_string()))
    }
}

/// RMS filter magnitude per ordered pair, symmetrised by max.
pub fn coupling_scores(bank: &WienerFilterBank) -> CouplingScores {
    let m = bank.node_count();
    let f = bank.filters.len() as f64;
    let mut r = DMatrix::zeros(m, m);
    for w in &bank.filters {
        for j in 0..m {
            for i in 0..m {
                if i != j {
                    r[(j, i)] += w[(j, i)].norm_sqr();
                }
            }
        }
    }
    let r = r.map(|x: f64| (x / f).sqrt());
    CouplingScores::new(bank.labels.clone(), r, false, ScoreKind::FilterRms).symmetrize()
}

/// Null mean and bin-average standard deviation of the partial coherence of
/// an unlinked pair, given the Welch statistics and `m` series.
pub fn partial_coherence_null(stats: &WelchStats, m: usize, bins: usize) -> (f64, f64) {
    let dof = (stats.effective_segments - m as f64 + 2.0).max(1.0);
    let mean = 1.0 / dof;
    let sd = mean * (stats.bin_correlation_factor / bins as f64).sqrt();
    (mean, sd)
}

/// Partial coherence `|Q_ij|² / (Q_ii Q_jj) = |W_ij W_ji|` averaged over the
/// grid. When the bank carries Welch statistics the averages are turned into
/// z-scores against the null of an unlinked pair.
pub fn partial_coherence_scores(bank: &WienerFilterBank) -> CouplingScores {
    let m = bank.node_count();
    let bins = bank.filters.len();
    let mut s = DMatrix::zeros(m, m);
    for w in &bank.filters {
        for i in 0..m {
            for j in i + 1..m {
                let pc = (w[(i, j)] * w[(j, i)]).norm();
                s[(i, j)] += pc;
                s[(j, i)] += pc;
            }
        }
    }
    s /= bins as f64;
    match &bank.stats {
        Some(stats) => {
            let (mu, sd) = partial_coherence_null(stats, m, bins);
            let z = s.map(|x| ((x - mu) / sd).max(0.0));
            let z = DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { z[(i, j)] });
            CouplingScores::new(
                bank.labels.clone(),
                z,
                true,
                ScoreKind::StandardizedPartialCoherence,
            )
        }
        None => CouplingScores::new(bank.labels.clone(), s, true, ScoreKind::PartialCoherence),
    }
}

/// Serialised as its [`parse`](ThresholdPolicy::parse) string form.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ThresholdPolicy {
    /// Cut at the largest ratio between consecutive sorted scores, if it exceeds 10.
    #[default]
    Gap,
    Fixed {
        tau: f64,
    },
    /// Bonferroni-corrected one-sided test at level `alpha` over all pairs.
    /// Requires standardised scores.
    Significance {
        alpha: f64,
    },
}

impl ThresholdPolicy {
    pub const GAP_RATIO: f64 = 10.0;
    pub const FALLBACK_FRACTION: f64 = 0.05;
    pub const DEFAULT_ALPHA: f64 = 1e-3;

    /// Parses `gap`, `fixed:<tau>` or `significance[:<alpha>]`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || WienerError::InvalidPolicy(s.to_owned());
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a.parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let policy = match (name, arg) {
            ("gap", None) => Self::Gap,
            ("fixed", Some(tau)) => Self::Fixed { tau },
            ("significance", alpha) => Self::Significance {
                alpha: alpha.unwrap_or(Self::DEFAULT_ALPHA),
            },
            _ => return Err(bad()),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Fixed { tau } if !(tau >= 0.0 && tau.is_finite()) => {
                Err(WienerError::InvalidPolicy(format!(
                    "fixed threshold must be non-negative, got {tau}"
                )))
            }
            Self::Significance { alpha } if !(alpha > 0.0 && alpha < 1.0) => Err(
                WienerError::InvalidPolicy(format!("alpha must lie in (0, 1), got {alpha}")),
            ),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Gap => write!(f, "gap"),
            Self::Fixed { tau } => write!(f, "fixed:{tau}"),
            Self::Significance { alpha } => write!(f, "significance:{alpha}"),
        }
    }
}

impl TryFrom<String> for ThresholdPolicy {
    type Error = WienerError;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<ThresholdPolicy> for String {
    fn from(p: ThresholdPolicy) -> Self {
        p.to_string()
    }
}

/// Outcome of thresholding: pairs with score strictly above `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinSelection {
    pub graph: UndirectedGraph,
    pub threshold: f64,
    pub policy: ThresholdPolicy,
    /// Ratio across the cut for the gap policy, if a qualifying gap was found.
    pub gap_ratio: Option<f64>,
    pub warnings: Vec<String>,
}

/// Threshold for the gap policy and the ratio it cut at.
fn gap_threshold(sorted_desc: &[f64]) -> Result<(f64, Option<f64>)> {
    let max = sorted_desc.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok((0.0, None));
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, w) in sorted_desc.windows(2).enumerate() {
        let ratio = if w[1] > 0.0 {
            w[0] / w[1]
        } else {
            f64::INFINITY
        };
        if ratio > ThresholdPolicy::GAP_RATIO && best.is_none_or(|(_, r)| ratio > r) {
            best = Some((k, ratio));
        }
    }
    match best {
        Some((k, ratio)) => Ok((sorted_desc[k + 1], Some(ratio))),
        None if sorted_desc.iter().all(|&s| s == max) => Err(WienerError::Degenerate),
        None => Ok((ThresholdPolicy::FALLBACK_FRACTION * max, None)),
    }
}

pub fn select_kin(scores: &CouplingScores, policy: ThresholdPolicy) -> Result<KinSelection> {
    policy.validate()?;
    let scores = if scores.symmetrized {
        scores.clone()
    } else {
        scores.symmetrize()
    };
    let pairs = scores.pairs();
    let mut warnings = Vec::new();
    let (threshold, gap_ratio) = match policy {
        ThresholdPolicy::Gap => {
            let mut sorted: Vec<f64> = pairs.iter().map(|p| p.2).collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let (t, ratio) = gap_threshold(&sorted)?;
            if ratio.is_none() && sorted.first().is_some_and(|&s| s > 0.0) {
                warnings.push(format!(
                    "no ratio gap above {} between sorted scores; fell back to {} x max",
                    ThresholdPolicy::GAP_RATIO,
                    ThresholdPolicy::FALLBACK_FRACTION
                ));
            }
            (t, ratio)
        }
        ThresholdPolicy::Fixed { tau } => (tau, None),
        ThresholdPolicy::Significance { alpha } => {
            if scores.kind != ScoreKind::StandardizedPartialCoherence {
                return Err(WienerError::InvalidPolicy(
                    "significance thresholding needs standardised partial-coherence scores".into(),
                ));
            }
            let tests = pairs.len().max(1) as f64;
            let z = Normal::standard().inverse_cdf(1.0 - alpha / tests);
            (z, None)
        }
    };
    let edges: Vec<(usize, usize)> = pairs
        .iter()
        .filter(|p| p.2 > threshold)
        .map(|p| (p.0, p.1))
        .collect();
    Ok(KinSelection {
        graph: UndirectedGraph::from_index_edges(scores.labels.clone(), &edges),
        threshold,
        policy,
        gap_ratio,
        warnings,
    })
}

/// Kin graph `T′` selected from symmetrised scores.
pub fn threshold_kin(scores: &CouplingScores, policy: ThresholdPolicy) -> Result<UndirectedGraph> {
    select_kin(scores, policy).map(|s| s.graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{analytic_psd, GridNetworkModel};
    use crate::graph::{kin_graph_oracle, validate_tree};
    use std::f64::consts::PI;

    fn field_of(labels: &[&str], mats: Vec<DMatrix<C64>>) -> SpectralDensityField {
        let f = mats.len();
        let grid = (1..=f).map(|k| PI * k as f64 / f as f64).collect();
        SpectralDensityField::new(
            labels.iter().map(|s| s.to_string()).collect(),
            grid,
            mats,
            None,
        )
        .unwrap()
    }

    fn chain5_field() -> SpectralDensityField {
        let g = UndirectedGraph::numbered(5, &[(1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let model = GridNetworkModel::uniform(validate_tree(&g).unwrap());
        let dss = model.discretize().unwrap();
        let grid: Vec<f64> = (1..=128).map(|f| PI * f as f64 / 128.0).collect();
        analytic_psd(&dss, model.noise(), &grid).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn diagonal_field_gives_zero_filters() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![
            c(1.0, 0.0),
            c(2.0, 0.0),
            c(3.0, 0.0),
        ]));
        let field = field_of(&["a", "b", "c"], vec![d.clone(), d]);
        for bank in [
            wiener_filters(&field, None).unwrap(),
            inverse_psd_filters(&field, None).unwrap(),
        ] {
            assert!(bank
                .filters()
                .iter()
                .all(|w| w.iter().all(|z| z.norm() == 0.0)));
            assert_eq!(coupling_scores(&bank).scores(), &DMatrix::zeros(3, 3));
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        let rho = c(0.3, -0.4);
        let phi = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), rho, rho.conj(), c(1.0, 0.0)]);
        let field = field_of(&["a", "b"], vec![phi]);
        let eps = 0.01;
        let w = wiener_filters(&field, Some(eps)).unwrap();
        assert!((w.filters()[0][(0, 1)] - rho / (1.0 + eps)).norm() < 1e-15);
        assert_eq!(w.target_row(0, 0), vec![w.filters()[0][(0, 1)]]);
        let q = inverse_psd_filters(&field, Some(0.0)).unwrap();
        assert!((q.filters()[0][(0, 1)] - rho).norm() < 1e-15);
        assert_eq!(w.ridge(), &[eps]);
    }

    #[test]
    fn identity_field_inverse_path() {
        let field = field_of(&["a", "b", "c"], vec![DMatrix::identity(3, 3)]);
        let bank = inverse_psd_filters(&field, None).unwrap();
        assert!(bank.filters()[0].iter().all(|z| z.norm() == 0.0));
        assert!((bank.ridge()[0] - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn singular_block_is_reported() {
        let ones = DMatrix::from_element(3, 3, c(1.0, 0.0));
        let field = field_of(&["a", "b", "c"], vec![ones]);
        assert!(matches!(
            wiener_filters(&field, Some(0.0)),
            Err(WienerError::SingularBlock { .. })
        ));
        assert!(matches!(
            inverse_psd_filters(&field, Some(0.0)),
            Err(WienerError::SingularBlock { .. })
        ));
        assert!(wiener_filters(&field, Some(0.1)).is_ok());
        assert_eq!(
            wiener_filters(&field, Some(-1.0)),
            Err(WienerError::InvalidRidge(-1.0))
        );
    }

    #[test]
    fn chain5_filters_vanish_off_kin() {
        let field = chain5_field();
        let bank = wiener_filters(&field, Some(0.0)).unwrap();
        let max_of = |j: usize, i: usize| {
            bank.filters()
                .iter()
                .map(|w| w[(j, i)].norm())
                .fold(0.0, f64::max)
        };
        // 0-based: nodes 1 and 4 are three hops apart.
        let far = max_of(0, 3)
            .max(max_of(3, 0))
            .max(max_of(0, 4))
            .max(max_of(1, 4));
        assert!(far < 1e-6, "{far}");
        for (j, i) in [(0, 1), (0, 2), (1, 3), (2, 4), (3, 4), (2, 3)] {
            assert!(max_of(j, i) > 1e3 * far);
        }
        let kin = threshold_kin(&coupling_scores(&bank), ThresholdPolicy::Gap).unwrap();
        assert_eq!(kin.edge_count(), 7);
        let g = UndirectedGraph::numbered(5, &[(1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        assert!(kin.same_topology(&kin_graph_oracle(&validate_tree(&g).unwrap())));
    }

    #[test]
    fn both_paths_agree() {
        let field = chain5_field();
        let a = wiener_filters(&field, Some(0.0)).unwrap();
        let b = inverse_psd_filters(&field, Some(0.0)).unwrap();
        assert!(a.max_abs_deviation(&b) < 1e-8);
        let a = wiener_filters(&field, None).unwrap();
        let b = inverse_psd_filters(&field, None).unwrap();
        assert!(a.max_abs_deviation(&b) < 1e-8);
    }

    #[test]
    fn partial_coherence_equals_inverse_form() {
        let field = chain5_field();
        let bank = inverse_psd_filters(&field, Some(0.0)).unwrap();
        let s = partial_coherence_scores(&bank);
        assert_eq!(s.kind(), ScoreKind::PartialCoherence);
        let mut expected = 0.0;
        for phi in field.matrices() {
            let q = phi.clone().try_inverse().unwrap();
            expected += q[(0, 1)].norm_sqr() / (q[(0, 0)].re * q[(1, 1)].re);
        }
        expected /= field.len() as f64;
        assert!((s.get(0, 1) - expected).abs() < 1e-10);
    }

    #[test]
    fn rms_and_symmetrization() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.1, 0.0]);
        let s = CouplingScores::new(vec!["1".into(), "2".into()], m, false, ScoreKind::FilterRms)
            .symmetrize();
        assert_eq!(s.get(0, 1), 0.4);
        assert_eq!(s.get(1, 0), 0.4);
        let w =
            DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.25), c(0.0, 0.0), c(0.0, 0.0)]);
        let bank = WienerFilterBank {
            labels: vec!["1".into(), "2".into()],
            grid: vec![1.0, 2.0, 3.0],
            filters: vec![w.clone(), w.clone(), w],
            ridge: vec![0.0; 3],
            stats: None,
        };
        let s = coupling_scores(&bank);
        assert!((s.get(0, 1) - 0.25).abs() < 1e-15);
        assert!(s.is_symmetrized());
    }

    fn scores_from_pairs(values: &[f64]) -> CouplingScores {
        // Four pairs laid out on a 4-node matrix.
        let mut m = DMatrix::zeros(4, 4);
        let slots = [(0, 1), (2, 3), (0, 2), (1, 3), (0, 3), (1, 2)];
        for (&(i, j), &v) in slots.iter().zip(values) {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        CouplingScores::new(
            (1..=4).map(|i| i.to_string()).collect(),
            m,
            true,
            ScoreKind::FilterRms,
        )
    }

    #[test]
    fn gap_rule_on_sorted_scores() {
        let (t, ratio) = gap_threshold(&[0.9, 0.8, 0.05, 0.04]).unwrap();
        assert_eq!(t, 0.05);
        assert!((ratio.unwrap() - 16.0).abs() < 1e-12);
        // Ratios 20 and 50: the larger one wins.
        let (t, _) = gap_threshold(&[100.0, 5.0, 0.1, 0.1]).unwrap();
        assert_eq!(t, 0.1);
        assert_eq!(gap_threshold(&[0.0, 0.0]).unwrap(), (0.0, None));
        assert_eq!(
            gap_threshold(&[0.5, 0.5, 0.5]),
            Err(WienerError::Degenerate)
        );
        assert_eq!(gap_threshold(&[1.0, 0.5, 0.25]).unwrap(), (0.05, None));
    }

    #[test]
    fn gap_policy_on_graphs() {
        let s = scores_from_pairs(&[0.9, 0.8, 0.05, 0.04, 0.03, 0.02]);
        let sel = select_kin(&s, ThresholdPolicy::Gap).unwrap();
        assert_eq!(sel.graph.edge_count(), 2);
        assert!(sel.graph.contains_edge("1", "2") && sel.graph.contains_edge("3", "4"));
        assert!(sel.warnings.is_empty());

        let zero = scores_from_pairs(&[]);
        for p in [ThresholdPolicy::Gap, ThresholdPolicy::Fixed { tau: 0.1 }] {
            assert_eq!(threshold_kin(&zero, p).unwrap().edge_count(), 0);
        }
        let flat = scores_from_pairs(&[0.5; 6]);
        assert_eq!(
            threshold_kin(&flat, ThresholdPolicy::Gap),
            Err(WienerError::Degenerate)
        );

        let smooth = scores_from_pairs(&[1.0, 0.5, 0.25, 0.125, 0.07, 0.01]);
        let sel = select_kin(&smooth, ThresholdPolicy::Gap).unwrap();
        assert_eq!(sel.graph.edge_count(), 5);
        assert!((sel.threshold - 0.05).abs() < 1e-15);
        assert_eq!(sel.warnings.len(), 1);

        let sel = select_kin(&s, ThresholdPolicy::Fixed { tau: 0.045 }).unwrap();
        assert_eq!(sel.graph.edge_count(), 3);
    }

    #[test]
    fn scale_invariance_of_gap() {
        let field = chain5_field();
        let base = threshold_kin(
            &coupling_scores(&wiener_filters(&field, None).unwrap()),
            ThresholdPolicy::Gap,
        )
        .unwrap();
        for k in [1e-6, 0.3, 7.0, 1e5] {
            let scaled = field.scaled(k);
            let g = threshold_kin(
                &coupling_scores(&wiener_filters(&scaled, None).unwrap()),
                ThresholdPolicy::Gap,
            )
            .unwrap();
            assert_eq!(g, base);
        }
    }

    #[test]
    fn significance_needs_standardized_scores() {
        let s = scores_from_pairs(&[0.9, 0.8]);
        assert!(matches!(
            select_kin(&s, ThresholdPolicy::Significance { alpha: 1e-3 }),
            Err(WienerError::InvalidPolicy(_))
        ));
        let z = CouplingScores::new(
            s.labels().to_vec(),
            s.scores().map(|x| x * 10.0),
            true,
            ScoreKind::StandardizedPartialCoherence,
        );
        let sel = select_kin(&z, ThresholdPolicy::Significance { alpha: 1e-3 }).unwrap();
        let tail = 1.0 - Normal::standard().cdf(sel.threshold);
        assert!((tail - 1e-3 / 6.0).abs() < 1e-12);
        assert_eq!(sel.graph.edge_count(), 2);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(ThresholdPolicy::parse("gap").unwrap(), ThresholdPolicy::Gap);
        assert_eq!(
            ThresholdPolicy::parse("fixed:0.2").unwrap(),
            ThresholdPolicy::Fixed { tau: 0.2 }
        );
        assert_eq!(
            ThresholdPolicy::parse("significance").unwrap(),
            ThresholdPolicy::Significance { alpha: 1e-3 }
        );
        for bad in ["fixed", "gap:1", "fixed:x", "significance:2", "other"] {
            assert!(ThresholdPolicy::parse(bad).is_err(), "{bad}");
        }
        let p = ThresholdPolicy::Fixed { tau: 0.5 };
        assert_eq!(ThresholdPolicy::parse(&p.to_string()).unwrap(), p);
        assert_eq!(serde_json::to_string(&p).unwrap(), "\"fixed:0.5\"");
        let back: ThresholdPolicy = serde_json::from_str("\"significance:0.01\"").unwrap();
        assert_eq!(back, ThresholdPolicy::Significance { alpha: 0.01 });
    }

    #[test]
    fn csv_export() {
        let s = scores_from_pairs(&[0.9]);
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], ",1,2,3,4");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("1,0e0,9e-1"));
    }
}
