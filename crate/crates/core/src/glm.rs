//! Pointwise functional linear model: least squares, the linear hypothesis
//! `Cβ = c0`, and the built-in test statistics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold under which a residual scale or an effect counts as
/// exactly zero.
const DEGENERACY_TOLERANCE: f64 = 1e-12;

/// `N × m` observations; row `i` is signal `ξ_i` sampled at the `m` product
/// grid points. Stored column-major so each grid point's sample is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    n_obs: usize,
    n_points: usize,
    columns: Vec<f64>,
}

impl SignalMatrix {
    pub fn from_rows(n_obs: usize, n_points: usize, row_major: &[f64]) -> Result<Self> {
        if row_major.len() != n_obs * n_points {
            return Err(Error::Dimension(format!(
                "{n_obs}×{n_points} signal matrix needs {} values, got {}",
                n_obs * n_points,
                row_major.len()
            )));
        }
        let mut columns = vec![0.0; row_major.len()];
        for i in 0..n_obs {
            for j in 0..n_points {
                columns[j * n_obs + i] = row_major[i * n_points + j];
            }
        }
        Self::from_columns(n_obs, n_points, columns)
    }

    pub fn from_columns(n_obs: usize, n_points: usize, columns: Vec<f64>) -> Result<Self> {
        if n_obs < 2 {
            return Err(Error::Dimension(format!("need at least 2 observations, got {n_obs}")));
        }
        if columns.len() != n_obs * n_points {
            return Err(Error::Dimension(format!(
                "{n_obs}×{n_points} signal matrix needs {} values, got {}",
                n_obs * n_points,
                columns.len()
            )));
        }
        if let Some(k) = columns.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite signal value at observation {}, point {}",
                k % n_obs,
                k / n_obs
            )));
        }
        Ok(Self {
            n_obs,
            n_points,
            columns,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.n_obs..(j + 1) * self.n_obs]
    }

    pub fn get(&self, obs: usize, point: usize) -> f64 {
        self.columns[point * self.n_obs + obs]
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.columns.len()];
        for j in 0..self.n_points {
            for i in 0..self.n_obs {
                out[i * self.n_points + j] = self.columns[j * self.n_obs + i];
            }
        }
        out
    }

    pub(crate) fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.columns.chunks(self.n_obs)
    }
}

/// Scalar covariates per observation (plus the implicit intercept), and an
/// optional two-group partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    /// `N` rows of `K` covariate values.
    pub covariates: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_labels: Option<Vec<usize>>,
}

impl DesignSpec {
    pub fn intercept_only(n_obs: usize) -> Self {
        Self {
            covariates: vec![Vec::new(); n_obs],
            group_labels: None,
        }
    }

    /// Two-sample model: intercept plus the indicator of group 1.
    pub fn two_sample(labels: &[usize]) -> Result<Self> {
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("group labels must be 0 or 1".into()));
        }
        Ok(Self {
            covariates: labels.iter().map(|&l| vec![l as f64]).collect(),
            group_labels: Some(labels.to_vec()),
        })
    }

    /// Single scalar covariate, e.g. time for a trend test.
    pub fn trend(t: &[f64]) -> Self {
        Self {
            covariates: t.iter().map(|&v| vec![v]).collect(),
            group_labels: None,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.covariates.len()
    }

    /// Number of coefficients, intercept included.
    pub fn n_coefficients(&self) -> usize {
        1 + self.covariates.first().map_or(0, Vec::len)
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.n_obs();
        let p = self.n_coefficients();
        if let Some(bad) = self.covariates.iter().position(|r| r.len() != p - 1) {
            return Err(Error::Dimension(format!("covariate row {bad} has the wrong length")));
        }
        if let Some(labels) = &self.group_labels {
            if labels.len() != n {
                return Err(Error::Dimension(format!(
                    "{} group labels for {n} observations",
                    labels.len()
                )));
            }
        }
        Ok(DMatrix::from_fn(n, p, |i, k| if k == 0 { 1.0 } else { self.covariates[i][k - 1] }))
    }

    /// Covariate column `k - 1` (coefficient `k`).
    fn covariate(&self, k: usize) -> Vec<f64> {
        self.covariates.iter().map(|r| r[k - 1]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
    OneSidedPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// Squared pooled-variance two-sample t.
    TTwoSampleSq,
    /// `max(0, b̂ / SE(b̂))`.
    TTrendCutoff,
    /// `b̂²`.
    SlopeSq,
}

impl StatisticKind {
    pub fn sidedness(self) -> Sidedness {
        match self {
            StatisticKind::TTrendCutoff => Sidedness::OneSidedPositive,
            _ => Sidedness::TwoSided,
        }
    }
}

/// Pointwise hypothesis `Cβ(s) = c0`, with `c0` constant over the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    /// Rows of `C`, each of length `K + 1`.
    pub contrast: Vec<Vec<f64>>,
    pub value: Vec<f64>,
    pub sidedness: Sidedness,
    pub statistic: StatisticKind,
}

impl HypothesisSpec {
    /// `β_k = 0` tested with `statistic`.
    pub fn coefficient(k: usize, n_coefficients: usize, statistic: StatisticKind) -> Self {
        let mut row = vec![0.0; n_coefficients];
        row[k] = 1.0;
        Self {
            contrast: vec![row],
            value: vec![0.0],
            sidedness: statistic.sidedness(),
            statistic,
        }
    }

    fn contrast_matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        let rows = self.contrast.len();
        if rows == 0 || self.contrast.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension(format!("contrast rows must have length {p}")));
        }
        if self.value.len() != rows {
            return Err(Error::Dimension(format!(
                "contrast has {rows} rows but {} values",
                self.value.len()
            )));
        }
        let c = DMatrix::from_fn(rows, p, |i, k| self.contrast[i][k]);
        if c.clone().svd(false, false).rank(1e-10) < rows {
            return Err(Error::InvalidArgument("contrast matrix is not of full row rank".into()));
        }
        Ok(c)
    }

    /// The tested coefficient when `C` is a single unit row `e_k`, `k >= 1`.
    fn single_coefficient(&self) -> Option<usize> {
        if self.contrast.len() != 1 || self.value[0] != 0.0 {
            return None;
        }
        let row = &self.contrast[0];
        let nonzero: Vec<usize> = (0..row.len()).filter(|&k| row[k] != 0.0).collect();
        match nonzero.as_slice() {
            [k] if *k >= 1 && row[*k] == 1.0 => Some(*k),
            _ => None,
        }
    }
}

/// Test statistic values `T(·)` over the product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StatField(pub Vec<f64>);

impl StatField {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Classical standard errors; `None` when `N <= K + 1`.
    pub standard_errors: Option<Vec<f64>>,
}

fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let p = x.ncols();
    if x.nrows() < p || x.clone().svd(false, false).rank(1e-10 * x.norm().max(1.0)) < p {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// Precomputed `(XᵀX)⁻¹Xᵀ` and `diag((XᵀX)⁻¹)` for a fixed design.
#[derive(Debug, Clone)]
struct LeastSquares {
    x: DMatrix<f64>,
    projector: DMatrix<f64>,
    inverse_diag: Vec<f64>,
}

impl LeastSquares {
    fn new(x: DMatrix<f64>) -> Result<Self> {
        check_full_rank(&x)?;
        let xtx = x.transpose() * &x;
        let inverse = xtx.cholesky().ok_or(Error::RankDeficient)?.inverse();
        let projector = &inverse * x.transpose();
        let inverse_diag = (0..inverse.nrows()).map(|k| inverse[(k, k)]).collect();
        Ok(Self {
            x,
            projector,
            inverse_diag,
        })
    }

    /// The design always holds the intercept column, so `P·1 = e_0`: slopes
    /// are computed on `y - y_0`, which makes them exactly shift invariant.
    fn coefficient(&self, k: usize, y: &[f64]) -> f64 {
        let base = y[0];
        let slope: f64 = self.projector.row(k).iter().zip(y).map(|(a, b)| a * (b - base)).sum();
        if k == 0 {
            slope + base
        } else {
            slope
        }
    }

    fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        (0..self.projector.nrows()).map(|k| self.coefficient(k, y)).collect()
    }

    fn residuals(&self, y: &[f64], beta: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(i, &yi)| yi - (0..beta.len()).map(|k| self.x[(i, k)] * beta[k]).sum::<f64>())
            .collect()
    }
}

/// Ordinary least squares for one column.
pub fn ols_fit(y: &[f64], design: &DesignSpec) -> Result<OlsFit> {
    let x = design.matrix()?;
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} responses for {} design rows", y.len(), x.nrows())));
    }
    let ls = LeastSquares::new(x)?;
    let coefficients = ls.coefficients(y);
    let residuals = ls.residuals(y, &coefficients);
    let dof = y.len() as isize - coefficients.len() as isize;
    let standard_errors = (dof > 0).then(|| {
        let sigma2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof as f64;
        ls.inverse_diag.iter().map(|d| (sigma2 * d).sqrt()).collect()
    });
    Ok(OlsFit {
        coefficients,
        residuals,
        standard_errors,
    })
}

fn scale_of(y: &[f64]) -> f64 {
    y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// A pointwise statistic `t: R^N → R_+` prepared for a fixed design.
///
/// This is the extension point for hypotheses beyond the built-in ones.
pub trait PointwiseStatistic: Sync {
    /// Evaluates the statistic on one grid point's sample. `column` is only
    /// used to label errors.
    fn evaluate(&self, y: &[f64], column: usize) -> Result<f64>;
}

/// Pooled-variance two-sample t², for fixed group membership.
#[derive(Debug, Clone)]
pub struct TwoSampleT {
    in_second: Vec<bool>,
    n1: usize,
    n2: usize,
}

impl TwoSampleT {
    pub fn new(labels: &[usize]) -> Result<Self> {
        let n2 = labels.iter().filter(|&&l| l == 1).count();
        let n1 = labels.iter().filter(|&&l| l == 0).count();
        if n1 + n2 != labels.len() {
            return Err(Error::InvalidArgument("group labels must be 0 or 1".into()));
        }
        if n1 < 2 || n2 < 2 {
            return Err(Error::InvalidArgument(format!(
                "both groups need at least 2 observations (got {n1} and {n2})"
            )));
        }
        Ok(Self {
            in_second: labels.iter().map(|&l| l == 1).collect(),
            n1,
            n2,
        })
    }
}

impl PointwiseStatistic for TwoSampleT {
    fn evaluate(&self, y: &[f64], column: usize) -> Result<f64> {
        let (mut s1, mut s2) = (0.0, 0.0);
        for (&v, &second) in y.iter().zip(&self.in_second) {
            if second {
                s2 += v;
            } else {
                s1 += v;
            }
        }
        let (m1, m2) = (s1 / self.n1 as f64, s2 / self.n2 as f64);
        let (mut ss1, mut ss2) = (0.0, 0.0);
        for (&v, &second) in y.iter().zip(&self.in_second) {
            if second {
                ss2 += (v - m2) * (v - m2);
            } else {
                ss1 += (v - m1) * (v - m1);
            }
        }
        let pooled_var = (ss1 + ss2) / (self.n1 + self.n2 - 2) as f64;
        let diff = m1 - m2;
        let scale = scale_of(y);
        if pooled_var.sqrt() <= DEGENERACY_TOLERANCE * scale || pooled_var == 0.0 {
            return if diff.abs() <= DEGENERACY_TOLERANCE * scale {
                Ok(0.0)
            } else {
                Err(Error::DegenerateStatistic { column })
            };
        }
        let se2 = pooled_var * (1.0 / self.n1 as f64 + 1.0 / self.n2 as f64);
        Ok(diff * diff / se2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrendForm {
    Cutoff,
    Squared,
}

/// Statistics of one regression coefficient `b = β_k`.
#[derive(Debug, Clone)]
pub struct CoefficientStatistic {
    ls: LeastSquares,
    k: usize,
    form: TrendForm,
}

impl CoefficientStatistic {
    /// `max(0, b̂ / SE(b̂))`.
    pub fn t_cutoff(design: &DesignSpec, k: usize) -> Result<Self> {
        let ls = LeastSquares::new(design.matrix()?)?;
        if design.n_obs() <= ls.projector.nrows() {
            return Err(Error::InvalidArgument(format!(
                "standard errors need more than {} observations",
                ls.projector.nrows()
            )));
        }
        Self::with(ls, k, TrendForm::Cutoff)
    }

    /// `b̂²`.
    pub fn squared(design: &DesignSpec, k: usize) -> Result<Self> {
        Self::with(LeastSquares::new(design.matrix()?)?, k, TrendForm::Squared)
    }

    fn with(ls: LeastSquares, k: usize, form: TrendForm) -> Result<Self> {
        if k == 0 || k >= ls.projector.nrows() {
            return Err(Error::InvalidArgument(format!("no covariate coefficient {k}")));
        }
        Ok(Self { ls, k, form })
    }
}

impl PointwiseStatistic for CoefficientStatistic {
    fn evaluate(&self, y: &[f64], column: usize) -> Result<f64> {
        let b = self.ls.coefficient(self.k, y);
        match self.form {
            TrendForm::Squared => Ok(b * b),
            TrendForm::Cutoff => {
                let beta = self.ls.coefficients(y);
                let rss: f64 = self.ls.residuals(y, &beta).iter().map(|r| r * r).sum();
                let n = y.len();
                let dof = (n - beta.len()) as f64;
                let scale = scale_of(y) * (n as f64).sqrt();
                let zero_residual = rss.sqrt() <= DEGENERACY_TOLERANCE * scale;
                if zero_residual || rss == 0.0 {
                    let effect = b.abs() / self.ls.inverse_diag[self.k].sqrt();
                    return if b <= 0.0 || effect <= DEGENERACY_TOLERANCE * scale {
                        Ok(0.0)
                    } else {
                        Err(Error::DegenerateStatistic { column })
                    };
                }
                let se = (rss / dof * self.ls.inverse_diag[self.k]).sqrt();
                Ok((b / se).max(0.0))
            }
        }
    }
}

/// Squared two-sample t statistic with pooled variance. `groups[i]` is 0 or 1.
pub fn t_two_sample_sq(y: &[f64], groups: &[usize]) -> Result<f64> {
    if y.len() != groups.len() {
        return Err(Error::Dimension("one group label per observation".into()));
    }
    TwoSampleT::new(groups)?.evaluate(y, 0)
}

/// One-sided positive-trend t statistic floored at zero.
pub fn t_trend_cutoff(y: &[f64], t: &[f64]) -> Result<f64> {
    if y.len() < 3 || y.len() != t.len() {
        return Err(Error::Dimension("need N >= 3 responses matching the covariate".into()));
    }
    CoefficientStatistic::t_cutoff(&DesignSpec::trend(t), 1)?.evaluate(y, 0)
}

/// Squared least-squares slope.
pub fn slope_sq(y: &[f64], t: &[f64]) -> Result<f64> {
    if y.len() < 2 || y.len() != t.len() {
        return Err(Error::Dimension("need N >= 2 responses matching the covariate".into()));
    }
    CoefficientStatistic::squared(&DesignSpec::trend(t), 1)?.evaluate(y, 0)
}

/// Builds the statistic selected by `hypothesis`.
pub fn prepare_statistic(
    design: &DesignSpec,
    hypothesis: &HypothesisSpec,
) -> Result<Box<dyn PointwiseStatistic>> {
    let x = design.matrix()?;
    hypothesis.contrast_matrix(x.ncols())?;
    if hypothesis.sidedness != hypothesis.statistic.sidedness() {
        return Err(Error::UnsupportedHypothesis(format!(
            "{:?} is a {:?} statistic, hypothesis asks for {:?}",
            hypothesis.statistic,
            hypothesis.statistic.sidedness(),
            hypothesis.sidedness
        )));
    }
    let k = hypothesis.single_coefficient().ok_or_else(|| {
        Error::UnsupportedHypothesis(
            "built-in statistics test a single coefficient against zero".into(),
        )
    })?;
    match hypothesis.statistic {
        StatisticKind::TTwoSampleSq => {
            let labels = design.group_labels.as_ref().ok_or_else(|| {
                Error::UnsupportedHypothesis("two-sample t needs group labels".into())
            })?;
            let indicator: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            if x.ncols() != 2 || k != 1 || design.covariate(1) != indicator {
                return Err(Error::UnsupportedHypothesis(
                    "two-sample t needs the design intercept + group indicator".into(),
                ));
            }
            Ok(Box::new(TwoSampleT::new(labels)?))
        }
        StatisticKind::TTrendCutoff => Ok(Box::new(CoefficientStatistic::t_cutoff(design, k)?)),
        StatisticKind::SlopeSq => Ok(Box::new(CoefficientStatistic::squared(design, k)?)),
    }
}

/// Applies a prepared statistic to every column.
pub fn stat_field_with(signals: &SignalMatrix, statistic: &dyn PointwiseStatistic) -> Result<StatField> {
    signals
        .columns()
        .enumerate()
        .map(|(j, y)| statistic.evaluate(y, j))
        .collect::<Result<Vec<_>>>()
        .map(StatField)
}

pub fn stat_field(
    signals: &SignalMatrix,
    design: &DesignSpec,
    hypothesis: &HypothesisSpec,
) -> Result<StatField> {
    if signals.n_obs() != design.n_obs() {
        return Err(Error::Dimension(format!(
            "{} observations but {} design rows",
            signals.n_obs(),
            design.n_obs()
        )));
    }
    let statistic = prepare_statistic(design, hypothesis)?;
    stat_field_with(signals, statistic.as_ref())
}

/// Reduced model under `Cβ = c0`: fitted values `o + H(y - o)` where `H`
/// projects onto `X·null(C)` and `o = X·C⁺c0`.
#[derive(Debug, Clone)]
pub struct NullModel {
    hat: DMatrix<f64>,
    offset: DVector<f64>,
}

impl NullModel {
    pub fn new(design: &DesignSpec, hypothesis: &HypothesisSpec) -> Result<Self> {
        let x = design.matrix()?;
        check_full_rank(&x)?;
        let p = x.ncols();
        let c = hypothesis.contrast_matrix(p)?;
        let c0 = DVector::from_column_slice(&hypothesis.value);
        // eigenvectors of CᵀC with the p - rank smallest eigenvalues span null(C)
        let eig = (c.transpose() * &c).symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let null_dim = p - c.nrows();
        let null_basis = DMatrix::from_fn(p, null_dim, |i, j| eig.eigenvectors[(i, order[j])]);
        let particular = c
            .clone()
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            * c0;
        let offset = &x * particular;
        let n = x.nrows();
        let hat = if null_basis.ncols() == 0 {
            DMatrix::zeros(n, n)
        } else {
            let z = &x * null_basis;
            let ztz = z.transpose() * &z;
            let inv = ztz.cholesky().ok_or(Error::RankDeficient)?.inverse();
            &z * inv * z.transpose()
        };
        Ok(Self { hat, offset })
    }

    /// Intercept-only reduced model.
    pub fn intercept_only(n_obs: usize) -> Self {
        Self {
            hat: DMatrix::from_element(n_obs, n_obs, 1.0 / n_obs as f64),
            offset: DVector::zeros(n_obs),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.hat.nrows()
    }

    /// Splits `y` into reduced-model fit and residual.
    pub fn split(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = y.len();
        let centered = DVector::from_iterator(n, y.iter().zip(self.offset.iter()).map(|(a, o)| a - o));
        let fit_c = &self.hat * &centered;
        let fitted: Vec<f64> = fit_c.iter().zip(self.offset.iter()).map(|(f, o)| f + o).collect();
        let residual = y.iter().zip(&fitted).map(|(a, f)| a - f).collect();
        (fitted, residual)
    }
}
