//! Replicate-study evaluation: parameter error, predictive accuracy, support
//! recovery, median-probability selection, and a closed-form ridge baseline.
//!
//! Rates with a zero denominator are reported as `None`, never as NaN, so a
//! replicate with no discoveries stays distinguishable from a perfect one.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, numerical, Result};
use crate::linalg::{chol_solve, cholesky_lower};
use crate::rng::substream;

/// Mean absolute and mean squared deviation between two coefficient fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamError {
    pub bias: f64,
    pub mse: f64,
}

pub fn param_error(beta_true: ArrayView1<'_, f64>, beta_hat: ArrayView1<'_, f64>) -> Result<ParamError> {
    if beta_true.len() != beta_hat.len() {
        return Err(invalid(format!(
            "coefficient lengths differ: {} vs {}",
            beta_true.len(),
            beta_hat.len()
        )));
    }
    if beta_true.is_empty() {
        return Err(invalid("coefficient vectors must be non-empty"));
    }
    let m = beta_true.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (t, e) in beta_true.iter().zip(beta_hat.iter()) {
        let d = t - e;
        abs += d.abs();
        sq += d * d;
    }
    Ok(ParamError { bias: abs / m, mse: sq / m })
}

/// Squared Pearson correlation and mean squared error of predictions.
/// `r2` is `None` when either vector is constant (correlation undefined).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveMetrics {
    pub r2: Option<f64>,
    pub mse: f64,
}

pub fn predictive_metrics(y: ArrayView1<'_, f64>, y_hat: ArrayView1<'_, f64>) -> Result<PredictiveMetrics> {
    if y.len() != y_hat.len() {
        return Err(invalid(format!("outcome lengths differ: {} vs {}", y.len(), y_hat.len())));
    }
    if y.len() < 2 {
        return Err(invalid("predictive metrics need at least two observations"));
    }
    let n = y.len() as f64;
    let mean_y = y.sum() / n;
    let mean_h = y_hat.sum() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut mse = 0.0;
    for (a, b) in y.iter().zip(y_hat.iter()) {
        let da = a - mean_y;
        let db = b - mean_h;
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
        let d = a - b;
        mse += d * d;
    }
    let r2 = if sxx > 0.0 && syy > 0.0 { Some(sxy * sxy / (sxx * syy)) } else { None };
    Ok(PredictiveMetrics { r2, mse: mse / n })
}

/// Confusion counts and rates for support recovery. Each rate is `None` when
/// its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfusion {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    /// TP / (TP + FN)
    pub tpr: Option<f64>,
    /// TP / (TP + FP)
    pub tdr: Option<f64>,
    /// FP / (FP + TN)
    pub fpr: Option<f64>,
    /// FP / (FP + TP)
    pub fdr: Option<f64>,
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn selection_confusion(true_mask: &[bool], est_mask: &[bool]) -> Result<SelectionConfusion> {
    if true_mask.len() != est_mask.len() {
        return Err(invalid(format!(
            "mask lengths differ: {} vs {}",
            true_mask.len(),
            est_mask.len()
        )));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fneg = 0;
    for (&t, &e) in true_mask.iter().zip(est_mask.iter()) {
        match (t, e) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fneg += 1,
        }
    }
    Ok(SelectionConfusion {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fneg,
        tpr: rate(tp, tp + fneg),
        tdr: rate(tp, tp + fp),
        fpr: rate(fp, fp + tn),
        fdr: rate(fp, fp + tp),
    })
}

/// Median-probability selection: keep vertex j when p_j >= tau (inclusive).
pub fn median_probability_selection(p: ArrayView1<'_, f64>, tau: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid(format!("selection threshold must lie in [0, 1], got {tau}")));
    }
    if let Some(bad) = p.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(invalid(format!("inclusion probabilities must lie in [0, 1], got {bad}")));
    }
    Ok(p.iter().map(|&q| q >= tau).collect())
}

/// A fitted ridge baseline with the penalty chosen on a validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub coefficients: Array1<f64>,
    pub intercept: f64,
    pub penalty: f64,
    pub validation_mse: f64,
}

impl RidgeFit {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.dot(&self.coefficients) + self.intercept
    }
}

/// Ridge with an unpenalized intercept: center the columns of X and y, solve
/// (Xc'Xc + penalty I) b = Xc'yc, then intercept = mean(y) - mean(x)'b. The
/// penalty grid is scored by validation MSE; ties go to the larger penalty.
pub fn ridge_fit(
    x_train: ArrayView2<'_, f64>,
    y_train: ArrayView1<'_, f64>,
    x_val: ArrayView2<'_, f64>,
    y_val: ArrayView1<'_, f64>,
    penalties: &[f64],
) -> Result<RidgeFit> {
    if x_train.nrows() != y_train.len() || x_val.nrows() != y_val.len() {
        return Err(invalid("design and outcome row counts differ"));
    }
    if x_train.ncols() != x_val.ncols() {
        return Err(invalid("training and validation designs have different widths"));
    }
    if y_train.len() < 2 {
        return Err(invalid("ridge needs at least two training observations"));
    }
    if y_val.is_empty() {
        return Err(invalid("ridge needs a non-empty validation split"));
    }
    if penalties.is_empty() {
        return Err(invalid("the penalty grid is empty"));
    }
    if let Some(bad) = penalties.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(invalid(format!("penalties must be finite and non-negative, got {bad}")));
    }

    let problem = CenteredRidge::new(x_train, y_train);
    let mut best: Option<RidgeFit> = None;
    for &penalty in penalties {
        let coefficients = problem.solve(penalty)?;
        let intercept = problem.intercept(&coefficients);
        let fitted = x_val.dot(&coefficients) + intercept;
        let validation_mse = fitted
            .iter()
            .zip(y_val.iter())
            .map(|(f, y)| (f - y).powi(2))
            .sum::<f64>()
            / y_val.len() as f64;
        let candidate = RidgeFit { coefficients, intercept, penalty, validation_mse };
        best = Some(match best {
            None => candidate,
            Some(current) => {
                let better = candidate.validation_mse < current.validation_mse
                    || (candidate.validation_mse == current.validation_mse
                        && candidate.penalty > current.penalty);
                if better {
                    candidate
                } else {
                    current
                }
            }
        });
    }
    Ok(best.expect("non-empty penalty grid"))
}

/// Splits off a deterministic validation fraction (seeded shuffle), fits on
/// the rest, then refits at the chosen penalty on all rows.
pub fn ridge_fit_split(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    penalties: &[f64],
    val_fraction: f64,
    seed: u64,
) -> Result<RidgeFit> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(invalid(format!("validation fraction must lie in (0, 1), got {val_fraction}")));
    }
    let n = y.len();
    let n_val = ((n as f64) * val_fraction).round().max(1.0) as usize;
    if n_val >= n {
        return Err(invalid("validation split would consume the whole sample"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, "ridge-split");
    shuffle(&mut order, &mut rng);
    let (val_idx, train_idx) = order.split_at(n_val);
    let take = |idx: &[usize]| {
        let mut xs = Array2::zeros((idx.len(), x.ncols()));
        let mut ys = Array1::zeros(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            xs.row_mut(r).assign(&x.row(i));
            ys[r] = y[i];
        }
        (xs, ys)
    };
    let (x_tr, y_tr) = take(train_idx);
    let (x_va, y_va) = take(val_idx);
    let chosen = ridge_fit(x_tr.view(), y_tr.view(), x_va.view(), y_va.view(), penalties)?;

    // Refit on everything at the selected penalty.
    let problem = CenteredRidge::new(x, y);
    let coefficients = problem.solve(chosen.penalty)?;
    let intercept = problem.intercept(&coefficients);
    Ok(RidgeFit { coefficients, intercept, penalty: chosen.penalty, validation_mse: chosen.validation_mse })
}

fn shuffle<R: rand::Rng + ?Sized>(idx: &mut [usize], rng: &mut R) {
    for i in (1..idx.len()).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
}

/// Centered normal equations, shared across the penalty grid. When the
/// design is wider than tall the dual (N x N) system is solved instead; both
/// routes give the same estimator.
struct CenteredRidge {
    xc: Array2<f64>,
    col_means: Array1<f64>,
    y_mean: f64,
    yc: Array1<f64>,
    gram: Array2<f64>,
    rhs_primal: Option<Array1<f64>>,
    dual: bool,
}

impl CenteredRidge {
    fn new(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Self {
        let n = x.nrows();
        let m = x.ncols();
        let col_means = x.sum_axis(ndarray::Axis(0)) / n as f64;
        let mut xc = x.to_owned();
        for mut row in xc.rows_mut() {
            row -= &col_means;
        }
        let y_mean = y.sum() / n as f64;
        let yc = y.to_owned() - y_mean;
        let dual = m > n;
        let gram = if dual { xc.dot(&xc.t()) } else { xc.t().dot(&xc) };
        let rhs_primal = (!dual).then(|| xc.t().dot(&yc));
        Self { xc, col_means, y_mean, yc, gram, rhs_primal, dual }
    }

    fn solve(&self, penalty: f64) -> Result<Array1<f64>> {
        if self.dual && penalty == 0.0 {
            return Err(numerical("ridge at penalty 0 is singular when predictors outnumber rows"));
        }
        let mut a = self.gram.clone();
        for d in a.diag_mut() {
            *d += penalty;
        }
        let l = cholesky_lower(a.view())
            .map_err(|_| numerical(format!("ridge system is singular at penalty {penalty}")))?;
        if self.dual {
            let alpha = chol_solve(&l, self.yc.view());
            Ok(self.xc.t().dot(&alpha))
        } else {
            let rhs = self.rhs_primal.as_ref().expect("primal rhs");
            Ok(chol_solve(&l, rhs.view()))
        }
    }

    fn intercept(&self, coefficients: &Array1<f64>) -> f64 {
        self.y_mean - self.col_means.dot(coefficients)
    }
}

/// Mean and Monte-Carlo standard error over replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

/// Summarizes a metric across replicates, skipping undefined values. Returns
/// `None` when no replicate produced a defined value.
pub fn summarize(values: &[Option<f64>]) -> Option<MetricSummary> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return None;
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let se = if defined.len() > 1 {
        let var = defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Some(MetricSummary { mean, se, count: defined.len() })
}
