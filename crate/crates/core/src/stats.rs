//! Rank correlation, iteration-averaging curves, t intervals, MAD and
//! least-squares calibration.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::scorebook::ScoreMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("degenerate fit: predictor has zero variance")]
    DegenerateFit,
    #[error("baseline MAD is zero")]
    ZeroBaseline,
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("correlation curve needs at least 4 iterations, got {0}")]
    TooFewIterations(usize),
}

/// Ranks starting at 1, ties sharing the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::UndefinedCorrelation("zero rank variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::UndefinedCorrelation(format!(
            "{} paired values, need 3",
            x.len()
        )));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Spearman over the pairs where `x` is present.
pub fn spearman_pairwise(x: &[Option<f64>], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| a.map(|a| (a, *b)))
        .unzip();
    spearman(&xs, &ys)
}

/// Two-sided interval `mean ± t(level, count − 1) × sd`. `None` when
/// `count < 2`.
pub fn t_ci(mean: f64, sd: f64, count: usize, level: f64) -> Result<Option<(f64, f64)>, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidLevel(level));
    }
    if count < 2 {
        return Ok(None);
    }
    let half = t_quantile(level, count - 1) * sd;
    Ok(Some((mean - half, mean + half)))
}

/// Two-sided critical value of Student's t.
pub fn t_quantile(level: f64, df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("df >= 1")
        .inverse_cdf(0.5 + level / 2.0)
}

/// How subsets of size 3..=n−3 are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetSampling {
    /// Each sample is k distinct iterations; samples are drawn independently,
    /// so the same selection can recur.
    #[default]
    Distinct,
    /// Each of the k indices is drawn independently (a multiset).
    IndicesWithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveOptions {
    pub level: f64,
    pub sampled_subsets: usize,
    pub sampling: SubsetSampling,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            sampled_subsets: 1000,
            sampling: SubsetSampling::Distinct,
        }
    }
}

fn k_seed(seed: u64, k: usize) -> u64 {
    // splitmix64 of (seed, k)
    let mut z = seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Iteration subsets averaged for a given k:
/// k = 1 and k = n − 1 enumerate the n singletons / leave-one-out sets;
/// k = 2 and k = n − 2 enumerate the n(n − 1) ordered pairs (included or
/// excluded); 3 ≤ k ≤ n − 3 draws `options.sampled_subsets` random subsets;
/// k = n is the single full set.
pub fn subsets_for_k(n: usize, k: usize, seed: u64, options: &CurveOptions) -> Vec<Vec<usize>> {
    assert!(n >= 4 && (1..=n).contains(&k), "k={k} n={n}");
    let all_but = |skip: &[usize]| -> Vec<usize> { (0..n).filter(|i| !skip.contains(i)).collect() };
    if k == n {
        return vec![(0..n).collect()];
    }
    if k == 1 {
        return (0..n).map(|i| vec![i]).collect();
    }
    if k == n - 1 {
        return (0..n).map(|i| all_but(&[i])).collect();
    }
    let ordered_pairs = || {
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
    };
    if k == 2 {
        return ordered_pairs().map(|(i, j)| vec![i, j]).collect();
    }
    if k == n - 2 {
        return ordered_pairs().map(|(i, j)| all_but(&[i, j])).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(k_seed(seed, k));
    (0..options.sampled_subsets)
        .map(|_| match options.sampling {
            SubsetSampling::Distinct => index::sample(&mut rng, n, k).into_vec(),
            SubsetSampling::IndicesWithReplacement => {
                (0..k).map(|_| rng.random_range(0..n)).collect()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub mean: Option<f64>,
    /// Standard deviation of the correlation samples; absent at k = n.
    pub sd: Option<f64>,
    /// Standard error of the mean correlation (sd / √samples).
    pub se: Option<f64>,
    /// sd-based t interval.
    pub ci: Option<(f64, f64)>,
    pub samples: usize,
    /// Subsets whose correlation was undefined.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub level: f64,
    pub points: Vec<CurvePoint>,
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

/// Correlation between averaged model scores and human scores as a
/// function of how many iterations are averaged.
pub fn correlation_curve(
    matrix: &ScoreMatrix,
    seed: u64,
    options: &CurveOptions,
) -> Result<CorrelationCurve, StatsError> {
    let n = matrix.iterations();
    if n < 4 {
        return Err(StatsError::TooFewIterations(n));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(StatsError::InvalidLevel(options.level));
    }
    let mut points = Vec::with_capacity(n);
    for k in 1..=n {
        let mut rs = Vec::new();
        let mut excluded = 0;
        for subset in subsets_for_k(n, k, seed, options) {
            match spearman_pairwise(&matrix.means_over(&subset), matrix.human()) {
                Ok(r) => rs.push(r),
                Err(_) => excluded += 1,
            }
        }
        let point = if rs.is_empty() {
            CurvePoint { k, mean: None, sd: None, se: None, ci: None, samples: 0, excluded }
        } else {
            let (mean, sd) = mean_sd(&rs);
            let sd = if k == n { None } else { sd };
            let ci = match sd {
                Some(sd) => t_ci(mean, sd, rs.len(), options.level)?,
                None => None,
            };
            CurvePoint {
                k,
                mean: Some(mean),
                sd,
                se: sd.map(|s| s / (rs.len() as f64).sqrt()),
                ci,
                samples: rs.len(),
                excluded,
            }
        };
        points.push(point);
    }
    Ok(CorrelationCurve {
        level: options.level,
        points,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl CorrelationCurve {
    pub fn point(&self, k: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.k == k)
    }

    /// CSV: k, mean, sd, ci_low, ci_high, samples, excluded, se.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mean,sd,ci_low,ci_high,samples,excluded,se\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.k,
                fmt_opt(p.mean),
                fmt_opt(p.sd),
                fmt_opt(p.ci.map(|c| c.0)),
                fmt_opt(p.ci.map(|c| c.1)),
                p.samples,
                p.excluded,
                fmt_opt(p.se),
            ));
        }
        out
    }
}

/// Mean absolute deviation.
pub fn mad(pred: &[f64], truth: &[f64]) -> Result<f64, StatsError> {
    if pred.len() != truth.len() {
        return Err(StatsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Percentage reduction of `model_mad` relative to `baseline_mad`;
/// negative when the model is worse.
pub fn improvement(model_mad: f64, baseline_mad: f64) -> Result<f64, StatsError> {
    if baseline_mad <= 0.0 {
        return Err(StatsError::ZeroBaseline);
    }
    Ok((1.0 - model_mad / baseline_mad) * 100.0)
}

/// Half-up rounding to a whole star.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Round calibrated predictions to whole numbers before scoring them.
    pub round: bool,
    /// Score each article with a model fitted without it.
    pub leave_one_out: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub intercept: f64,
    pub coefficient: f64,
    pub training_mad: f64,
    pub baseline_mad: f64,
    /// Fraction (not percent); `None` when the baseline MAD is zero.
    pub improvement: Option<f64>,
}

impl CalibrationModel {
    pub fn from_coefficients(intercept: f64, coefficient: f64) -> Self {
        Self {
            intercept,
            coefficient,
            training_mad: f64::NAN,
            baseline_mad: f64::NAN,
            improvement: None,
        }
    }

    pub fn calibrate(&self, averaged: f64) -> f64 {
        self.intercept + self.coefficient * averaged
    }
}

fn line_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64), StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx <= f64::EPSILON * x.iter().map(|v| v * v).sum::<f64>() {
        return Err(StatsError::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

/// Ordinary least squares of human scores on model scores.
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<CalibrationModel, StatsError> {
    ols_fit_with(x, y, &FitOptions::default())
}

pub fn ols_fit_with(x: &[f64], y: &[f64], options: &FitOptions) -> Result<CalibrationModel, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let need = if options.leave_one_out { 4 } else { 3 };
    if x.len() < need {
        return Err(StatsError::TooFew { need, got: x.len() });
    }
    let (intercept, coefficient) = line_fit(x, y)?;
    let finish = |p: f64| if options.round { round_half_up(p) } else { p };
    let preds: Vec<f64> = if options.leave_one_out {
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let xs: Vec<f64> = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let ys: Vec<f64> = y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let (a, b) = line_fit(&xs, &ys)?;
            out.push(finish(a + b * x[i]));
        }
        out
    } else {
        x.iter().map(|v| finish(intercept + coefficient * v)).collect()
    };
    let training_mad = mad(&preds, y)?;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let baseline_mad = mad(&vec![my; y.len()], y)?;
    Ok(CalibrationModel {
        intercept,
        coefficient,
        training_mad,
        baseline_mad,
        improvement: (baseline_mad > 0.0).then(|| 1.0 - training_mad / baseline_mad),
    })
}

/// Direct and regression accuracy for one set of averaged predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub articles: usize,
    pub direct_mad: f64,
    pub direct_improvement_pct: Option<f64>,
    pub intercept: f64,
    pub coefficient: f64,
    pub regression_mad: f64,
    pub regression_improvement_pct: Option<f64>,
    pub baseline_mad: f64,
    pub human_mean: f64,
}

/// Builds a calibration row, dropping articles without a prediction.
pub fn calibration_row(
    predictions: &[Option<f64>],
    human: &[f64],
    options: &FitOptions,
) -> Result<CalibrationRow, StatsError> {
    if predictions.len() != human.len() {
        return Err(StatsError::LengthMismatch(predictions.len(), human.len()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = predictions
        .iter()
        .zip(human)
        .filter_map(|(p, h)| p.map(|p| (p, *h)))
        .unzip();
    let model = ols_fit_with(&x, &y, options)?;
    let direct_mad = mad(&x, &y)?;
    let pct = |m: f64| improvement(m, model.baseline_mad).ok();
    Ok(CalibrationRow {
        articles: x.len(),
        direct_mad,
        direct_improvement_pct: pct(direct_mad),
        intercept: model.intercept,
        coefficient: model.coefficient,
        regression_mad: model.training_mad,
        regression_improvement_pct: pct(model.training_mad),
        baseline_mad: model.baseline_mad,
        human_mean: y.iter().sum::<f64>() / y.len() as f64,
    })
}

impl CalibrationRow {
    pub const CSV_HEADER: &'static str = "cell,articles,direct_mad,direct_improve_pct,intercept,coefficient,regression_mad,regression_improve_pct,baseline_mad,human_mean";

    pub fn csv_line(&self, cell: &str) -> String {
        format!(
            "{cell},{},{},{},{},{},{},{},{},{}",
            self.articles,
            self.direct_mad,
            fmt_opt(self.direct_improvement_pct),
            self.intercept,
            self.coefficient,
            self.regression_mad,
            fmt_opt(self.regression_improvement_pct),
            self.baseline_mad,
            self.human_mean,
        )
    }
}

/// Formats a percentage the way summary tables print it, e.g. `-3%`.
pub fn format_pct(pct: f64) -> String {
    let r = pct.round();
    format!("{}%", if r == 0.0 { 0.0 } else { r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spearman_perfect_orders() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap(), -1.0);
    }

    #[test]
    fn spearman_with_ties_matches_hand_value() {
        // ranks x: 1, 2.5, 2.5, 4; y: 1, 3, 2, 4
        // dx = -1.5, 0, 0, 1.5; dy = -1.5, .5, -.5, 1.5
        // sxy = 4.5, sxx = 4.5, syy = 5  =>  r = 4.5 / sqrt(22.5)
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 4.5 / 22.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn spearman_errors() {
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::UndefinedCorrelation(_))));
        assert!(matches!(spearman(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(StatsError::UndefinedCorrelation(_))));
        assert!(matches!(spearman(&[1.0; 4], &[1.0; 3]), Err(StatsError::LengthMismatch(4, 3))));
    }

    #[test]
    fn pairwise_exclusion() {
        let r = spearman_pairwise(&[Some(1.0), None, Some(2.0), Some(3.0)], &[1.0, 99.0, 2.0, 3.0]).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn t_interval_values() {
        assert_eq!(t_ci(0.3, 0.0, 10, 0.95).unwrap(), Some((0.3, 0.3)));
        // two-sided 95% critical value with 29 df from standard t tables: 2.045
        let (lo, hi) = t_ci(0.0, 1.0, 30, 0.95).unwrap().unwrap();
        assert!((hi - 2.045).abs() < 5e-4 && (lo + 2.045).abs() < 5e-4);
        assert_eq!(t_ci(0.0, 1.0, 1, 0.95).unwrap(), None);
        assert!(t_ci(0.0, 1.0, 5, 1.0).is_err());
        let widths: Vec<f64> = [0.5, 0.8, 0.9, 0.95, 0.99, 0.999]
            .iter()
            .map(|&l| {
                let (a, b) = t_ci(0.0, 1.0, 30, l).unwrap().unwrap();
                b - a
            })
            .collect();
        assert!(widths.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn mad_examples() {
        assert_eq!(mad(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mad(&[3.0, 3.0], &[2.0, 4.0]).unwrap(), 1.0);
        let truth = [1.0, 2.0, 3.5, 4.0];
        let expected = truth.iter().map(|t: &f64| (t - 2.75).abs()).sum::<f64>() / 4.0;
        assert_eq!(mad(&[2.75; 4], &truth).unwrap(), expected);
        assert!(mad(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ols_exact_line() {
        let m = ols_fit(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!(m.intercept.abs() < 1e-9);
        assert!((m.coefficient - 2.0).abs() < 1e-9);
        assert!(m.training_mad < 1e-12);
        assert!((m.improvement.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ols_fit(&[2.0; 3], &[1.0, 2.0, 3.0]), Err(StatsError::DegenerateFit));
        assert!(matches!(ols_fit(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFew { .. })));
    }

    #[test]
    fn calibration_arithmetic() {
        let m = CalibrationModel::from_coefficients(-3.40, 2.05);
        assert!((m.calibrate(3.0) - 2.75).abs() < 1e-12);
    }

    #[test]
    fn improvement_sign() {
        assert!((improvement(0.5, 1.0).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(improvement(1.0, 1.0).unwrap(), 0.0);
        let neg = improvement(1.03, 1.0).unwrap();
        assert!((neg + 3.0).abs() < 1e-9);
        assert_eq!(format_pct(neg), "-3%");
        assert!(improvement(1.0, 0.0).is_err());
    }

    #[test]
    fn rounding_and_loo_options() {
        let x = [2.0, 2.5, 3.0, 3.5, 2.2, 3.1];
        let y = [1.0, 2.0, 3.0, 4.0, 2.0, 3.0];
        let rounded = ols_fit_with(&x, &y, &FitOptions { round: true, leave_one_out: false }).unwrap();
        let plain = ols_fit(&x, &y).unwrap();
        assert_eq!(rounded.intercept, plain.intercept);
        let loo = ols_fit_with(&x, &y, &FitOptions { round: false, leave_one_out: true }).unwrap();
        assert!(loo.training_mad >= plain.training_mad);
        assert_eq!(round_half_up(2.5), 3.0);
        assert_eq!(round_half_up(2.49), 2.0);
    }

    #[test]
    fn subset_counts_for_thirty() {
        let o = CurveOptions::default();
        let counts: Vec<usize> = (1..=30).map(|k| subsets_for_k(30, k, 7, &o).len()).collect();
        let mut expected = vec![30, 870];
        expected.extend(std::iter::repeat_n(1000, 25));
        expected.extend([870, 30, 1]);
        assert_eq!(counts, expected);
    }

    #[test]
    fn sampled_subsets_have_k_distinct_indices() {
        let o = CurveOptions::default();
        for s in subsets_for_k(30, 10, 1, &o) {
            let mut d = s.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), 10);
        }
        let multi = CurveOptions { sampling: SubsetSampling::IndicesWithReplacement, ..o };
        let subsets = subsets_for_k(30, 10, 1, &multi);
        assert!(subsets.iter().all(|s| s.len() == 10));
        assert!(subsets.iter().any(|s| {
            let mut d = s.clone();
            d.sort();
            d.dedup();
            d.len() < 10
        }));
    }

    fn ranks_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0u8..8, -50i32..50), 3..40)
            .prop_map(|v| v.into_iter().map(|(a, b)| (a as f64, b as f64 / 3.0)).collect())
    }

    proptest! {
        #[test]
        fn spearman_monotone_invariance(pairs in ranks_strategy()) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = spearman(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let tx: Vec<f64> = x.iter().map(|v| (v / 2.0).exp() + 7.0).collect();
                let ty: Vec<f64> = y.iter().map(|v| v * v * v - 1.0).collect();
                let r2 = spearman(&tx, &ty).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
            }
        }

        #[test]
        fn ols_residuals_and_optimality(
            pts in prop::collection::vec((1.0f64..4.0, 1.0f64..4.0), 3..30),
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(m) = ols_fit(&x, &y) {
                let resid: f64 = x.iter().zip(&y).map(|(a, b)| b - m.calibrate(*a)).sum();
                prop_assert!(resid.abs() < 1e-9);
                let my = y.iter().sum::<f64>() / y.len() as f64;
                let sse: f64 = x.iter().zip(&y).map(|(a, b)| (b - m.calibrate(*a)).powi(2)).sum();
                let sst: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
                prop_assert!(sse <= sst + 1e-9);
                prop_assert!(m.training_mad >= 0.0);
            }
        }
    }
}
