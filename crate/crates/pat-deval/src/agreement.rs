//! Inter-rater and metric–human agreement statistics: Pearson correlation
//! with a two-sided t-test p-value, Krippendorff's alpha over a coincidence
//! matrix, and the two-way random-effects average-measures intraclass
//! correlation ICC(2,k).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("series lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least {min} paired observations, got {n}")]
    TooShort { n: usize, min: usize },
    #[error("correlation is undefined for a constant series")]
    ConstantSeries,
    #[error("alpha is undefined: expected disagreement is zero")]
    UndefinedAlpha,
    #[error("no item is rated by at least two raters")]
    NoPairableItems,
    #[error("rating matrix contains missing entries")]
    MissingEntries,
    #[error("matrix must have at least {min_items} items and {min_raters} raters")]
    TooSmall { min_items: usize, min_raters: usize },
    #[error("between-item variance is zero; ICC is degenerate")]
    DegenerateVariance,
}

/// Two equal-length series to correlate.
#[derive(Debug, Clone)]
pub struct PairedSeries {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatError> {
        if x.len() != y.len() {
            return Err(StatError::LengthMismatch {
                x: x.len(),
                y: y.len(),
            });
        }
        if x.len() < 3 {
            return Err(StatError::TooShort { n: x.len(), min: 3 });
        }
        Ok(Self { x, y })
    }
}

/// Items x raters matrix; `None` marks a missing rating.
#[derive(Debug, Clone)]
pub struct RatingMatrix {
    values: Vec<Vec<Option<f64>>>,
    n_raters: usize,
}

impl RatingMatrix {
    pub fn new(values: Vec<Vec<Option<f64>>>) -> Result<Self, StatError> {
        let n_raters = values.first().map_or(0, |r| r.len());
        if values.len() < 2 || n_raters < 2 {
            return Err(StatError::TooSmall {
                min_items: 2,
                min_raters: 2,
            });
        }
        if values.iter().any(|r| r.len() != n_raters) {
            return Err(StatError::LengthMismatch {
                x: n_raters,
                y: values.iter().map(|r| r.len()).find(|&l| l != n_raters).unwrap(),
            });
        }
        Ok(Self { values, n_raters })
    }

    pub fn complete(values: Vec<Vec<f64>>) -> Result<Self, StatError> {
        Self::new(
            values
                .into_iter()
                .map(|r| r.into_iter().map(Some).collect())
                .collect(),
        )
    }

    pub fn n_items(&self) -> usize {
        self.values.len()
    }

    pub fn n_raters(&self) -> usize {
        self.n_raters
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.values
    }
}

/// Difference function for Krippendorff's alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaLevel {
    /// Squared numeric difference between category values.
    Interval,
    /// Squared cumulative-rank difference between ordered categories.
    Ordinal,
}

/// Sample Pearson correlation with a two-sided p-value from
/// t = r * sqrt((n-2) / (1-r^2)) on n-2 degrees of freedom.
pub fn pearson(series: &PairedSeries) -> Result<(f64, f64), StatError> {
    let n = series.x.len();
    let mean_x = series.x.iter().sum::<f64>() / n as f64;
    let mean_y = series.y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in series.x.iter().zip(&series.y) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatError::ConstantSeries);
    }
    let r = sxy / (sxx * syy).sqrt();
    let r = r.clamp(-1.0, 1.0);
    Ok((r, two_sided_p(r, n)))
}

fn two_sided_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r.abs() * (df / denom).sqrt();
    // P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Krippendorff's alpha, coincidence-matrix formulation with pairable-values
/// weighting for missing entries.
pub fn krippendorff_alpha(matrix: &RatingMatrix, level: AlphaLevel) -> Result<f64, StatError> {
    // Units with at least two ratings contribute; others are dropped.
    let units: Vec<Vec<f64>> = matrix
        .rows()
        .iter()
        .map(|row| row.iter().flatten().copied().collect::<Vec<f64>>())
        .filter(|vals| vals.len() >= 2)
        .collect();
    if units.is_empty() {
        return Err(StatError::NoPairableItems);
    }

    // Ordered category values. Ratings are matched by exact value; callers
    // with continuous data get one category per distinct value.
    let mut cats: Vec<f64> = units.iter().flatten().copied().collect();
    cats.sort_by(|a, b| a.total_cmp(b));
    cats.dedup();
    let cat_index = |v: f64| cats.binary_search_by(|c| c.total_cmp(&v)).unwrap();
    let k = cats.len();

    let mut coincidence = vec![vec![0.0f64; k]; k];
    let mut n_total = 0.0f64;
    for unit in &units {
        let m = unit.len();
        let w = 1.0 / (m as f64 - 1.0);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    coincidence[cat_index(unit[i])][cat_index(unit[j])] += w;
                }
            }
        }
        n_total += m as f64;
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();

    let delta2 = |c: usize, d: usize| -> f64 {
        match level {
            AlphaLevel::Interval => {
                let diff = cats[c] - cats[d];
                diff * diff
            }
            AlphaLevel::Ordinal => {
                let (lo, hi) = if c <= d { (c, d) } else { (d, c) };
                let span: f64 = marginals[lo..=hi].iter().sum();
                let s = span - (marginals[lo] + marginals[hi]) / 2.0;
                s * s
            }
        }
    };

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for d in 0..k {
            let dd = delta2(c, d);
            observed += coincidence[c][d] * dd;
            expected += marginals[c] * marginals[d] * dd;
        }
    }
    if expected == 0.0 {
        return Err(StatError::UndefinedAlpha);
    }
    Ok(1.0 - (n_total - 1.0) * observed / expected)
}

/// ICC(2,k): two-way random effects, absolute agreement, average measures,
/// from the standard two-way ANOVA decomposition:
/// (MS_items - MS_err) / (MS_items + (MS_raters - MS_err) / n_items).
pub fn icc_2k(matrix: &RatingMatrix) -> Result<f64, StatError> {
    let n = matrix.n_items();
    let k = matrix.n_raters();
    let mut cells = vec![vec![0.0f64; k]; n];
    for (i, row) in matrix.rows().iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            cells[i][j] = v.ok_or(StatError::MissingEntries)?;
        }
    }

    let total: f64 = cells.iter().flatten().sum();
    let grand = total / (n * k) as f64;
    let row_means: Vec<f64> = cells
        .iter()
        .map(|r| r.iter().sum::<f64>() / k as f64)
        .collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| cells.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();

    let ss_rows: f64 = row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() * k as f64;
    let ss_cols: f64 = col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() * n as f64;
    let ss_total: f64 = cells
        .iter()
        .flatten()
        .map(|v| (v - grand).powi(2))
        .sum::<f64>();
    let ss_err = ss_total - ss_rows - ss_cols;

    if ss_rows == 0.0 {
        return Err(StatError::DegenerateVariance);
    }

    let ms_rows = ss_rows / (n as f64 - 1.0);
    let ms_cols = ss_cols / (k as f64 - 1.0);
    let ms_err = ss_err / ((n as f64 - 1.0) * (k as f64 - 1.0));

    Ok((ms_rows - ms_err) / (ms_rows + (ms_cols - ms_err) / n as f64))
}

// --- regularized incomplete beta, continued-fraction evaluation ------------

/// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction,
/// with the symmetry transform for convergence.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front =
        (a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, 9 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection formula
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEF.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
