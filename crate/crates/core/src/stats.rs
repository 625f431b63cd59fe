//! Rank aggregation and the Friedman test with Nemenyi post-hoc critical
//! differences, following Demšar's recipe for comparing k methods over N
//! datasets.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("non-finite value in row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("need at least {need} {what}, found {found}")]
    TooSmall { what: &'static str, need: usize, found: usize },
    #[error("ragged matrix: row {row} has {found} columns, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported Nemenyi table entry: k={k}, alpha={alpha}")]
    UnsupportedCritical { k: usize, alpha: f64 },
    #[error("matrix parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// `ln Γ(x)` for `x > 0`, Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta function, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
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

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_reg_lower(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln_front = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum.ln() + ln_front).exp().min(1.0)
    } else {
        // continued fraction for Q, modified Lentz
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
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
        (1.0 - (ln_front.exp() * h)).max(0.0)
    }
}

fn check_dof(d: f64, name: &str) -> Result<(), StatsError> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(StatsError::InvalidArgument(format!("{name} must be a positive finite number")))
    }
}

pub fn chi2_cdf(x: f64, df: f64) -> Result<f64, StatsError> {
    check_dof(df, "df")?;
    if x.is_nan() {
        return Err(StatsError::InvalidArgument("x is NaN".into()));
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    Ok(gamma_reg_lower(0.5 * df, 0.5 * x.max(0.0)))
}

/// CDF of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64, StatsError> {
    check_dof(d1, "d1")?;
    check_dof(d2, "d2")?;
    if x.is_nan() {
        return Err(StatsError::InvalidArgument("x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    let z = d1 * x / (d1 * x + d2);
    Ok(beta_reg(0.5 * d1, 0.5 * d2, z))
}

/// Nemenyi critical values `q_alpha` (studentized range at infinite dof
/// divided by sqrt 2), k = 2..=10.
const Q_005: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
const Q_010: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];

pub fn nemenyi_qalpha(k: usize, alpha: f64) -> Result<f64, StatsError> {
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_005
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_010
    } else {
        return Err(StatsError::UnsupportedCritical { k, alpha });
    };
    if !(2..=10).contains(&k) {
        return Err(StatsError::UnsupportedCritical { k, alpha });
    }
    Ok(table[k - 2])
}

/// Per-row ranks, smaller value = smaller rank, ties share the average rank.
pub fn rank_rows(matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, StatsError> {
    matrix.iter().enumerate().map(|(r, row)| rank_row(r, row)).collect()
}

fn rank_row(r: usize, row: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(c) = row.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite { row: r, col: c });
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) hold ranks i+1..=j+1
        let avg = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    Ok(ranks)
}

/// MAE per (dataset, method), optionally with the std over splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMatrix {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    pub mae: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<Vec<f64>>>,
}

impl ResultMatrix {
    pub fn new(datasets: Vec<String>, methods: Vec<String>, mae: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        let m = Self { datasets, methods, mae, std: None };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.mae.len() != self.datasets.len() {
            return Err(StatsError::InvalidArgument("row count differs from dataset names".into()));
        }
        for (r, row) in self.mae.iter().enumerate() {
            if row.len() != self.methods.len() {
                return Err(StatsError::Ragged { row: r, expected: self.methods.len(), found: row.len() });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(StatsError::NonFinite { row: r, col: c });
            }
        }
        Ok(())
    }

    /// Delimited text: header `dataset,<method>...`, one row per dataset.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), StatsError> {
        write_table(&mut out, &self.datasets, &self.methods, &self.mae)
    }

    pub fn write_std_csv<W: Write>(&self, mut out: W) -> Result<(), StatsError> {
        match &self.std {
            Some(std) => write_table(&mut out, &self.datasets, &self.methods, std),
            None => Err(StatsError::InvalidArgument("matrix has no std".into())),
        }
    }

    pub fn parse_csv(text: &str) -> Result<Self, StatsError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(StatsError::Parse { line: 1, message: "empty matrix".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "dataset" {
            return Err(StatsError::Parse { line: 1, message: "header must start with `dataset`".into() });
        }
        let methods: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut datasets = Vec::new();
        let mut mae = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != cols.len() {
                return Err(StatsError::Parse {
                    line: i + 1,
                    message: format!("expected {} fields, found {}", cols.len(), cells.len()),
                });
            }
            datasets.push(cells[0].to_string());
            let row = cells[1..]
                .iter()
                .map(|c| {
                    c.parse::<f64>().map_err(|_| StatsError::Parse { line: i + 1, message: format!("{c:?} is not a number") })
                })
                .collect::<Result<Vec<_>, _>>()?;
            mae.push(row);
        }
        Self::new(datasets, methods, mae)
    }
}

fn write_table<W: Write>(out: &mut W, rows: &[String], cols: &[String], values: &[Vec<f64>]) -> Result<(), StatsError> {
    writeln!(out, "dataset,{}", cols.join(","))?;
    for (name, row) in rows.iter().zip(values) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{name},{}", cells.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub method: String,
    pub avg_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub n_datasets: usize,
    pub k_methods: usize,
    pub alpha: f64,
    pub methods: Vec<String>,
    pub avg_ranks: Vec<f64>,
    pub friedman_chi2: f64,
    /// Iman-Davenport statistic; infinite when every dataset ranks the
    /// methods identically (serialized as `null` in JSON).
    pub iman_davenport_f: f64,
    /// p-value of the Iman-Davenport F test: the reported one.
    pub p_value: f64,
    /// p-value of the raw chi-square approximation, for reference.
    pub chi2_p_value: f64,
    pub q_alpha: f64,
    pub cd: f64,
    pub reject_null: bool,
    /// Unordered pairs `(a, b)` with `a` listed before `b` in `methods`.
    pub significant_pairs: Vec<(String, String)>,
}

impl RankSummary {
    /// CD-diagram data: methods sorted by average rank.
    pub fn cd_diagram(&self) -> Vec<MethodRank> {
        let mut v: Vec<MethodRank> = self
            .methods
            .iter()
            .zip(&self.avg_ranks)
            .map(|(m, &r)| MethodRank { method: m.clone(), avg_rank: r })
            .collect();
        v.sort_by(|a, b| a.avg_rank.total_cmp(&b.avg_rank));
        v
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("summary serializes");
        v["cd_diagram"] = serde_json::to_value(self.cd_diagram()).expect("diagram serializes");
        v
    }
}

impl fmt::Display for RankSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# N={}", self.n_datasets)?;
        writeln!(f, "# k={}", self.k_methods)?;
        writeln!(f, "# chi2_f={}", self.friedman_chi2)?;
        writeln!(f, "# f_f={}", self.iman_davenport_f)?;
        writeln!(f, "# p={}", self.p_value)?;
        writeln!(f, "# cd={}", self.cd)?;
        writeln!(f, "# alpha={}", self.alpha)?;
        writeln!(f, "# reject_null={}", self.reject_null)?;
        let pairs: Vec<String> = self.significant_pairs.iter().map(|(a, b)| format!("{a}|{b}")).collect();
        writeln!(f, "# significant_pairs={}", pairs.join(";"))?;
        writeln!(f, "method,avg_rank")?;
        for (m, r) in self.methods.iter().zip(&self.avg_ranks) {
            writeln!(f, "{m},{r}")?;
        }
        Ok(())
    }
}

/// Friedman test over `matrix` rows with Iman-Davenport p-value and the
/// Nemenyi critical difference at `alpha`.
pub fn friedman_test(matrix: &ResultMatrix, alpha: f64) -> Result<RankSummary, StatsError> {
    matrix.validate()?;
    let n = matrix.mae.len();
    let k = matrix.methods.len();
    if n < 2 {
        return Err(StatsError::TooSmall { what: "datasets", need: 2, found: n });
    }
    if k < 2 {
        return Err(StatsError::TooSmall { what: "methods", need: 2, found: k });
    }
    let q_alpha = nemenyi_qalpha(k, alpha)?;
    let ranks = rank_rows(&matrix.mae)?;
    let (nf, kf) = (n as f64, k as f64);
    let avg_ranks: Vec<f64> = (0..k).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / nf).collect();

    let sum_sq: f64 = avg_ranks.iter().map(|r| r * r).sum();
    let chi2 = (12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0)).max(0.0);
    let denom = nf * (kf - 1.0) - chi2;
    let ff = if chi2 == 0.0 {
        0.0
    } else if denom <= 1e-12 * nf * kf {
        f64::INFINITY
    } else {
        (nf - 1.0) * chi2 / denom
    };
    let d1 = kf - 1.0;
    let d2 = (kf - 1.0) * (nf - 1.0);
    let p_value = (1.0 - f_cdf(ff, d1, d2)?).clamp(0.0, 1.0);
    let chi2_p_value = (1.0 - chi2_cdf(chi2, d1)?).clamp(0.0, 1.0);
    let cd = q_alpha * (kf * (kf + 1.0) / (6.0 * nf)).sqrt();

    let mut significant_pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if (avg_ranks[i] - avg_ranks[j]).abs() >= cd {
                significant_pairs.push((matrix.methods[i].clone(), matrix.methods[j].clone()));
            }
        }
    }
    Ok(RankSummary {
        n_datasets: n,
        k_methods: k,
        alpha,
        methods: matrix.methods.clone(),
        avg_ranks,
        friedman_chi2: chi2,
        iman_davenport_f: ff,
        p_value,
        chi2_p_value,
        q_alpha,
        cd,
        reject_null: p_value < alpha,
        significant_pairs,
    })
}

/// Mean and sample standard deviation (n-1 denominator; 0 for a single value).
pub fn aggregate_splits(values: &[f64]) -> Result<(f64, f64), StatsError> {
    if values.is_empty() {
        return Err(StatsError::TooSmall { what: "values", need: 1, found: 0 });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
