//! Distribution tails and small test kernels shared by the analysis modules.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return 1.0;
    }
    if !x.is_finite() {
        return 0.0;
    }
    ChiSquared::new(df).map(|d| d.sf(x.max(0.0))).unwrap_or(f64::NAN)
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn normal_sf(z: f64) -> f64 {
    std_normal().sf(z)
}

pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    (2.0 * normal_sf(z.abs())).min(1.0)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Pearson chi-square test of homogeneity on a rows × cols contingency table.
/// All-zero columns are dropped. Returns `(statistic, df, p)`.
pub fn contingency_chi_square(table: &[Vec<u64>]) -> (f64, usize, f64) {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().any(|&c| c > 0)).collect();
    if rows.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let ncols = rows[0].len();
    let col_tot: Vec<u64> = (0..ncols).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let keep: Vec<usize> = (0..ncols).filter(|&j| col_tot[j] > 0).collect();
    if keep.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let row_tot: Vec<u64> = rows.iter().map(|r| r.iter().sum()).collect();
    let total: u64 = row_tot.iter().sum();
    let mut stat = 0.0;
    for (r, row) in rows.iter().enumerate() {
        for &j in &keep {
            let expected = row_tot[r] as f64 * col_tot[j] as f64 / total as f64;
            let d = row[j] as f64 - expected;
            stat += d * d / expected;
        }
    }
    let df = (rows.len() - 1) * (keep.len() - 1);
    (stat, df, chi_square_sf(stat, df as f64))
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic distribution and
/// Stephens' small-sample correction. Returns `(D, p)`.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> (f64, f64) {
    if x.is_empty() || y.is_empty() {
        return (0.0, 1.0);
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let p = kolmogorov_sf((en + 0.12 + 0.11 / en) * d);
    (d, p)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, n: u64, confidence: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = normal_quantile(0.5 + confidence / 2.0);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}
