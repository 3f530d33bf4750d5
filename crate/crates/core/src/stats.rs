//! Numerics: rate estimates with Wilson half-widths, the no-refusal-bail
//! estimator, cross-model percent increase, and the correlation suite
//! (Pearson, Kendall tau-b, distance correlation with a permutation test).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

/// Two-sided 95% z quantile as used by the reference error bars (two
/// decimal places, not the longer 1.959963985…; the shorter value is what
/// reproduces them bit-for-bit).
pub const DEFAULT_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("total must be at least 1")]
    ZeroTotal,
    #[error("count {count} exceeds total {total}")]
    CountExceedsTotal { count: u64, total: u64 },
    #[error("input must be non-empty")]
    EmptyInput,
    #[error("rate {value} out of range [0, 1]")]
    RateOutOfRange { value: f64 },
    #[error("input lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("{axis} values are all equal; correlation undefined")]
    DegenerateVariance { axis: &'static str },
    #[error("need at least 100 permutations, got {given}")]
    TooFewPermutations { given: u64 },
}

/// A count-based rate with its 95% Wilson half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub count: u64,
    pub total: u64,
    pub rate: f64,
    pub halfwidth95: f64,
}

/// Half the width of the Wilson score interval at the default 95% z.
pub fn wilson_halfwidth(count: u64, total: u64) -> Result<f64, StatsError> {
    wilson_halfwidth_z(count, total, DEFAULT_Z)
}

/// Wilson half-width with an explicit z quantile:
/// `(z / (1 + z²/n)) · sqrt(p̂(1−p̂)/n + z²/(4n²))` with `p̂ = count/total`.
pub fn wilson_halfwidth_z(count: u64, total: u64, z: f64) -> Result<f64, StatsError> {
    if total == 0 {
        return Err(StatsError::ZeroTotal);
    }
    if count > total {
        return Err(StatsError::CountExceedsTotal { count, total });
    }
    let n = total as f64;
    // p̂(1−p̂) computed as k(n−k)/n² so the k ↔ n−k symmetry holds exactly.
    let pq = count as f64 * (total - count) as f64 / (n * n);
    let z2 = z * z;
    Ok(z / (1.0 + z2 / n) * (pq / n + z2 / (4.0 * n * n)).sqrt())
}

/// Point rate `count/total` with its Wilson half-width. The bar is drawn
/// around the point rate, not the Wilson interval center.
pub fn rate_estimate(count: u64, total: u64) -> Result<RateEstimate, StatsError> {
    let halfwidth95 = wilson_halfwidth(count, total)?;
    Ok(RateEstimate {
        count,
        total,
        rate: count as f64 / total as f64,
        halfwidth95,
    })
}

/// Mean over prompts of `(1 − refusal_rate) · bail_rate`: the estimated
/// rate of bails that are not explained by the response being a refusal.
pub fn no_refusal_bail(per_prompt: &[(f64, f64)]) -> Result<f64, StatsError> {
    if per_prompt.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    for &(refusal, bail) in per_prompt {
        for value in [refusal, bail] {
            if !(0.0..=1.0).contains(&value) {
                return Err(StatsError::RateOutOfRange { value });
            }
        }
    }
    let sum: f64 = per_prompt
        .iter()
        .map(|&(refusal, bail)| (1.0 - refusal) * bail)
        .sum();
    Ok(sum / per_prompt.len() as f64)
}

/// `100 · (cross − base) / base`; `None` when the base rate is zero (the
/// increase is undefined and reported as absent).
pub fn percent_increase(cross_rate: f64, base_rate: f64) -> Option<f64> {
    if base_rate > 0.0 {
        Some(100.0 * (cross_rate - base_rate) / base_rate)
    } else {
        None
    }
}

fn check_paired(x: &[f64], y: &[f64]) -> Result<usize, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewPoints {
            n: x.len(),
            min: 3,
        });
    }
    Ok(x.len())
}

/// Two-sided normal tail probability, computed through erfc for precision.
fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Sample Pearson correlation with a two-sided p-value from the t statistic
/// `r·sqrt((n−2)/(1−r²))` on n−2 degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64), StatsError> {
    let n = check_paired(x, y)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::DegenerateVariance { axis: "x" });
    }
    if syy == 0.0 {
        return Err(StatsError::DegenerateVariance { axis: "y" });
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((r, p.clamp(0.0, 1.0)))
}

/// Per-group tie statistics: Σt(t−1)/2, Σt(t−1)(t−2), Σt(t−1)(2t+5).
fn tie_terms(values: &[f64]) -> (f64, f64, f64) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in stats input"));
    let (mut pairs, mut triple, mut variance) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        pairs += t * (t - 1.0) / 2.0;
        triple += t * (t - 1.0) * (t - 2.0);
        variance += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j;
    }
    (pairs, triple, variance)
}

/// Kendall tau-b (tie corrected) with a two-sided p-value from the normal
/// approximation using the tie-adjusted variance.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<(f64, f64), StatsError> {
    let n = check_paired(x, y)?;
    let mut concordant_minus_discordant = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let sign = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
            if x[i] != x[j] && y[i] != y[j] {
                concordant_minus_discordant += sign;
            }
        }
    }
    let nf = n as f64;
    let total_pairs = nf * (nf - 1.0) / 2.0;
    let (xtie, x0, x1) = tie_terms(x);
    let (ytie, y0, y1) = tie_terms(y);
    if xtie >= total_pairs {
        return Err(StatsError::DegenerateVariance { axis: "x" });
    }
    if ytie >= total_pairs {
        return Err(StatsError::DegenerateVariance { axis: "y" });
    }
    let tau = (concordant_minus_discordant / ((total_pairs - xtie) * (total_pairs - ytie)).sqrt())
        .clamp(-1.0, 1.0);

    let m = nf * (nf - 1.0);
    let var = (m * (2.0 * nf + 5.0) - x1 - y1) / 18.0
        + (2.0 * xtie * ytie) / m
        + x0 * y0 / (9.0 * m * (nf - 2.0));
    let z = concordant_minus_discordant / var.sqrt();
    Ok((tau, normal_two_sided_p(z).clamp(0.0, 1.0)))
}

/// The double-centered pairwise absolute-difference matrix of a vector,
/// flattened row-major, plus its distance variance (mean of squares).
struct CenteredDistances {
    matrix: Vec<f64>,
    dvar: f64,
    n: usize,
}

impl CenteredDistances {
    fn new(values: &[f64]) -> Self {
        let n = values.len();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                matrix[i * n + j] = (values[i] - values[j]).abs();
            }
        }
        let mut row_means = vec![0.0; n];
        let mut grand = 0.0;
        for i in 0..n {
            let row_sum: f64 = matrix[i * n..(i + 1) * n].iter().sum();
            row_means[i] = row_sum / n as f64;
            grand += row_sum;
        }
        let grand = grand / (n * n) as f64;
        // |x_i − x_j| is symmetric, so column means equal row means.
        for i in 0..n {
            for j in 0..n {
                matrix[i * n + j] += grand - row_means[i] - row_means[j];
            }
        }
        let dvar = matrix.iter().map(|v| v * v).sum::<f64>() / (n * n) as f64;
        CenteredDistances { matrix, dvar, n }
    }
}

fn dcor_from_centered(a: &CenteredDistances, b: &CenteredDistances) -> f64 {
    if a.dvar <= 0.0 || b.dvar <= 0.0 {
        return 0.0;
    }
    let n2 = (a.n * a.n) as f64;
    let dcov2 = a
        .matrix
        .iter()
        .zip(&b.matrix)
        .map(|(ai, bi)| ai * bi)
        .sum::<f64>()
        / n2;
    (dcov2.max(0.0) / (a.dvar * b.dvar).sqrt()).sqrt()
}

/// Sample distance correlation; 0 when either vector has zero distance
/// variance (the constant-vector convention).
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_paired(x, y)?;
    Ok(dcor_from_centered(
        &CenteredDistances::new(x),
        &CenteredDistances::new(y),
    ))
}

/// Distance correlation of x against y permuted by the generator stream
/// for (seed, index). Permuting y permutes rows and columns of its centered
/// matrix, so the matrices are built once and only the index map varies.
fn permuted_dcor(
    a: &CenteredDistances,
    b: &CenteredDistances,
    seed: u64,
    index: u64,
) -> f64 {
    let n = a.n;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    if a.dvar <= 0.0 || b.dvar <= 0.0 {
        return 0.0;
    }
    let mut dcov2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dcov2 += a.matrix[i * n + j] * b.matrix[perm[i] * n + perm[j]];
        }
    }
    dcov2 /= (n * n) as f64;
    (dcov2.max(0.0) / (a.dvar * b.dvar).sqrt()).sqrt()
}

fn permutation_context(
    x: &[f64],
    y: &[f64],
    permutations: u64,
) -> Result<(CenteredDistances, CenteredDistances, f64), StatsError> {
    check_paired(x, y)?;
    if permutations < 100 {
        return Err(StatsError::TooFewPermutations {
            given: permutations,
        });
    }
    let a = CenteredDistances::new(x);
    let b = CenteredDistances::new(y);
    let observed = dcor_from_centered(&a, &b);
    Ok((a, b, observed))
}

fn permutation_p_from_hits(hits: u64, permutations: u64) -> f64 {
    (1 + hits) as f64 / (permutations + 1) as f64
}

/// Permutation p-value for the distance correlation:
/// `(1 + #{permuted dcor ≥ observed}) / (permutations + 1)`, with each
/// permutation drawn from its own generator stream so the result does not
/// depend on evaluation order. Runs permutations in parallel when the
/// `parallel` feature is enabled.
pub fn dcor_permutation_p(
    x: &[f64],
    y: &[f64],
    permutations: u64,
    seed: u64,
) -> Result<f64, StatsError> {
    #[cfg(feature = "parallel")]
    {
        let (a, b, observed) = permutation_context(x, y, permutations)?;
        let hits = (0..permutations)
            .into_par_iter()
            .filter(|&i| permuted_dcor(&a, &b, seed, i) >= observed)
            .count() as u64;
        Ok(permutation_p_from_hits(hits, permutations))
    }
    #[cfg(not(feature = "parallel"))]
    {
        dcor_permutation_p_sequential(x, y, permutations, seed)
    }
}

/// Single-threaded variant of [`dcor_permutation_p`]; always available so
/// the two paths can be compared for equality and benchmarked against each
/// other.
pub fn dcor_permutation_p_sequential(
    x: &[f64],
    y: &[f64],
    permutations: u64,
    seed: u64,
) -> Result<f64, StatsError> {
    let (a, b, observed) = permutation_context(x, y, permutations)?;
    let hits = (0..permutations)
        .filter(|&i| permuted_dcor(&a, &b, seed, i) >= observed)
        .count() as u64;
    Ok(permutation_p_from_hits(hits, permutations))
}

/// Every correlation statistic for one (x, y) sample, with the permutation
/// settings recorded so the p-value is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub pearson_p: f64,
    pub kendall_tau: f64,
    pub kendall_p: f64,
    pub dcor: f64,
    pub dcor_p: f64,
    pub n: usize,
    pub permutations: u64,
    pub seed: u64,
}

pub fn correlation_report(
    x: &[f64],
    y: &[f64],
    permutations: u64,
    seed: u64,
) -> Result<CorrelationReport, StatsError> {
    let (pearson_r, pearson_p) = pearson(x, y)?;
    let (kendall_tau, kendall_p) = kendall_tau(x, y)?;
    let dcor = distance_correlation(x, y)?;
    let dcor_p = dcor_permutation_p(x, y, permutations, seed)?;
    Ok(CorrelationReport {
        pearson_r,
        pearson_p,
        kendall_tau,
        kendall_p,
        dcor,
        dcor_p,
        n: x.len(),
        permutations,
        seed,
    })
}
