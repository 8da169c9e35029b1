//! Random variates used by the samplers: Dirichlet, Beta, table counts
//! (Antoniak / CRP), negative multinomial, plus the Stirling-number table.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use crate::error::{Error, Result};

/// log s(n, m) for unsigned Stirling numbers of the first kind, with
/// log 0 = −∞.
#[derive(Clone, Debug)]
pub struct StirlingLogTable {
    max_n: usize,
    rows: Vec<Vec<f64>>,
}

impl StirlingLogTable {
    pub fn new(max_n: usize) -> Self {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(max_n + 1);
        rows.push(vec![0.0]);
        for n in 0..max_n {
            let prev = &rows[n];
            let ln_n = (n as f64).ln();
            let row: Vec<f64> = (0..=n + 1)
                .map(|m| {
                    // s(n+1, m) = s(n, m-1) + n s(n, m)
                    let left = if m >= 1 { prev[m - 1] } else { f64::NEG_INFINITY };
                    let right = if m <= n { prev[m] + ln_n } else { f64::NEG_INFINITY };
                    log_add_exp(left, right)
                })
                .collect();
            rows.push(row);
        }
        Self { max_n, rows }
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn log_s(&self, n: usize, m: usize) -> f64 {
        if m > n {
            return f64::NEG_INFINITY;
        }
        self.rows[n][m]
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Exact unsigned Stirling number of the first kind, `None` on overflow.
pub fn stirling_first_unsigned(n: usize, m: usize) -> Option<u128> {
    let mut row: Vec<u128> = vec![1];
    for k in 0..n {
        let mut next = vec![0u128; k + 2];
        for (j, slot) in next.iter_mut().enumerate() {
            let left = if j >= 1 { row[j - 1] } else { 0 };
            let right = if j <= k { row[j].checked_mul(k as u128)? } else { 0 };
            *slot = left.checked_add(right)?;
        }
        row = next;
    }
    Some(row.get(m).copied().unwrap_or(0))
}

/// Logarithm of a Gamma(shape, 1) variate. Stays finite for tiny shapes
/// where the variate itself underflows.
pub fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("valid shape").sample(rng);
        g.ln()
    } else {
        // G(a) = G(a + 1) U^(1/a)
        let g = Gamma::new(shape + 1.0, 1.0).expect("valid shape").sample(rng);
        let u: f64 = rng.random();
        g.ln() + u.ln() / shape
    }
}

/// Gamma variate with the given rate.
pub fn gamma_rate<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("valid gamma parameters")
        .sample(rng)
}

/// Dirichlet draw into `out`. Zero parameters give exact zeros; at least one
/// parameter must be positive.
pub(crate) fn dirichlet_into<R: Rng + ?Sized>(params: &[f64], out: &mut [f64], rng: &mut R) {
    debug_assert_eq!(params.len(), out.len());
    let mut hi = f64::NEG_INFINITY;
    for (o, &a) in out.iter_mut().zip(params) {
        *o = if a > 0.0 {
            log_gamma_variate(a, rng)
        } else {
            f64::NEG_INFINITY
        };
        hi = hi.max(*o);
    }
    debug_assert!(hi.is_finite(), "all-zero Dirichlet parameters");
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - hi).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn draw_dirichlet<R: Rng + ?Sized>(params: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if params.is_empty() {
        return Err(Error::EmptyInput("Dirichlet parameters"));
    }
    if let Some(&bad) = params.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::NonPositiveParameter(bad));
    }
    let mut out = vec![0.0; params.len()];
    dirichlet_into(params, &mut out, rng);
    Ok(out)
}

/// Beta(a, b) through two log-gamma variates; a zero shape pins the draw to
/// the corresponding endpoint.
pub fn draw_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    match (a > 0.0, b > 0.0) {
        (false, false) => panic!("Beta with two zero shapes"),
        (false, true) => 0.0,
        (true, false) => 1.0,
        (true, true) => {
            let la = log_gamma_variate(a, rng);
            let lb = log_gamma_variate(b, rng);
            // a / (a + b) = 1 / (1 + exp(lb - la))
            1.0 / (1.0 + (lb - la).exp())
        }
    }
}

/// Inverse-CDF categorical draw given a uniform in [0, 1).
pub(crate) fn pick(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = k;
            if target < acc {
                return k;
            }
        }
    }
    last
}

pub(crate) fn draw_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    pick(weights, total, rng.random())
}

/// Number of occupied tables when `n_customers` sit down in a Chinese
/// restaurant with concentration `gamma`, drawn from the Antoniak mass
/// s(n, m) γ^m Γ(γ)/Γ(γ + n).
pub fn draw_antoniak<R: Rng + ?Sized>(
    n_customers: usize,
    gamma: f64,
    table: &StirlingLogTable,
    rng: &mut R,
) -> Result<usize> {
    if n_customers > table.max_n() {
        return Err(Error::TableTooSmall {
            max_n: table.max_n(),
            requested: n_customers,
        });
    }
    if !(gamma > 0.0) {
        return Err(Error::NonPositiveParameter(gamma));
    }
    if n_customers <= 1 {
        return Ok(n_customers);
    }
    let ln_gamma = gamma.ln();
    let mut logw: Vec<f64> = (1..=n_customers)
        .map(|m| table.log_s(n_customers, m) + m as f64 * ln_gamma)
        .collect();
    let hi = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - hi).exp();
        total += *w;
    }
    Ok(1 + pick(&logw, total, rng.random()))
}

/// Table count by direct simulation: Σ_t Bernoulli(γ / (γ + t − 1)).
pub fn draw_crp_table_count<R: Rng + ?Sized>(n_customers: usize, gamma: f64, rng: &mut R) -> usize {
    let mut tables = 0;
    for t in 0..n_customers {
        let p = gamma / (gamma + t as f64);
        if rng.random::<f64>() < p {
            tables += 1;
        }
    }
    tables
}

/// E[tables] for a possibly fractional customer count: whole customers
/// contribute γ/(γ + l − 1) each and the fractional remainder contributes its
/// share of the next term.
pub fn expected_crp_tables(n_customers: f64, gamma: f64) -> f64 {
    if n_customers <= 0.0 || gamma <= 0.0 {
        return 0.0;
    }
    let whole = n_customers.floor();
    let mut sum = 0.0;
    for l in 0..whole as usize {
        sum += gamma / (gamma + l as f64);
    }
    let frac = n_customers - whole;
    if frac > 0.0 {
        sum += frac * gamma / (gamma + whole);
    }
    sum
}

/// Failure counts per category before the `n_stop`-th success, where
/// category c has per-trial probability p_c and success has 1 − Σp.
/// Drawn as n₀ ~ NegBin(n_stop, 1 − p₀) then a multinomial split of n₀.
pub fn draw_negative_multinomial<R: Rng + ?Sized>(n_stop: u64, p: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    if let Some(&bad) = p.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::NonPositiveParameter(bad));
    }
    let p0: f64 = p.iter().sum();
    if p0 >= 1.0 - 1e-12 {
        return Err(Error::ProbabilityMassExceedsOne { p0 });
    }
    let mut out = vec![0u64; p.len()];
    if p0 == 0.0 || n_stop == 0 {
        return Ok(out);
    }
    // NegBin as a Gamma–Poisson mixture
    let lambda = gamma_rate(n_stop as f64, (1.0 - p0) / p0, rng);
    let n0 = if lambda > 0.0 {
        Poisson::new(lambda).expect("positive rate").sample(rng) as u64
    } else {
        0
    };
    multinomial_into(n0, p, p0, &mut out, rng);
    Ok(out)
}

/// Multinomial split of `n` by sequential conditional binomials.
pub(crate) fn multinomial_into<R: Rng + ?Sized>(n: u64, p: &[f64], total: f64, out: &mut [u64], rng: &mut R) {
    let mut left = n;
    let mut mass = total;
    for (c, (&pc, o)) in p.iter().zip(out.iter_mut()).enumerate() {
        if left == 0 {
            *o = 0;
            continue;
        }
        if c + 1 == p.len() || pc >= mass {
            *o = left;
            left = 0;
            continue;
        }
        let q = (pc / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, q).expect("valid binomial").sample(rng);
        *o = k;
        left -= k;
        mass -= pc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SweepRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(unit: u64) -> ChaCha8Rng {
        SweepRng::new(2024, 0).stream(Purpose::User, unit)
    }

    #[test]
    fn stirling_exact_small_values() {
        assert_eq!(stirling_first_unsigned(0, 0), Some(1));
        assert_eq!(stirling_first_unsigned(1, 1), Some(1));
        assert_eq!(stirling_first_unsigned(3, 0), Some(0));
        assert_eq!(stirling_first_unsigned(2, 3), Some(0));
        assert_eq!(stirling_first_unsigned(4, 2), Some(11));
        assert_eq!(stirling_first_unsigned(5, 1), Some(24));
        assert_eq!(stirling_first_unsigned(6, 3), Some(225));
        assert_eq!(stirling_first_unsigned(10, 10), Some(1));
    }

    #[test]
    fn stirling_log_table_edges() {
        let t = StirlingLogTable::new(10);
        assert_eq!(t.log_s(0, 0), 0.0);
        assert_eq!(t.log_s(1, 1), 0.0);
        assert_eq!(t.log_s(5, 0), f64::NEG_INFINITY);
        assert_eq!(t.log_s(3, 4), f64::NEG_INFINITY);
        assert!((t.log_s(4, 2) - 11f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_degenerate_and_errors() {
        let mut r = rng(0);
        assert_eq!(draw_dirichlet(&[3.0], &mut r).unwrap(), vec![1.0]);
        assert!(matches!(
            draw_dirichlet(&[1.0, 0.0], &mut r),
            Err(Error::NonPositiveParameter(_))
        ));
        assert!(matches!(
            draw_dirichlet(&[1.0, -2.0], &mut r),
            Err(Error::NonPositiveParameter(_))
        ));
        assert!(draw_dirichlet(&[], &mut r).is_err());
    }

    #[test]
    fn dirichlet_tiny_shapes_stay_on_simplex() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let g = draw_dirichlet(&[1e-8, 1e-6, 1e-9], &mut r).unwrap();
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(g.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn internal_dirichlet_allows_zero_slots() {
        let mut r = rng(2);
        let mut out = [0.0; 3];
        dirichlet_into(&[0.0, 2.0, 0.0], &mut out, &mut r);
        assert_eq!(out, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn beta_endpoints() {
        let mut r = rng(3);
        assert_eq!(draw_beta(0.0, 1.0, &mut r), 0.0);
        assert_eq!(draw_beta(1.0, 0.0, &mut r), 1.0);
        let mean: f64 = (0..100_000).map(|_| draw_beta(2.0, 3.0, &mut r)).sum::<f64>() / 1e5;
        assert!((mean - 0.4).abs() < 0.005, "{mean}");
    }

    #[test]
    fn antoniak_single_customer() {
        let t = StirlingLogTable::new(64);
        let mut r = rng(4);
        for g in [1e-6, 0.3, 7.0, 1e6] {
            assert_eq!(draw_antoniak(1, g, &t, &mut r).unwrap(), 1);
        }
        assert!(matches!(
            draw_antoniak(65, 1.0, &t, &mut r),
            Err(Error::TableTooSmall { .. })
        ));
    }

    #[test]
    fn antoniak_two_customers_closed_form() {
        // P(m = 2) = γ / (γ + 1) since s(2,1) = s(2,2) = 1
        let t = StirlingLogTable::new(8);
        for (unit, g) in [(10u64, 0.5), (11, 2.0)] {
            let mut r = rng(unit);
            let hits = (0..100_000)
                .filter(|_| draw_antoniak(2, g, &t, &mut r).unwrap() == 2)
                .count();
            let freq = hits as f64 / 1e5;
            assert!((freq - g / (g + 1.0)).abs() < 0.01, "{g}: {freq}");
        }
    }

    #[test]
    fn crp_edges_and_mean() {
        let mut r = rng(5);
        assert_eq!(draw_crp_table_count(1, 0.01, &mut r), 1);
        assert!((0..1000).all(|_| draw_crp_table_count(5, 1e9, &mut r) == 5));
        let analytic: f64 = (1..=10).map(|t| 2.0 / (2.0 + t as f64 - 1.0)).sum();
        let mean = (0..100_000)
            .map(|_| draw_crp_table_count(10, 2.0, &mut r))
            .sum::<usize>() as f64
            / 1e5;
        assert!((mean - analytic).abs() < 0.02, "{mean} vs {analytic}");
    }

    #[test]
    fn expected_tables_interpolates() {
        assert_eq!(expected_crp_tables(0.0, 1.0), 0.0);
        assert!((expected_crp_tables(1.0, 0.3) - 1.0).abs() < 1e-15);
        let g = 1.5;
        let two = 1.0 + g / (g + 1.0);
        assert!((expected_crp_tables(2.0, g) - two).abs() < 1e-15);
        let mid = 1.0 + 0.25 * g / (g + 1.0);
        assert!((expected_crp_tables(1.25, g) - mid).abs() < 1e-15);
    }

    #[test]
    fn negative_multinomial_edges() {
        let mut r = rng(6);
        assert_eq!(draw_negative_multinomial(10, &[0.0, 0.0], &mut r).unwrap(), vec![0, 0]);
        assert!(matches!(
            draw_negative_multinomial(10, &[0.6, 0.4], &mut r),
            Err(Error::ProbabilityMassExceedsOne { .. })
        ));
        assert!(draw_negative_multinomial(10, &[-0.1], &mut r).is_err());
    }

    #[test]
    fn negative_multinomial_means() {
        let mut r = rng(7);
        let draws = 200_000;
        let mut sums = [0u64; 2];
        for _ in 0..draws {
            let x = draw_negative_multinomial(10, &[0.2, 0.1], &mut r).unwrap();
            sums[0] += x[0];
            sums[1] += x[1];
        }
        let expect = [10.0 * 0.2 / 0.7, 10.0 * 0.1 / 0.7];
        for c in 0..2 {
            let m = sums[c] as f64 / draws as f64;
            assert!((m / expect[c] - 1.0).abs() < 0.02, "{c}: {m} vs {}", expect[c]);
        }
    }

    #[test]
    fn multinomial_conserves_total() {
        let mut r = rng(8);
        let mut out = [0u64; 4];
        for n in [0u64, 1, 17, 1000] {
            multinomial_into(n, &[0.1, 0.2, 0.3, 0.15], 0.75, &mut out, &mut r);
            assert_eq!(out.iter().sum::<u64>(), n);
        }
    }

    #[test]
    fn pick_skips_zero_weights() {
        assert_eq!(pick(&[0.0, 1.0, 0.0], 1.0, 0.0), 1);
        assert_eq!(pick(&[0.0, 1.0, 0.0], 1.0, 0.999_999), 1);
        assert_eq!(pick(&[0.5, 0.5], 1.0, 0.6), 1);
    }
}
