//! Brute-force reference computations shared by the integration tests. They
//! deliberately avoid the library's series code: terms come from the plain
//! recurrence `t(x+1) = t(x) + log λ - ν log(x+1)` and are summed to a fixed
//! depth past the largest term.
#![allow(dead_code)]

/// Log terms of `λ^x / (x!)^ν` until 80 nats below the peak, past the peak.
pub fn log_terms(log_lambda: f64, nu: f64) -> Vec<f64> {
    let mut terms = vec![0.0];
    let mut peak = 0.0f64;
    let mut x = 0u64;
    loop {
        let next = terms[x as usize] + log_lambda - nu * ((x + 1) as f64).ln();
        x += 1;
        terms.push(next);
        peak = peak.max(next);
        if next < terms[x as usize - 1] && next < peak - 80.0 {
            return terms;
        }
        assert!(x < 5_000_000, "oracle series did not terminate");
    }
}

pub fn log_z(log_lambda: f64, nu: f64) -> f64 {
    let t = log_terms(log_lambda, nu);
    let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + t.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Normalized pmf values from the brute-force series.
pub fn pmf(log_lambda: f64, nu: f64) -> Vec<f64> {
    let t = log_terms(log_lambda, nu);
    let lz = log_z(log_lambda, nu);
    t.iter().map(|v| (v - lz).exp()).collect()
}

pub fn mean(log_lambda: f64, nu: f64) -> f64 {
    pmf(log_lambda, nu).iter().enumerate().map(|(x, p)| x as f64 * p).sum()
}

/// `log λ` for mean `mu` by plain bisection on the brute-force mean.
pub fn bisect_log_lambda(mu: f64, nu: f64) -> f64 {
    let (mut lo, mut hi) = (-60.0f64, 1.0f64);
    while mean(hi, nu) < mu {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid, nu) < mu {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Poisson pmf from `p(x+1) = p(x) λ / (x+1)`, with `p(0) = e^{-λ}` in log space.
pub fn poisson_pmf(lambda: f64, upto: usize) -> Vec<f64> {
    let mut lp = -lambda;
    let mut out = Vec::with_capacity(upto + 1);
    for x in 0..=upto {
        out.push(lp.exp());
        lp += lambda.ln() - ((x + 1) as f64).ln();
    }
    out
}
