//! Shared numeric helpers: log-gamma, Bessel J0, quadrature.

/// Natural log of the gamma function via the Lanczos approximation (g = 5,
/// six coefficients). Accurate to better than 1e-10 for x > 0, which is
/// plenty for log-space factorial ratios up to the largest category counts.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma domain is x > 0, got {x}");
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let tmp = x + 5.5;
    let log = (x + 0.5) * tmp.ln() - tmp;
    let mut series = 1.000000000190015;
    let mut denom = x;
    for c in &COEFFS {
        denom += 1.0;
        series += c / denom;
    }
    log + (2.5066282746310005 * series / x).ln()
}

/// ln(n!) through `ln_gamma`.
pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Bessel function of the first kind, order zero.
///
/// Abramowitz & Stegun 9.4.1 (|x| <= 3) and 9.4.3 (|x| > 3) rational
/// approximations; absolute error below 1e-7 over the real line. The
/// coefficients are the published truncated values.
#[allow(clippy::approx_constant, clippy::excessive_precision)]
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 3.0 {
        let y = (x / 3.0) * (x / 3.0);
        1.0 + y
            * (-2.2499997
                + y * (1.2656208
                    + y * (-0.3163866 + y * (0.0444479 + y * (-0.0039444 + y * 0.0002100)))))
    } else {
        let y = 3.0 / ax;
        let f0 = 0.79788456
            + y * (-0.00000077
                + y * (-0.00552740
                    + y * (-0.00009512 + y * (0.00137237 + y * (-0.00072805 + y * 0.00014476)))));
        let theta0 = ax - 0.78539816
            + y * (-0.04166397
                + y * (-0.00003954
                    + y * (0.00262573 + y * (-0.00054125 + y * (-0.00029333 + y * 0.00013558)))));
        f0 * theta0.cos() / ax.sqrt()
    }
}

/// Composite Simpson quadrature of `f` over `[a, b]` with `n` panels
/// (`n` rounded up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n.is_multiple_of(2) { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        sum += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against the CDF `cdf`.
/// Sorts a copy of the input.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN sample in KS input"));
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let c = cdf(*x);
        let lo = (c - i as f64 / n).abs();
        let hi = ((i + 1) as f64 / n - c).abs();
        d = d.max(lo).max(hi);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::excessive_precision)]
    fn ln_gamma_matches_reference_values() {
        // mpmath.loggamma reference values.
        let cases = [
            (0.5, 0.572364942924700),
            (1.0, 0.0),
            (2.0, 0.0),
            (5.5, 3.957813967618717),
            (10.0, 12.801827480081469),
            (30.0, 71.257038967168015),
            (91.0, 318.152639620209300),
            (92.0, 322.663499126726151),
        ];
        for (x, want) in cases {
            assert!(
                (ln_gamma(x) - want).abs() < 1e-9,
                "ln_gamma({x}) = {}, want {want}",
                ln_gamma(x)
            );
        }
    }

    #[test]
    fn bessel_j0_matches_reference_values() {
        // mpmath.besselj(0, x) reference values.
        let cases = [
            (0.0, 1.0),
            (0.5, 0.938469807240813),
            (1.0, 0.765197686557967),
            (1.5, 0.511827671735918),
            (2.0, 0.223890779141236),
            (3.0, -0.260051954901933),
            (5.0, -0.177596771314338),
            (10.0, -0.245935764451348),
        ];
        // The rational approximations carry ~5e-8 absolute error.
        for (x, want) in cases {
            assert!(
                (bessel_j0(x) - want).abs() < 1e-7,
                "J0({x}) = {}, want {want}",
                bessel_j0(x)
            );
        }
    }

    #[test]
    fn simpson_integrates_polynomial_exactly() {
        // Simpson is exact for cubics.
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 16);
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn ks_statistic_zero_for_perfect_grid() {
        // Uniform grid at CDF midpoints gives D = 1/(2n).
        let n = 1000;
        let samples: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&samples, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.5 / n as f64 + 1e-12, "D = {d}");
    }
}
