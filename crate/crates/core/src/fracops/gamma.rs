//! Gamma and digamma functions for real arguments.

use core::f64::consts::PI;

// Lanczos approximation, g = 7, nine terms.
const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function. Poles at non-positive integers return `NaN`.
pub fn gamma(x: f64) -> f64 {
    if x <= 0.0 && x == libm::floor(x) {
        return f64::NAN;
    }
    if x < 0.5 {
        // Reflection formula.
        return PI / (libm::sin(PI * x) * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    libm::sqrt(2.0 * PI) * libm::pow(t, x + 0.5) * libm::exp(-t) * acc
}

/// `1 / Gamma(x)`, which is finite everywhere (zero at the poles of Gamma).
pub fn inv_gamma(x: f64) -> f64 {
    if x <= 0.0 && x == libm::floor(x) {
        return 0.0;
    }
    1.0 / gamma(x)
}

/// Digamma `psi(x) = Gamma'(x) / Gamma(x)`.
pub fn digamma(mut x: f64) -> f64 {
    if x <= 0.0 && x == libm::floor(x) {
        return f64::NAN;
    }
    let mut shift = 0.0;
    if x < 0.0 {
        // psi(1 - x) - psi(x) = pi cot(pi x)
        return digamma(1.0 - x) - PI / libm::tan(PI * x);
    }
    while x < 12.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic series in 1/x^2 (Bernoulli numbers).
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    shift + libm::log(x) - 0.5 * inv - tail
}
