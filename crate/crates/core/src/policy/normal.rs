/// Standard normal CDF, `Φ(x) = erfc(-x/√2) / 2`.
///
/// `libm` is a pure-Rust port of musl's routines, so the result does not
/// depend on the platform's C library.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}
