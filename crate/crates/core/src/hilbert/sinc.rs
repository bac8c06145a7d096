use std::f64::consts::PI;

/// The sinc reproducing kernel `sin(b(ỹ−y)) / (π(ỹ−y))` of functions bandlimited to `[−b, b]`.
///
/// Near the diagonal a four-term Taylor expansion replaces the quotient.
pub fn sinc_kernel(y: f64, y_tilde: f64, b: f64) -> f64 {
    let d = y_tilde - y;
    let x = b * d;
    if x.abs() < 1e-4 {
        let x2 = x * x;
        (b / PI) * (1.0 - x2 / 6.0 + x2 * x2 / 120.0 - x2 * x2 * x2 / 5040.0)
    } else {
        x.sin() / (PI * d)
    }
}
