//! Thin float helpers over `libm` so the crate builds without `std`.

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// Ceiling that forgives float noise: a quotient within 1e-9 (relative) of an
/// integer is taken to be that integer.
pub(crate) fn ceil_tolerant(x: f64) -> f64 {
    let r = round(x);
    let scale = if x.abs() > 1.0 { x.abs() } else { 1.0 };
    if (x - r).abs() <= 1e-9 * scale {
        r
    } else {
        ceil(x)
    }
}
