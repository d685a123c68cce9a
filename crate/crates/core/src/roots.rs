//! Real roots of low-degree polynomials.
//!
//! Degrees 1 and 2 use closed forms; cubics use the eigenvalues of the
//! companion matrix followed by Newton polishing on the original
//! coefficients. Inputs are expected to be reasonably scaled (unit-range
//! variable), since negligible leading coefficients are trimmed relative to
//! the largest one.

use nalgebra::Matrix3;

use crate::polyfit::horner;

/// Leading coefficients below this fraction of the largest are dropped.
const TRIM_RELATIVE: f64 = 1e-12;
/// Eigenvalues with imaginary part below this (relative) count as real.
const IMAG_TOLERANCE: f64 = 1e-6;

/// Real roots of `c[0] + c[1] t + ... + c[n] t^n`, unsorted. A polynomial
/// that is identically zero or a nonzero constant has no roots.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut len = coeffs.len();
    while len > 1 && coeffs[len - 1].abs() <= TRIM_RELATIVE * scale {
        len -= 1;
    }
    let c = &coeffs[..len];
    let mut roots = match c.len() {
        0 | 1 => Vec::new(),
        2 => vec![-c[0] / c[1]],
        3 => quadratic(c[2], c[1], c[0]),
        4 => cubic(c),
        _ => unimplemented!("degree > 3"),
    };
    for r in &mut roots {
        *r = polish(c, *r);
    }
    roots
}

fn quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let mut disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // tangency lost to rounding
        if disc > -1e-12 * (b * b).max((4.0 * a * c).abs()) {
            disc = 0.0;
        } else {
            return Vec::new();
        }
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        // b == 0 and disc == 0 -> c == 0, double root at zero
        return vec![0.0, 0.0];
    }
    vec![q / a, c / q]
}

fn cubic(c: &[f64]) -> Vec<f64> {
    let a = c[3];
    let companion = Matrix3::new(
        0.0, 0.0, -c[0] / a, //
        1.0, 0.0, -c[1] / a, //
        0.0, 1.0, -c[2] / a,
    );
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= IMAG_TOLERANCE * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect()
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, &v)| k as f64 * v).collect()
}

fn polish(c: &[f64], mut t: f64) -> f64 {
    let dc = derivative(c);
    let mut best = horner(c, t).abs();
    for _ in 0..8 {
        let d = horner(&dc, t);
        if d == 0.0 || best == 0.0 {
            break;
        }
        let next = t - horner(c, t) / d;
        let val = horner(c, next).abs();
        if !(val < best) {
            break;
        }
        t = next;
        best = val;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn constant_and_zero_have_no_roots() {
        assert!(real_roots(&[0.0, 0.0]).is_empty());
        assert!(real_roots(&[50.0]).is_empty());
        assert!(real_roots(&[50.0, 0.0, 0.0]).is_empty());
    }

    #[test]
    fn linear_root() {
        assert_eq!(real_roots(&[-10.0, 2.0]), vec![5.0]);
    }

    #[test]
    fn quadratic_roots() {
        // (t - 1)(t + 3)
        let r = sorted(real_roots(&[-3.0, 2.0, 1.0]));
        assert!(close(&r, &[-3.0, 1.0], 1e-12));
        assert!(real_roots(&[1.0, 0.0, 1.0]).is_empty());
    }

    #[test]
    fn cubic_three_real_roots() {
        // (t - 0.2)(t + 0.5)(t - 2)
        let c = [0.2, -0.7, -1.7, 1.0];
        let r = sorted(real_roots(&c));
        assert!(close(&r, &[-0.5, 0.2, 2.0], 1e-12), "{r:?}");
    }

    #[test]
    fn cubic_one_real_root() {
        // (t - 0.3)(t^2 + 1)
        let c = [-0.3, 1.0, -0.3, 1.0];
        let r = real_roots(&c);
        assert!(close(&r, &[0.3], 1e-12), "{r:?}");
    }

    #[test]
    fn tiny_leading_coefficient_is_trimmed() {
        let r = real_roots(&[-0.4, 1.0, 1e-15, -1e-14]);
        assert!(close(&r, &[0.4], 1e-14), "{r:?}");
    }

    #[test]
    fn small_but_real_cubic_term_keeps_band_root_accurate() {
        // 1e-9 (t - 1e4)(t - 0.25)(t + 3e3) style: one root in unit band
        let (r1, r2, r3) = (1e4, 0.25, -3e3);
        let a = 1e-9;
        let c = [
            -a * r1 * r2 * r3,
            a * (r1 * r2 + r1 * r3 + r2 * r3),
            -a * (r1 + r2 + r3),
            a,
        ];
        let r = real_roots(&c);
        assert!(r.iter().any(|&t| (t - 0.25).abs() < 1e-12), "{r:?}");
    }
}
