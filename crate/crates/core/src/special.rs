//! Cosine transform of the algebraic tail (1 + x)^(−κ).

use num_complex::Complex64;
use statrs::function::gamma::gamma;

/// ∫₀^∞ cos(kx) (1 + x)^(−κ) dx for κ > 1.
///
/// With z = −ik the integral is Re[e^(−ik) z^(κ−1) Γ(1−κ, z)]. Small |k|
/// uses the power series of the lower incomplete gamma function, larger
/// |k| the Legendre continued fraction, which yields z^(−a)e^(z)Γ(a, z)
/// directly and avoids any branch bookkeeping.
pub fn power_tail_cosine(kappa: f64, k: f64) -> f64 {
    assert!(kappa > 1.0, "exponent must exceed 1");
    let k = k.abs();
    if k == 0.0 {
        return 1.0 / (kappa - 1.0);
    }
    let a = 1.0 - kappa;
    let z = Complex64::new(0.0, -k);
    if k <= 3.0 {
        // Γ(a, z) = Γ(a) − z^a Σ (−z)^n / (n! (a + n))
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(1.0 / a, 0.0);
        for n in 1..200 {
            term *= -z / n as f64;
            let add = term / (a + n as f64);
            sum += add;
            if add.norm() < 1e-17 * sum.norm() {
                break;
            }
        }
        let phase = Complex64::new(0.0, -k).exp();
        let za = z.powf(-a);
        (phase * (za * gamma(a) - sum)).re
    } else {
        continued_fraction(a, z).re
    }
}

/// z^(−a) e^(z) Γ(a, z) by modified Lentz.
fn continued_fraction(a: f64, z: Complex64) -> Complex64 {
    let tiny = 1e-300;
    let mut b = z + 1.0 - a;
    let mut c = Complex64::new(1.0 / tiny, 0.0);
    let mut d = b.inv();
    let mut h = d;
    for i in 1..20_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = d * an + b;
        if d.norm() < tiny {
            d = Complex64::new(tiny, 0.0);
        }
        c = b + an / c;
        if c.norm() < tiny {
            c = Complex64::new(tiny, 0.0);
        }
        d = d.inv();
        let del = d * c;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    h
}
