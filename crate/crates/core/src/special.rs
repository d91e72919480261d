//! Gamma function, modified Bessel function of the second kind for real
//! orders in `[0, 1)`, and the constant of the weighted extension problem.

use std::f64::consts::PI;

use crate::error::{domain, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// Euler-Mascheroni constant and the next even-index Taylor coefficients of
/// `1/Gamma(z)` around zero.
const RGAMMA_C2: f64 = 0.577_215_664_901_532_9;
const RGAMMA_C4: f64 = -0.042_002_635_034_095_2;
const RGAMMA_C6: f64 = -0.042_197_734_555_544_3;

/// Gamma function for positive arguments.
pub fn gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("gamma requires a positive finite argument, got {x}"));
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        PI / ((PI * x).sin() * gamma_unchecked(1.0 - x))
    } else {
        let z = x - 1.0;
        let mut acc = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (z + i as f64);
        }
        let t = z + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
    }
}

/// `1/Gamma(1+mu)` and `1/Gamma(1-mu)` together with Temme's auxiliary
/// quantities `gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu)` and
/// `gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2`, for `|mu| <= 1/2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let gampl = 1.0 / gamma_unchecked(1.0 + mu);
    let gammi = 1.0 / gamma_unchecked(1.0 - mu);
    let gam1 = if mu.abs() < 1e-3 {
        let m2 = mu * mu;
        -(RGAMMA_C2 + m2 * (RGAMMA_C4 + m2 * RGAMMA_C6))
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    let gam2 = 0.5 * (gammi + gampl);
    (gam1, gam2, gampl, gammi)
}

/// Modified Bessel function of the second kind `K_nu(x)` for `0 <= nu < 1`
/// and `x > 0`.
///
/// Temme's series is used for `x < 2` and Steed's continued fraction above,
/// followed by upward recurrence when `nu >= 1/2`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("bessel_k requires x > 0, got {x}"));
    }
    if !(0.0..1.0).contains(&nu) {
        return domain(format!("bessel_k supports orders in [0, 1), got {nu}"));
    }
    Ok(bessel_k_unchecked(nu, x))
}

pub(crate) fn bessel_k_unchecked(nu: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const MAXIT: usize = 100_000;
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut k_mu, mut k_mu1);
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        k_mu = sum;
        k_mu1 = sum1 * xi2;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAXIT {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        k_mu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        k_mu1 = k_mu * (mu + x + 0.5 - h) * xi;
    }
    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    k_mu
}

/// Fractional order `s` with the derived weight exponent `a = 1 - 2s` and
/// the Neumann constant `c_s = 2^{1-2s} Gamma(1-s) / Gamma(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalOrder {
    pub s: f64,
    pub a: f64,
    pub c_s: f64,
}

impl FractionalOrder {
    pub fn new(s: f64) -> Result<Self> {
        extension_constant(s)
    }

    /// Normalisation `2^{1-s} / Gamma(s)` of the extension profile, chosen so
    /// that `profile(0) = 1`.
    pub fn profile_constant(&self) -> f64 {
        2f64.powf(1.0 - self.s) / gamma_unchecked(self.s)
    }

    /// Extension profile `psi(z) = C (z)^s K_s(z)` evaluated at `z = sqrt(mu) * y`;
    /// equals `exp(-z)` for `s = 1/2`.
    pub fn profile(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 1.0;
        }
        if (self.s - 0.5).abs() < 1e-15 {
            return (-z).exp();
        }
        if z > 700.0 {
            return 0.0;
        }
        self.profile_constant() * z.powf(self.s) * bessel_k_unchecked(self.s, z)
    }
}

/// Builds the `(s, a, c_s)` record for `0 < s < 1`.
pub fn extension_constant(s: f64) -> Result<FractionalOrder> {
    if !(s > 0.0 && s < 1.0) {
        return domain(format!("fractional order must lie in (0, 1), got {s}"));
    }
    let c_s = 2f64.powf(1.0 - 2.0 * s) * gamma_unchecked(1.0 - s) / gamma_unchecked(s);
    Ok(FractionalOrder { s, a: 1.0 - 2.0 * s, c_s })
}
