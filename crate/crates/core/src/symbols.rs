//! Scalar symbols: dispersion relations, the group-velocity symbol `m`, the
//! eikonal phase, resonance functions and the normal-form multipliers.
//!
//! Finite-depth formulas are written for depth 1 and transported to depth `h`
//! through `omega_h(xi, eta) = h^-2 omega_1(h xi, h^{3/2} eta)`.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Below this argument the hyperbolic functions switch to their Taylor series.
pub const SERIES_CUTOFF: f64 = 1e-4;

/// Fluid depth: a positive real or the infinite-depth limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Depth {
    Finite(f64),
    Infinite,
}

impl Depth {
    pub fn finite(h: f64) -> Result<Depth> {
        if h.is_finite() && h > 0.0 {
            Ok(Depth::Finite(h))
        } else if h == f64::INFINITY {
            Ok(Depth::Infinite)
        } else {
            domain(format!("depth must be positive, got {h}"))
        }
    }

    /// `+inf` for the infinite-depth case, matching the snapshot encoding.
    pub fn as_f64(self) -> f64 {
        match self {
            Depth::Finite(h) => h,
            Depth::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Depth::Infinite)
    }
}

pub fn coth(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        1.0 / x + x / 3.0 - x * x * x / 45.0
    } else {
        1.0 / x.tanh()
    }
}

/// csch^2(x), overflow-safe for large |x|.
pub fn csch2(x: f64) -> f64 {
    let a = x.abs();
    if a < SERIES_CUTOFF {
        1.0 / (x * x) - 1.0 / 3.0 + x * x / 15.0
    } else if a > 1.0 {
        let e = (-2.0 * a).exp();
        4.0 * e / ((1.0 - e) * (1.0 - e))
    } else {
        let s = x.sinh();
        1.0 / (s * s)
    }
}

/// x^2 csch^2(x), finite at the origin.
pub fn x2csch2(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        1.0 - x2 / 3.0 + x2 * x2 / 15.0
    } else {
        x * x * csch2(x)
    }
}

// Taylor coefficients of x coth x = sum a_n x^{2n}, a_n = 4^n B_{2n} / (2n)!.
const XCOTH: [f64; 8] = [
    1.0,
    1.0 / 3.0,
    -1.0 / 45.0,
    2.0 / 945.0,
    -1.0 / 4725.0,
    2.0 / 93555.0,
    -1382.0 / 638512875.0,
    4.0 / 18243225.0,
];
const XCOTH_SERIES: f64 = 0.25;

/// x coth x - 1, accurate near the origin.
fn xcoth_m1(x: f64) -> f64 {
    if x.abs() < XCOTH_SERIES {
        let x2 = x * x;
        let mut acc = 0.0;
        for a in XCOTH[1..].iter().rev() {
            acc = acc * x2 + a;
        }
        acc * x2
    } else {
        x * coth(x) - 1.0
    }
}

/// x^2 coth(x) - x, the depth-1 dispersion on the x-axis (odd in x).
fn axis_dispersion(x: f64) -> f64 {
    x * xcoth_m1(x)
}

fn omega1(xi: f64, eta: f64) -> f64 {
    axis_dispersion(xi) - eta * eta / xi
}

/// Dispersion relation without the `xi != 0` check; callers pin `xi = 0` modes.
pub(crate) fn omega_raw(h: Depth, xi: f64, eta: f64) -> f64 {
    match h {
        Depth::Infinite => xi * xi.abs() - eta * eta / xi,
        Depth::Finite(h) => omega1(h * xi, h.powf(1.5) * eta) / (h * h),
    }
}

pub fn omega(h: Depth, xi: f64, eta: f64) -> Result<f64> {
    if xi == 0.0 {
        return domain("omega is undefined at xi = 0");
    }
    Ok(omega_raw(h, xi, eta))
}

/// m(xi) = 2 xi coth xi - xi^2 csch^2 xi - 1, even, m(0) = 0.
pub fn m_eval(xi: f64) -> f64 {
    let x = xi.abs();
    if x < XCOTH_SERIES {
        // m = sum (2n+1) a_n x^{2n}
        let x2 = x * x;
        let mut acc = 0.0;
        for n in (1..XCOTH.len()).rev() {
            acc = acc * x2 + (2 * n + 1) as f64 * XCOTH[n];
        }
        acc * x2
    } else {
        2.0 * x * coth(x) - x2csch2(x) - 1.0
    }
}

/// dm/dxi for xi >= 0.
pub fn m_deriv(xi: f64) -> f64 {
    let x = xi.abs();
    let d = if x < XCOTH_SERIES {
        let x2 = x * x;
        let mut acc = 0.0;
        for n in (1..XCOTH.len()).rev() {
            acc = acc * x2 + (2 * n * (2 * n + 1)) as f64 * XCOTH[n];
        }
        acc * x
    } else {
        let c = coth(x);
        let s = csch2(x);
        2.0 * c - 4.0 * x * s + 2.0 * x * x * s * c
    };
    d * xi.signum()
}

/// Group-velocity symbol at depth `h`.
pub fn m_depth(h: Depth, xi: f64) -> f64 {
    match h {
        Depth::Infinite => 2.0 * xi.abs(),
        Depth::Finite(h) => m_eval(h * xi) / h,
    }
}

pub const M_INVERSE_TOL: f64 = 1e-13;

/// The unique xi > 0 with m(xi) = v.
pub fn m_inverse(v: f64, tol: f64) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() {
        return domain(format!("m_inverse needs v > 0, got {v}"));
    }
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let seed = if v < 1.0 { v.sqrt() } else { 0.5 * (v + 1.0) };
    let (mut lo, mut hi) = (0.5 * seed, 2.0 * seed);
    while m_eval(lo) > v {
        lo *= 0.5;
    }
    while m_eval(hi) < v {
        hi *= 2.0;
    }
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if m_eval(mid) < v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..60 {
        let r = m_eval(x) - v;
        if r < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let mut next = x - r / m_deriv(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 2.0 * f64::EPSILON * x {
            break;
        }
    }
    let resid = (m_eval(x) - v).abs();
    if resid > tol * v.max(1.0) {
        return domain(format!("m_inverse({v}) stalled with residual {resid:e}"));
    }
    Ok(x)
}

pub fn m_inverse_depth(h: Depth, v: f64) -> Result<f64> {
    match h {
        Depth::Infinite => {
            if v > 0.0 {
                Ok(0.5 * v)
            } else {
                domain(format!("m_inverse needs v > 0, got {v}"))
            }
        }
        Depth::Finite(h) => Ok(m_inverse(h * v, M_INVERSE_TOL)? / h),
    }
}

/// Solution of the eikonal equation along rays, Phi(v).
///
/// Depth 1: `mu^2 coth mu - (1 + v) mu` with `mu = m^-1(v)`; the derivative is
/// `Phi'(v) = -m^-1(v)`. Infinite depth: `-v^2/4`.
#[allow(non_snake_case)]
pub fn phase_Phi(h: Depth, v: f64) -> Result<f64> {
    match h {
        Depth::Infinite => Ok(-0.25 * v * v),
        Depth::Finite(h) => {
            if !(v > 0.0) {
                return domain(format!("Phi needs v > 0, got {v}"));
            }
            let w = h * v;
            let mu = m_inverse(w, M_INVERSE_TOL)?;
            Ok((mu * xcoth_m1(mu) - w * mu) / (h * h))
        }
    }
}

#[allow(non_snake_case)]
pub fn phase_Phi_prime(h: Depth, v: f64) -> Result<f64> {
    match h {
        Depth::Infinite => Ok(-0.5 * v),
        Depth::Finite(_) => Ok(-m_inverse_depth(h, v)?),
    }
}

#[allow(non_snake_case)]
pub fn phase_Phi_second(h: Depth, v: f64) -> Result<f64> {
    match h {
        Depth::Infinite => Ok(-0.5),
        Depth::Finite(hh) => {
            let mu = m_inverse_depth(h, v)?;
            Ok(-1.0 / m_deriv(hh * mu))
        }
    }
}

/// Residual of `Phi - v Phi' + Phi'^2 coth(Phi') - Phi' = 0` at depth 1,
/// relative to the size of the largest term.
pub fn eikonal_residual(v: f64) -> Result<f64> {
    let h = Depth::Finite(1.0);
    let p = phase_Phi(h, v)?;
    let dp = phase_Phi_prime(h, v)?;
    let terms = [p, -v * dp, dp * dp * coth(dp), -dp];
    let scale = terms.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    Ok(terms.iter().sum::<f64>().abs() / scale)
}

/// phi(t, z) = t Phi(z / t).
pub fn phase_phi(h: Depth, t: f64, z: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain("phase needs t > 0");
    }
    match h {
        Depth::Infinite => Ok(-z * z / (4.0 * t)),
        Depth::Finite(_) => {
            if !(z > 0.0) {
                return domain(format!("finite-depth phase needs z > 0, got {z}"));
            }
            Ok(t * phase_Phi(h, z / t)?)
        }
    }
}

/// d phi / dz = Phi'(z/t).
pub fn phase_phi_z(h: Depth, t: f64, z: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain("phase needs t > 0");
    }
    phase_Phi_prime(h, z / t)
}

/// Pair of frequency vectors entering a quadratic interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreqPair {
    pub xi1: f64,
    pub eta1: f64,
    pub xi2: f64,
    pub eta2: f64,
}

impl FreqPair {
    pub fn new(xi1: f64, eta1: f64, xi2: f64, eta2: f64) -> Self {
        FreqPair { xi1, eta1, xi2, eta2 }
    }

    pub fn swap(self) -> Self {
        FreqPair::new(self.xi2, self.eta2, self.xi1, self.eta1)
    }

    fn check(&self) -> Result<()> {
        if self.xi1 == 0.0 || self.xi2 == 0.0 || self.xi1 + self.xi2 == 0.0 {
            return domain("resonance needs xi1, xi2 and xi1 + xi2 nonzero");
        }
        Ok(())
    }

    fn slope_gap(&self) -> f64 {
        self.eta1 / self.xi1 - self.eta2 / self.xi2
    }
}

fn resonance_depth1(p: &FreqPair) -> f64 {
    let (x1, x2) = (p.xi1, p.xi2);
    let s = x1 + x2;
    let cubic = axis_dispersion(s) - axis_dispersion(x1) - axis_dispersion(x2);
    let g = p.slope_gap();
    -x1 * x2 * s * (cubic / (x1 * x2 * s) + g * g / (s * s))
}

fn resonance_inf(p: &FreqPair) -> f64 {
    let x3 = -(p.xi1 + p.xi2);
    let big = p.xi1.abs().max(p.xi2.abs()).max(x3.abs());
    let g = p.slope_gap();
    p.xi1 * p.xi2 * x3 * (2.0 / big + g * g / (x3 * x3))
}

fn scaled(h: f64, p: &FreqPair) -> FreqPair {
    let s = h.powf(1.5);
    FreqPair::new(h * p.xi1, s * p.eta1, h * p.xi2, s * p.eta2)
}

/// Closed-form resonance function Omega(k1, k2) = w(k1) + w(k2) + w(-k1-k2).
pub fn resonance(h: Depth, pair: FreqPair) -> Result<f64> {
    pair.check()?;
    Ok(resonance_unchecked(h, &pair))
}

pub(crate) fn resonance_unchecked(h: Depth, pair: &FreqPair) -> f64 {
    match h {
        Depth::Infinite => resonance_inf(pair),
        Depth::Finite(h) => resonance_depth1(&scaled(h, pair)) / (h * h),
    }
}

/// Direct three-term sum of dispersion values.
pub fn resonance_sum(h: Depth, pair: FreqPair) -> Result<f64> {
    pair.check()?;
    let s = (pair.xi1 + pair.xi2, pair.eta1 + pair.eta2);
    Ok(omega_raw(h, pair.xi1, pair.eta1) + omega_raw(h, pair.xi2, pair.eta2)
        - omega_raw(h, s.0, s.1))
}

fn japanese(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// Lower-bound expression for |Omega| in the low-high regime |xi1| << |xi2|.
pub fn lower_bound_low_high(p: &FreqPair) -> f64 {
    let (a1, a2) = (p.xi1.abs(), p.xi2.abs());
    let j2 = japanese(p.xi2);
    let g = (p.eta1 + p.eta2) / (p.xi1 + p.xi2) - p.eta2 / p.xi2;
    a1 * a2 * a2 / j2 * (1.0 + j2 / (a1 * a1) * g * g)
}

/// Lower-bound expression for |Omega| in the high-high regime |xi1 + xi2| << |xi2|.
pub fn lower_bound_high_high(p: &FreqPair) -> f64 {
    let s = (p.xi1 + p.xi2).abs();
    let a2 = p.xi2.abs();
    let j2 = japanese(p.xi2);
    let g = p.slope_gap();
    s * a2 * a2 / j2 * (1.0 + j2 / (s * s) * g * g)
}

#[derive(Clone, Debug, Serialize)]
pub struct LowerBoundReport {
    pub samples: usize,
    pub low_high_min: f64,
    pub high_high_min: f64,
    pub degenerate_min: f64,
    /// Empirical constant: the smallest ratio |Omega| / bound seen.
    pub c_emp: f64,
    pub pass: bool,
}

fn log_uniform(rng: &mut StdRng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn random_sign(rng: &mut StdRng) -> f64 {
    if rng.gen_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn random_slope(rng: &mut StdRng) -> f64 {
    if rng.gen_bool(0.1) {
        0.0
    } else {
        random_sign(rng) * log_uniform(rng, 1e-3, 1e3)
    }
}

/// Samples pairs in the low-high and high-high regimes and records the
/// smallest ratio of |Omega| to the corresponding lower-bound expression.
pub fn resonance_lower_bound_check(h: Depth, samples: usize, seed: u64) -> Result<LowerBoundReport> {
    let hh = match h {
        Depth::Finite(hh) => hh,
        Depth::Infinite => return domain("lower-bound check is for finite depth"),
    };
    let mut rng = StdRng::seed_from_u64(seed);
    let (mut lh, mut hhm, mut deg) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for i in 0..samples {
        let x2 = random_sign(&mut rng) * log_uniform(&mut rng, 1e-2, 1e2);
        let small = random_sign(&mut rng) * x2.abs() * log_uniform(&mut rng, 1e-4, 0.125);
        let degenerate = i % 10 == 0;
        let (s1, s2) = if degenerate {
            let s = random_slope(&mut rng);
            (s, s)
        } else {
            (random_slope(&mut rng), random_slope(&mut rng))
        };
        // low-high: xi1 small
        let x1 = small;
        let p = FreqPair::new(x1, s1 * x1, x2, s2 * x2);
        if p.check().is_ok() {
            let q = scaled(hh, &p);
            let r = resonance_depth1(&q).abs() / lower_bound_low_high(&q);
            lh = lh.min(r);
            if degenerate {
                deg = deg.min(r);
            }
        }
        // high-high: xi1 + xi2 small
        let x1 = -x2 + small;
        let p = FreqPair::new(x1, s1 * x1, x2, s2 * x2);
        if p.check().is_ok() {
            let q = scaled(hh, &p);
            let r = resonance_depth1(&q).abs() / lower_bound_high_high(&q);
            hhm = hhm.min(r);
            if degenerate {
                deg = deg.min(r);
            }
        }
    }
    let c_emp = lh.min(hhm);
    Ok(LowerBoundReport {
        samples,
        low_high_min: lh,
        high_high_min: hhm,
        degenerate_min: deg,
        c_emp,
        pass: c_emp > 0.0 && c_emp.is_finite(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NfKind {
    K,
    KSym,
    BEnergy,
}

fn k_raw(hh: f64, x1: f64, x2: f64) -> f64 {
    let s = x1 + x2;
    // (xi^2) csch^2(h xi) written as x2csch2(h xi) / h^2
    s * x2 * (x2csch2(hh * s) - x2csch2(hh * x2)) / (hh * hh)
}

fn k_sym_raw(hh: f64, x1: f64, x2: f64) -> f64 {
    let s = x1 + x2;
    let c = |x: f64| x2csch2(hh * x) / (hh * hh);
    0.5 * s * s * c(s) - 0.5 * s * x1 * c(x1) - 0.5 * s * x2 * c(x2)
}

/// Symbols of the energy normal form: k, its symmetrization, and
/// b = k_sym / Omega evaluated where eta1/xi1 = eta2/xi2.
pub fn nf_symbol(h: Depth, xi1: f64, xi2: f64, which: NfKind) -> Result<f64> {
    if xi1 == 0.0 || xi2 == 0.0 || xi1 + xi2 == 0.0 {
        return domain("normal-form symbols need xi1, xi2 and xi1 + xi2 nonzero");
    }
    let hh = match h {
        Depth::Infinite => return Ok(0.0),
        Depth::Finite(hh) => hh,
    };
    Ok(match which {
        NfKind::K => k_raw(hh, xi1, xi2),
        NfKind::KSym => k_sym_raw(hh, xi1, xi2),
        NfKind::BEnergy => {
            let om = resonance_unchecked(h, &FreqPair::new(xi1, 0.0, xi2, 0.0));
            k_sym_raw(hh, xi1, xi2) / om
        }
    })
}

/// Energy normal-form symbol at general frequency vectors.
pub fn b_energy(h: Depth, pair: FreqPair) -> Result<f64> {
    pair.check()?;
    let k = nf_symbol(h, pair.xi1, pair.xi2, NfKind::KSym)?;
    Ok(k / resonance_unchecked(h, &pair))
}

/// Scattering normal-form symbol (xi1 + xi2) / (2 Omega).
pub fn b_scatter(h: Depth, pair: FreqPair) -> Result<f64> {
    pair.check()?;
    let om = resonance_unchecked(h, &pair);
    if om.abs() < 1e-300 {
        return domain("resonance underflow in scattering symbol");
    }
    Ok((pair.xi1 + pair.xi2) / (2.0 * om))
}
