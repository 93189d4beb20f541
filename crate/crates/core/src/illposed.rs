//! Anisotropic Besov norms over Galilean trapezoids and the high-low
//! counterexample for the second Picard iterate at infinite depth.
//!
//! The counterexample lives on a sparse frequency lattice `(i dxi, j deta)`;
//! its thin sets would need dense grids far beyond memory.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Field;

/// `Q_{N,k} = {N/2 < |xi| < 2N, |eta/xi - k N^(1/2)| < (3/4) N^(1/2)}` with `N = 2^n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Trapezoid {
    pub n: i32,
    pub k: i64,
}

impl Trapezoid {
    pub fn size(&self) -> f64 {
        (self.n as f64).exp2()
    }

    pub fn contains(&self, xi: f64, eta: f64) -> bool {
        let big = self.size();
        let a = xi.abs();
        let r = big.sqrt();
        0.5 * big < a && a < 2.0 * big && (eta / xi - self.k as f64 * r).abs() < 0.75 * r
    }

    /// All trapezoids containing `(xi, eta)`; empty at `xi = 0`.
    pub fn covering(xi: f64, eta: f64) -> Vec<Trapezoid> {
        let mut out = Vec::new();
        if xi == 0.0 || !xi.is_finite() || !eta.is_finite() {
            return out;
        }
        let l = xi.abs().log2();
        for n in (l.floor() as i32 - 1)..=(l.ceil() as i32 + 1) {
            let r = (n as f64).exp2().sqrt();
            let s = eta / xi / r;
            for k in (s.floor() as i64 - 1)..=(s.ceil() as i64 + 1) {
                let q = Trapezoid { n, k };
                if q.contains(xi, eta) {
                    out.push(q);
                }
            }
        }
        out
    }
}

/// Exponent in `[1, inf]`; `f64::INFINITY` selects the sup.
fn check_exponent(name: &str, p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [1, inf], got {p}")))
    }
}

fn lp_sum(values: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p.is_infinite() {
        values.fold(0.0, f64::max)
    } else {
        values.map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Block L2 masses of a mode set. A mode covered by `m` trapezoids contributes
/// `1/m` of its squared mass to each, so the blocks partition the L2 mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesovDecomposition {
    pub blocks: BTreeMap<Trapezoid, f64>,
    pub p: f64,
    pub q: f64,
    /// Squared L2 mass of modes outside every trapezoid (only `xi = 0`).
    pub uncovered: f64,
}

impl BesovDecomposition {
    /// `modes` yields `(xi, eta, squared mass)`.
    pub fn new(modes: impl Iterator<Item = (f64, f64, f64)>, p: f64, q: f64) -> Result<BesovDecomposition> {
        check_exponent("p", p)?;
        check_exponent("q", q)?;
        let mut sq: BTreeMap<Trapezoid, f64> = BTreeMap::new();
        let mut uncovered = 0.0;
        for (xi, eta, w) in modes {
            if w == 0.0 {
                continue;
            }
            let cover = Trapezoid::covering(xi, eta);
            if cover.is_empty() {
                uncovered += w;
                continue;
            }
            let share = w / cover.len() as f64;
            for c in cover {
                *sq.entry(c).or_insert(0.0) += share;
            }
        }
        let blocks = sq.into_iter().map(|(k, v)| (k, v.sqrt())).collect();
        Ok(BesovDecomposition { blocks, p, q, uncovered })
    }

    pub fn block_mass_sq(&self) -> f64 {
        self.blocks.values().map(|m| m * m).sum()
    }

    /// `(sum_N N^(q/4) (sum_k |u_{N,k}|^p)^(q/p))^(1/q)`.
    pub fn norm(&self) -> f64 {
        let mut per_n: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
        for (t, m) in &self.blocks {
            per_n.entry(t.n).or_default().push(*m);
        }
        let inner = per_n.iter().map(|(&n, ms)| (n as f64 / 4.0).exp2() * lp_sum(ms.iter().copied(), self.p));
        lp_sum(inner, self.q)
    }
}

pub fn besov_norm(f: &Field, p: f64, q: f64) -> Result<f64> {
    let g = f.fourier();
    let area = f.grid.cell_area();
    let (xi, eta) = (&f.grid.xi, &f.grid.eta);
    let modes = g.data.indexed_iter().map(|((i, j), c)| (xi[i], eta[j], c.norm_sqr() * area)).collect::<Vec<_>>();
    Ok(BesovDecomposition::new(modes.into_iter(), p, q)?.norm())
}

/// Frequency lattice `(i dxi, j deta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub dxi: f64,
    pub deta: f64,
}

impl Lattice {
    pub fn cell(&self) -> f64 {
        self.dxi * self.deta
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseMode {
    pub i: i64,
    pub j: i64,
    pub c: Complex64,
}

/// Fourier data on a lattice. With `half` set only `xi > 0` is stored and the
/// rest is the conjugate mirror of a real function.
#[derive(Clone, Debug)]
pub struct SparseField {
    pub lattice: Lattice,
    /// Sorted by `(i, j)`.
    pub modes: Vec<SparseMode>,
    pub half: bool,
}

impl SparseField {
    pub fn new(lattice: Lattice, mut modes: Vec<SparseMode>, half: bool) -> SparseField {
        modes.sort_by_key(|m| (m.i, m.j));
        SparseField { lattice, modes, half }
    }

    fn weighted(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let l = self.lattice;
        let cell = l.cell();
        let mirror = if self.half { 2 } else { 1 };
        self.modes.iter().flat_map(move |m| {
            let (xi, eta, w) = (m.i as f64 * l.dxi, m.j as f64 * l.deta, m.c.norm_sqr() * cell);
            [(xi, eta, w), (-xi, -eta, w)].into_iter().take(mirror)
        })
    }

    pub fn l2_norm(&self) -> f64 {
        self.weighted().map(|(_, _, w)| w).sum::<f64>().sqrt()
    }

    pub fn besov(&self, p: f64, q: f64) -> Result<BesovDecomposition> {
        BesovDecomposition::new(self.weighted(), p, q)
    }

    pub fn besov_norm(&self, p: f64, q: f64) -> Result<f64> {
        Ok(self.besov(p, q)?.norm())
    }

    /// `u(xi, eta) -> u(xi, eta - c xi)` for `c = m deta / dxi`.
    pub fn galilean_shift(&self, m: i64) -> SparseField {
        let modes = self.modes.iter().map(|s| SparseMode { i: s.i, j: s.j + m * s.i, c: s.c }).collect();
        SparseField::new(self.lattice, modes, self.half)
    }

    /// Index ranges of the columns, in order.
    fn columns(&self) -> Vec<(i64, usize, usize)> {
        let mut out: Vec<(i64, usize, usize)> = Vec::new();
        for (idx, m) in self.modes.iter().enumerate() {
            match out.last_mut() {
                Some(last) if last.0 == m.i => last.2 = idx + 1,
                _ => out.push((m.i, idx, idx + 1)),
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Counterexample {
    pub big_n: f64,
    pub eps: f64,
    pub p: f64,
    /// `N / round(N^(2 + eps))`, within a relative `N^-(2+eps)` of `N^-(1+eps)`.
    pub delta: f64,
    pub lattice: Lattice,
    pub high: SparseField,
    pub low: SparseField,
    pub phi: SparseField,
    /// Lattice measure of `E_high` over `delta N^(3/2)`.
    pub high_measure_ratio: f64,
    /// Lattice measure of `E_low` over `delta^2 N^(1/2)`.
    pub low_measure_ratio: f64,
    pub amp_high: f64,
    pub amp_low: f64,
}

/// `delta` with `N / delta` an integer and the coarsest lattice resolving both sets.
pub fn counterexample_lattice(big_n: f64, eps: f64) -> (f64, Lattice) {
    let m = big_n.powf(2.0 + eps).round().max(1.0);
    let delta = big_n / m;
    (delta, Lattice { dxi: delta / 8.0, deta: big_n.sqrt() * delta / 8.0 })
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

fn is_dyadic(n: f64) -> bool {
    n > 0.0 && n.is_finite() && n.log2().fract() == 0.0
}

/// Indicator data on `E_high` and `E_low` with amplitudes
/// `delta^(-1/2) N^-1` and `delta^(1/(2p) - 3/2) N^(-1/(2p))`.
pub fn build_counterexample(big_n: f64, eps: f64, p: f64, lattice: Lattice) -> Result<Counterexample> {
    if !is_dyadic(big_n) || big_n < 2.0 {
        return Err(Error::Config(format!("N must be a dyadic integer >= 2, got {big_n}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
    }
    check_exponent("p", p)?;
    let (delta, need) = counterexample_lattice(big_n, eps);
    if lattice.dxi > need.dxi * (1.0 + 1e-12) || lattice.deta > need.deta * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "lattice ({:e}, {:e}) does not resolve delta = {delta:e}; need dxi <= {:e}, deta <= {:e}",
            lattice.dxi, lattice.deta, need.dxi, need.deta
        )));
    }
    let r = big_n.sqrt();
    let amp_high = delta.powf(-0.5) / big_n;
    let amp_low = delta.powf(0.5 / p - 1.5) * big_n.powf(-0.5 / p);
    // open sets evaluated in lattice units; boundaries that fall on the lattice are excluded
    let set = |center: f64, amp: f64| -> Vec<SparseMode> {
        let mut out = Vec::new();
        let c = snap(center / lattice.dxi);
        let w = snap(0.25 * delta / lattice.dxi);
        for i in (c - w).floor() as i64..=(c + w).ceil() as i64 {
            if !((i as f64 - c).abs() < w) {
                continue;
            }
            let bound = snap(r * i as f64 * lattice.dxi / lattice.deta);
            let jmax = bound.ceil() as i64;
            for j in -jmax..=jmax {
                if (j as f64).abs() < bound {
                    for s in [1, -1] {
                        out.push(SparseMode { i: s * i, j: s * j, c: Complex64::new(amp, 0.0) });
                    }
                }
            }
        }
        out
    };
    let hm = set(big_n, amp_high);
    let lm = set(delta, amp_low);
    let cell = lattice.cell();
    let high_measure_ratio = hm.len() as f64 * cell / (delta * big_n.powf(1.5));
    let low_measure_ratio = lm.len() as f64 * cell / (delta * delta * big_n.sqrt());
    let phi = SparseField::new(lattice, hm.iter().chain(lm.iter()).copied().collect(), false);
    Ok(Counterexample {
        big_n,
        eps,
        p,
        delta,
        lattice,
        high: SparseField::new(lattice, hm, false),
        low: SparseField::new(lattice, lm, false),
        phi,
        high_measure_ratio,
        low_measure_ratio,
        amp_high,
        amp_low,
    })
}

fn omega_inf(xi: f64, eta: f64) -> f64 {
    xi * xi.abs() - eta * eta / xi
}

/// `(e^(i t w) - 1) / (i w)`, equal to `t` at `w = 0`.
pub fn duhamel_factor(t: f64, w: f64) -> Complex64 {
    let x = t * w;
    if x.abs() < 1e-6 {
        Complex64::new(t, 0.5 * t * x)
    } else {
        (Complex64::from_polar(1.0, x) - 1.0) / Complex64::new(0.0, w)
    }
}

/// `int_0^t S(t - s) (1/2) d_x [(S(s) phi)^2] ds` at infinite depth, evaluated
/// mode-wise in closed form for outputs with `xi_lo < xi < xi_hi` (`xi_lo >= 0`).
/// The result stores that half and implies its conjugate mirror.
pub fn second_iterate(phi: &SparseField, t: f64, xi_lo: f64, xi_hi: f64) -> Result<SparseField> {
    if phi.half {
        return Err(Error::Domain("second_iterate expects an explicit mode set".into()));
    }
    if !(xi_lo >= 0.0 && xi_hi > xi_lo) {
        return Err(Error::Config(format!("output window ({xi_lo}, {xi_hi}) must satisfy 0 <= lo < hi")));
    }
    let l = phi.lattice;
    let ilo = (xi_lo / l.dxi).floor() as i64;
    let ihi = (xi_hi / l.dxi).ceil() as i64;
    let inside = |i: i64| {
        let xi = i as f64 * l.dxi;
        i != 0 && xi > xi_lo && xi < xi_hi
    };
    let cols = phi.columns();
    let (jmin, jmax) = phi.modes.iter().fold((i64::MAX, i64::MIN), |(a, b), m| (a.min(m.j), b.max(m.j)));
    let (jlo, nj) = if phi.modes.is_empty() { (0, 0) } else { (2 * jmin, (2 * (jmax - jmin) + 1) as usize) };
    let ni = (ihi - ilo + 1) as usize;
    if ni.saturating_mul(nj) > 1 << 28 {
        return Err(Error::Resource(format!("output window needs {ni} x {nj} cells")));
    }
    let w: Vec<f64> = phi.modes.iter().map(|m| omega_inf(m.i as f64 * l.dxi, m.j as f64 * l.deta)).collect();
    let mut out = Array2::<Complex64>::zeros((ni, nj.max(1)));
    for &(i1, a0, a1) in &cols {
        for &(i2, b0, b1) in &cols {
            let i3 = i1 + i2;
            if !inside(i3) {
                continue;
            }
            let xi3 = i3 as f64 * l.dxi;
            for a in a0..a1 {
                let (ma, wa) = (phi.modes[a], w[a]);
                for b in b0..b1 {
                    let mb = phi.modes[b];
                    let j3 = ma.j + mb.j;
                    let w3 = omega_inf(xi3, j3 as f64 * l.deta);
                    let f = duhamel_factor(t, wa + w[b] - w3);
                    out[[(i3 - ilo) as usize, (j3 - jlo) as usize]] += f * ma.c * mb.c;
                }
            }
        }
    }
    let norm = l.cell() / (2.0 * PI);
    let mut modes = Vec::new();
    for ((a, b), v) in out.indexed_iter() {
        if v.re == 0.0 && v.im == 0.0 {
            continue;
        }
        let (i, j) = (a as i64 + ilo, b as i64 + jlo);
        let (xi, eta) = (i as f64 * l.dxi, j as f64 * l.deta);
        let pre = Complex64::from_polar(1.0, t * omega_inf(xi, eta)) * Complex64::new(0.0, 0.5 * xi) * norm;
        modes.push(SparseMode { i, j, c: pre * v });
    }
    Ok(SparseField::new(l, modes, true))
}

/// Output window around `N +- delta` covering both high-low bands.
pub fn high_low_window(ce: &Counterexample) -> (f64, f64) {
    (ce.big_n - 1.5 * ce.delta, ce.big_n + 1.5 * ce.delta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    /// Largest `|Omega| / (N delta)` over the sampled pairs.
    pub c_omega: f64,
    /// Smallest `|(e^(i t Omega) - 1) / (i Omega)|` over the sampled pairs.
    pub min_duhamel: f64,
    pub samples: usize,
}

/// Samples `k1 in E_high` (`xi1 > 0`), `k2 in E_low` uniformly from the continuum
/// sets and records the resonance size and Duhamel factor.
pub fn interaction_report(big_n: f64, eps: f64, t: f64, samples: usize, seed: u64) -> InteractionReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let (delta, _) = counterexample_lattice(big_n, eps);
    let r = big_n.sqrt();
    let (mut c_omega, mut min_duhamel) = (0.0f64, f64::INFINITY);
    for _ in 0..samples {
        let x1 = big_n + 0.25 * delta * rng.gen_range(-1.0..1.0);
        let e1 = x1 * r * rng.gen_range(-1.0..1.0);
        let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let x2 = s * (delta + 0.25 * delta * rng.gen_range(-1.0..1.0));
        let e2 = x2 * r * rng.gen_range(-1.0..1.0);
        let om = omega_inf(x1, e1) + omega_inf(x2, e2) - omega_inf(x1 + x2, e1 + e2);
        c_omega = c_omega.max(om.abs() / (big_n * delta));
        min_duhamel = min_duhamel.min(duhamel_factor(t, om).norm());
    }
    InteractionReport { c_omega, min_duhamel, samples }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    #[serde(rename = "N")]
    pub big_n: f64,
    pub input_norm: f64,
    pub output_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub rows: Vec<GrowthRow>,
    pub slope: f64,
    pub input_slope: f64,
    pub predicted: f64,
    pub high_measure_ratios: Vec<f64>,
    pub low_measure_ratios: Vec<f64>,
}

/// `(1 - 1/p) - eps (1/2 + 1/(2p))`.
pub fn predicted_slope(p: f64, eps: f64) -> f64 {
    let ip = if p.is_infinite() { 0.0 } else { 1.0 / p };
    (1.0 - ip) - eps * (0.5 + 0.5 * ip)
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn growth_exponent_fit(p: f64, q: f64, ns: &[f64], eps: f64, t: f64) -> Result<GrowthFit> {
    if ns.len() < 4 {
        return Err(Error::Config(format!("need at least 4 values of N, got {}", ns.len())));
    }
    let (lo, hi) = ns.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &n| (a.min(n), b.max(n)));
    if !(hi >= 8.0 * lo) {
        return Err(Error::Config(format!("N values must span a factor of 8, got {lo}..{hi}")));
    }
    let mut rows = Vec::new();
    let (mut hr, mut lr) = (Vec::new(), Vec::new());
    for &n in ns {
        let (_, lattice) = counterexample_lattice(n, eps);
        let ce = build_counterexample(n, eps, p, lattice)?;
        let (a, b) = high_low_window(&ce);
        let out = second_iterate(&ce.phi, t, a, b)?;
        rows.push(GrowthRow { big_n: n, input_norm: ce.phi.besov_norm(p, q)?, output_norm: out.besov_norm(p, q)? });
        hr.push(ce.high_measure_ratio);
        lr.push(ce.low_measure_ratio);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.big_n.ln()).collect();
    let yo: Vec<f64> = rows.iter().map(|r| r.output_norm.ln()).collect();
    let yi: Vec<f64> = rows.iter().map(|r| r.input_norm.ln()).collect();
    Ok(GrowthFit {
        slope: ls_slope(&x, &yo),
        input_slope: ls_slope(&x, &yi),
        predicted: predicted_slope(p, eps),
        rows,
        high_measure_ratios: hr,
        low_measure_ratios: lr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Space;
    use crate::{Depth, Grid};

    #[test]
    fn trapezoid_membership() {
        let q = Trapezoid { n: 4, k: 1 };
        assert!(q.contains(16.0, 64.0));
        assert!(q.contains(-16.0, -64.0));
        assert!(!q.contains(8.0, 32.0));
        assert!(!q.contains(16.0, 16.0 * 4.0 * 1.75));
        assert_eq!(Trapezoid::covering(16.0, 64.0), vec![q]);
        assert!(Trapezoid::covering(0.0, 1.0).is_empty());
        for c in Trapezoid::covering(11.3, -7.9) {
            assert!(c.contains(11.3, -7.9));
        }
    }

    #[test]
    fn single_spike_norm() {
        let l = Lattice { dxi: 0.5, deta: 0.25 };
        let f = SparseField::new(l, vec![SparseMode { i: 32, j: 256, c: Complex64::new(3.0, 0.0) }], false);
        // xi = 16 = N, eta / xi = 4 = 1 * N^(1/2): one trapezoid only
        let mass = 3.0 * l.cell().sqrt();
        for (p, q) in [(2.0, 2.0), (1.0, 3.0), (f64::INFINITY, 2.0)] {
            let got = f.besov_norm(p, q).unwrap();
            assert!((got - 2.0 * mass).abs() < 1e-14, "{got}");
        }
    }

    #[test]
    fn blocks_partition_mass() {
        let g = Grid::new(64, 64, 20.0, 5.0).unwrap();
        let f = Field::from_fn(&g, Depth::Infinite, |x, y| (-(x * x) / 4.0 - y * y).exp() * (3.0 * x).sin());
        let ff = f.fourier();
        let area = g.cell_area();
        let modes: Vec<_> = ff
            .data
            .indexed_iter()
            .filter(|((i, _), _)| g.xi[*i] != 0.0)
            .map(|((i, j), c)| (g.xi[i], g.eta[j], c.norm_sqr() * area))
            .collect();
        let total: f64 = modes.iter().map(|m| m.2).sum();
        let d = BesovDecomposition::new(modes.into_iter(), 2.0, 2.0).unwrap();
        assert!((d.block_mass_sq() / total - 1.0).abs() < 1e-12);
        assert_eq!(d.uncovered, 0.0);
    }

    #[test]
    fn l2_l2_matches_quarter_derivative() {
        let g = Grid::new(128, 128, 40.0, 40.0).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..5 {
            let mut f = Field::zeros(&g, Depth::Infinite, Space::Fourier);
            for i in 0..g.nx {
                for j in 0..g.ny {
                    let (kx, ky) = (g.kx(i), g.ky(j));
                    if kx > 0 && kx <= 40 && ky.abs() <= 40 {
                        let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                        f.data[[i, j]] = c;
                        f.data[[g.x_slot(-kx), g.y_slot(-ky)]] = c.conj();
                    }
                }
            }
            let b = besov_norm(&f, 2.0, 2.0).unwrap();
            let h = f.map_modes(|xi, _, c| c * xi.abs().powf(0.25)).l2_norm();
            let r = b / h;
            assert!((0.8..=1.25).contains(&r), "{r}");
        }
    }

    #[test]
    fn galilean_invariance() {
        // modes at |xi| = 4 and 16 lie in one dyadic shell each; c = 4 is a
        // multiple of N^(1/2) for both and maps the lattice to itself
        let l = Lattice { dxi: 0.5, deta: 0.25 };
        let mut rng = StdRng::seed_from_u64(3);
        let mut modes = Vec::new();
        for &i in &[8i64, 32] {
            for j in -300..=300 {
                let c = Complex64::new(rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0));
                modes.push(SparseMode { i, j, c });
                modes.push(SparseMode { i: -i, j: -j, c: c.conj() });
            }
        }
        let f = SparseField::new(l, modes, false);
        let m = 8; // c = m deta / dxi = 4
        let g = f.galilean_shift(m);
        for (p, q) in [(2.0, 2.0), (1.5, 3.0), (f64::INFINITY, 1.0)] {
            let a = f.besov_norm(p, q).unwrap();
            let b = g.besov_norm(p, q).unwrap();
            assert!(((a - b) / a).abs() < 1e-10, "{p} {q}: {a} {b}");
        }
    }

    #[test]
    fn counterexample_sets() {
        let (n, eps) = (16.0, 0.1);
        let (delta, lat) = counterexample_lattice(n, eps);
        assert!((delta / n.powf(-1.1) - 1.0).abs() < 1e-2);
        let ce = build_counterexample(n, eps, 2.0, lat).unwrap();
        assert!((0.5..=2.0).contains(&ce.high_measure_ratio), "{}", ce.high_measure_ratio);
        assert!((0.5..=2.0).contains(&ce.low_measure_ratio), "{}", ce.low_measure_ratio);
        let hs: std::collections::HashSet<_> = ce.high.modes.iter().map(|m| (m.i, m.j)).collect();
        assert!(ce.low.modes.iter().all(|m| !hs.contains(&(m.i, m.j))));
        assert!(ce.phi.modes.iter().all(|m| m.c.re > 0.0 && m.c.im == 0.0));
        for f in [&ce.high, &ce.low] {
            let b = f.besov_norm(2.0, 2.0).unwrap();
            assert!((0.5..=2.0).contains(&b), "{b}");
        }
        let coarse = Lattice { dxi: lat.dxi * 2.0, deta: lat.deta };
        let e = build_counterexample(n, eps, 2.0, coarse).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
    }

    #[test]
    fn second_iterate_of_zero_and_small_time() {
        let (n, eps) = (16.0, 0.1);
        let (_, lat) = counterexample_lattice(n, eps);
        let ce = build_counterexample(n, eps, 2.0, lat).unwrap();
        let (a, b) = high_low_window(&ce);
        let zero = SparseField::new(lat, Vec::new(), false);
        assert_eq!(second_iterate(&zero, 1.0, a, b).unwrap().l2_norm(), 0.0);
        let n1 = second_iterate(&ce.phi, 1e-3, a, b).unwrap().l2_norm();
        let n2 = second_iterate(&ce.phi, 2e-3, a, b).unwrap().l2_norm();
        assert!(n1 > 0.0 && (n2 / n1 - 2.0).abs() < 1e-3, "{}", n2 / n1);
    }

    #[test]
    fn output_sits_in_translated_bands() {
        let (n, eps) = (16.0, 0.1);
        let (_, lat) = counterexample_lattice(n, eps);
        let ce = build_counterexample(n, eps, 2.0, lat).unwrap();
        let d = ce.delta;
        let out = second_iterate(&ce.phi, 1.0, n - 4.0 * d, n + 4.0 * d).unwrap();
        let (mut inside, mut total) = (0.0, 0.0);
        for m in &out.modes {
            let xi = m.i as f64 * lat.dxi;
            let w = m.c.norm_sqr();
            total += w;
            if (xi - n - d).abs() < 0.5 * d || (xi - n + d).abs() < 0.5 * d {
                inside += w;
            }
        }
        assert!(total > 0.0 && inside / total > 1.0 - 1e-12, "{}", inside / total);
    }


    #[test]
    fn interaction_bounds() {
        for n in [16.0, 128.0, 1024.0, 4096.0] {
            let r = interaction_report(n, 0.1, 1.0, 20000, 5);
            println!("N = {n}: C = {:.3}, min Duhamel factor = {:.3}", r.c_omega, r.min_duhamel);
            assert!(r.c_omega <= crate::constants::HIGH_LOW_RESONANCE, "{r:?}");
            if n >= 1024.0 {
                assert!(r.min_duhamel >= 0.5, "{r:?}");
            }
        }
    }

    #[test]
    fn duhamel_factor_limits() {
        assert_eq!(duhamel_factor(2.0, 0.0), Complex64::new(2.0, 0.0));
        let w = 1e-4;
        let exact = (Complex64::from_polar(1.0, 2.0 * w) - 1.0) / Complex64::new(0.0, w);
        assert!((duhamel_factor(2.0, w) - exact).norm() < 1e-9);
    }

    #[test]
    fn predicted_slopes() {
        assert!((predicted_slope(2.0, 0.1) - 0.425).abs() < 1e-12);
        assert!((predicted_slope(f64::INFINITY, 0.1) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn fit_guards() {
        assert!(growth_exponent_fit(2.0, 2.0, &[16.0, 32.0, 64.0], 0.1, 1.0).is_err());
        assert!(growth_exponent_fit(2.0, 2.0, &[16.0, 32.0, 64.0, 64.0], 0.1, 1.0).is_err());
    }
}
