//! Littlewood-Paley bands, the z coordinate, the hyperbolic/elliptic split,
//! the vector fields and the weighted norms built from them.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::solver::outside_mass_fraction;
use crate::spectral::{plan, Field, Space};
use crate::symbols::{m_depth, m_inverse_depth, Depth};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// C-infinity step, 0 for s <= 0 and 1 for s >= 1.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

/// Frequency bands `N = 2^(delta k)` with a smooth partition of unity in `log2|xi|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LPLadder {
    pub delta: f64,
    /// Band exponents `k`, ascending.
    pub ks: Vec<i64>,
}

impl LPLadder {
    /// All bands that meet the nonzero x-wavenumbers of the grid.
    pub fn for_grid(grid: &crate::Grid, delta: f64) -> Result<LPLadder> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {delta}")));
        }
        let lo = 2.0 * std::f64::consts::PI / grid.lx;
        let hi = std::f64::consts::PI * grid.nx as f64 / grid.lx;
        let k0 = (lo.log2() / delta).floor() as i64 - 1;
        let k1 = (hi.log2() / delta).ceil() as i64 + 1;
        Ok(LPLadder { delta, ks: (k0..=k1).collect() })
    }

    pub fn band(&self, k: i64) -> f64 {
        (self.delta * k as f64).exp2()
    }

    pub fn bands(&self) -> Vec<f64> {
        self.ks.iter().map(|&k| self.band(k)).collect()
    }

    /// Weight of band `k` at wavenumber `xi`; supported in `2^-delta N < |xi| < 2^delta N`.
    pub fn weight(&self, k: i64, xi: f64) -> f64 {
        if xi == 0.0 {
            return 0.0;
        }
        let r = xi.abs().log2() / self.delta - k as f64;
        smooth_step(r + 1.0) - smooth_step(r)
    }

    /// Band exponent whose weight peaks at `xi`.
    pub fn band_of(&self, xi: f64) -> i64 {
        (xi.abs().log2() / self.delta).round() as i64
    }
}

/// `P_N u` with `N = 2^(delta k)`.
pub fn lp_project(u: &Field, ladder: &LPLadder, k: i64) -> Field {
    u.map_modes(|xi, _, c| c * ladder.weight(k, xi))
}

/// Keeps `xi > 0` (`sign > 0`) or `xi < 0` (`sign < 0`).
pub fn pm_project(u: &Field, sign: i32) -> Field {
    u.map_modes(|xi, _, c| if (sign > 0 && xi > 0.0) || (sign < 0 && xi < 0.0) { c } else { ZERO })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZDirection {
    ToZ,
    FromZ,
}

/// `u(x, y) -> u(x - y^2/(4t), y)` (and back) by a per-row phase in the x-transform.
pub fn z_transform(u: &Field, t: f64, dir: ZDirection) -> Result<Field> {
    if !(t > 0.0) {
        return domain(format!("z_transform needs t > 0, got {t}"));
    }
    let g = &u.grid;
    let p = u.physical();
    let fwd = plan(g.nx, false);
    let inv = plan(g.nx, true);
    let sign = match dir {
        ZDirection::ToZ => -1.0,
        ZDirection::FromZ => 1.0,
    };
    let mut rows = p.data.t().as_standard_layout().into_owned();
    let mut buf = vec![ZERO; g.nx];
    for (j, mut row) in rows.outer_iter_mut().enumerate() {
        let a = g.y(j).powi(2) / (4.0 * t);
        buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
        fwd.process(&mut buf);
        for (i, b) in buf.iter_mut().enumerate() {
            *b *= Complex64::from_polar(1.0 / g.nx as f64, sign * g.xi[i] * a);
        }
        inv.process(&mut buf);
        row.iter_mut().zip(buf.iter()).for_each(|(v, b)| *v = *b);
    }
    let mut out = p;
    out.data = rows.t().as_standard_layout().into_owned();
    Ok(out)
}

/// `z = -(x + y^2/(4t))`.
pub fn z_coord(x: f64, y: f64, t: f64) -> f64 {
    -(x + y * y / (4.0 * t))
}

/// Smallest hyperbolic band at time `t`.
pub fn hyperbolic_threshold(h: Depth, t: f64) -> f64 {
    match h {
        Depth::Infinite => t.powf(-0.5),
        Depth::Finite(_) => t.powf(-1.0 / 3.0),
    }
}

/// `chi_N^hyp(v)`: 1 for `v / m(N)` in `[1/2, 2]`, 0 outside `[1/4, 4]`, cubic in `log2 v` between.
pub fn chi_hyp(v: f64, m_n: f64) -> f64 {
    if !(v > 0.0) || !(m_n > 0.0) {
        return 0.0;
    }
    let s = (v / m_n).log2().abs();
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let x = 2.0 - s;
        x * x * (3.0 - 2.0 * x)
    }
}

#[derive(Clone, Debug)]
pub struct HypBand {
    pub k: i64,
    pub n: f64,
    pub plus: Field,
    pub minus: Field,
}

#[derive(Clone, Debug)]
pub struct SplitField {
    pub hyp: Vec<HypBand>,
    pub ell: Field,
    pub t: f64,
}

impl SplitField {
    /// Sum of all hyperbolic pieces, physical space.
    pub fn hyp_total(&self) -> Field {
        let mut acc = Field::zeros(&self.ell.grid, self.ell.h, Space::Physical).with_time(self.ell.t);
        for b in &self.hyp {
            acc = acc.axpy(1.0, &b.plus).axpy(1.0, &b.minus);
        }
        acc
    }
}

pub fn hyperbolic_elliptic_split(u: &Field, t: f64, ladder: &LPLadder) -> Result<SplitField> {
    if !(t >= 1.0) {
        return domain(format!("the hyperbolic/elliptic split needs t >= 1, got {t}"));
    }
    let g = u.grid.clone();
    let p = u.physical();
    let threshold = hyperbolic_threshold(u.h, t);
    let (xs, ys) = (g.xs(), g.ys());
    let mut hyp = Vec::new();
    let mut rest = p.clone();
    for &k in &ladder.ks {
        let n = ladder.band(k);
        if n < threshold {
            continue;
        }
        let m_n = m_depth(u.h, n);
        let chi = Array2::from_shape_fn((g.nx, g.ny), |(i, j)| chi_hyp(z_coord(xs[i], ys[j], t) / t, m_n));
        if chi.iter().all(|&c| c == 0.0) {
            continue;
        }
        let un = lp_project(u, ladder, k);
        let mut pieces = [pm_project(&un, 1).physical(), pm_project(&un, -1).physical()];
        for f in pieces.iter_mut() {
            f.data.zip_mut_with(&chi, |v, c| *v *= *c);
            rest = rest.sub(f);
        }
        let [plus, minus] = pieces;
        hyp.push(HypBand { k, n, plus, minus });
    }
    Ok(SplitField { hyp, ell: rest, t })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VectorField {
    Ly,
    Lxh,
    J,
    Lz,
    LzPlus,
    LzMinus,
}

pub(crate) fn require_mean_zero(u: &Field) -> Result<()> {
    let f = u.fourier();
    let zero: f64 = f.data.row(0).iter().map(|c| c.norm_sqr()).sum();
    let total: f64 = f.data.iter().map(|c| c.norm_sqr()).sum();
    if zero > 1e-20 * total.max(f64::MIN_POSITIVE) {
        return domain("operator involves the inverse x-derivative; field must be x-mean-zero");
    }
    Ok(())
}

fn ly(u: &Field, t: f64) -> Field {
    let yu = u.mul_fn(|_, y| Complex64::new(y, 0.0));
    yu.axpy(-2.0 * t, &u.map_modes(|xi, eta, c| if xi == 0.0 { ZERO } else { c * eta / xi }))
}

fn lxh(u: &Field, t: f64) -> Field {
    let h = u.h;
    let xu = u.mul_fn(|x, _| Complex64::new(x, 0.0));
    let grad = u.map_modes(|xi, eta, c| {
        if xi == 0.0 {
            ZERO
        } else {
            let r = eta / xi;
            c * (m_depth(h, xi) + r * r)
        }
    });
    xu.axpy(t, &grad)
}

fn lz(u: &Field, t: f64) -> Field {
    let h = u.h;
    let zu = u.mul_fn(|x, y| Complex64::new(z_coord(x, y, t), 0.0));
    zu.axpy(-t, &u.map_modes(|xi, _, c| c * m_depth(h, xi)))
}

/// `m^-1(z/t)`, taken as 0 where `z <= 0`.
fn lz_pm(u: &Field, t: f64, sign: f64) -> Result<Field> {
    let h = u.h;
    let g = &u.grid;
    let (xs, ys) = (g.xs(), g.ys());
    let mut w = Array2::zeros((g.nx, g.ny));
    for i in 0..g.nx {
        for j in 0..g.ny {
            let v = z_coord(xs[i], ys[j], t) / t;
            if v > 0.0 {
                w[[i, j]] = m_inverse_depth(h, v)?;
            }
        }
    }
    let mut a = u.physical();
    a.data.zip_mut_with(&w, |c, m| *c *= *m);
    Ok(a.axpy(1.0, &u.dx().scale(sign).map_modes(|_, _, c| c * I)))
}

/// Applies one of the vector fields at time `t`; output in Fourier space.
pub fn apply_vector_field(u: &Field, t: f64, which: VectorField) -> Result<Field> {
    if u.space != Space::Fourier {
        return domain("apply_vector_field expects a Fourier-space field");
    }
    let out = match which {
        VectorField::Ly => {
            require_mean_zero(u)?;
            ly(u, t)
        }
        VectorField::Lxh => {
            require_mean_zero(u)?;
            lxh(u, t)
        }
        VectorField::J => {
            require_mean_zero(u)?;
            lxh(&u.dx(), t).axpy(1.0, &ly(&u.dy(), t))
        }
        VectorField::Lz | VectorField::LzPlus | VectorField::LzMinus if !(t > 0.0) => {
            return domain(format!("L_z needs t > 0, got {t}"));
        }
        VectorField::Lz => lz(u, t),
        VectorField::LzPlus => lz_pm(u, t, 1.0)?,
        VectorField::LzMinus => lz_pm(u, t, -1.0)?,
    };
    Ok(out.fourier())
}

fn depth_weights(h: Depth) -> [f64; 4] {
    match h {
        Depth::Infinite => [1.0; 4],
        Depth::Finite(h) => [h.powf(-0.5), h.powf(7.5), h.powf(-4.5), h.powf(-0.5)],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    /// Squared L2 norms before the depth weights.
    pub terms: [f64; 4],
    /// Mass fraction outside the central half-domain; weights are unreliable when large.
    pub edge_fraction: f64,
}

/// X_h norm at time `t`; at `t = 0` this is the initial-data norm.
pub fn x_norm_report(u: &Field, t: f64, h: Depth) -> Result<NormReport> {
    let f = u.fourier();
    require_mean_zero(&f)?;
    let ux = f.dx();
    let ly_ux = apply_vector_field(&ux, t, VectorField::Ly)?;
    let l2 = apply_vector_field(&ly_ux, t, VectorField::Ly)?;
    let j = apply_vector_field(&f, t, VectorField::J)?;
    let d4 = ux.dx().dx().dx();
    let terms = [f.mass(), d4.mass(), l2.mass(), j.mass()];
    let w = depth_weights(h);
    let value = terms.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>().sqrt();
    Ok(NormReport { value, terms, edge_fraction: outside_mass_fraction(u) })
}

pub fn x_norm(u: &Field, t: f64, h: Depth) -> Result<f64> {
    Ok(x_norm_report(u, t, h)?.value)
}

/// `(|u|^2 + |d_x^k u|^2 + |L_y^2 u_x|^2)^(1/2)` at the field's own time.
pub fn z_norm(u: &Field, k: u32) -> Result<f64> {
    let f = u.fourier();
    require_mean_zero(&f)?;
    let dk = f.map_modes(|xi, _, c| c * (I * xi).powu(k));
    let ux = f.dx();
    let l2 = apply_vector_field(&apply_vector_field(&ux, u.t, VectorField::Ly)?, u.t, VectorField::Ly)?;
    Ok((f.mass() + dk.mass() + l2.mass()).sqrt())
}

fn jb(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// Pointwise weights turning each bound into `|piece| * weight <= C ||u||_X`.
fn bound_weights(h: Depth, t: f64, v: f64) -> [f64; 4] {
    let (hyp, hyp_x) = if v > 0.0 {
        match h {
            Depth::Infinite => (t * v.powf(0.25) * jb(v), t * v.powf(-0.75) * jb(v)),
            Depth::Finite(_) => (t * v.powf(0.375) * jb(v).powf(0.875), t * v.powf(-0.125) * jb(v).powf(0.375)),
        }
    } else {
        (0.0, 0.0)
    };
    let (ell, ell_x) = match h {
        Depth::Infinite => {
            let a = jb(t.sqrt() * v);
            (t.powf(0.875) * a.powf(0.75) / (1.0 + a.ln()), t.powf(1.125) * jb(v / t.sqrt()).powf(5.0 / 12.0))
        }
        Depth::Finite(_) => {
            let a = jb(t.powf(2.0 / 3.0) * v);
            (
                t.powf(0.75) * a.powf(0.75) / (1.0 + a.ln()),
                t.powf(13.0 / 12.0) * a.powf(0.25) * jb(t.sqrt() * v).powf(-0.25) * jb(v / t.sqrt()).powf(5.0 / 12.0),
            )
        }
    };
    [hyp, hyp_x, ell, ell_x]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub t: f64,
    pub x_norm: f64,
    pub hyp: f64,
    pub hyp_x: f64,
    pub ell: f64,
    pub ell_x: f64,
    pub elliptic_gain: f64,
}

impl BoundReport {
    pub fn ratios(&self) -> [f64; 5] {
        [self.hyp, self.hyp_x, self.ell, self.ell_x, self.elliptic_gain]
    }
}

/// Weighted sup ratios of the split pieces against `||u||_X`.
pub fn pointwise_bound_report(u: &Field, t: f64, split: &SplitField) -> Result<BoundReport> {
    if !(t >= 1.0) {
        return domain(format!("pointwise bounds need t >= 1, got {t}"));
    }
    let xn = x_norm(u, t, u.h)?;
    if xn == 0.0 {
        return Ok(BoundReport { t, x_norm: 0.0, hyp: 0.0, hyp_x: 0.0, ell: 0.0, ell_x: 0.0, elliptic_gain: 0.0 });
    }
    let hyp = split.hyp_total();
    let pieces = [hyp.physical(), hyp.dx().physical(), split.ell.physical(), split.ell.dx().physical()];
    let g = &u.grid;
    let (xs, ys) = (g.xs(), g.ys());
    let mut best = [0.0f64; 4];
    for i in 0..g.nx {
        for j in 0..g.ny {
            let w = bound_weights(u.h, t, z_coord(xs[i], ys[j], t) / t);
            for q in 0..4 {
                best[q] = best[q].max(pieces[q].data[[i, j]].norm() * w[q]);
            }
        }
    }
    let gain_power = match u.h {
        Depth::Infinite => 0.5,
        Depth::Finite(_) => 1.0 / 3.0,
    };
    let gain = split.ell.dx().l2_norm() * t.powf(gain_power) / xn;
    Ok(BoundReport {
        t,
        x_norm: xn,
        hyp: best[0] / xn,
        hyp_x: best[1] / xn,
        ell: best[2] / xn,
        ell_x: best[3] / xn,
        elliptic_gain: gain,
    })
}

/// Sup-norm over L2 products for the Sobolev inequality and its Holder variant with alpha = 1/4.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevRatios {
    pub sobolev: f64,
    pub holder: f64,
}

/// Discrete `C^{0,1/4}` seminorm over short and dyadic offsets.
fn holder_seminorm(p: &Field, alpha: f64) -> f64 {
    let g = &p.grid;
    let mut offsets = Vec::new();
    for a in -4i64..=4 {
        for b in -4i64..=4 {
            if (a, b) != (0, 0) {
                offsets.push((a, b));
            }
        }
    }
    let mut s = 8i64;
    while s < (g.nx.max(g.ny) / 2) as i64 {
        for (a, b) in [(s, 0), (0, s), (s, s), (s, -s)] {
            offsets.push((a, b));
        }
        s *= 2;
    }
    let mut best: f64 = 0.0;
    for &(a, b) in &offsets {
        let d = ((a as f64 * g.dx()).powi(2) + (b as f64 * g.dy()).powi(2)).sqrt();
        let scale = d.powf(-alpha);
        for i in 0..g.nx {
            let i2 = g.x_slot(i as i64 + a);
            for j in 0..g.ny {
                let j2 = g.y_slot(j as i64 + b);
                best = best.max((p.data[[i, j]] - p.data[[i2, j2]]).norm() * scale);
            }
        }
    }
    best
}

pub fn sobolev_check(f: &Field) -> Result<SobolevRatios> {
    let four = f.fourier();
    require_mean_zero(&four)?;
    let n0 = four.l2_norm();
    let n1 = four.dx().l2_norm();
    let n2 = four.dy().dy().l2_norm();
    let denom = n0.powf(0.25) * n1.sqrt() * n2.powf(0.25);
    if !(denom > 0.0) {
        return domain("Sobolev ratio has a vanishing denominator");
    }
    let p = four.physical();
    let sup = p.data.iter().fold(0.0f64, |a, c| a.max(c.norm()));
    let alpha = 0.25;
    let holder_denom = (n0.powf(0.25 - alpha) * n1.powf(alpha) + n0.powf(0.25 - alpha / 2.0) * n2.powf(alpha / 2.0)) * n1.sqrt() * n2.powf(0.25);
    Ok(SobolevRatios { sobolev: sup / denom, holder: holder_seminorm(&p, alpha) / holder_denom })
}

/// Endpoints of `Sigma_t = (t^-1/12, t^1/12)`.
pub fn sigma_interval(t: f64) -> Result<(f64, f64)> {
    if !(t >= 1.0) {
        return domain(format!("Sigma_t is defined for t >= 1, got {t}"));
    }
    Ok((t.powf(-1.0 / 12.0), t.powf(1.0 / 12.0)))
}

/// Grid points with `z/t` in `Sigma_t`.
pub fn sigma_mask(grid: &crate::Grid, t: f64) -> Result<Array2<bool>> {
    let (lo, hi) = sigma_interval(t)?;
    let (xs, ys) = (grid.xs(), grid.ys());
    Ok(Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
        let v = z_coord(xs[i], ys[j], t) / t;
        lo < v && v < hi
    }))
}
