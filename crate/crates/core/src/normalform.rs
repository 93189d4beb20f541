//! Bilinear Fourier multipliers by direct convolution over retained modes,
//! the scattering correction and the pulled-back scattering profile.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::decomposition::{require_mean_zero, LPLadder};
use crate::error::{domain, Error, Result};
use crate::spectral::{propagate_linear, Field, Space, SymbolTable};
use crate::symbols::{b_energy, omega_raw, Depth, FreqPair};

/// Largest number of modes per input accepted by `bilinear_apply`.
pub const MAX_MODES: usize = 1 << 16;

/// Spacing of the ladder that the scattering band edges snap to.
pub const SCATTER_DELTA: f64 = 0.25;

pub type CustomSymbol = Arc<dyn Fn(FreqPair) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum SymbolKind {
    /// `k_sym / Omega`.
    EnergyNF,
    /// `(xi1 + xi2) / (2 Omega)`.
    ScatterNF,
    Custom(CustomSymbol),
}

impl fmt::Debug for SymbolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolKind::EnergyNF => write!(f, "EnergyNF"),
            SymbolKind::ScatterNF => write!(f, "ScatterNF"),
            SymbolKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BilinearSymbol {
    pub kind: SymbolKind,
    pub h: Depth,
    /// Only modes with `xi > 0` enter either argument.
    pub positive_only: bool,
}

impl BilinearSymbol {
    pub fn energy(h: Depth) -> BilinearSymbol {
        BilinearSymbol { kind: SymbolKind::EnergyNF, h, positive_only: false }
    }

    pub fn scatter(h: Depth) -> BilinearSymbol {
        BilinearSymbol { kind: SymbolKind::ScatterNF, h, positive_only: true }
    }

    pub fn custom(h: Depth, f: impl Fn(FreqPair) -> f64 + Send + Sync + 'static) -> BilinearSymbol {
        BilinearSymbol { kind: SymbolKind::Custom(Arc::new(f)), h, positive_only: false }
    }
}

#[derive(Clone, Copy)]
struct Mode {
    kx: i64,
    ky: i64,
    xi: f64,
    eta: f64,
    c: Complex64,
}

fn modes(f: &Field, positive_only: bool) -> Vec<Mode> {
    let g = &f.grid;
    let mut out = Vec::new();
    for i in 0..g.nx {
        let xi = g.xi[i];
        if xi == 0.0 || (positive_only && xi < 0.0) {
            continue;
        }
        for j in 0..g.ny {
            let c = f.data[[i, j]];
            if c.re != 0.0 || c.im != 0.0 {
                out.push(Mode { kx: g.kx(i), ky: g.ky(j), xi, eta: g.eta[j], c });
            }
        }
    }
    out
}

/// Axis dispersion `omega(xi, 0)` on the lattice `k * 2 pi / Lx`, `|k| <= nx`.
struct AxisTable {
    offset: i64,
    values: Vec<f64>,
}

impl AxisTable {
    fn new(h: Depth, nx: usize, lx: f64) -> AxisTable {
        let n = nx as i64;
        let dxi = 2.0 * std::f64::consts::PI / lx;
        let values = (-n..=n)
            .map(|k| if k == 0 { 0.0 } else { omega_raw(h, k as f64 * dxi, 0.0) })
            .collect();
        AxisTable { offset: n, values }
    }

    fn at(&self, k: i64) -> f64 {
        self.values[(k + self.offset) as usize]
    }
}

/// `B[f, g]^(k) = sum_{k1 + k2 = k} b(k1, k2) f(k1) g(k2)` over the Fourier
/// coefficients, with lattice sums wrapped onto the grid.
pub fn bilinear_apply(sym: &BilinearSymbol, f: &Field, g: &Field) -> Result<Field> {
    if f.space != Space::Fourier || g.space != Space::Fourier {
        return domain("bilinear_apply expects Fourier-space fields");
    }
    if f.grid != g.grid {
        return domain("bilinear_apply needs both fields on one grid");
    }
    require_mean_zero(f)?;
    require_mean_zero(g)?;
    let fm = modes(f, sym.positive_only);
    let gm = modes(g, sym.positive_only);
    for (name, m) in [("first", &fm), ("second", &gm)] {
        if m.len() > MAX_MODES {
            return Err(Error::Resource(format!(
                "{name} argument has {} modes after cutoffs, limit {MAX_MODES}",
                m.len()
            )));
        }
    }
    let grid = &f.grid;
    let axis = AxisTable::new(sym.h, grid.nx, grid.lx);
    let mut out = Array2::<Complex64>::zeros((grid.nx, grid.ny));
    for a in &fm {
        let sa = a.eta / a.xi;
        for b in &gm {
            let kx = a.kx + b.kx;
            if kx == 0 {
                continue;
            }
            let pair = FreqPair::new(a.xi, a.eta, b.xi, b.eta);
            let s = match &sym.kind {
                SymbolKind::ScatterNF => {
                    let x3 = a.xi + b.xi;
                    let gap = sa - b.eta / b.xi;
                    let om = axis.at(a.kx) + axis.at(b.kx) - axis.at(kx) - a.xi * b.xi * gap * gap / x3;
                    if !(om.abs() >= 1e-300) {
                        return domain(format!("resonance underflow at {pair:?}"));
                    }
                    x3 / (2.0 * om)
                }
                SymbolKind::EnergyNF => b_energy(sym.h, pair)?,
                SymbolKind::Custom(c) => c(pair),
            };
            if !s.is_finite() {
                return domain(format!("symbol not finite at {pair:?}"));
            }
            out[[grid.x_slot(kx), grid.y_slot(a.ky + b.ky)]] += s * a.c * b.c;
        }
    }
    let norm = 1.0 / ((grid.nx * grid.ny) as f64).sqrt();
    out.mapv_inplace(|c| c * norm);
    Ok(Field { grid: grid.clone(), space: Space::Fourier, data: out, t: f.t, h: f.h })
}

/// Exact and snapped edges of the band `t^(-1/6) < xi <= t^(1/12)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEdges {
    pub lo_exact: f64,
    pub hi_exact: f64,
    pub lo: f64,
    pub hi: f64,
    pub delta: f64,
}

impl BandEdges {
    pub fn at(t: f64) -> BandEdges {
        let ladder = LPLadder { delta: SCATTER_DELTA, ks: Vec::new() };
        let lo_exact = t.powf(-1.0 / 6.0);
        let hi_exact = t.powf(1.0 / 12.0);
        BandEdges {
            lo_exact,
            hi_exact,
            lo: ladder.band(ladder.band_of(lo_exact)),
            hi: ladder.band(ladder.band_of(hi_exact)),
            delta: SCATTER_DELTA,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScatterCorrection {
    /// `u - 2 Re B[w+, w+]`, Fourier space.
    pub corrected: Field,
    /// `2 Re B[w+, w+]`, Fourier space.
    pub correction: Field,
    /// `||B[w+, w+]||_2`.
    pub b_norm: f64,
    pub band: BandEdges,
}

/// Positive-frequency part of `u` in the snapped band at time `t`.
pub fn scatter_band(u: &Field, t: f64) -> (Field, BandEdges) {
    let band = BandEdges::at(t);
    let w = u.map_modes(|xi, _, c| if xi > band.lo && xi <= band.hi { c } else { Complex64::new(0.0, 0.0) });
    (w, band)
}

pub fn scatter_correction(u: &Field, t: f64) -> Result<ScatterCorrection> {
    if !(t >= 1.0) {
        return domain(format!("scatter_correction needs t >= 1, got {t}"));
    }
    let (w, band) = scatter_band(u, t);
    let b = bilinear_apply(&BilinearSymbol::scatter(u.h), &w, &w)?;
    let b_norm = b.l2_norm();
    let mut re = b.to_physical()?;
    re.data.mapv_inplace(|c| Complex64::new(2.0 * c.re, 0.0));
    let mut correction = re.to_fourier()?;
    correction.pin_zero_modes();
    let corrected = u.fourier().sub(&correction);
    Ok(ScatterCorrection { corrected, correction, b_norm, band })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub t: f64,
    /// `||pullback_j - pullback_{j-1}||_2`; absent on the first row.
    pub cauchy_diff: Option<f64>,
    pub corr_norm: f64,
    pub pullback_mass: f64,
}

#[derive(Clone, Debug)]
pub struct ScatterProfile {
    pub rows: Vec<ScatterRow>,
    pub bands: Vec<BandEdges>,
    /// Last pullback.
    pub w: Field,
    pub mass_ratio: f64,
    /// Cauchy differences strictly decreasing.
    pub monotone: bool,
}

impl ScatterProfile {
    pub fn cauchy_diffs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.cauchy_diff).collect()
    }
}

/// Pulls each snapshot back by `S(-t_j)`, after the normal-form correction when
/// `nonlinear` is set, and measures the Cauchy differences of the pullbacks.
pub fn scattering_profile(u0: &Field, snapshots: &[Field], nonlinear: bool) -> Result<ScatterProfile> {
    if snapshots.len() < 2 {
        return domain("scattering_profile needs at least two snapshots");
    }
    for p in snapshots.windows(2) {
        if !(p[1].t >= std::f64::consts::SQRT_2 * p[0].t * (1.0 - 1e-12)) {
            return domain(format!("snapshot times {} -> {} grow by less than 2^(1/2)", p[0].t, p[1].t));
        }
    }
    let grid = &snapshots[0].grid;
    let h = snapshots[0].h;
    let table = SymbolTable::new(grid, h);
    let mut rows: Vec<ScatterRow> = Vec::with_capacity(snapshots.len());
    let mut bands = Vec::with_capacity(snapshots.len());
    let mut prev: Option<Field> = None;
    for u in snapshots {
        if u.grid != *grid || u.h != h {
            return domain("snapshots must share grid and depth");
        }
        let t = u.t;
        let (state, corr_norm, band) = if nonlinear {
            let c = scatter_correction(u, t)?;
            (c.corrected, c.correction.l2_norm(), c.band)
        } else {
            (u.fourier(), 0.0, BandEdges::at(t.max(1.0)))
        };
        let mut pb = propagate_linear(&state.with_time(0.0), &table, -t)?;
        pb.t = 0.0;
        let cauchy_diff = prev.as_ref().map(|p| pb.sub(p).l2_norm());
        rows.push(ScatterRow { t, cauchy_diff, corr_norm, pullback_mass: pb.mass() });
        bands.push(band);
        prev = Some(pb);
    }
    let w = prev.expect("at least two snapshots");
    let d: Vec<f64> = rows.iter().filter_map(|r| r.cauchy_diff).collect();
    let monotone = d.windows(2).all(|p| p[1] < p[0]);
    let mass_ratio = w.l2_norm() / u0.l2_norm();
    Ok(ScatterProfile { rows, bands, w, mass_ratio, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::x_norm;
    use crate::symbols::{b_scatter, resonance};
    use crate::Grid;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_field(g: &Grid, h: Depth, seed: u64, kmax: i64) -> Field {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut f = Field::zeros(g, h, Space::Fourier);
        for i in 0..g.nx {
            for j in 0..g.ny {
                let (kx, ky) = (g.kx(i), g.ky(j));
                if kx > 0 && kx <= kmax && ky.abs() <= kmax {
                    let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    f.data[[i, j]] = c;
                    f.data[[g.x_slot(-kx), g.y_slot(-ky)]] = c.conj();
                }
            }
        }
        f
    }

    #[test]
    fn unit_symbol_is_the_product() {
        let g = Grid::new(32, 32, 10.0, 12.0).unwrap();
        let h = Depth::Finite(1.0);
        let f = random_field(&g, h, 1, 7);
        let q = random_field(&g, h, 2, 7);
        let b = bilinear_apply(&BilinearSymbol::custom(h, |_| 1.0), &f, &q).unwrap();
        let mut p = f.product(&q).to_fourier().unwrap();
        p.pin_zero_modes();
        let err = p.sub(&b).data.iter().fold(0.0f64, |a, c| a.max(c.norm()));
        let scale = p.data.iter().fold(0.0f64, |a, c| a.max(c.norm()));
        assert!(err < 1e-12 * scale.max(1.0), "{err}");
    }

    #[test]
    fn energy_form_is_symmetric() {
        let g = Grid::new(16, 16, 8.0, 8.0).unwrap();
        let h = Depth::Finite(1.0);
        let f = random_field(&g, h, 3, 5);
        let q = random_field(&g, h, 4, 5);
        let s = BilinearSymbol::energy(h);
        let a = bilinear_apply(&s, &f, &q).unwrap();
        let b = bilinear_apply(&s, &q, &f).unwrap();
        let err = a.sub(&b).data.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        assert!(err < 1e-12 * a.l2_norm().max(1.0), "{err}");
    }

    #[test]
    fn single_mode_scatter_example() {
        let g = Grid::new(16, 16, 2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI).unwrap();
        let h = Depth::Infinite;
        let mut f = Field::zeros(&g, h, Space::Fourier);
        f.data[[1, 0]] = Complex64::new(1.0, 0.0);
        let b = bilinear_apply(&BilinearSymbol::scatter(h), &f, &f).unwrap();
        let want = -0.5 / 16.0;
        assert!((b.data[[2, 0]].re - want).abs() < 1e-15);
        let rest: f64 = b.data.iter().map(|c| c.norm_sqr()).sum::<f64>() - b.data[[2, 0]].norm_sqr();
        assert!(rest.abs() < 1e-30);
    }

    #[test]
    fn positive_inputs_give_positive_outputs() {
        let g = Grid::new(32, 16, 20.0, 10.0).unwrap();
        let h = Depth::Finite(1.0);
        let f = random_field(&g, h, 5, 6);
        let b = bilinear_apply(&BilinearSymbol::scatter(h), &f, &f).unwrap();
        for ((i, _), c) in b.data.indexed_iter() {
            if g.xi[i] <= 0.0 {
                assert_eq!(c.norm(), 0.0);
            }
        }
        assert!(b.l2_norm() > 0.0);
    }

    #[test]
    fn tabulated_resonance_matches_closed_form() {
        let g = Grid::new(64, 32, 30.0, 20.0).unwrap();
        for h in [Depth::Finite(1.0), Depth::Finite(2.5), Depth::Infinite] {
            let f = random_field(&g, h, 6, 12);
            let fast = bilinear_apply(&BilinearSymbol::scatter(h), &f, &f).unwrap();
            let slow = bilinear_apply(
                &BilinearSymbol { kind: SymbolKind::Custom(Arc::new(move |p| b_scatter(h, p).unwrap())), h, positive_only: true },
                &f,
                &f,
            )
            .unwrap();
            let err = fast.sub(&slow).l2_norm() / slow.l2_norm();
            assert!(err < 1e-12, "{h:?}: {err}");
        }
    }

    #[test]
    fn resonance_times_symbol_identity() {
        let mut rng = StdRng::seed_from_u64(7);
        for h in [Depth::Finite(1.0), Depth::Finite(0.3), Depth::Infinite] {
            for _ in 0..2000 {
                let p = FreqPair::new(
                    rng.gen_range(0.01..20.0),
                    rng.gen_range(-30.0..30.0),
                    rng.gen_range(0.01..20.0),
                    rng.gen_range(-30.0..30.0),
                );
                let lhs = resonance(h, p).unwrap() * b_scatter(h, p).unwrap();
                let rhs = 0.5 * (p.xi1 + p.xi2);
                assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs(), "{p:?}");
            }
        }
    }

    #[test]
    fn energy_symbol_crude_bound() {
        let h = Depth::Finite(1.0);
        let mut rng = StdRng::seed_from_u64(8);
        let mut c: f64 = 0.0;
        for _ in 0..20000 {
            let x1: f64 = rng.gen_range(0.01..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let x2: f64 = rng.gen_range(2.0..50.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let p = FreqPair::new(x1, x1 * rng.gen_range(-3.0..3.0), x2, x2 * rng.gen_range(-3.0..3.0));
            let b = b_energy(h, p).unwrap();
            let bound = x2.abs() / (1.0 + x2 * x2).sqrt();
            c = c.max(b.abs() / bound);
        }
        println!("energy normal-form crude-bound constant: {c:.4}");
        assert!(c.is_finite() && c <= crate::constants::ENERGY_NF_BOUND, "{c}");
    }

    #[test]
    fn mode_guard() {
        let g = Grid::new(512, 256, 100.0, 100.0).unwrap();
        let h = Depth::Finite(1.0);
        let f = Field::zeros(&g, h, Space::Fourier).map_modes(|xi, _, _| {
            if xi == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            }
        });
        let e = bilinear_apply(&BilinearSymbol::custom(h, |_| 1.0), &f, &f).unwrap_err();
        assert!(matches!(e, Error::Resource(_)), "{e}");
    }

    #[test]
    fn scatter_correction_of_zero() {
        let g = Grid::new(32, 32, 40.0, 40.0).unwrap();
        let u = Field::zeros(&g, Depth::Finite(1.0), Space::Fourier);
        let c = scatter_correction(&u, 10.0).unwrap();
        assert_eq!(c.corrected.l2_norm(), 0.0);
        assert_eq!(c.b_norm, 0.0);
        assert!(scatter_correction(&u, 0.5).is_err());
    }

    #[test]
    fn band_edges_snap_to_ladder() {
        for t in [1.0, 10.0, 100.0, 160.0] {
            let b = BandEdges::at(t);
            for (e, s) in [(b.lo_exact, b.lo), (b.hi_exact, b.hi)] {
                let r = (s / e).log2().abs();
                assert!(r <= 0.5 * SCATTER_DELTA + 1e-12, "{t}");
                let k = s.log2() / SCATTER_DELTA;
                assert!((k - k.round()).abs() < 1e-12);
            }
        }
    }

    fn gaussian(g: &Grid, h: Depth, amp: f64) -> Field {
        let u = Field::from_fn(g, h, |x, y| amp * (-(x / 4.0).powi(2) - (y / 4.0).powi(2)).exp() * (1.5 * x).cos());
        let mut f = crate::spectral::dealias(&u);
        f.pin_zero_modes();
        f
    }

    #[test]
    fn correction_size_constant() {
        let g = Grid::new(128, 128, 160.0, 160.0).unwrap();
        let h = Depth::Finite(1.0);
        let u0 = gaussian(&g, h, 1.0);
        let table = SymbolTable::new(&g, h);
        let mut worst: f64 = 0.0;
        for t in [10.0, 20.0, 40.0] {
            let u = propagate_linear(&u0, &table, t).unwrap();
            let c = scatter_correction(&u, t).unwrap();
            let x = x_norm(&u, t, h).unwrap();
            let ratio = c.b_norm / (t.powf(-2.0 / 3.0) * x * x);
            println!("t = {t}: ||B|| = {:.3e}, X = {x:.3e}, C = {ratio:.4e}", c.b_norm);
            worst = worst.max(ratio);
        }
        assert!(worst.is_finite() && worst > 0.0 && worst <= crate::constants::SCATTER_CORRECTION, "{worst}");
    }

    #[test]
    fn linear_pullbacks_are_constant() {
        let g = Grid::new(64, 64, 80.0, 80.0).unwrap();
        let h = Depth::Finite(1.0);
        let u0 = gaussian(&g, h, 0.05);
        let table = SymbolTable::new(&g, h);
        let snaps: Vec<Field> = (0..9)
            .map(|j| propagate_linear(&u0, &table, 10.0 * (0.5 * j as f64).exp2()).unwrap())
            .collect();
        let p = scattering_profile(&u0, &snaps, false).unwrap();
        for d in p.cauchy_diffs() {
            assert!(d < 1e-10, "{d}");
        }
        assert!((p.mass_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_spacing_is_checked() {
        let g = Grid::new(16, 16, 10.0, 10.0).unwrap();
        let u = Field::zeros(&g, Depth::Finite(1.0), Space::Fourier);
        let s = [u.clone().with_time(10.0), u.clone().with_time(12.0)];
        assert!(scattering_profile(&u, &s, false).is_err());
    }
}
