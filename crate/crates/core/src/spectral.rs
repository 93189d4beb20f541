//! Periodic grids, fields, the unitary transform pair, Fourier multipliers,
//! dealiasing, the linear propagator and the oscillatory kernel.
//!
//! Fourier coefficients are stored in FFT order and refer to the centred
//! coordinates `x in [-Lx/2, Lx/2)`, `y in [-Ly/2, Ly/2)`, so that a shift of
//! the sampling origin never leaks into phase-sensitive maps.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{domain, Error, Result};
use crate::symbols::{m_depth, omega_raw, Depth};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// x-wavenumbers in FFT order.
    pub xi: Vec<f64>,
    /// y-wavenumbers in FFT order.
    pub eta: Vec<f64>,
}

fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
        for n in [nx, ny] {
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::Config(format!("mode counts must be powers of two >= 8, got {n}")));
            }
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Config(format!("domain lengths must be positive, got {lx} x {ly}")));
        }
        let xi = (0..nx).map(|i| 2.0 * PI * signed_index(i, nx) as f64 / lx).collect();
        let eta = (0..ny).map(|j| 2.0 * PI * signed_index(j, ny) as f64 / ly).collect();
        Ok(Grid { nx, ny, lx, ly, xi, eta })
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn x(&self, i: usize) -> f64 {
        -0.5 * self.lx + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        -0.5 * self.ly + j as f64 * self.dy()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.ny).map(|j| self.y(j)).collect()
    }

    /// Signed lattice index of x-mode `i`.
    pub fn kx(&self, i: usize) -> i64 {
        signed_index(i, self.nx)
    }

    pub fn ky(&self, j: usize) -> i64 {
        signed_index(j, self.ny)
    }

    /// FFT-order position of the signed x-index `k` (wrapped).
    pub fn x_slot(&self, k: i64) -> usize {
        k.rem_euclid(self.nx as i64) as usize
    }

    pub fn y_slot(&self, k: i64) -> usize {
        k.rem_euclid(self.ny as i64) as usize
    }

    /// Wavenumbers sorted from `-nx/2` upwards.
    pub fn xi_sorted(&self) -> Vec<f64> {
        let mut v = self.xi.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    pub fn eta_sorted(&self) -> Vec<f64> {
        let mut v = self.eta.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    /// True for modes kept by the 2/3 rule.
    pub fn retained(&self, i: usize, j: usize) -> bool {
        3 * self.kx(i).unsigned_abs() as usize <= self.nx && 3 * self.ky(j).unsigned_abs() as usize <= self.ny
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Physical,
    Fourier,
}

#[derive(Clone, Debug)]
pub struct Field {
    pub grid: Grid,
    pub space: Space,
    /// `nx x ny` samples, first axis along x.
    pub data: Array2<Complex64>,
    pub t: f64,
    pub h: Depth,
}

pub(crate) type Plan = Arc<dyn Fft<f64>>;

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Plan>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

pub(crate) fn plan(n: usize, inverse: bool) -> Plan {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Unnormalized 2-D transform in place.
fn fft2(data: &mut Array2<Complex64>, inverse: bool) {
    let (nx, ny) = data.dim();
    let rows = plan(ny, inverse);
    let cols = plan(nx, inverse);
    {
        let buf = data.as_slice_mut().expect("standard layout");
        rows.process(buf);
    }
    let mut tr = data.t().as_standard_layout().into_owned();
    cols.process(tr.as_slice_mut().expect("standard layout"));
    data.assign(&tr.t());
}

fn checkerboard(i: usize, j: usize) -> f64 {
    if (i + j) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl Field {
    pub fn zeros(grid: &Grid, h: Depth, space: Space) -> Field {
        Field {
            grid: grid.clone(),
            space,
            data: Array2::zeros((grid.nx, grid.ny)),
            t: 0.0,
            h,
        }
    }

    pub fn from_fn(grid: &Grid, h: Depth, f: impl Fn(f64, f64) -> f64) -> Field {
        let xs = grid.xs();
        let ys = grid.ys();
        let data = Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| Complex64::new(f(xs[i], ys[j]), 0.0));
        Field { grid: grid.clone(), space: Space::Physical, data, t: 0.0, h }
    }

    pub fn from_real(grid: &Grid, h: Depth, values: &Array2<f64>) -> Result<Field> {
        if values.dim() != (grid.nx, grid.ny) {
            return Err(Error::Config("sample array shape does not match grid".into()));
        }
        Ok(Field {
            grid: grid.clone(),
            space: Space::Physical,
            data: values.mapv(|v| Complex64::new(v, 0.0)),
            t: 0.0,
            h,
        })
    }

    pub fn with_time(mut self, t: f64) -> Field {
        self.t = t;
        self
    }

    fn same_shape(&self, data: Array2<Complex64>, space: Space) -> Field {
        Field { grid: self.grid.clone(), space, data, t: self.t, h: self.h }
    }

    pub fn to_fourier(&self) -> Result<Field> {
        if self.space != Space::Physical {
            return domain("to_fourier expects a physical-space field");
        }
        let n = ((self.grid.nx * self.grid.ny) as f64).sqrt();
        let mut d = self.data.clone();
        fft2(&mut d, false);
        d.indexed_iter_mut().for_each(|((i, j), v)| *v *= checkerboard(i, j) / n);
        Ok(self.same_shape(d, Space::Fourier))
    }

    pub fn to_physical(&self) -> Result<Field> {
        if self.space != Space::Fourier {
            return domain("to_physical expects a Fourier-space field");
        }
        let n = ((self.grid.nx * self.grid.ny) as f64).sqrt();
        let mut d = self.data.clone();
        d.indexed_iter_mut().for_each(|((i, j), v)| *v *= checkerboard(i, j) / n);
        fft2(&mut d, true);
        Ok(self.same_shape(d, Space::Physical))
    }

    /// Fourier representation, converting if needed.
    pub fn fourier(&self) -> Field {
        match self.space {
            Space::Fourier => self.clone(),
            Space::Physical => self.to_fourier().expect("physical"),
        }
    }

    pub fn physical(&self) -> Field {
        match self.space {
            Space::Physical => self.clone(),
            Space::Fourier => self.to_physical().expect("fourier"),
        }
    }

    /// Real parts of the physical samples.
    pub fn real_values(&self) -> Array2<f64> {
        self.physical().data.mapv(|c| c.re)
    }

    /// L2 norm with respect to dx dy on the torus.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.data.iter().map(|c| c.norm_sqr()).sum();
        (s * self.grid.cell_area()).sqrt()
    }

    pub fn mass(&self) -> f64 {
        let n = self.l2_norm();
        n * n
    }

    pub fn sup_abs(&self) -> f64 {
        self.physical().data.iter().fold(0.0, |a, c| a.max(c.norm()))
    }

    /// Pointwise map over Fourier modes `(xi, eta, value)`.
    pub fn map_modes(&self, f: impl Fn(f64, f64, Complex64) -> Complex64) -> Field {
        let g = self.fourier();
        let mut d = g.data;
        let (xi, eta) = (&self.grid.xi, &self.grid.eta);
        d.indexed_iter_mut().for_each(|((i, j), v)| *v = f(xi[i], eta[j], *v));
        self.same_shape(d, Space::Fourier)
    }

    /// Multiplies every mode with xi = 0 by zero.
    pub fn pin_zero_modes(&mut self) {
        assert_eq!(self.space, Space::Fourier);
        self.data.row_mut(0).fill(Complex64::new(0.0, 0.0));
    }

    pub fn zero_modes_vanish(&self) -> bool {
        self.fourier().data.row(0).iter().all(|c| c.norm() == 0.0)
    }

    pub fn axpy(&self, a: f64, other: &Field) -> Field {
        let o = if other.space == self.space {
            other.clone()
        } else if self.space == Space::Fourier {
            other.fourier()
        } else {
            other.physical()
        };
        let mut d = self.data.clone();
        Zip::from(&mut d).and(&o.data).for_each(|x, &y| *x += a * y);
        self.same_shape(d, self.space)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, a: f64) -> Field {
        self.same_shape(self.data.mapv(|c| c * a), self.space)
    }

    pub fn dx(&self) -> Field {
        self.map_modes(|xi, _, c| c * I * xi)
    }

    pub fn dy(&self) -> Field {
        self.map_modes(|_, eta, c| c * I * eta)
    }

    /// Principal-value inverse of d/dx (zero on xi = 0).
    pub fn dx_inv(&self) -> Field {
        self.map_modes(|xi, _, c| if xi == 0.0 { Complex64::new(0.0, 0.0) } else { c / (I * xi) })
    }

    /// Largest deviation from `data(-k) = conj(data(k))`.
    pub fn hermitian_defect(&self) -> f64 {
        let f = self.fourier();
        let g = &self.grid;
        let mut worst: f64 = 0.0;
        for i in 0..g.nx {
            for j in 0..g.ny {
                let a = f.data[[i, j]];
                let b = f.data[[g.x_slot(-g.kx(i)), g.y_slot(-g.ky(j))]];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }

    /// Physical-space product of two fields (no dealiasing).
    pub fn product(&self, other: &Field) -> Field {
        let a = self.physical();
        let b = other.physical();
        let d = Zip::from(&a.data).and(&b.data).map_collect(|x, y| x * y);
        self.same_shape(d, Space::Physical)
    }

    /// Multiplies the physical samples by a function of position.
    pub fn mul_fn(&self, f: impl Fn(f64, f64) -> Complex64) -> Field {
        let mut a = self.physical();
        let xs = self.grid.xs();
        let ys = self.grid.ys();
        a.data.indexed_iter_mut().for_each(|((i, j), v)| *v *= f(xs[i], ys[j]));
        a
    }
}

/// Per-mode tables for a grid and depth.
#[derive(Clone, Debug)]
pub struct SymbolTable {
    pub grid: Grid,
    pub h: Depth,
    pub omega: Array2<f64>,
    pub little_m: Vec<f64>,
    pub dx_inv: Vec<Complex64>,
}

impl SymbolTable {
    pub fn new(grid: &Grid, h: Depth) -> SymbolTable {
        let omega = Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
            let xi = grid.xi[i];
            // the x-Nyquist column is its own mirror image, so oddness forces 0
            if xi == 0.0 || 2 * i == grid.nx {
                0.0
            } else {
                omega_raw(h, xi, grid.eta[j])
            }
        });
        let little_m = grid.xi.iter().map(|&x| m_depth(h, x)).collect();
        let dx_inv = grid
            .xi
            .iter()
            .map(|&x| if x == 0.0 { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, -1.0 / x) })
            .collect();
        SymbolTable { grid: grid.clone(), h, omega, little_m, dx_inv }
    }

    /// Largest |omega| over modes retained by the 2/3 rule.
    pub fn max_retained_omega(&self) -> f64 {
        let g = &self.grid;
        let mut w: f64 = 0.0;
        for i in 0..g.nx {
            for j in 0..g.ny {
                if g.retained(i, j) {
                    w = w.max(self.omega[[i, j]].abs());
                }
            }
        }
        w
    }
}

/// Pointwise product with a per-mode symbol.
pub fn apply_multiplier(f: &Field, symbol: &Array2<Complex64>) -> Result<Field> {
    if f.space != Space::Fourier {
        return domain("apply_multiplier expects a Fourier-space field");
    }
    if symbol.dim() != f.data.dim() {
        return Err(Error::Config("symbol shape does not match field".into()));
    }
    let mut g = f.clone();
    Zip::from(&mut g.data).and(symbol).for_each(|v, s| *v *= s);
    Ok(g)
}

/// Zeros modes with |j| > nx/3 or |l| > ny/3.
pub fn dealias(f: &Field) -> Field {
    let mut g = f.fourier();
    let grid = f.grid.clone();
    g.data.indexed_iter_mut().for_each(|((i, j), v)| {
        if !grid.retained(i, j) {
            *v = Complex64::new(0.0, 0.0);
        }
    });
    g
}

/// exp(i dt omega) on every mode; xi = 0 modes are set to zero.
pub fn propagate_linear(f: &Field, table: &SymbolTable, dt: f64) -> Result<Field> {
    if f.space != Space::Fourier {
        return domain("propagate_linear expects a Fourier-space field");
    }
    if table.grid != f.grid || table.h != f.h {
        return domain("symbol table was built for a different grid or depth");
    }
    let mut g = f.clone();
    Zip::from(&mut g.data).and(&table.omega).for_each(|v, &w| *v *= Complex64::from_polar(1.0, dt * w));
    g.pin_zero_modes();
    g.t = f.t + dt;
    Ok(g)
}

/// `sup |<D_x>^(-1/2) f|` over the grid.
pub fn dispersive_sup(f: &Field) -> f64 {
    f.fourier().map_modes(|xi, _, c| c / (1.0 + xi * xi).powf(0.25)).sup_abs()
}

// Smooth partition: 1 on [0, 1], 0 beyond 2.
fn smooth_cutoff(r: f64) -> f64 {
    fn f(x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            (-1.0 / x).exp()
        }
    }
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let a = f(2.0 - r);
        a / (a + f(r - 1.0))
    }
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_3),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_3),
];

fn gauss_panels(f: &dyn Fn(f64) -> Complex64, a: f64, b: f64, panels: usize) -> Complex64 {
    let w = (b - a) / panels as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * w;
        for &(x, wt) in GL8.iter() {
            acc += f(c + 0.5 * w * x) * wt;
        }
    }
    acc * (0.5 * w)
}

/// One-sided integral `int_0^inf sqrt(xi) a(xi) e^{i theta(xi)} chi(xi / cutoff) d xi`
/// with `xi = s^2` to remove the square-root endpoint behaviour.
fn half_line_integral(
    theta: &dyn Fn(f64) -> f64,
    amp: &dyn Fn(f64) -> Complex64,
    cutoff: f64,
    tol: f64,
) -> Result<Complex64> {
    let eval = |r: f64, panels: usize| {
        let g = |s: f64| {
            let xi = s * s;
            amp(xi) * Complex64::from_polar(2.0 * s * s * smooth_cutoff(xi / r), theta(xi))
        };
        gauss_panels(&g, 0.0, (2.0 * r).sqrt(), panels)
    };
    let refine = |r: f64| -> (Complex64, f64) {
        let mut panels = 64;
        let mut prev = eval(r, panels);
        loop {
            panels *= 2;
            let cur = eval(r, panels);
            let err = (cur - prev).norm();
            if err < 0.1 * tol || panels >= 1 << 20 {
                return (cur, err);
            }
            prev = cur;
        }
    };
    let mut r = cutoff;
    let (mut prev, _) = refine(r);
    let mut est = f64::INFINITY;
    for _ in 0..8 {
        r *= 2.0;
        let (cur, qerr) = refine(r);
        est = (cur - prev).norm() + qerr;
        prev = cur;
        if est < tol {
            return Ok(cur);
        }
    }
    Err(Error::Accuracy { value: prev, estimate: est, tol })
}

/// k(t, x) = (2 pi)^{-1/2} p.v. int |xi|^{1/2} e^{i t (xi^2 coth xi - xi) + i x xi} d xi,
/// evaluated as twice the real part of the half-line integral.
pub fn kernel_oscillatory(t: f64, x: f64, cutoff: f64, tol: f64) -> Result<Complex64> {
    if !(t > 0.0) {
        return domain("kernel needs t > 0");
    }
    let h = Depth::Finite(1.0);
    let theta = |xi: f64| t * omega_raw(h, xi, 0.0) + x * xi;
    let amp = |_: f64| Complex64::new(1.0, 0.0);
    let j = half_line_integral(&theta, &amp, cutoff, 0.25 * tol * (2.0 * PI).sqrt())?;
    Ok(Complex64::new(2.0 * j.re / (2.0 * PI).sqrt(), 0.0))
}

/// Convolution kernel of the depth-1 propagator at (t, x, y). The transverse
/// Gaussian integral contributes `(pi |xi| / t)^{1/2} e^{-i pi/4 sgn xi}` and
/// shifts x by y^2/(4t), leaving `(2 pi)^{-1} (2t)^{-1/2}` times a phase-shifted `k`.
pub fn kernel_propagator(t: f64, x: f64, y: f64, cutoff: f64, tol: f64) -> Result<Complex64> {
    if !(t > 0.0) {
        return domain("kernel needs t > 0");
    }
    let h = Depth::Finite(1.0);
    let xs = x + y * y / (4.0 * t);
    let theta = |xi: f64| t * omega_raw(h, xi, 0.0) + xs * xi - 0.25 * PI;
    let amp = |_: f64| Complex64::new(1.0, 0.0);
    let scale = (2.0 * t).sqrt() * (2.0 * PI).powf(1.5);
    let j = half_line_integral(&theta, &amp, cutoff, 0.25 * tol * scale)?;
    Ok(Complex64::new(2.0 * j.re / scale, 0.0))
}
