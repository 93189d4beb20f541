//! Integrating-factor RK4 evolution of `u_t = i omega(D) u + (i xi / 2) (u^2)^`,
//! conserved quantities and the scaling / Galilean / reflection maps.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::spectral::{Field, Grid, Space, SymbolTable};
use crate::symbols::Depth;

pub const BLOWUP_THRESHOLD: f64 = 1e12;
pub const WRAP_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub dealias: bool,
    pub snapshot_every: usize,
    pub h: Depth,
    /// Switch off the quadratic term (linear runs through the same integrator).
    pub nonlinear: bool,
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64, h: Depth) -> SolverConfig {
        SolverConfig { dt, t_end, dealias: true, snapshot_every: 1, h, nonlinear: true }
    }

    fn check(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt != 0.0) {
            return Err(Error::Config(format!("dt must be nonzero and finite, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::Config(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub sup_ux: f64,
    pub outside_mass_fraction: f64,
}

/// `amp exp(-(x/s)^2 - (y/s)^2) cos(k0 x)`, dealiased, with the `xi = 0` modes removed.
pub fn gaussian_datum(grid: &Grid, h: Depth, amp: f64, s: f64, k0: f64) -> Field {
    let u = Field::from_fn(grid, h, |x, y| amp * (-(x / s).powi(2) - (y / s).powi(2)).exp() * (k0 * x).cos());
    let mut f = crate::spectral::dealias(&u);
    f.pin_zero_modes();
    f
}

/// Default step: 0.5 / max |omega| over the modes kept by the 2/3 rule.
pub fn default_dt(grid: &Grid, h: Depth) -> f64 {
    0.5 / SymbolTable::new(grid, h).max_retained_omega()
}

/// Precomputed tables for repeated steps of a fixed size.
pub struct Stepper {
    pub table: SymbolTable,
    pub dt: f64,
    pub dealias: bool,
    pub nonlinear: bool,
    half: Array2<Complex64>,
    full: Array2<Complex64>,
    mask: Array2<f64>,
}

impl Stepper {
    pub fn new(grid: &Grid, h: Depth, dt: f64, dealias: bool, nonlinear: bool) -> Stepper {
        Self::from_table(SymbolTable::new(grid, h), dt, dealias, nonlinear)
    }

    pub fn from_table(table: SymbolTable, dt: f64, dealias: bool, nonlinear: bool) -> Stepper {
        let g = &table.grid;
        let half = table.omega.mapv(|w| Complex64::from_polar(1.0, 0.5 * dt * w));
        let full = half.mapv(|e| e * e);
        let mask = Array2::from_shape_fn((g.nx, g.ny), |(i, j)| {
            if g.xi[i] == 0.0 || (dealias && !g.retained(i, j)) {
                0.0
            } else {
                1.0
            }
        });
        Stepper { table, dt, dealias, nonlinear, half, full, mask }
    }

    pub fn with_dt(&self, dt: f64) -> Stepper {
        Self::from_table(self.table.clone(), dt, self.dealias, self.nonlinear)
    }

    /// (i xi / 2) P (P u)^2 in Fourier space.
    fn quadratic(&self, u: &Array2<Complex64>) -> Array2<Complex64> {
        let g = &self.table.grid;
        let mut f = Field {
            grid: g.clone(),
            space: Space::Fourier,
            data: Zip::from(u).and(&self.mask).map_collect(|c, m| c * m),
            t: 0.0,
            h: self.table.h,
        };
        f = f.to_physical().expect("fourier");
        f.data.mapv_inplace(|c| Complex64::new(c.re * c.re, 0.0));
        let mut q = f.to_fourier().expect("physical").data;
        let xi = &g.xi;
        q.indexed_iter_mut()
            .for_each(|((i, j), v)| *v *= Complex64::new(0.0, 0.5 * xi[i]) * self.mask[[i, j]]);
        q
    }

    /// One IF-RK4 step.
    pub fn step(&self, u: &Field) -> Result<Field> {
        if u.space != Space::Fourier {
            return domain("step expects a Fourier-space field");
        }
        if u.grid != self.table.grid || u.h != self.table.h {
            return domain("field does not match the stepper grid or depth");
        }
        let (e, e2) = (&self.half, &self.full);
        let dt = self.dt;
        let mut out = u.clone();
        if self.nonlinear {
            let u0 = &u.data;
            let k1 = self.quadratic(u0);
            let a = Zip::from(u0).and(&k1).and(e).map_collect(|&x, &k, &e| e * (x + 0.5 * dt * k));
            let k2 = self.quadratic(&a);
            let b = Zip::from(u0).and(&k2).and(e).map_collect(|&x, &k, &e| e * x + 0.5 * dt * k);
            let k3 = self.quadratic(&b);
            let c = Zip::from(u0)
                .and(&k3)
                .and(e)
                .and(e2)
                .map_collect(|&x, &k, &e, &e2| e2 * x + dt * e * k);
            let k4 = self.quadratic(&c);
            let mid = &k2 + &k3;
            // U_new = E2 U + dt/6 (E2 k1 + 2E (k2 + k3) + k4)
            Zip::from(&mut out.data)
                .and(&k1)
                .and(&mid)
                .and(&k4)
                .and(e)
                .and(e2)
                .for_each(|x, &k1, &mid, &k4, &e, &e2| {
                    *x = e2 * *x + dt / 6.0 * (e2 * k1 + 2.0 * e * mid + k4);
                });
        } else {
            Zip::from(&mut out.data).and(e2).for_each(|x, &e2| *x *= e2);
        }
        out.pin_zero_modes();
        out.t = u.t + dt;
        if out.data.iter().any(|c| !(c.norm() <= BLOWUP_THRESHOLD)) {
            return Err(Error::BlowUp { t: out.t, last: Box::new(u.clone()) });
        }
        Ok(out)
    }
}

/// One step with a freshly built stepper.
pub fn step(u: &Field, cfg: &SolverConfig) -> Result<Field> {
    cfg.check()?;
    Stepper::new(&u.grid, cfg.h, cfg.dt, cfg.dealias, cfg.nonlinear).step(&u.fourier())
}

pub fn mass(u: &Field) -> f64 {
    u.mass()
}

/// Quadratic energy density in Fourier space, `-omega / xi`.
fn energy_symbol(h: Depth, xi: f64, eta: f64) -> f64 {
    let r = eta / xi;
    match h {
        Depth::Infinite => -xi.abs() + r * r,
        Depth::Finite(h) => {
            let hx = h * xi;
            let xcoth = if hx.abs() < 1e-4 { 1.0 + hx * hx / 3.0 } else { hx / hx.tanh() };
            -xcoth / h + 1.0 / h + r * r
        }
    }
}

/// E = int u T^-1 u_x + h^-1 u^2 + (dx^-1 dy u)^2 - u^3 / 3.
pub fn energy(u: &Field) -> Result<f64> {
    let f = u.fourier();
    let zero_mass: f64 = f.data.row(0).iter().map(|c| c.norm_sqr()).sum();
    let total: f64 = f.data.iter().map(|c| c.norm_sqr()).sum();
    if zero_mass > 1e-20 * total.max(f64::MIN_POSITIVE) {
        return domain("energy needs an x-mean-zero field");
    }
    let g = &u.grid;
    let mut quad = 0.0;
    for i in 1..g.nx {
        for j in 0..g.ny {
            quad += energy_symbol(u.h, g.xi[i], g.eta[j]) * f.data[[i, j]].norm_sqr();
        }
    }
    let p = f.to_physical()?;
    let cubic: f64 = p.data.iter().map(|c| c.re * c.re * c.re).sum();
    Ok(g.cell_area() * (quad - cubic / 3.0))
}

/// Mass fraction outside |x| < Lx/4, |y| < Ly/4.
pub fn outside_mass_fraction(u: &Field) -> f64 {
    let p = u.physical();
    let g = &u.grid;
    let (mut inside, mut total) = (0.0, 0.0);
    for i in 0..g.nx {
        let xin = g.x(i).abs() < 0.25 * g.lx;
        for j in 0..g.ny {
            let w = p.data[[i, j]].norm_sqr();
            total += w;
            if xin && g.y(j).abs() < 0.25 * g.ly {
                inside += w;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        ((total - inside) / total).clamp(0.0, 1.0)
    }
}

pub fn diagnostics(u: &Field) -> Result<DiagnosticsRecord> {
    Ok(DiagnosticsRecord {
        t: u.t,
        mass: mass(u),
        energy: energy(u)?,
        sup_ux: u.dx().sup_abs(),
        outside_mass_fraction: outside_mass_fraction(u),
    })
}

#[derive(Clone, Debug)]
pub struct EvolveOutput {
    pub last: Field,
    pub records: Vec<DiagnosticsRecord>,
    /// Set when the outside-mass fraction exceeded the wrap threshold.
    pub wrapped: bool,
    pub steps: usize,
    pub dt_used: f64,
}

/// Number of uniform steps covering `span` with steps no longer than `dt`.
pub fn step_count(span: f64, dt: f64) -> usize {
    let n = span / dt.abs();
    let r = n.round();
    if (n - r).abs() < 1e-9 * n.max(1.0) {
        r as usize
    } else {
        n.ceil() as usize
    }
}

/// Evolves `u0` to `t0 + t_end`, handing every `snapshot_every`-th state to `sink`.
pub fn evolve(u0: &Field, cfg: &SolverConfig, sink: &mut dyn FnMut(&Field, &DiagnosticsRecord)) -> Result<EvolveOutput> {
    cfg.check()?;
    let mut u = u0.fourier();
    u.h = cfg.h;
    u.pin_zero_modes();
    let n = step_count(cfg.t_end, cfg.dt);
    let dt = if n == 0 { cfg.dt } else { cfg.t_end / n as f64 * cfg.dt.signum() };
    let stepper = Stepper::new(&u.grid, cfg.h, dt, cfg.dealias, cfg.nonlinear);
    let every = cfg.snapshot_every.max(1);
    let mut records = Vec::new();
    let mut wrapped = false;
    let mut emit = |u: &Field, records: &mut Vec<DiagnosticsRecord>, wrapped: &mut bool| -> Result<()> {
        let d = diagnostics(u)?;
        *wrapped |= d.outside_mass_fraction > WRAP_THRESHOLD;
        sink(u, &d);
        records.push(d);
        Ok(())
    };
    emit(&u, &mut records, &mut wrapped)?;
    for k in 1..=n {
        u = stepper.step(&u)?;
        if k % every == 0 || k == n {
            emit(&u, &mut records, &mut wrapped)?;
        }
    }
    Ok(EvolveOutput { last: u, records, wrapped, steps: n, dt_used: dt })
}

/// Evolves without diagnostics to `t_target` (absolute time), with steps at most `dt`.
pub fn evolve_to(u0: &Field, t_target: f64, dt: f64, h: Depth, nonlinear: bool) -> Result<Field> {
    let mut u = u0.fourier();
    u.h = h;
    u.pin_zero_modes();
    let span = t_target - u.t;
    if span == 0.0 {
        return Ok(u);
    }
    let n = step_count(span.abs(), dt);
    let stepper = Stepper::new(&u.grid, h, span / n as f64, true, nonlinear);
    for _ in 0..n {
        u = stepper.step(&u)?;
    }
    u.t = t_target;
    Ok(u)
}

/// v(t, x, y) = lam u(lam^2 t, lam x, lam^{3/2} y) on the rescaled grid, depth h / lam.
pub fn apply_scaling(u: &Field, lam: f64) -> Result<Field> {
    if !(lam > 0.0 && lam.is_finite()) {
        return domain(format!("scaling factor must be positive, got {lam}"));
    }
    let g = &u.grid;
    let grid = Grid::new(g.nx, g.ny, g.lx / lam, g.ly / lam.powf(1.5))?;
    let h = match u.h {
        Depth::Infinite => Depth::Infinite,
        Depth::Finite(h) => Depth::Finite(h / lam),
    };
    let p = u.physical();
    Ok(Field { grid, space: Space::Physical, data: p.data.mapv(|c| c * lam), t: u.t / (lam * lam), h })
}

/// Galilean shift u(t, x + c y - c^2 t, y - 2 c t) as the Fourier-space map
/// `w(xi, eta) = e^{i c^2 t xi} e^{-2 i c t eta} u(xi, eta - c xi)`.
pub fn apply_galilean(u: &Field, c: f64) -> Result<Field> {
    let g = &u.grid;
    let shear = c * g.ly / g.lx;
    let n = shear.round();
    if (shear - n).abs() > 1e-9 * shear.abs().max(1.0) {
        return domain(format!("c Ly / Lx must be an integer, got {shear}"));
    }
    let n = n as i64;
    let f = u.fourier();
    let mut out = Field::zeros(g, u.h, Space::Fourier);
    out.t = u.t;
    let t = u.t;
    for i in 0..g.nx {
        let kx = g.kx(i);
        for j in 0..g.ny {
            let src = g.y_slot(g.ky(j) - n * kx);
            let phase = c * c * t * g.xi[i] - 2.0 * c * t * g.eta[j];
            out.data[[i, j]] = f.data[[i, src]] * Complex64::from_polar(1.0, phase);
        }
    }
    Ok(out)
}

/// (R u)(x, y) = u(-x, y).
pub fn reflect_x(u: &Field) -> Field {
    let f = u.fourier();
    let g = &u.grid;
    let mut out = f.clone();
    for i in 0..g.nx {
        let src = g.x_slot(-g.kx(i));
        for j in 0..g.ny {
            out.data[[i, j]] = f.data[[src, j]];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::propagate_linear;
    use std::f64::consts::PI;

    fn packet(grid: &Grid, h: Depth, amp: f64) -> Field {
        let mut f = Field::from_fn(grid, h, |x, y| amp * (-(x / 2.0).powi(2) - (y / 2.0).powi(2)).exp() * (1.5 * x).cos())
            .fourier();
        f.pin_zero_modes();
        crate::spectral::dealias(&f)
    }

    fn dist(a: &Field, b: &Field) -> f64 {
        a.fourier().sub(&b.fourier()).l2_norm()
    }

    #[test]
    fn zero_field_stays_zero() {
        let g = Grid::new(16, 16, 20.0, 20.0).unwrap();
        let z = Field::zeros(&g, Depth::Finite(1.0), Space::Fourier);
        let s = step(&z, &SolverConfig::new(0.01, 1.0, Depth::Finite(1.0))).unwrap();
        assert!(s.l2_norm() == 0.0);
        assert!((s.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn linear_switch_matches_propagator() {
        let g = Grid::new(32, 32, 20.0, 20.0).unwrap();
        let h = Depth::Finite(1.0);
        let u = packet(&g, h, 0.3);
        let mut cfg = SolverConfig::new(0.05, 1.0, h);
        cfg.nonlinear = false;
        let a = step(&u, &cfg).unwrap();
        let b = propagate_linear(&u, &SymbolTable::new(&g, h), 0.05).unwrap();
        assert!(dist(&a, &b) < 1e-14);
    }

    #[test]
    fn nonlinear_departure_is_quadratic_in_amplitude() {
        let g = Grid::new(32, 32, 20.0, 20.0).unwrap();
        let h = Depth::Finite(1.0);
        let tab = SymbolTable::new(&g, h);
        let dt = 0.05;
        let cfg = SolverConfig::new(dt, 1.0, h);
        let dev = |eps: f64| {
            let u = packet(&g, h, eps);
            dist(&step(&u, &cfg).unwrap(), &propagate_linear(&u, &tab, dt).unwrap())
        };
        let r = dev(1e-2) / dev(5e-3);
        assert!((r - 4.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn mass_and_energy_examples() {
        let g = Grid::new(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let u = Field::from_fn(&g, Depth::Finite(1.0), |x, _| x.cos());
        assert!((mass(&u) - 2.0 * PI * PI).abs() < 1e-10);
        let z = Field::zeros(&g, Depth::Finite(1.0), Space::Physical);
        assert_eq!(energy(&z).unwrap(), 0.0);
        let c = Field::from_fn(&g, Depth::Finite(1.0), |_, _| 1.0);
        assert!(energy(&c).is_err());
    }

    #[test]
    fn energy_matches_quadrature() {
        // u = a cos x cos y: all quadratic terms are explicit
        let g = Grid::new(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let a = 0.1;
        let u = Field::from_fn(&g, Depth::Finite(1.0), |x, y| a * x.cos() * y.cos());
        // T^-1 d_x cos x = -coth(1) cos x, dx^-1 dy u = -a cos... squared mean 1/4
        let area = 4.0 * PI * PI;
        let expected = area * a * a * 0.25 * (-1.0 / 1f64.tanh() + 1.0 + 1.0);
        assert!((energy(&u).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn reality_and_mean_zero_preserved() {
        let g = Grid::new(32, 32, 20.0, 20.0).unwrap();
        let h = Depth::Finite(1.0);
        let mut u = packet(&g, h, 0.5);
        let s = Stepper::new(&g, h, 0.02, true, true);
        for _ in 0..5 {
            u = s.step(&u).unwrap();
        }
        assert!(u.hermitian_defect() < 1e-13);
        assert!(u.zero_modes_vanish());
    }

    #[test]
    fn blow_up_is_reported_with_last_state() {
        let g = Grid::new(16, 16, 20.0, 20.0).unwrap();
        let h = Depth::Finite(1.0);
        let u = packet(&g, h, 1e13);
        match step(&u, &SolverConfig::new(0.1, 1.0, h)) {
            Err(Error::BlowUp { last, .. }) => assert_eq!(last.t, 0.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn evolve_zero_time_returns_input() {
        let g = Grid::new(16, 16, 20.0, 20.0).unwrap();
        let h = Depth::Infinite;
        let u = packet(&g, h, 0.1);
        let out = evolve(&u, &SolverConfig::new(0.1, 0.0, h), &mut |_, _| {}).unwrap();
        assert_eq!(out.steps, 0);
        assert!(dist(&out.last, &u) == 0.0);
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn scaling_identity_and_linear_commutation() {
        let g = Grid::new(32, 32, 30.0, 30.0).unwrap();
        let h = Depth::Infinite;
        let u = packet(&g, h, 0.1);
        let same = apply_scaling(&u, 1.0).unwrap();
        assert!(dist(&same, &u) < 1e-14);
        let lam = 1.3;
        let t = 0.7;
        let a = propagate_linear(&apply_scaling(&u, lam).unwrap().fourier(), &SymbolTable::new(&apply_scaling(&u, lam).unwrap().grid, h), t / (lam * lam)).unwrap();
        let b = apply_scaling(&propagate_linear(&u, &SymbolTable::new(&g, h), t).unwrap(), lam).unwrap();
        assert!(dist(&a, &b) < 1e-10 * u.l2_norm().max(1.0));
    }

    #[test]
    fn galilean_identity_and_linear_commutation() {
        let g = Grid::new(64, 128, 60.0, 120.0).unwrap();
        let h = Depth::Finite(1.0);
        let mut u = Field::from_fn(&g, h, |x, y| (-(x / 6.0).powi(2) - (y / 6.0).powi(2)).exp() * x.cos()).fourier();
        u.pin_zero_modes();
        assert!(dist(&apply_galilean(&u, 0.0).unwrap(), &u) == 0.0);
        assert!(apply_galilean(&u, 0.3).is_err());
        let tab = SymbolTable::new(&g, h);
        let t = 1.1;
        let a = propagate_linear(&apply_galilean(&u, 0.5).unwrap(), &tab, t).unwrap();
        let b = apply_galilean(&propagate_linear(&u, &tab, t).unwrap(), 0.5).unwrap();
        assert!(dist(&a, &b) < 1e-12, "{}", dist(&a, &b));
    }

    #[test]
    fn reflection_reverses_time() {
        let g = Grid::new(32, 32, 20.0, 20.0).unwrap();
        let h = Depth::Finite(1.0);
        let u = packet(&g, h, 0.3);
        let fwd = Stepper::new(&g, h, 0.05, true, true);
        let bwd = fwd.with_dt(-0.05);
        let a = fwd.step(&reflect_x(&u)).unwrap();
        let b = reflect_x(&bwd.step(&u).unwrap());
        assert!(dist(&a, &b) < 1e-14);
    }
}
