//! Axial two-body dynamics under trap and Coulomb forces.
//!
//! Particles a and b each feel their own axial field (usually the same
//! composed potential) plus their mutual Coulomb force. Integration is
//! velocity Verlet. Per-particle energies are measured from the coupled
//! static equilibrium (z_a*, z_b*), with the Coulomb force at equilibrium
//! moved into the interaction term so that E_a + E_b + E_int is the
//! conserved total energy.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::constants::{Species, CODATA};
use crate::error::{Error, Result};
use crate::numerics::gauss_legendre;
use crate::potential::{AxialField, AxialPotential, Frozen};
use crate::solver::locate_minimum;

/// Exchange time τ_ex (s) for a full energy swap.
pub fn exchange_time(a: &Species, b: &Species, omega_a: f64, omega_b: f64, s0: f64) -> f64 {
    2.0 * PI * PI * CODATA.epsilon0 * s0.powi(3) * (a.mass * b.mass).sqrt() * (omega_a * omega_b).sqrt()
        / (a.charge * b.charge).abs()
}

/// Coulomb-induced difference of the coupled angular frequencies of a and b,
/// Δω = (1/m_a − 1/m_b) q_a q_b / (4π ε₀ ω s₀³).
pub fn coulomb_detuning(a: &Species, b: &Species, omega: f64, s0: f64) -> f64 {
    (1.0 / a.mass - 1.0 / b.mass) * a.charge * b.charge * CODATA.coulomb_constant() / (omega * s0.powi(3))
}

/// Shift of particle a's frequency caused by a stationary particle b.
pub fn single_particle_shift(a: &Species, b: &Species, omega_a: f64, s0: f64) -> f64 {
    a.charge * b.charge * CODATA.coulomb_constant() / (s0.powi(3) * a.mass * omega_a)
}

/// Resonance half width (Hz) from 2γ = 1/τ_ex.
pub fn resonance_hwhm(tau_ex: f64) -> f64 {
    1.0 / (2.0 * tau_ex)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingAnalytics {
    /// s
    pub tau_ex: f64,
    /// rad/s
    pub delta_omega: f64,
    /// Hz
    pub gamma: f64,
}

impl CouplingAnalytics {
    pub fn new(a: &Species, b: &Species, omega_a: f64, omega_b: f64, s0: f64) -> Self {
        let tau_ex = exchange_time(a, b, omega_a, omega_b, s0);
        Self {
            tau_ex,
            delta_omega: coulomb_detuning(a, b, omega_a, s0),
            gamma: resonance_hwhm(tau_ex),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig {
    /// s
    pub dt: f64,
    /// s
    pub max_time: f64,
    /// m
    pub collision_min_separation: f64,
}

pub const DT_MIN: f64 = 10e-9;
pub const DT_MAX: f64 = 50e-9;
pub const MIN_OVERSAMPLING: f64 = 100.0;

impl IntegratorConfig {
    /// Time step of T/100 clamped to [10 ns, 50 ns], never coarser than
    /// 100 steps per period of `f_max`.
    pub fn for_frequency(f_max: f64, max_time: f64) -> Self {
        let t100 = 1.0 / (MIN_OVERSAMPLING * f_max);
        Self {
            dt: t100.clamp(DT_MIN, DT_MAX).min(t100),
            max_time,
            collision_min_separation: 1e-6,
        }
    }

    pub fn validate(&self, f_max: f64) -> Result<()> {
        if !(self.dt > 0.0) || self.dt * f_max > 1.0 / MIN_OVERSAMPLING * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "time step {:e} s gives fewer than {MIN_OVERSAMPLING} steps per period at {f_max} Hz",
                self.dt
            )));
        }
        if !(self.collision_min_separation > 0.0) {
            return Err(Error::Config("collision guard must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TrajectoryState {
    pub t: f64,
    pub z_a: f64,
    pub z_b: f64,
    pub v_a: f64,
    pub v_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Energies {
    pub e_a: f64,
    pub e_b: f64,
    pub e_int: f64,
    pub e_total: f64,
}

/// Static equilibrium and the constants entering the energy bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReference {
    pub z_a: f64,
    pub z_b: f64,
    pub phi_a: f64,
    pub phi_b: f64,
    /// Coulomb force on a at equilibrium (N).
    pub coulomb_force_a: f64,
    /// Coulomb energy at equilibrium (J).
    pub coulomb_energy: f64,
}

/// Two charged particles in axial fields.
pub struct TwoBody<'f, Fa: AxialField + ?Sized, Fb: AxialField + ?Sized> {
    pub species_a: Species,
    pub species_b: Species,
    pub field_a: &'f Fa,
    pub field_b: &'f Fb,
    /// Particles leaving these intervals are reported as untrapped.
    pub region_a: (f64, f64),
    pub region_b: (f64, f64),
    pub min_separation: f64,
    k_ab: f64,
}

impl<'f, Fa: AxialField + ?Sized, Fb: AxialField + ?Sized> TwoBody<'f, Fa, Fb> {
    pub fn new(species_a: Species, species_b: Species, field_a: &'f Fa, field_b: &'f Fb) -> Self {
        Self {
            k_ab: CODATA.coulomb_constant() * species_a.charge * species_b.charge,
            region_a: field_a.field_domain(),
            region_b: field_b.field_domain(),
            min_separation: 1e-6,
            species_a,
            species_b,
            field_a,
            field_b,
        }
    }

    pub fn with_regions(mut self, region_a: (f64, f64), region_b: (f64, f64)) -> Self {
        self.region_a = region_a;
        self.region_b = region_b;
        self
    }

    pub fn with_min_separation(mut self, d: f64) -> Self {
        self.min_separation = d;
        self
    }

    /// Coulomb force on a (b feels the opposite).
    #[inline]
    pub fn coulomb_force(&self, z_a: f64, z_b: f64) -> f64 {
        let d = z_a - z_b;
        self.k_ab * d.signum() / (d * d)
    }

    /// Total forces (F_a, F_b) at time t.
    #[inline]
    pub fn forces(&self, z_a: f64, z_b: f64, t: f64) -> Result<(f64, f64)> {
        let d = z_a - z_b;
        if d.abs() < self.min_separation {
            return Err(Error::Collision {
                t,
                min_separation: self.min_separation,
            });
        }
        let fc = self.k_ab * d.signum() / (d * d);
        let fa = fc - self.species_a.charge * self.field_a.slope_at(z_a, t);
        let fb = -fc - self.species_b.charge * self.field_b.slope_at(z_b, t);
        Ok((fa, fb))
    }

    /// Coupled static equilibrium of the fields frozen at time t.
    pub fn equilibrium(&self, t: f64, guess: (f64, f64)) -> Result<EnergyReference> {
        let (mut za, mut zb) = guess;
        for _ in 0..100 {
            let la = self.field_a.local_at(za, t);
            let lb = self.field_b.local_at(zb, t);
            let d = za - zb;
            let fc = self.k_ab * d.signum() / (d * d);
            let kc = 2.0 * self.k_ab / d.abs().powi(3);
            let fa = fc - self.species_a.charge * la.slope;
            let fb = -fc - self.species_b.charge * lb.slope;
            // Jacobian of (F_a, F_b) with respect to (z_a, z_b)
            let j11 = -self.species_a.charge * la.curvature - kc;
            let j12 = kc;
            let j21 = kc;
            let j22 = -self.species_b.charge * lb.curvature - kc;
            let det = j11 * j22 - j12 * j21;
            if det == 0.0 || !det.is_finite() {
                break;
            }
            let dza = -(j22 * fa - j12 * fb) / det;
            let dzb = -(-j21 * fa + j11 * fb) / det;
            za += dza;
            zb += dzb;
            if dza.abs() < 1e-16 && dzb.abs() < 1e-16 {
                let d = za - zb;
                return Ok(EnergyReference {
                    z_a: za,
                    z_b: zb,
                    phi_a: self.field_a.local_at(za, t).value,
                    phi_b: self.field_b.local_at(zb, t).value,
                    coulomb_force_a: self.k_ab * d.signum() / (d * d),
                    coulomb_energy: self.k_ab / d.abs(),
                });
            }
        }
        Err(Error::Untrapped(format!(
            "no coupled equilibrium near ({:e}, {:e}) m",
            guess.0, guess.1
        )))
    }

    /// Energy bookkeeping at the state's time against `reference`.
    pub fn energies(&self, s: &TrajectoryState, r: &EnergyReference) -> Energies {
        let qa = self.species_a.charge;
        let qb = self.species_b.charge;
        let fa = r.coulomb_force_a;
        let xa = s.z_a - r.z_a;
        let xb = s.z_b - r.z_b;
        let e_a = 0.5 * self.species_a.mass * s.v_a * s.v_a + qa * (self.field_a.local_at(s.z_a, s.t).value - r.phi_a)
            - fa * xa;
        let e_b = 0.5 * self.species_b.mass * s.v_b * s.v_b
            + qb * (self.field_b.local_at(s.z_b, s.t).value - r.phi_b)
            + fa * xb;
        let e_int = self.k_ab / (s.z_a - s.z_b).abs() - r.coulomb_energy + fa * xa - fa * xb;
        Energies {
            e_a,
            e_b,
            e_int,
            e_total: e_a + e_b + e_int,
        }
    }

    fn check_regions(&self, s: &TrajectoryState) -> Result<()> {
        if s.z_a < self.region_a.0 || s.z_a > self.region_a.1 {
            return Err(Error::Untrapped(format!(
                "particle a ({}) at {:e} m left its region at t = {:e} s",
                self.species_a.label, s.z_a, s.t
            )));
        }
        if s.z_b < self.region_b.0 || s.z_b > self.region_b.1 {
            return Err(Error::Untrapped(format!(
                "particle b ({}) at {:e} m left its region at t = {:e} s",
                self.species_b.label, s.z_b, s.t
            )));
        }
        Ok(())
    }

    /// Places particle a at rest at the outer turning point (away from b)
    /// of energy `e_a`, particle b at energy `e_b` with phase `phase_b`
    /// (fraction of a period), then evolves for `phase_a` of a's period so
    /// that a's oscillation phase is `phase_a`. Time is reset to `t0`.
    pub fn initialize(
        &self,
        reference: &EnergyReference,
        t0: f64,
        e_a: f64,
        e_b: f64,
        phase_a: f64,
        phase_b: f64,
        dt: f64,
    ) -> Result<TrajectoryState> {
        let qa = self.species_a.charge;
        let d = reference.z_a - reference.z_b;
        let kc = 2.0 * self.k_ab / d.abs().powi(3);
        let kb = self.species_b.charge * self.field_b.local_at(reference.z_b, t0).curvature + kc;
        let mut s = TrajectoryState {
            t: t0,
            z_a: reference.z_a,
            z_b: reference.z_b,
            v_a: 0.0,
            v_b: 0.0,
        };
        if e_b > 0.0 && kb > 0.0 {
            let amp = (2.0 * e_b / kb).sqrt();
            let w = (kb / self.species_b.mass).sqrt();
            let ph = 2.0 * PI * phase_b;
            s.z_b += amp * ph.cos();
            s.v_b = -amp * w * ph.sin();
        }
        if e_a <= 0.0 {
            return Ok(s);
        }
        // turning point on the far side: the static part of E_a equals e_a
        let dir = d.signum();
        let static_e = |z: f64| {
            qa * (self.field_a.local_at(z, t0).value - reference.phi_a)
                - reference.coulomb_force_a * (z - reference.z_a)
        };
        let ka = (qa * self.field_a.local_at(reference.z_a, t0).curvature + kc).max(1e-300);
        let amp0 = (2.0 * e_a / ka).sqrt();
        let mut inside = reference.z_a;
        let mut step = 0.25 * amp0;
        let outside = loop {
            let z = inside + dir * step;
            if z < self.region_a.0 || z > self.region_a.1 {
                return Err(Error::Untrapped(format!(
                    "energy {:.4e} K above the outer barrier",
                    e_a / CODATA.k_b
                )));
            }
            if static_e(z) >= e_a {
                break z;
            }
            let slope = qa * self.field_a.local_at(z, t0).slope - reference.coulomb_force_a;
            if slope * dir <= 0.0 {
                return Err(Error::Untrapped(format!(
                    "energy {:.4e} K above the outer barrier",
                    e_a / CODATA.k_b
                )));
            }
            inside = z;
            step = (step * 1.2).min(2e-6);
        };
        let (mut lo, mut hi) = (inside, outside);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if static_e(mid) < e_a {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo).abs() < 1e-15 {
                break;
            }
        }
        s.z_a = 0.5 * (lo + hi);
        if phase_a > 0.0 {
            let frozen_a = Frozen {
                field: self.field_a,
                t: t0,
            };
            let radius = 400e-6;
            let f = axial_frequency_at_energy(&frozen_a, &self.species_a, e_a, reference.z_a, radius)
                .unwrap_or_else(|_| self.species_a.omega_for(ka / qa).unwrap_or(1.0) / (2.0 * PI));
            let steps = (phase_a / (f * dt)).round() as usize;
            let frozen_b = Frozen {
                field: self.field_b,
                t: t0,
            };
            let frozen = TwoBody {
                species_a: self.species_a,
                species_b: self.species_b,
                field_a: &frozen_a,
                field_b: &frozen_b,
                region_a: self.region_a,
                region_b: self.region_b,
                min_separation: self.min_separation,
                k_ab: self.k_ab,
            };
            let mut integ = Verlet::new(&frozen, s, dt)?;
            integ.advance(steps)?;
            s = integ.state;
            s.t = t0;
        }
        Ok(s)
    }
}

/// Velocity-Verlet integrator with cached forces.
pub struct Verlet<'s, 'f, Fa: AxialField + ?Sized, Fb: AxialField + ?Sized> {
    pub system: &'s TwoBody<'f, Fa, Fb>,
    pub state: TrajectoryState,
    pub dt: f64,
    force: (f64, f64),
}

impl<'s, 'f, Fa: AxialField + ?Sized, Fb: AxialField + ?Sized> Verlet<'s, 'f, Fa, Fb> {
    pub fn new(system: &'s TwoBody<'f, Fa, Fb>, state: TrajectoryState, dt: f64) -> Result<Self> {
        let force = system.forces(state.z_a, state.z_b, state.t)?;
        Ok(Self {
            system,
            state,
            dt,
            force,
        })
    }

    /// Changes the step size; negative steps integrate backward in time.
    pub fn set_dt(&mut self, dt: f64) {
        self.dt = dt;
    }

    /// One step: half kick, drift, force at t + dt, half kick.
    #[inline]
    pub fn step(&mut self) -> Result<()> {
        let sys = self.system;
        let s = &mut self.state;
        let h = 0.5 * self.dt;
        let ia = 1.0 / sys.species_a.mass;
        let ib = 1.0 / sys.species_b.mass;
        s.v_a += h * self.force.0 * ia;
        s.v_b += h * self.force.1 * ib;
        s.z_a += self.dt * s.v_a;
        s.z_b += self.dt * s.v_b;
        s.t += self.dt;
        self.force = sys.forces(s.z_a, s.z_b, s.t)?;
        s.v_a += h * self.force.0 * ia;
        s.v_b += h * self.force.1 * ib;
        Ok(())
    }

    /// Energies at the current state. The kinetic terms use the product of
    /// the two half-step velocities, ½m v₋ v₊ = ½m (v² − (a dt/2)²), which
    /// removes the O(dt²) oscillation that plain on-step velocities show.
    pub fn energies(&self, reference: &EnergyReference) -> Energies {
        let h = 0.5 * self.dt;
        let sys = self.system;
        let mut e = sys.energies(&self.state, reference);
        let ka = 0.5 * h * h * self.force.0 * self.force.0 / sys.species_a.mass;
        let kb = 0.5 * h * h * self.force.1 * self.force.1 / sys.species_b.mass;
        e.e_a -= ka;
        e.e_b -= kb;
        e.e_total -= ka + kb;
        e
    }

    /// `n` steps with a region check after each one.
    pub fn advance(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step()?;
            self.system.check_regions(&self.state)?;
        }
        Ok(())
    }
}

/// Single-particle oscillation frequency (Hz) at energy `energy` (J) above
/// the well minimum nearest `guess`, from the turning-point period integral.
pub fn axial_frequency_at_energy(
    potential: &dyn AxialPotential,
    species: &Species,
    energy: f64,
    guess: f64,
    radius: f64,
) -> Result<f64> {
    let q = species.charge;
    let z_min = locate_minimum(potential, species, guess, radius)?;
    let l0 = potential.local(z_min);
    let u_min = q * l0.value;
    let f0 = species
        .omega_for(l0.curvature)
        .ok_or_else(|| Error::Untrapped("curvature does not confine the particle".into()))?
        / (2.0 * PI);
    if energy <= 0.0 {
        return Ok(f0);
    }
    let du = |z: f64| q * potential.local(z).value - u_min;
    let (dlo, dhi) = potential.domain();
    let amp0 = (2.0 * energy / (q * l0.curvature)).sqrt();
    let turning = |dir: f64| -> Result<f64> {
        let mut inside = z_min;
        let mut step = 0.25 * amp0;
        let outside = loop {
            let z = inside + dir * step;
            if z < dlo || z > dhi || q * potential.local(z).slope * dir <= 0.0 {
                return Err(Error::Untrapped(format!(
                    "energy {:.4e} K exceeds the barrier",
                    energy / CODATA.k_b
                )));
            }
            if du(z) >= energy {
                break z;
            }
            inside = z;
            step = (step * 1.2).min(2e-6);
        };
        let (mut a, mut b) = (inside, outside);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if du(m) < energy {
                a = m;
            } else {
                b = m;
            }
            if (b - a).abs() <= 1e-15 * amp0.max(1e-12) {
                break;
            }
        }
        Ok(0.5 * (a + b))
    };
    let z1 = turning(-1.0)?;
    let z2 = turning(1.0)?;
    let c = 0.5 * (z1 + z2);
    let a = 0.5 * (z2 - z1);
    let (nodes, weights) = gauss_legendre(96);
    let mut period = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let theta = 0.5 * PI * x;
        let z = c + a * theta.sin();
        let kinetic = (energy - du(z)).max(1e-300);
        period += w * 0.5 * PI * a * theta.cos() / (2.0 * kinetic / species.mass).sqrt();
    }
    Ok(1.0 / (2.0 * period))
}

/// One decimated trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub z_a: f64,
    pub v_a: f64,
    pub e_a: f64,
    pub z_b: f64,
    pub v_b: f64,
    pub e_b: f64,
    pub e_int: f64,
    pub e_total: f64,
}

impl TraceRow {
    pub fn new(s: &TrajectoryState, e: &Energies) -> Self {
        Self {
            t: s.t,
            z_a: s.z_a,
            v_a: s.v_a,
            e_a: e.e_a,
            z_b: s.z_b,
            v_b: s.v_b,
            e_b: e.e_b,
            e_int: e.e_int,
            e_total: e.e_total,
        }
    }
}

/// Writes a trajectory dump (SI units, energies in J).
pub fn write_trajectory_csv<W: Write>(writer: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "z_a", "v_a", "E_a", "z_b", "v_b", "E_b", "E_int", "E_total"])?;
    for r in rows {
        w.write_record(
            [r.t, r.z_a, r.v_a, r.e_a, r.z_b, r.v_b, r.e_b, r.e_int, r.e_total]
                .iter()
                .map(|v| format!("{v:e}")),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::HarmonicWell;

    const TAU: f64 = 2.0 * PI;

    #[test]
    fn coulomb_force_at_700_um() {
        let p = Species::proton();
        let be = Species::beryllium9_ion();
        let wa = HarmonicWell {
            center: -3.5e-4,
            curvature: 0.0,
            half_width: 1e-3,
        };
        let wb = HarmonicWell { center: 3.5e-4, ..wa };
        let sys = TwoBody::new(p, be, &wa, &wb);
        let (fa, fb) = sys.forces(-3.5e-4, 3.5e-4, 0.0).unwrap();
        let expected = 1.602_176_634e-19_f64.powi(2) / (4.0 * PI * CODATA.epsilon0 * 7e-4 * 7e-4);
        assert!((fa.abs() - expected).abs() / expected < 1e-14);
        assert!((expected - 4.71e-22).abs() / 4.71e-22 < 1e-2);
        assert_eq!(fa + fb, 0.0);
        assert!(fa < 0.0, "like charges repel");
    }

    #[test]
    fn collision_guard_trips() {
        let w = HarmonicWell {
            center: 0.0,
            curvature: 1e5,
            half_width: 1e-3,
        };
        let sys = TwoBody::new(Species::proton(), Species::beryllium9_ion(), &w, &w);
        assert!(matches!(sys.forces(0.0, 5e-7, 1.0), Err(Error::Collision { .. })));
    }

    #[test]
    fn dt_rule() {
        assert!((IntegratorConfig::for_frequency(500e3, 1.0).dt - 20e-9).abs() < 1e-20);
        assert_eq!(IntegratorConfig::for_frequency(100e3, 1.0).dt, 50e-9);
        let fast = IntegratorConfig::for_frequency(2e6, 1.0);
        assert!(fast.dt * 2e6 <= 0.01 + 1e-15);
        assert!(IntegratorConfig { dt: 30e-9, ..fast }.validate(500e3).is_err());
    }

    #[test]
    fn detuning_vanishes_for_equal_masses() {
        let p = Species::proton();
        assert_eq!(coulomb_detuning(&p, &p, TAU * 4e5, 7e-4), 0.0);
        let pbar = Species::antiproton();
        let be = Species::beryllium9_ion();
        assert!(coulomb_detuning(&pbar, &be, TAU * 4e5, 7e-4) < 0.0);
    }

    #[test]
    fn harmonic_limit_of_frequency_integral() {
        let p = Species::proton();
        let k = p.curvature_for(TAU * 5e5);
        let w = HarmonicWell {
            center: 0.0,
            curvature: k,
            half_width: 1e-3,
        };
        for e in [1e-30, 1e-24, 1e-22] {
            let f = axial_frequency_at_energy(&w, &p, e, 1e-6, 4e-4).unwrap();
            assert!((f - 5e5).abs() / 5e5 < 1e-6, "{f}");
        }
    }
}
