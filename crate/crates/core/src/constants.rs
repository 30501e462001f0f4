//! Physical constants (CODATA 2018, SI) and the particle species used by the
//! coupling simulations.
//!
//! Everything internal is SI. Energies shown to users are divided by the
//! Boltzmann constant and reported in kelvin.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Vacuum permittivity (F/m).
    pub epsilon0: f64,
    /// Boltzmann constant (J/K).
    pub k_b: f64,
    /// Reduced Planck constant (J s).
    pub hbar: f64,
    /// Elementary charge (C).
    pub elementary_charge: f64,
    /// Unified atomic mass unit (kg).
    pub atomic_mass_unit: f64,
    /// Electron mass (kg).
    pub electron_mass: f64,
}

pub const CODATA: PhysicalConstants = PhysicalConstants {
    epsilon0: 8.854_187_812_8e-12,
    k_b: 1.380_649e-23,
    hbar: 1.054_571_817e-34,
    elementary_charge: 1.602_176_634e-19,
    atomic_mass_unit: 1.660_539_066_60e-27,
    electron_mass: 9.109_383_701_5e-31,
};

pub const EPSILON0: f64 = CODATA.epsilon0;
pub const K_B: f64 = CODATA.k_b;
pub const HBAR: f64 = CODATA.hbar;
pub const ELEMENTARY_CHARGE: f64 = CODATA.elementary_charge;

/// Proton mass in atomic mass units.
pub const PROTON_MASS_U: f64 = 1.007_276_466_621;
/// Neutral ⁹Be atomic mass in atomic mass units.
pub const BERYLLIUM9_ATOM_MASS_U: f64 = 9.012_183_065;

impl PhysicalConstants {
    /// 1 / (4 π ε₀) in N m² / C².
    pub fn coulomb_constant(&self) -> f64 {
        1.0 / (4.0 * PI * self.epsilon0)
    }
}

/// Converts an energy in joules to kelvin.
#[inline]
pub fn joule_to_kelvin(energy: f64) -> f64 {
    energy / K_B
}

/// Converts an energy in kelvin (× k_B) to joules.
#[inline]
pub fn kelvin_to_joule(temperature: f64) -> f64 {
    temperature * K_B
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesLabel {
    Proton,
    Antiproton,
    Beryllium9Ion,
}

impl fmt::Display for SpeciesLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SpeciesLabel::Proton => "proton",
            SpeciesLabel::Antiproton => "antiproton",
            SpeciesLabel::Beryllium9Ion => "beryllium9_ion",
        };
        f.write_str(s)
    }
}

impl FromStr for SpeciesLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proton" | "p" => Ok(SpeciesLabel::Proton),
            "antiproton" | "pbar" => Ok(SpeciesLabel::Antiproton),
            "beryllium9_ion" | "be9+" | "be" | "beryllium" => Ok(SpeciesLabel::Beryllium9Ion),
            other => Err(Error::Config(format!("unknown particle species '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Species {
    pub label: SpeciesLabel,
    /// kg
    pub mass: f64,
    /// C, signed
    pub charge: f64,
}

/// Options for species construction. The ⁹Be⁺ mass subtracts one electron
/// mass from the neutral atomic mass unless `beryllium_electron_correction`
/// is switched off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesOptions {
    pub beryllium_electron_correction: bool,
}

impl Default for SpeciesOptions {
    fn default() -> Self {
        Self {
            beryllium_electron_correction: true,
        }
    }
}

pub fn species_with(label: SpeciesLabel, options: SpeciesOptions) -> Species {
    let c = &CODATA;
    match label {
        SpeciesLabel::Proton => Species {
            label,
            mass: PROTON_MASS_U * c.atomic_mass_unit,
            charge: c.elementary_charge,
        },
        SpeciesLabel::Antiproton => Species {
            label,
            mass: PROTON_MASS_U * c.atomic_mass_unit,
            charge: -c.elementary_charge,
        },
        SpeciesLabel::Beryllium9Ion => {
            let mut mass = BERYLLIUM9_ATOM_MASS_U * c.atomic_mass_unit;
            if options.beryllium_electron_correction {
                mass -= c.electron_mass;
            }
            Species {
                label,
                mass,
                charge: c.elementary_charge,
            }
        }
    }
}

pub fn species(label: SpeciesLabel) -> Species {
    species_with(label, SpeciesOptions::default())
}

/// Looks a species up by its textual label.
pub fn species_by_name(name: &str) -> Result<Species> {
    Ok(species(name.parse()?))
}

impl Species {
    pub fn proton() -> Self {
        species(SpeciesLabel::Proton)
    }

    pub fn antiproton() -> Self {
        species(SpeciesLabel::Antiproton)
    }

    pub fn beryllium9_ion() -> Self {
        species(SpeciesLabel::Beryllium9Ion)
    }

    /// Potential curvature Φ'' (V/m²) that gives this species the angular
    /// axial frequency `omega` at a minimum of its potential energy.
    pub fn curvature_for(&self, omega: f64) -> f64 {
        self.mass * omega * omega / self.charge
    }

    /// Inverse of [`Species::curvature_for`]; `None` when the curvature does
    /// not confine this charge.
    pub fn omega_for(&self, curvature: f64) -> Option<f64> {
        let k = self.charge * curvature / self.mass;
        (k > 0.0).then(|| k.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proton_charge_is_elementary() {
        assert_eq!(Species::proton().charge, 1.602_176_634e-19);
    }

    #[test]
    fn antiproton_mirrors_proton() {
        let p = Species::proton();
        let pbar = Species::antiproton();
        assert_eq!(pbar.charge, -p.charge);
        assert_eq!(pbar.mass, p.mass);
        let be = Species::beryllium9_ion();
        assert!(p.charge * be.charge > 0.0);
        assert!(pbar.charge * be.charge < 0.0);
    }

    #[test]
    fn beryllium_to_proton_mass_ratio_is_about_nine() {
        let ratio = Species::beryllium9_ion().mass / Species::proton().mass;
        assert!((ratio - 8.947).abs() < 1e-3, "ratio {ratio}");
        assert!((ratio - 9.0).abs() / 9.0 < 0.01);
    }

    #[test]
    fn electron_correction_is_toggleable() {
        let with = species_with(SpeciesLabel::Beryllium9Ion, SpeciesOptions::default());
        let without = species_with(
            SpeciesLabel::Beryllium9Ion,
            SpeciesOptions {
                beryllium_electron_correction: false,
            },
        );
        let rel = (without.mass - with.mass) / without.mass;
        assert!(rel > 0.0 && rel < 1e-4);
        assert!(((without.mass - with.mass) - CODATA.electron_mass).abs() < 1e-9 * CODATA.electron_mass);
    }

    #[test]
    fn unknown_label_is_config_error() {
        assert!(matches!(species_by_name("muon"), Err(Error::Config(_))));
        assert_eq!(species_by_name("pbar").unwrap().label, SpeciesLabel::Antiproton);
    }

    #[test]
    fn derived_quantities_are_reproducible() {
        let a = CODATA.coulomb_constant() * ELEMENTARY_CHARGE * ELEMENTARY_CHARGE;
        let b = CODATA.coulomb_constant() * ELEMENTARY_CHARGE * ELEMENTARY_CHARGE;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn curvature_round_trip() {
        let p = Species::proton();
        let w = 2.0 * PI * 500e3;
        let k = p.curvature_for(w);
        assert!((k - 1.0304e5).abs() / 1.0304e5 < 1e-3);
        assert!((p.omega_for(k).unwrap() - w).abs() / w < 1e-14);
        assert!(Species::antiproton().curvature_for(w) < 0.0);
        assert!(p.omega_for(-k).is_none());
    }
}
