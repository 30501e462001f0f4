//! Run configuration: TOML file with SI, unit-suffixed keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "TRAPCOOL_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Particle cooled by the ⁹Be⁺ ion.
    pub species: String,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub geometry: GeometryConfig,
    pub well: WellConfig,
    pub integrator: IntegratorSection,
    pub simulate: SimulateConfig,
    pub sweep: SweepConfig,
    pub noise: NoiseConfig,
    pub campaign: CampaignSection,
    pub analyze: AnalyzeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            species: "proton".into(),
            seed: None,
            output_dir: None,
            threads: None,
            geometry: GeometryConfig::default(),
            well: WellConfig::default(),
            integrator: IntegratorSection::default(),
            simulate: SimulateConfig::default(),
            sweep: SweepConfig::default(),
            noise: NoiseConfig::default(),
            campaign: CampaignSection::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_electrodes: usize,
    pub electrode_width_m: f64,
    pub gap_m: f64,
    pub inner_radius_m: f64,
    pub series_terms: usize,
    /// Tabulated basis (CSV) replacing the analytic surrogate.
    pub import_basis: Option<PathBuf>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            n_electrodes: 9,
            electrode_width_m: 200e-6,
            gap_m: 50e-6,
            inner_radius_m: 400e-6,
            series_terms: 200,
            import_basis: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WellConfig {
    #[serde(rename = "f_Hz")]
    pub f_hz: f64,
    pub s0_m: f64,
    pub delta_s0_m: f64,
    /// ⁹Be⁺ frequency; the Coulomb-compensated value when absent.
    #[serde(rename = "f_Be_Hz")]
    pub f_be_hz: Option<f64>,
}

impl Default for WellConfig {
    fn default() -> Self {
        Self {
            f_hz: 500e3,
            s0_m: 0.7e-3,
            delta_s0_m: 0.0,
            f_be_hz: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    /// Step size; chosen from the highest frequency when absent.
    pub dt_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SimulateMode {
    Harmonic,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub mode: SimulateMode,
    #[serde(rename = "E_init_K")]
    pub e_init_k: f64,
    #[serde(rename = "E_Be_K")]
    pub e_be_k: f64,
    /// Fraction of a period.
    pub phase: f64,
    /// Harmonic runs default to 1.25 τ_ex, sweeps to the schedule.
    pub duration_s: Option<f64>,
    /// Steps between trace rows.
    pub trace_stride: usize,
    pub plot: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            mode: SimulateMode::Harmonic,
            e_init_k: 0.01,
            e_be_k: 0.0,
            phase: 0.0,
            duration_s: None,
            trace_stride: 500,
            plot: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RuleChoice {
    GammaSquared,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "f_start_Hz")]
    pub f_start_hz: f64,
    /// Compensated resonance when absent.
    #[serde(rename = "f_end_Hz")]
    pub f_end_hz: Option<f64>,
    /// Species default when absent.
    pub duration_s: Option<f64>,
    pub n_waypoints: usize,
    pub rule: RuleChoice,
    pub n_sweeps: usize,
    /// CSV with `time_s, f_Be_Hz` waypoints replacing the generated ones.
    pub schedule_file: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            f_start_hz: 470e3,
            f_end_hz: None,
            duration_s: None,
            n_waypoints: 31,
            rule: RuleChoice::GammaSquared,
            n_sweeps: 2,
            schedule_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(rename = "sigma_V")]
    pub sigma_v: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma_v: 250e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub n_samples: usize,
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub zero_point_be: bool,
    #[serde(rename = "thresholds_K")]
    pub thresholds_k: Vec<f64>,
    #[serde(rename = "bin_width_K")]
    pub bin_width_k: f64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            n_samples: 100,
            temperature_k: 4.0,
            zero_point_be: true,
            thresholds_k: vec![0.4, 0.6],
            bin_width_k: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Report {
    Resonance,
    SigmaF,
    EnergyRange,
    Stability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub reports: Vec<Report>,
    #[serde(rename = "frequencies_Hz")]
    pub frequencies_hz: Vec<f64>,
    pub s0_values_m: Vec<f64>,
    /// Midpoint offset per s₀ value; zero when shorter.
    pub delta_s0_values_m: Vec<f64>,
    pub detuning_points: usize,
    /// Half-span of the resonance scan in units of γ.
    pub detuning_span: f64,
    #[serde(rename = "E_init_K")]
    pub e_init_k: f64,
    pub sigma_samples: usize,
    #[serde(rename = "threshold_K")]
    pub threshold_k: f64,
    pub target_p: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            reports: vec![
                Report::Resonance,
                Report::SigmaF,
                Report::EnergyRange,
                Report::Stability,
            ],
            frequencies_hz: vec![350e3, 400e3, 450e3, 500e3],
            s0_values_m: vec![0.6e-3, 0.7e-3, 0.8e-3],
            delta_s0_values_m: Vec::new(),
            detuning_points: 17,
            detuning_span: 6.0,
            e_init_k: 0.01,
            sigma_samples: 200,
            threshold_k: 1e-3,
            target_p: 0.8,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    /// SHA-256 of the effective config text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Explicit directory, else `$TRAPCOOL_OUT`, else `./trapcool-out`.
    pub fn resolve_output_dir(&mut self) -> PathBuf {
        let dir = self.output_dir.clone().unwrap_or_else(|| {
            std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("trapcool-out"))
        });
        self.output_dir = Some(dir.clone());
        dir
    }

    pub fn delta_s0_for(&self, index: usize) -> f64 {
        self.analyze.delta_s0_values_m.get(index).copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn keys_carry_units() {
        let text = RunConfig::default().to_toml();
        for key in ["f_Hz", "s0_m", "sigma_V", "temperature_K", "f_start_Hz"] {
            assert!(text.contains(key), "{key}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[well]\nf = 1.0\n").is_err());
    }
}
