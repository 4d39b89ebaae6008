//! Experiment configuration: strict JSON loading and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::RigConfig;
use crate::perturbation::PerturbationSpec;
use crate::sampling::{FilterSpec, PhantomLayout, VolumeSpec};
use crate::solvers::RefineOptions;

pub const SCHEMA_VERSION: u32 = 1;

const SIM_DEFAULT: &str = include_str!("../configs/sim_default.json");
const PHANTOM_DEFAULT: &str = include_str!("../configs/phantom_default.json");

/// Names accepted by [`bundled`].
pub const BUNDLED: [&str; 2] = ["sim_default", "phantom_default"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointSource {
    /// Uniform samples from the volume, kept if they pass the filters.
    Volume,
    /// The fixed phantom marker layout.
    Phantom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkSource {
    /// Pose estimation uses the evaluation points themselves.
    Eval,
    /// A second, independently sampled and filtered point set.
    Disjoint,
}

impl PointSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Volume => "volume",
            Self::Phantom => "phantom",
        }
    }
}

impl LandmarkSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Eval => "eval",
            Self::Disjoint => "disjoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeConfig {
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    /// Points drawn before filtering.
    pub samples: usize,
}

impl VolumeConfig {
    pub fn spec(&self) -> VolumeSpec {
        VolumeSpec {
            center: self.center,
            half_extent: self.half_extent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub landmarks: LandmarkSource,
    /// Standard deviation of Gaussian noise added to every observed pixel
    /// coordinate.
    pub pixel_noise_px: f64,
    /// Draw a fresh filtered point set for every trial.
    pub resample_points: bool,
    pub refine_tol: f64,
    pub refine_max_iter: usize,
}

impl TrialConfig {
    pub fn refine_options(&self) -> RefineOptions {
        RefineOptions {
            tol: self.refine_tol,
            max_iter: self.refine_max_iter,
        }
    }
}

impl Default for TrialConfig {
    fn default() -> Self {
        let r = RefineOptions::default();
        Self {
            landmarks: LandmarkSource::Eval,
            pixel_noise_px: 0.0,
            resample_points: false,
            refine_tol: r.tol,
            refine_max_iter: r.max_iter,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub rig: RigConfig,
    pub volume: VolumeConfig,
    pub filters: FilterSpec,
    pub perturbation: PerturbationSpec,
    pub points: PointSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomLayout>,
    pub trial: TrialConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// One failed check, addressed by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration:\n{}", list(.0))]
    Validation(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            Self::Validation(v) => v,
            _ => &[],
        }
    }
}

impl ExperimentConfig {
    /// Every semantic problem with the config, in field order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            push_one(
                &mut out,
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            );
        }
        push_section(&mut out, "rig", self.rig.violations());
        push_section(&mut out, "volume", self.volume.spec().violations());
        push_section(&mut out, "filters", self.filters.violations());
        push_section(&mut out, "perturbation", self.perturbation.violations());
        if let Some(layout) = &self.phantom {
            push_section(&mut out, "phantom", layout.violations());
        }
        if self.volume.samples == 0 {
            push_one(&mut out, "volume.samples", "must be at least 1".to_string());
        }
        if self.points == PointSource::Phantom && self.phantom.is_none() {
            push_one(
                &mut out,
                "phantom",
                "required when points = \"phantom\"".to_string(),
            );
        }
        let t = &self.trial;
        if !(t.pixel_noise_px.is_finite() && t.pixel_noise_px >= 0.0) {
            push_one(
                &mut out,
                "trial.pixel_noise_px",
                format!("must be >= 0, got {}", t.pixel_noise_px),
            );
        }
        if !(t.refine_tol.is_finite() && t.refine_tol > 0.0) {
            push_one(
                &mut out,
                "trial.refine_tol",
                format!("must be positive, got {}", t.refine_tol),
            );
        }
        if t.refine_max_iter == 0 {
            push_one(
                &mut out,
                "trial.refine_max_iter",
                "must be at least 1".to_string(),
            );
        }
        if t.resample_points && self.points == PointSource::Phantom {
            push_one(
                &mut out,
                "trial.resample_points",
                "only meaningful when points = \"volume\"".to_string(),
            );
        }
        out
    }

    pub fn validate(self) -> Result<Self, ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(ConfigError::Validation(v))
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring output paths.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn phantom_layout(&self) -> PhantomLayout {
        self.phantom.clone().unwrap_or_default()
    }
}

fn push_section(out: &mut Vec<Violation>, prefix: &str, items: Vec<(&'static str, String)>) {
    out.extend(items.into_iter().map(|(field, message)| Violation {
        path: format!("{prefix}.{field}"),
        message,
    }));
}

fn push_one(out: &mut Vec<Violation>, path: &str, message: String) {
    out.push(Violation {
        path: path.to_string(),
        message,
    });
}

/// Parses and validates config text. Unknown keys, type errors and semantic
/// violations are all reported together where possible.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut unknown = Vec::new();
    let mut on_unknown = |path: serde_ignored::Path<'_>| {
        unknown.push(Violation {
            path: path.to_string(),
            message: "unknown key".to_string(),
        })
    };
    let de = serde_ignored::Deserializer::new(value, &mut on_unknown);
    let parsed: Result<ExperimentConfig, _> = serde_path_to_error::deserialize(de);
    match parsed {
        Err(e) => {
            let path = e.path().to_string();
            let mut all = unknown;
            all.push(Violation {
                path: if path == "." {
                    "(root)".to_string()
                } else {
                    path
                },
                message: e.into_inner().to_string(),
            });
            Err(ConfigError::Validation(all))
        }
        Ok(config) => {
            let mut all = unknown;
            all.extend(config.violations());
            if all.is_empty() {
                Ok(config)
            } else {
                Err(ConfigError::Validation(all))
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Text of a bundled config by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "sim_default" => Some(SIM_DEFAULT),
        "phantom_default" => Some(PHANTOM_DEFAULT),
        _ => None,
    }
}

/// Loads `arg` as a file if it exists, else as a bundled config name.
pub fn resolve_config(arg: &str) -> Result<ExperimentConfig, ConfigError> {
    let path = Path::new(arg);
    if path.exists() {
        return load_config(path);
    }
    match bundled(arg) {
        Some(text) => parse_config(text),
        None => Err(ConfigError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!(
                    "no such file, and not a bundled config ({})",
                    BUNDLED.join(", ")
                ),
            ),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim_value() -> serde_json::Value {
        serde_json::from_str(SIM_DEFAULT).unwrap()
    }

    fn paths(e: ConfigError) -> Vec<String> {
        e.violations().iter().map(|v| v.path.clone()).collect()
    }

    #[test]
    fn bundled_configs_load() {
        let sim = resolve_config("sim_default").unwrap();
        assert_eq!(sim.rig.ap_focal, 4500.0);
        assert_eq!(sim.rig.lat_focal, 4550.0);
        assert_eq!(sim.points, PointSource::Volume);
        let ph = resolve_config("phantom_default").unwrap();
        assert_eq!(ph.rig.ap_focal, 4800.0);
        assert_eq!(ph.points, PointSource::Phantom);
    }

    #[test]
    fn bundled_match_code_defaults() {
        let sim = resolve_config("sim_default").unwrap();
        assert_eq!(sim.rig, RigConfig::simulation());
        assert_eq!(sim.perturbation, PerturbationSpec::simulation());
        assert_eq!(sim.filters, FilterSpec::default());
        let ph = resolve_config("phantom_default").unwrap();
        assert_eq!(ph.rig, RigConfig::phantom());
        assert_eq!(ph.perturbation, PerturbationSpec::phantom());
        assert_eq!(ph.phantom_layout(), PhantomLayout::default());
    }

    #[test]
    fn negative_pixel_spacing_named() {
        let mut v = sim_value();
        v["rig"]["pixel_spacing"] = (-0.21).into();
        let e = parse_config(&v.to_string()).unwrap_err();
        assert!(paths(e).contains(&"rig.pixel_spacing".to_string()));
    }

    #[test]
    fn unknown_key_rejected() {
        let mut v = sim_value();
        v["rig"]["focal_lenght"] = 4500.0.into();
        let e = parse_config(&v.to_string()).unwrap_err();
        assert_eq!(paths(e), vec!["rig.focal_lenght".to_string()]);
    }

    #[test]
    fn all_violations_reported() {
        let mut v = sim_value();
        v["rig"]["pixel_spacing"] = (-1.0).into();
        v["filters"]["edge_margin"] = (-5.0).into();
        v["perturbation"]["trials_per_cell"] = 0.into();
        v["typo"] = 1.into();
        let p = paths(parse_config(&v.to_string()).unwrap_err());
        for want in [
            "typo",
            "rig.pixel_spacing",
            "filters.edge_margin",
            "perturbation.trials_per_cell",
        ] {
            assert!(p.contains(&want.to_string()), "{want} missing from {p:?}");
        }
    }

    #[test]
    fn type_error_carries_path() {
        let mut v = sim_value();
        v["perturbation"]["mode"] = "gaussian".into();
        let p = paths(parse_config(&v.to_string()).unwrap_err());
        assert_eq!(p, vec!["perturbation.mode".to_string()]);
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_config("{\n  \"seed\": 1,\n  oops\n}") {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn phantom_source_needs_layout() {
        let mut v = sim_value();
        v["points"] = "phantom".into();
        let p = paths(parse_config(&v.to_string()).unwrap_err());
        assert_eq!(p, vec!["phantom".to_string()]);
    }

    #[test]
    fn digest_ignores_output_paths() {
        let a = resolve_config("sim_default").unwrap();
        let mut b = a.clone();
        b.output.csv = Some("elsewhere.csv".into());
        assert_eq!(a.digest(), b.digest());
        b.seed += 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
