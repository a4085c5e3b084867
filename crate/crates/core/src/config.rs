//! Scenario configuration files.
//!
//! Configs are TOML with explicit keys. Any key left out takes its default;
//! a `preset = "fig2" | "fig5"` key starts from a named preset instead of the
//! plain defaults. Unknown keys are rejected.
//!
//! ```toml
//! preset = "fig5"
//! trials = 20
//! k_factor_db = [0.0]
//!
//! [estimation]
//! keep = 4
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::estimation::EstimationConfig;
use crate::precoding::AllocationStrategy;
use crate::sim::{EstimationSettings, ScenarioConfig, Scheme};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path} not found")]
    Missing { path: PathBuf },

    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },

    #[error("unknown preset '{0}' (expected fig2 or fig5)")]
    UnknownPreset(String),

    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Named starting points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Singular-value energy profile: 512 x 32 arrays, L = 1..6, 1000 trials.
    Fig2,
    /// Capacity comparison: K = 4 small cells, 512/32 antennas, 16/4 chains.
    Fig5,
}

impl std::str::FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig2" => Ok(Preset::Fig2),
            "fig5" => Ok(Preset::Fig5),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }
}

fn default_snr_grid() -> Vec<f64> {
    (0..9).map(|i| -10.0 + 5.0 * i as f64).collect()
}

impl Preset {
    pub fn config(self) -> ScenarioConfig {
        match self {
            Preset::Fig2 => ScenarioConfig {
                n_ma: 512,
                n_sm: 32,
                k_users: 1,
                n_bb_ma: 4,
                n_bb_sm: 4,
                l_min: 1,
                l_max: 6,
                trials: 1000,
                ..base_defaults(512, 32)
            },
            Preset::Fig5 => ScenarioConfig {
                n_ma: 512,
                n_sm: 32,
                k_users: 4,
                n_bb_ma: 16,
                n_bb_sm: 4,
                k_factor_db: vec![0.0, 10.0],
                schemes: vec![Scheme::HybridIdeal, Scheme::HybridEstimated, Scheme::FullDigital],
                estimation: EstimationSettings { training_snr_db: Some(20.0), pipeline: EstimationConfig::default() },
                ..base_defaults(512, 32)
            },
        }
    }
}

fn base_defaults(n_ma: usize, n_sm: usize) -> ScenarioConfig {
    let n_bb_sm = n_sm.min(4);
    ScenarioConfig {
        n_ma,
        n_sm,
        k_users: 1,
        n_bb_ma: n_bb_sm,
        n_bb_sm,
        spacing: 0.5,
        path_loss: 1.0,
        noise_var: 1.0,
        carrier_ghz: 60.0,
        l_min: 2,
        l_max: 6,
        k_factor_db: vec![0.0],
        snr_grid_db: default_snr_grid(),
        trials: 100,
        schemes: vec![Scheme::HybridIdeal, Scheme::FullDigital],
        allocations: vec![AllocationStrategy::Waterfilling, AllocationStrategy::Equal],
        master_seed: 0,
        max_iterations: 100,
        stall_tolerance: 1e-6,
        estimation: EstimationSettings::default(),
    }
}

/// Accepts either a scalar or an array for list-valued keys.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    n_ma: Option<usize>,
    n_sm: Option<usize>,
    k_users: Option<usize>,
    n_bb_ma: Option<usize>,
    n_bb_sm: Option<usize>,
    spacing: Option<f64>,
    path_loss: Option<f64>,
    noise_var: Option<f64>,
    carrier_ghz: Option<f64>,
    l_min: Option<usize>,
    l_max: Option<usize>,
    k_factor_db: Option<OneOrMany>,
    snr_grid_db: Option<OneOrMany>,
    trials: Option<usize>,
    schemes: Option<Vec<Scheme>>,
    allocations: Option<Vec<AllocationStrategy>>,
    master_seed: Option<u64>,
    max_iterations: Option<usize>,
    stall_tolerance: Option<f64>,
    estimation: Option<RawEstimation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimation {
    training_snr_db: Option<f64>,
    tx_codebook_size: Option<usize>,
    rx_codebook_size: Option<usize>,
    keep: Option<usize>,
    rank_threshold: Option<f64>,
    max_order: Option<usize>,
    merge_tolerance: Option<f64>,
}

impl RawConfig {
    fn resolve(self) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = match &self.preset {
            Some(name) => name.parse::<Preset>()?.config(),
            None => {
                let (n_ma, n_sm) = match (self.n_ma, self.n_sm) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(ConfigError::Invalid("n_ma and n_sm are required without a preset".into())),
                };
                let mut base = base_defaults(n_ma, n_sm);
                let k = self.k_users.unwrap_or(1);
                base.k_users = k;
                base.n_bb_sm = self.n_bb_sm.unwrap_or(base.n_bb_sm);
                base.n_bb_ma = self.n_bb_ma.unwrap_or(k * base.n_bb_sm);
                base
            }
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { cfg.$field = v; } )* };
        }
        set!(
            n_ma, n_sm, k_users, n_bb_ma, n_bb_sm, spacing, path_loss, noise_var, carrier_ghz, l_min, l_max,
            trials, schemes, allocations, master_seed, max_iterations, stall_tolerance
        );
        if let Some(v) = self.k_factor_db {
            cfg.k_factor_db = v.into_vec();
        }
        if let Some(v) = self.snr_grid_db {
            cfg.snr_grid_db = v.into_vec();
        }
        if let Some(e) = self.estimation {
            let est = &mut cfg.estimation;
            if e.training_snr_db.is_some() {
                est.training_snr_db = e.training_snr_db;
            }
            let p = &mut est.pipeline;
            if e.tx_codebook_size.is_some() {
                p.tx_codebook_size = e.tx_codebook_size;
            }
            if e.rx_codebook_size.is_some() {
                p.rx_codebook_size = e.rx_codebook_size;
            }
            p.keep = e.keep.unwrap_or(p.keep);
            p.rank_threshold = e.rank_threshold.unwrap_or(p.rank_threshold);
            p.max_order = e.max_order.unwrap_or(p.max_order);
            p.merge_tolerance = e.merge_tolerance.unwrap_or(p.merge_tolerance);
        }
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

/// Parses and validates config text.
pub fn parse_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        ConfigError::Syntax { line, column, message: e.message().to_string() }
    })?;
    raw.resolve()
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ConfigError::Missing { path: path.to_path_buf() }
        } else {
            ConfigError::Io { path: path.to_path_buf(), source }
        }
    })?;
    parse_str(&text)
}

/// Canonical TOML with every key spelled out.
pub fn to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario config always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_str("n_ma = 64\nn_sm = 8\n").unwrap();
        assert_eq!(cfg.spacing, 0.5);
        assert_eq!(cfg.path_loss, 1.0);
        assert_eq!(cfg.noise_var, 1.0);
        assert_eq!((cfg.l_min, cfg.l_max), (2, 6));
        assert_eq!(cfg.n_bb_sm, 4);
        assert_eq!(cfg.n_bb_ma, 4);
    }

    #[test]
    fn chain_budget_violation_is_named() {
        let err = parse_str("n_ma = 64\nn_sm = 8\nk_users = 4\nn_bb_sm = 4\nn_bb_ma = 8\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        assert!(err.to_string().contains("k_users * n_bb_sm <= n_bb_ma"), "{err}");
    }

    #[test]
    fn fig5_preset() {
        let cfg = parse_str("preset = \"fig5\"").unwrap();
        assert_eq!((cfg.n_ma, cfg.n_sm, cfg.k_users, cfg.n_bb_ma, cfg.n_bb_sm), (512, 32, 4, 16, 4));
        assert_eq!(cfg.k_factor_db, vec![0.0, 10.0]);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_str("n_ma = 64\nn_sm = 8\nbogus = 1\n").unwrap_err();
        match err {
            ConfigError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_syntax() {
        let err = parse_str("n_ma = \n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }), "{err}");
    }

    #[test]
    fn scalar_or_list() {
        let cfg = parse_str("n_ma = 64\nn_sm = 8\nk_factor_db = 3.0\nsnr_grid_db = [0.0, 10.0]").unwrap();
        assert_eq!(cfg.k_factor_db, vec![3.0]);
        assert_eq!(cfg.snr_grid_db, vec![0.0, 10.0]);
    }

    #[test]
    fn missing_file() {
        let err = parse_config(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Missing { .. }));
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(parse_str("preset = \"fig9\"").unwrap_err(), ConfigError::UnknownPreset(_)));
    }
}
