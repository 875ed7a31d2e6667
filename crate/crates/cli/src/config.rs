use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tooltok::agent::AgentConfig;
use tooltok::decoder::DecodeConfig;
use tooltok::retrieval::{Setting, DEFAULT_CUTOFFS};
use tooltok::IndexScheme;

/// Experiment configuration, read from TOML and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub registry: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub endpoints: Option<PathBuf>,
    /// `atomic`, `semantic`, `numeric[:width]` or
    /// `hierarchical[:branching[:seed]]`; a hierarchical scheme without an
    /// explicit seed uses `seed`.
    pub scheme: String,
    pub setting: String,
    /// Multi-byte pieces learned from the documentation corpus.
    pub vocab_pieces: usize,
    /// Additive smoothing of the count scorer.
    pub alpha: f64,
    pub cutoffs: Vec<usize>,
    /// Announce ground-truth tools in converted samples and agent runs.
    pub gt_tools: bool,
    pub decode: DecodeConfig,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            registry: None,
            annotations: None,
            trajectories: None,
            fixtures: None,
            endpoints: None,
            scheme: "atomic".into(),
            setting: "in-domain".into(),
            vocab_pieces: 1000,
            alpha: 0.1,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            gt_tools: false,
            decode: DecodeConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths in it are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.registry,
            &mut cfg.annotations,
            &mut cfg.trajectories,
            &mut cfg.fixtures,
            &mut cfg.endpoints,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn index_scheme(&self) -> Result<IndexScheme, String> {
        let scheme = IndexScheme::from_str(&self.scheme).map_err(|e| e.to_string())?;
        Ok(match scheme {
            IndexScheme::Hierarchical { branching, .. } if self.scheme.split(':').count() < 3 => {
                IndexScheme::Hierarchical {
                    branching,
                    seed: self.seed,
                }
            }
            other => other,
        })
    }

    pub fn retrieval_setting(&self) -> Result<Setting, String> {
        Setting::from_str(&self.setting).map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.index_scheme()?;
        self.retrieval_setting()?;
        self.agent.validate().map_err(|e| e.to_string())?;
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err("cutoffs must be positive and non-empty".into());
        }
        if !(self.alpha > 0.0) {
            return Err(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.decode.beam_width == 0 {
            return Err("beam_width must be positive".into());
        }
        Ok(())
    }

    /// Short hex digest of the canonical JSON form; names the run directory.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_sections() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 3
            scheme = "numeric:4"
            [agent]
            max_retries = 1
            [decode]
            beam_width = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.agent.max_retries, 1);
        assert_eq!(cfg.agent.max_turns, 16);
        assert_eq!(cfg.decode.beam_width, 2);
        assert_eq!(cfg.index_scheme().unwrap(), IndexScheme::Numeric { width: 4 });
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }

    #[test]
    fn hierarchical_seed_defaults_to_run_seed() {
        let cfg = RunConfig {
            seed: 9,
            scheme: "hierarchical:4".into(),
            ..RunConfig::default()
        };
        assert_eq!(
            cfg.index_scheme().unwrap(),
            IndexScheme::Hierarchical { branching: 4, seed: 9 }
        );
        let cfg = RunConfig {
            scheme: "hierarchical:4:2".into(),
            ..cfg
        };
        assert_eq!(
            cfg.index_scheme().unwrap(),
            IndexScheme::Hierarchical { branching: 4, seed: 2 }
        );
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 12);
    }
}
