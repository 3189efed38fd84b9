//! Experiment configuration: a TOML file with a strict schema, plus
//! environment overrides for the wire endpoint and credentials.
//!
//! Path resolution: fixture and model paths are relative to the config
//! file's directory, so a config travels with its fixtures; `out_dir` is
//! relative to the working directory, so outputs land where the command
//! was invoked.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rentropy_attack::SamplerConfig;
use rentropy_backend::mock::MockBackend;
use rentropy_backend::wire::WireBackend;
use rentropy_backend::{BackendKind, ModelBackend};
use rentropy_core::counterfactual::TemplateSet;
use rentropy_core::dist::TokenId;
use serde::Deserialize;

/// Environment variable that overrides `[backend] endpoint`.
pub const ENDPOINT_VAR: &str = "RENTROPY_ENDPOINT";
/// Environment variable that overrides `[backend] api_key`.
pub const API_KEY_VAR: &str = "RENTROPY_API_KEY";

/// The whole config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every derived generator mixes in a stable per-item
    /// hash so outputs are reproducible regardless of batch order.
    pub seed: u64,
    /// Where artifacts are written.
    pub out_dir: PathBuf,
    pub backend: BackendSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub templates: TemplateSection,
    #[serde(default)]
    pub counterfactual: CounterfactualSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub fixtures: FixtureSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Scripted-model JSON for the mock kinds.
    pub model_file: Option<PathBuf>,
    /// Base URL for the wire kind.
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    /// Wire backends cannot introspect these; mocks carry them in the
    /// model file.
    pub vocab_size: Option<usize>,
    pub eot_token: Option<u32>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_top_n() -> usize {
    8
}

fn default_temperature() -> f64 {
    1.0
}

/// `[sampler]`, mirroring the sampler's own defaults field by field so a
/// partial section works.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub top_k: usize,
    pub top_p: f64,
    pub t_max: usize,
    pub entropy_floor: f64,
    pub loop_check_interval: usize,
    pub max_period: usize,
    pub min_repeats: usize,
    pub eot_retry_once: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        SamplerSection {
            top_k: s.top_k,
            top_p: s.top_p,
            t_max: s.t_max,
            entropy_floor: s.entropy_floor,
            loop_check_interval: s.loop_check_interval,
            max_period: s.max_period,
            min_repeats: s.min_repeats,
            eot_retry_once: s.eot_retry_once,
        }
    }
}

impl SamplerSection {
    pub fn to_sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            top_k: self.top_k,
            top_p: self.top_p,
            t_max: self.t_max,
            entropy_floor: self.entropy_floor,
            loop_check_interval: self.loop_check_interval,
            max_period: self.max_period,
            min_repeats: self.min_repeats,
            eot_retry_once: self.eot_retry_once,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    /// Token cap for baseline generations and replays.
    pub max_tokens: usize,
    /// Temperature for the initial, benign generations.
    pub temperature: f64,
    /// Temperature for replaying trimmed prompts (0 = greedy).
    pub replay_temperature: f64,
    /// Token cap for probe decodes.
    pub probe_max_tokens: usize,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            // Mirrors the 16k context cap used on open models.
            max_tokens: 16_384,
            temperature: 1.0,
            replay_temperature: 0.0,
            probe_max_tokens: 128,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateSection {
    pub directed: Option<String>,
    pub reversed: Option<String>,
    pub undirected: Option<String>,
}

impl TemplateSection {
    pub fn to_template_set(&self) -> TemplateSet {
        let mut t = TemplateSet::default();
        if let Some(s) = &self.directed {
            t.directed = s.clone();
        }
        if let Some(s) = &self.reversed {
            t.reversed = s.clone();
        }
        if let Some(s) = &self.undirected {
            t.undirected = s.clone();
        }
        t
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterfactualSection {
    /// Wrong answers synthesized per option-free question.
    pub n_incorrect: usize,
}

impl Default for CounterfactualSection {
    fn default() -> Self {
        CounterfactualSection { n_incorrect: 3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Capacity stand-in: total tokens that may be in flight at once.
    /// The per-condition request ceiling is `token_budget / max_tokens`.
    pub token_budget: usize,
    /// Hard cap on worker threads regardless of the budget.
    pub max_concurrency: usize,
    /// Measurement window.
    pub window_ms: u64,
    pub baseline_max_tokens: usize,
    pub attack_max_tokens: usize,
    /// Service-timed scripted model the load is driven against (carries
    /// its own `service_ms_per_token`).
    pub model_file: Option<PathBuf>,
    /// Prompt every bench request starts from.
    pub prompt: String,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            token_budget: 2_000,
            max_concurrency: 64,
            window_ms: 1_050,
            baseline_max_tokens: 100,
            attack_max_tokens: 1_000,
            model_file: None,
            prompt: "x ".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureSection {
    /// Default question file for commands that read questions.
    pub questions: Option<PathBuf>,
}

/// A parsed config plus the directory it came from, for path resolution.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok(LoadedConfig { config, dir })
    }

    /// Resolves a fixture path against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    /// Builds the configured backend. Env vars override the endpoint and
    /// API key — nothing else.
    pub fn build_backend(&self) -> Result<Box<dyn ModelBackend>> {
        let b = &self.config.backend;
        match b.kind {
            BackendKind::MockTable | BackendKind::MockMarkov => {
                let Some(file) = &b.model_file else {
                    bail!("backend kind {} needs model_file", b.kind);
                };
                let path = self.resolve(file);
                let mock = MockBackend::from_path(&path, b.top_n, b.temperature)
                    .with_context(|| format!("loading model {}", path.display()))?;
                if mock.descriptor().kind != b.kind {
                    bail!(
                        "config says backend kind {} but {} declares {}",
                        b.kind,
                        path.display(),
                        mock.descriptor().kind
                    );
                }
                Ok(Box::new(mock))
            }
            BackendKind::Wire => {
                let endpoint = std::env::var(ENDPOINT_VAR)
                    .ok()
                    .or_else(|| b.endpoint.clone())
                    .context("wire backend needs endpoint (or RENTROPY_ENDPOINT)")?;
                let api_key = std::env::var(API_KEY_VAR).ok().or_else(|| b.api_key.clone());
                let vocab_size = b.vocab_size.context("wire backend needs vocab_size")?;
                let eot = b.eot_token.context("wire backend needs eot_token")?;
                let wire = WireBackend::new(
                    &endpoint,
                    api_key,
                    vocab_size,
                    TokenId(eot),
                    b.top_n,
                    b.temperature,
                )?;
                Ok(Box::new(wire))
            }
        }
    }

    /// Resolves the question file: an explicit flag wins, then the
    /// `[fixtures]` default.
    pub fn questions_path(&self, flag: Option<&Path>) -> Result<PathBuf> {
        if let Some(p) = flag {
            return Ok(p.to_path_buf());
        }
        let Some(p) = &self.config.fixtures.questions else {
            bail!("no question file: pass --questions or set [fixtures] questions");
        };
        Ok(self.resolve(p))
    }
}

/// Derives a per-item seed from the master seed and a stable identifier,
/// so reordering a batch never changes any item's output.
pub fn item_seed(master: u64, id: &str) -> u64 {
    // FNV-1a over the id, mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in id.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    master ^ h
}
