//! Run configuration: optional TOML file, environment, and flags merged with
//! the precedence flags > environment > file.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use storylogic::gateway::{GenerationConfig, ShotMode};
use storylogic::pipeline::ModeFlags;

pub const ENV_API_BASE: &str = "STORYLOGIC_API_BASE";
pub const ENV_API_KEY: &str = "STORYLOGIC_API_KEY";

/// Where completions come from: a replayable mock directory or an
/// OpenAI-style chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock(PathBuf),
    Http(String),
}

impl BackendSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(dir) = spec.strip_prefix("mock:") {
            if dir.is_empty() {
                bail!("mock backend needs a directory: mock:<dir>");
            }
            return Ok(BackendSpec::Mock(PathBuf::from(dir)));
        }
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(BackendSpec::Http(spec.to_string()));
        }
        bail!("backend must be `mock:<dir>` or an http(s) URL, got `{spec}`");
    }

    pub fn label(&self) -> String {
        match self {
            BackendSpec::Mock(dir) => format!("mock:{}", dir.display()),
            BackendSpec::Http(base) => base.clone(),
        }
    }
}

/// The optional `--config` TOML file. Every key can be overridden by a flag;
/// `backend` can also be overridden by the environment.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<String>,
    model: Option<String>,
    seed: Option<u64>,
    jobs: Option<usize>,
    shots: Option<String>,
    ea: Option<bool>,
    with_prediction: Option<bool>,
    lexicon: Option<PathBuf>,
    exemplars: Option<PathBuf>,
    api_key: Option<String>,
    generation: Option<FileGeneration>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileGeneration {
    temperature: Option<f64>,
    top_p: Option<f64>,
    max_tokens: Option<u32>,
    retries: Option<u32>,
    timeout_secs: Option<u64>,
}

/// Flag values as parsed, before merging. `None` means "not given".
#[derive(Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub shots: Option<ShotMode>,
    pub ea: Option<bool>,
    pub with_prediction: bool,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
}

/// One command invocation's fully resolved settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: Option<BackendSpec>,
    pub model: String,
    pub shots: ShotMode,
    pub mode: ModeFlags,
    pub seed: u64,
    pub jobs: usize,
    pub generation: GenerationConfig,
    pub lexicon: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub api_key: Option<String>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(overrides: Overrides) -> Result<Self> {
        let env = |name: &str| std::env::var(name).ok().filter(|s| !s.is_empty());
        RunConfig::resolve_with_env(overrides, env(ENV_API_BASE), env(ENV_API_KEY))
    }

    fn resolve_with_env(
        overrides: Overrides,
        env_base: Option<String>,
        env_key: Option<String>,
    ) -> Result<Self> {
        let file: FileConfig = match &overrides.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config file {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("invalid config file {}", path.display()))?
            }
            None => FileConfig::default(),
        };

        let backend_str = overrides.backend.or(env_base).or(file.backend);
        let backend = backend_str.as_deref().map(BackendSpec::parse).transpose()?;

        let shots = match overrides.shots {
            Some(s) => s,
            None => match file.shots.as_deref() {
                None => ShotMode::Zero,
                Some("zero") => ShotMode::Zero,
                Some("one") => ShotMode::One,
                Some("few") => ShotMode::Few,
                Some(other) => bail!("config: shots must be zero|one|few, got `{other}`"),
            },
        };

        let with_ea = overrides.ea.or(file.ea).unwrap_or(true);
        let with_prediction = overrides.with_prediction || file.with_prediction.unwrap_or(false);
        let jobs = overrides.jobs.or(file.jobs).unwrap_or(4);
        if jobs == 0 {
            bail!("jobs must be at least 1");
        }

        let seed = overrides.seed.or(file.seed).unwrap_or(0);
        let mut generation = GenerationConfig { seed: Some(seed), ..GenerationConfig::default() };
        if let Some(g) = file.generation {
            if let Some(v) = g.temperature {
                generation.temperature = v;
            }
            if let Some(v) = g.top_p {
                generation.top_p = v;
            }
            if let Some(v) = g.max_tokens {
                generation.max_tokens = v;
            }
            if let Some(v) = g.retries {
                generation.retries = v;
            }
            if let Some(v) = g.timeout_secs {
                generation.timeout = Duration::from_secs(v);
            }
        }
        generation.validate().map_err(|e| anyhow!("config: {e}"))?;

        let config = RunConfig {
            backend,
            model: overrides.model.or(file.model).unwrap_or_else(|| "default".to_string()),
            shots,
            mode: ModeFlags::new(with_ea, with_prediction),
            seed,
            jobs,
            generation,
            lexicon: overrides.lexicon.or(file.lexicon),
            exemplars: overrides.exemplars.or(file.exemplars),
            api_key: env_key.or(file.api_key),
            out: overrides.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        if config.shots != ShotMode::Zero && config.exemplars.is_none() {
            bail!("--shots {} needs --exemplars <file>", config.shots.key());
        }
        Ok(config)
    }

    pub fn require_backend(&self) -> Result<&BackendSpec> {
        self.backend.as_ref().ok_or_else(|| {
            anyhow!("no backend configured: pass --backend, set {ENV_API_BASE}, or put `backend` in the config file")
        })
    }

    /// Row label for rendered tables.
    pub fn table_label(&self) -> String {
        format!("{}:{}", self.model, self.mode.label())
    }

    /// Deterministic metadata embedded in reports. Never contains paths that
    /// vary per invocation (output dirs) or anything time-based.
    pub fn report_meta(&self, command: &str) -> BTreeMap<String, String> {
        let mut meta = BTreeMap::new();
        meta.insert("command".to_string(), command.to_string());
        if let Some(backend) = &self.backend {
            meta.insert("backend".to_string(), backend.label());
        }
        meta.insert("model".to_string(), self.model.clone());
        meta.insert("mode".to_string(), self.mode.label().to_string());
        meta.insert("shots".to_string(), self.shots.key().to_string());
        meta.insert("seed".to_string(), self.seed.to_string());
        meta
    }

    /// Effective settings, printed to stderr at startup for audit.
    pub fn print_header(&self, command: &str) {
        eprintln!("storylogic {command}");
        eprintln!(
            "  backend: {}",
            self.backend.as_ref().map_or_else(|| "(none)".to_string(), BackendSpec::label)
        );
        eprintln!("  model: {}", self.model);
        eprintln!("  mode: {}", self.mode.label());
        eprintln!("  shots: {}", self.shots.key());
        eprintln!("  seed: {} (chacha8, the only randomness source)", self.seed);
        eprintln!("  jobs: {}", self.jobs);
        eprintln!("  out: {}", self.out.display());
    }

    /// Mode label usable in file names (`ea+pred` -> `ea_pred`).
    pub fn mode_slug(&self) -> String {
        self.mode.label().replace('+', "_")
    }
}
