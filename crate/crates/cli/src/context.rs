//! Shared command context: global flags, config-file merging, error-to-exit
//! mapping, and the effective-config echo.

use std::path::{Path, PathBuf};

use bodyfit::fit::{EnergyWeights, FitConfig, PerturbScales};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Exit codes: 0 success, 1 input/validation error, 2 non-convergence.
pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    pub fn input(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            exit: EXIT_INPUT,
        }
    }

    /// Prints the machine-readable error record to stderr.
    pub fn report(&self) {
        let record = json!({"error": self.message, "kind": self.kind});
        eprintln!("{record}");
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::input("error", e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Optional config file contents. Flags override these values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub fit: Option<FitConfig>,
    pub weights: Option<EnergyWeights>,
    pub perturb: Option<PerturbScales>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text)
                .map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))?
        };
        Ok(parsed)
    }
}

/// Resolved global settings shared by every command.
#[derive(Debug, Clone, Serialize)]
pub struct Context {
    pub seed: u64,
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub file: FileConfig,
}

impl Context {
    pub fn resolve(
        seed: Option<u64>,
        threads: Option<usize>,
        output_dir: Option<PathBuf>,
        config: Option<&Path>,
    ) -> CliResult<Self> {
        let file = match config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let ctx = Context {
            seed: seed.or(file.seed).unwrap_or(0),
            threads: threads.or(file.threads),
            output_dir: output_dir
                .or_else(|| file.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from(".")),
            file,
        };
        if let Some(n) = ctx.threads {
            // Ignore failure: the pool can only be set once per process.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        std::fs::create_dir_all(&ctx.output_dir)
            .map_err(|e| CliError::input("output-dir", e.to_string()))?;
        Ok(ctx)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    /// Prints the effective config (with the seed always explicit) as one
    /// JSON line on stdout and returns it for embedding into result files.
    pub fn echo_config(&self, command: &str, params: serde_json::Value) -> serde_json::Value {
        let echo = json!({
            "command": command,
            "seed": self.seed,
            "threads": self.threads,
            "output_dir": self.output_dir,
            "params": params,
        });
        println!("{echo}");
        echo
    }
}

pub fn require_path(path: &Path, what: &'static str) -> CliResult<()> {
    if !path.exists() {
        return Err(CliError::input(
            what,
            format!("{} does not exist", path.display()),
        ));
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::input("serialize", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::input("write", e.to_string()))?;
    Ok(())
}
