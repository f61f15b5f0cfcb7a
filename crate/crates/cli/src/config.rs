//! Run configuration: one TOML file with global keys and a section per
//! subcommand. Command-line flags override file values.

use std::path::{Path, PathBuf};

use iwmf_core::attacks::{AttackConfig, AttackKind};
use iwmf_core::bench::{Pipeline, BENCH_BATCH, BENCH_SIZE};
use iwmf_core::eval::{DefenseSpec, ProtocolConfig};
use iwmf_core::filters::Strategy;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per physical core.
    pub threads: usize,
    pub run_dir: Option<PathBuf>,
    pub purify: PurifySection,
    pub attack: AttackSection,
    pub eval: ProtocolConfig,
    pub sweep: SweepSection,
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PurifySection {
    pub inputs: Vec<PathBuf>,
    pub defense: DefenseSpec,
}

impl Default for PurifySection {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            defense: DefenseSpec::iwmf(0.25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub kind: AttackKind,
    /// Full settings; filled from the preset of `kind` when absent.
    pub config: Option<AttackConfig>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub model_seed: u64,
    /// Saved toy-model weights; overrides `model_seed`.
    pub weights: Option<PathBuf>,
    /// Defense seen by the adaptive attack.
    pub defense: DefenseSpec,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            kind: AttackKind::Sgadv,
            config: None,
            source: None,
            target: None,
            model_seed: 1,
            weights: None,
            defense: DefenseSpec::none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambdas: Vec<f64>,
    pub sigma_ys: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.1, 0.25, 0.4],
            sigma_ys: vec![0.0, 0.1, 0.15, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub pipelines: Vec<Pipeline>,
    pub size: usize,
    pub batch: usize,
    pub repeats: usize,
    pub denoiser: String,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            pipelines: Pipeline::ALL.to_vec(),
            size: BENCH_SIZE,
            batch: BENCH_BATCH,
            repeats: 3,
            denoiser: "identity".into(),
        }
    }
}

/// Defense flags shared by purify, attack, eval and sweep.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct DefenseArgs {
    /// Named system: none, diffpure (sigma_y 0.15), iwmf (lambda 0.40, s 3),
    /// iwmf-diff (lambda 0.25, sigma_y 0.15, s 3)
    #[arg(long)]
    pub system: Option<String>,
    /// Blurring strategy: iwmf, window_mean_noniter, window_median_iter,
    /// mean_filter, median_filter, gaussian_noise, pepper_noise [default: iwmf]
    #[arg(long)]
    pub strategy: Option<String>,
    /// Window amount; windows per channel = int(lambda*H*W)
    /// [default: 0.25 (IWMF-Diff); IWMF alone uses 0.40]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Window size s in pixels [default: 3]
    #[arg(long)]
    pub window_size: Option<usize>,
    /// Gaussian sigma or pepper fraction for the noise strategies [default: 0]
    #[arg(long)]
    pub noise_param: Option<f64>,
    /// Diffusion noise level sigma_y; omit to skip diffusion
    /// [IWMF-Diff and DiffPure use 0.15]
    #[arg(long)]
    pub sigma_y: Option<f64>,
    /// Drop the diffusion stage even if the config file enables it
    #[arg(long, conflicts_with = "sigma_y")]
    pub no_diffusion: bool,
    /// Denoiser: identity, shrinkage:<mean>:<std>, external:<program> [args]
    /// [default: identity]
    #[arg(long)]
    pub denoiser: Option<String>,
    /// Reuse the configured seeds on every call instead of drawing fresh ones
    #[arg(long)]
    pub fixed_seed: bool,
}

impl DefenseArgs {
    pub fn apply(&self, spec: &mut DefenseSpec) -> Result<(), CliError> {
        if let Some(name) = &self.system {
            let seed = spec.seed;
            *spec = iwmf_core::eval::system_preset(name)?.0.with_seed(seed);
        }
        if let Some(s) = &self.strategy {
            spec.strategy = Some(s.parse::<Strategy>()?);
        }
        if let Some(l) = self.lambda {
            spec.lambda = l;
            if spec.strategy.is_none() && l > 0.0 {
                spec.strategy = Some(Strategy::Iwmf);
            }
        }
        if let Some(s) = self.window_size {
            spec.window_size = s;
        }
        if let Some(p) = self.noise_param {
            spec.noise_param = p;
        }
        if self.no_diffusion {
            spec.sigma_y = None;
        }
        if let Some(s) = self.sigma_y {
            spec.sigma_y = Some(s);
        }
        if let Some(d) = &self.denoiser {
            spec.denoiser = d.clone();
        }
        if self.fixed_seed {
            spec.randomize = false;
        }
        Ok(())
    }
}
