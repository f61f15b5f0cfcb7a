use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::io::{decode_raw, write_raw};
use crate::tensor::ImageTensor;

/// Predicts the clean image from a state at noise level `sigma`.
pub trait Denoiser: Send + Sync {
    fn predict(&self, noisy: &ImageTensor, sigma: f64) -> Result<ImageTensor>;

    fn name(&self) -> &str;

    /// `false` asks schedulers to call this denoiser from one thread only.
    fn thread_safe(&self) -> bool {
        true
    }
}

impl fmt::Debug for dyn Denoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Denoiser({})", self.name())
    }
}

/// Returns its input: the chain then follows the literal recursion.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn predict(&self, noisy: &ImageTensor, _sigma: f64) -> Result<ImageTensor> {
        Ok(noisy.clone())
    }

    fn name(&self) -> &str {
        "identity"
    }
}

/// Posterior mean for data drawn i.i.d. from `N(prior_mean, prior_std^2)`
/// observed under additive `N(0, sigma^2)` noise.
#[derive(Debug, Clone, Copy)]
pub struct GaussianShrinkage {
    pub prior_mean: f64,
    pub prior_std: f64,
}

impl Denoiser for GaussianShrinkage {
    fn predict(&self, noisy: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
        let p = self.prior_std * self.prior_std;
        let gain = (p / (p + sigma * sigma)) as f32;
        let mu = self.prior_mean as f32;
        let mut out = noisy.clone();
        for v in out.data_mut() {
            *v = mu + gain * (*v - mu);
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "shrinkage"
    }
}

/// Runs an external program per prediction.
///
/// The program receives two raw tensors on stdin, the state and a `1x1x1`
/// tensor holding `sigma`, and must write one raw tensor of the state's
/// shape to stdout.
#[derive(Debug, Clone)]
pub struct ExternalDenoiser {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ExternalDenoiser {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            timeout: Duration::from_secs(60),
        }
    }
}

impl Denoiser for ExternalDenoiser {
    fn predict(&self, noisy: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Denoiser(format!("spawn {}: {e}", self.program.display())))?;

        let mut payload = Vec::new();
        write_raw(&mut payload, noisy).expect("in-memory write");
        let level = ImageTensor::filled(1, 1, 1, sigma as f32)?;
        write_raw(&mut payload, &level).expect("in-memory write");

        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || stdin.write_all(&payload));
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let mut stderr = child.stderr.take().expect("piped stderr");
        let err_reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stderr.read_to_string(&mut buf);
            buf
        });

        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() > self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::Denoiser(format!(
                        "{} timed out after {:?}",
                        self.program.display(),
                        self.timeout
                    )));
                }
                Ok(None) => thread::sleep(Duration::from_millis(2)),
                Err(e) => return Err(Error::Denoiser(format!("wait: {e}"))),
            }
        };
        // a child that exits without draining stdin yields a broken pipe here
        let write_result = writer.join().expect("writer thread");
        let out = reader
            .join()
            .expect("reader thread")
            .map_err(|e| Error::Denoiser(format!("read stdout: {e}")))?;
        let err_text = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(Error::Denoiser(format!(
                "{} exited with {status}: {}",
                self.program.display(),
                err_text.trim()
            )));
        }
        write_result.map_err(|e| Error::Denoiser(format!("write stdin: {e}")))?;
        let pred = decode_raw(&out)?;
        noisy.ensure_same_shape(&pred)?;
        Ok(pred)
    }

    fn name(&self) -> &str {
        "external"
    }

    fn thread_safe(&self) -> bool {
        false
    }
}

/// Named denoiser selection used by configs and the CLI.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserKind {
    Identity,
    Shrinkage { prior_mean: f64, prior_std: f64 },
    External { command: Vec<String> },
}

impl DenoiserKind {
    pub fn build(&self) -> Result<Arc<dyn Denoiser>> {
        Ok(match self {
            DenoiserKind::Identity => Arc::new(IdentityDenoiser),
            DenoiserKind::Shrinkage {
                prior_mean,
                prior_std,
            } => Arc::new(GaussianShrinkage {
                prior_mean: *prior_mean,
                prior_std: *prior_std,
            }),
            DenoiserKind::External { command } => {
                let (program, args) = command
                    .split_first()
                    .ok_or_else(|| Error::InvalidConfig("empty denoiser command".into()))?;
                Arc::new(ExternalDenoiser::new(program, args.to_vec()))
            }
        })
    }
}

impl FromStr for DenoiserKind {
    type Err = Error;

    /// `identity`, `shrinkage:<mean>:<std>` or `external:<program> [args...]`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "identity" {
            return Ok(DenoiserKind::Identity);
        }
        if let Some(rest) = s.strip_prefix("shrinkage:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let parse = |p: &str| {
                p.parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("bad shrinkage parameter `{p}`")))
            };
            if let [m, sd] = parts.as_slice() {
                return Ok(DenoiserKind::Shrinkage {
                    prior_mean: parse(m)?,
                    prior_std: parse(sd)?,
                });
            }
        }
        if let Some(rest) = s.strip_prefix("external:") {
            let command: Vec<String> = rest.split_whitespace().map(String::from).collect();
            if !command.is_empty() {
                return Ok(DenoiserKind::External { command });
            }
        }
        Err(Error::Unknown {
            kind: "denoiser",
            name: s.to_string(),
        })
    }
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserKind::Identity => f.write_str("identity"),
            DenoiserKind::Shrinkage {
                prior_mean,
                prior_std,
            } => write!(f, "shrinkage:{prior_mean}:{prior_std}"),
            DenoiserKind::External { command } => write!(f, "external:{}", command.join(" ")),
        }
    }
}
