//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 domain
//! error (including failed verification), 3 I/O error. Results go to stdout,
//! diagnostics to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::activations::{approx_error_scan, GeneralizedSilu, ReferenceActivation};
use crate::analysis::{
    conversion_stats, log_spaced, omega_bound, pseudo_mask_sweep, verify_equivalence, OmegaInputs,
    SweepCurve,
};
use crate::constructions::{pseudo_mask_head, transpile, PseudoMaskParams};
use crate::error::Error;
use crate::matrix::MaskMatrix;
use crate::model_io::{load_mask, load_model, save_model, ModelError};
use crate::nn::{AttentionHead, LayerNormConfig, Sublayer, TransformerSpec};

#[derive(Debug, Parser)]
#[command(name = "attnonly", version, about = "Rewrite MLP sublayers as attention heads and check the result")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replace every MLP sublayer with attention heads on the bias-augmented stream.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a converted model against its original on seeded random inputs.
    Verify {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        converted: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Encode each head's mask into its weights so it runs under a looser mask.
    PseudoMask {
        #[arg(long = "in")]
        input: PathBuf,
        /// Mask the rewritten heads run under; must cover every head's mask.
        #[arg(long)]
        target_mask: PathBuf,
        /// A positive number, or `auto` to use the closed-form bound per head.
        #[arg(long)]
        omega: String,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        bound: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the pseudo-masking offset for the given norms and tolerance.
    Omega {
        #[arg(long)]
        n: usize,
        #[arg(long, allow_hyphen_values = true, conflicts_with = "epsilon_pow2")]
        epsilon: Option<f64>,
        /// Give epsilon as a power of two, e.g. `-146` for 2^-146.
        #[arg(long, allow_hyphen_values = true)]
        epsilon_pow2: Option<i32>,
        #[arg(long)]
        bound: f64,
        #[arg(long)]
        qk_norm: f64,
        #[arg(long)]
        ov_norm: f64,
    },
    /// Measure pseudo-masking error over log-spaced offsets and write a CSV.
    Sweep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        target_mask: PathBuf,
        /// `lo:hi:steps`, log-spaced.
        #[arg(long)]
        omegas: String,
        #[arg(long)]
        bound: f64,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to one sublayer (default: every attention head, worst case).
        #[arg(long)]
        sublayer: Option<usize>,
        #[arg(long, requires = "sublayer")]
        head: Option<usize>,
        /// Output path; the CSV goes to stdout when omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Max |target(x) - a1 SiLU(a2 x)| over a grid, refined.
    ScanActivation {
        #[arg(long)]
        target: String,
        #[arg(long, allow_hyphen_values = true)]
        a1: f64,
        #[arg(long, allow_hyphen_values = true)]
        a2: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = -10.0)]
        lo: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 10.0)]
        hi: f64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
    },
    /// Head and parameter counts for converting a model.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Domain(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Domain(_) => 2,
            Self::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Domain(m) | Self::Io(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Domain(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io { .. } => Self::Io(e.to_string()),
            other => Self::Domain(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("cannot access {}: {e}", path.display()))
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    let w = |out: &mut dyn Write, text: &str| -> Result<(), CliError> {
        out.write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write output: {e}")))
    };
    match command {
        Command::Convert { input, out: path } => {
            let spec = load_model(&input)?;
            let converted = transpile(&spec)?;
            save_model(&converted, &path)?;
            let heads: usize = converted
                .sublayers()
                .iter()
                .map(|s| match s {
                    Sublayer::Attention(h) => h.len(),
                    Sublayer::Mlp(_) => 0,
                })
                .sum();
            w(
                out,
                &format!(
                    "converted {}x{} model with {} sublayers into {}x{} attention-only model with {} heads\n",
                    spec.n(),
                    spec.d(),
                    spec.sublayers().len(),
                    converted.n(),
                    converted.d(),
                    heads
                ),
            )?;
            Ok(0)
        }
        Command::Verify {
            original,
            converted,
            trials,
            seed,
            tol,
        } => {
            let a = load_model(&original)?;
            let b = load_model(&converted)?;
            let report = verify_equivalence(&a, &b, trials, seed, tol)?;
            w(out, &report.to_json())?;
            w(out, "\n")?;
            Ok(if report.passed { 0 } else { 2 })
        }
        Command::PseudoMask {
            input,
            target_mask,
            omega,
            epsilon,
            bound,
            out: path,
        } => {
            let spec = load_model(&input)?;
            let lambda2 = load_mask(&target_mask)?;
            let choice = parse_omega(&omega, epsilon, bound)?;
            let (rewritten, lines) = pseudo_mask_model(&spec, &lambda2, choice)?;
            save_model(&rewritten, &path)?;
            w(out, &lines)?;
            Ok(0)
        }
        Command::Omega {
            n,
            epsilon,
            epsilon_pow2,
            bound,
            qk_norm,
            ov_norm,
        } => {
            let eps = match (epsilon, epsilon_pow2) {
                (Some(e), None) => e,
                (None, Some(p)) => 2f64.powi(p),
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --epsilon and --epsilon-pow2".to_string(),
                    ))
                }
            };
            let inputs = OmegaInputs::new(n, eps, bound, qk_norm, ov_norm)?;
            w(out, &format!("{}\n", omega_bound(&inputs)?))?;
            Ok(0)
        }
        Command::Sweep {
            input,
            target_mask,
            omegas,
            bound,
            samples,
            seed,
            sublayer,
            head,
            csv,
        } => {
            let spec = load_model(&input)?;
            let lambda2 = load_mask(&target_mask)?;
            let grid = parse_grid(&omegas)?;
            let heads = select_heads(&spec, sublayer, head)?;
            let mut worst = vec![0.0f64; grid.len()];
            for h in heads {
                let curve = pseudo_mask_sweep(h, &lambda2, &grid, bound, samples, seed)?;
                for (acc, &e) in worst.iter_mut().zip(curve.errors()) {
                    *acc = acc.max(e);
                }
            }
            let text = SweepCurve::new(grid, worst)?.to_csv();
            match csv {
                Some(path) => {
                    fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
                    w(out, &format!("wrote {} rows to {}\n", text.lines().count() - 1, path.display()))?;
                }
                None => w(out, &text)?,
            }
            Ok(0)
        }
        Command::ScanActivation {
            target,
            a1,
            a2,
            lo,
            hi,
            step,
        } => {
            let target: ReferenceActivation = target
                .parse()
                .map_err(|_| CliError::Usage(format!("unknown --target {target:?}; use gelu, relu, silu or sigmoid")))?;
            let approx = GeneralizedSilu::new(a1, a2)?;
            let scan = approx_error_scan(target, &approx, lo, hi, step)?;
            w(out, &format!("max_err {}\nargmax {}\n", scan.max_err, scan.argmax))?;
            Ok(0)
        }
        Command::Stats { input } => {
            let spec = load_model(&input)?;
            let stats = conversion_stats(&spec);
            let text = serde_json::to_string_pretty(&stats).expect("stats serialize");
            w(out, &format!("{text}\n"))?;
            Ok(0)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum OmegaChoice {
    Fixed(f64),
    Auto { epsilon: f64, bound: f64 },
}

fn parse_omega(omega: &str, epsilon: Option<f64>, bound: Option<f64>) -> Result<OmegaChoice, CliError> {
    if omega == "auto" {
        match (epsilon, bound) {
            (Some(epsilon), Some(bound)) => Ok(OmegaChoice::Auto { epsilon, bound }),
            _ => Err(CliError::Usage("--omega auto needs --epsilon and --bound".to_string())),
        }
    } else {
        omega
            .parse::<f64>()
            .map(OmegaChoice::Fixed)
            .map_err(|_| CliError::Usage(format!("--omega must be a number or `auto`, got {omega:?}")))
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || CliError::Usage(format!("--omegas must look like lo:hi:steps, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let steps: usize = parts[2].parse().map_err(|_| bad())?;
    Ok(log_spaced(lo, hi, steps)?)
}

fn select_heads(
    spec: &TransformerSpec<f64>,
    sublayer: Option<usize>,
    head: Option<usize>,
) -> Result<Vec<&AttentionHead<f64>>, CliError> {
    let attention = |s: usize| -> Result<&Vec<AttentionHead<f64>>, CliError> {
        match spec.sublayers().get(s) {
            Some(Sublayer::Attention(h)) => Ok(h),
            Some(Sublayer::Mlp(_)) => Err(CliError::Domain(format!("sublayer {s} is an MLP; convert the model first"))),
            None => Err(CliError::Usage(format!("model has no sublayer {s}"))),
        }
    };
    match (sublayer, head) {
        (Some(s), Some(h)) => attention(s)?
            .get(h)
            .map(|x| vec![x])
            .ok_or_else(|| CliError::Usage(format!("sublayer {s} has no head {h}"))),
        (Some(s), None) => Ok(attention(s)?.iter().collect()),
        _ => {
            let mut all = Vec::new();
            for s in 0..spec.sublayers().len() {
                all.extend(attention(s)?.iter());
            }
            if all.is_empty() {
                return Err(CliError::Domain("model has no attention heads".to_string()));
            }
            Ok(all)
        }
    }
}

/// Rewrites every head to run under `lambda2` on `[X | I_N]`.
fn pseudo_mask_model(
    spec: &TransformerSpec<f64>,
    lambda2: &MaskMatrix,
    choice: OmegaChoice,
) -> Result<(TransformerSpec<f64>, String), CliError> {
    let mut lines = String::new();
    let mut sublayers = Vec::with_capacity(spec.sublayers().len());
    for (s, sub) in spec.sublayers().iter().enumerate() {
        let heads = match sub {
            Sublayer::Attention(h) => h,
            Sublayer::Mlp(_) => {
                return Err(CliError::Domain(format!(
                    "sublayer {s} is an MLP; convert the model to attention-only first"
                )))
            }
        };
        let mut rewritten = Vec::with_capacity(heads.len());
        for (i, h) in heads.iter().enumerate() {
            let omega = match choice {
                OmegaChoice::Fixed(o) => o,
                OmegaChoice::Auto { epsilon, bound } => {
                    omega_bound(&OmegaInputs::for_head(h, epsilon, bound)?)?
                }
            };
            let params = PseudoMaskParams::new(omega, h.mask().clone(), lambda2.clone())
                .map_err(|e| CliError::Domain(format!("sublayer {s} head {i}: {e}")))?;
            rewritten.push(pseudo_mask_head(h, &params)?);
            lines.push_str(&format!("sublayer {s} head {i} omega {omega}\n"));
        }
        sublayers.push(Sublayer::Attention(rewritten));
    }
    let ln = spec.layernorm();
    let out = TransformerSpec::new(
        spec.n(),
        spec.d() + spec.n(),
        sublayers,
        LayerNormConfig {
            enabled: ln.enabled,
            epsilon: ln.epsilon,
            normalized_width: ln.normalized_width,
        },
    )?;
    Ok((out, lines))
}
