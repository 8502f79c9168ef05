//! `flowloss` command implementations.

pub mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flowloss_core::flow_codec::{
    decode_tiff, dequantize, encode_tiff, pack, quantize, read_flo, unpack, write_flo,
    DEFAULT_SCALE,
};
use flowloss_core::loss::{compare_gradient, flow_loss_grad, Sampling};
use flowloss_core::preprocess::DEFAULT_STABILIZE_EPS;
use flowloss_core::similarity::{DEFAULT_EPS, DEFAULT_SIGMA, DEFAULT_TAU};
use flowloss_core::{
    flow_loss, flow_norm_map, stabilize, FeatureMap, FlowField, LossParams, SaliencyMap, TensorFile,
};

/// Threshold on the maximum relative error for `gradcheck` to succeed.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Environment variable capping internal parallelism.
pub const THREADS_ENV: &str = "FLOWLOSS_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "flowloss",
    version,
    about = "Motion-guided objectness loss and optical-flow storage tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress a .flo file into a packed 16-bit Deflate TIFF
    Encode {
        flo: PathBuf,
        tiff: PathBuf,
        /// Quantization steps per pixel of displacement
        #[arg(long, default_value_t = DEFAULT_SCALE)]
        scale: u32,
    },
    /// Expand a packed-flow TIFF back into a .flo file
    Decode { tiff: PathBuf, flo: PathBuf },
    /// Remove background motion: subtract the mean flow, scale into [-1, 1]
    Stabilize { input: PathBuf, output: PathBuf },
    /// Write the per-pixel flow magnitude as a binary PGM
    VizNorm {
        input: PathBuf,
        output: PathBuf,
        /// Stabilize the flow before taking norms
        #[arg(long)]
        stabilized: bool,
    },
    /// Evaluate the loss and write a JSON report
    Loss {
        #[command(flatten)]
        inputs: LossInputs,
        /// Write the report here instead of standard output
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check the analytic gradient against central finite differences
    Gradcheck {
        #[command(flatten)]
        inputs: LossInputs,
        /// Finite-difference step
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Number of coordinates to check (all of them if the tensor is smaller)
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Seed for choosing the sampled coordinates
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the analytic gradient before checking (detector sanity test)
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

#[derive(Debug, Args)]
pub struct LossInputs {
    /// Feature map as a C x H x W tensor file
    #[arg(long)]
    pub features: PathBuf,
    /// Raw optical flow (.flo); it is stabilized before use
    #[arg(long)]
    pub flow: PathBuf,
    /// Optional H x W saliency tensor file choosing each patch's anchor
    #[arg(long)]
    pub saliency: Option<PathBuf>,
    /// Patch size
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Window stride (defaults to the patch size)
    #[arg(long)]
    pub stride: Option<usize>,
    /// Softmax temperature
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Flow kernel radius
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
}

impl LossInputs {
    pub fn params(&self) -> LossParams {
        LossParams {
            patch_size: self.k,
            stride: self.stride.unwrap_or(self.k),
            tau: self.tau,
            sigma: self.sigma,
            eps: DEFAULT_EPS,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn load_flo(path: &Path) -> Result<FlowField> {
    read_flo(&read(path)?).with_context(|| format!("{} is not a valid .flo file", path.display()))
}

fn load_features(path: &Path) -> Result<FeatureMap> {
    TensorFile::decode(&read(path)?)
        .and_then(|t| t.to_feature_map())
        .with_context(|| format!("{} is not a valid feature tensor", path.display()))
}

fn load_saliency(path: &Path) -> Result<SaliencyMap> {
    TensorFile::decode(&read(path)?)
        .and_then(|t| t.to_saliency())
        .with_context(|| format!("{} is not a valid saliency tensor", path.display()))
}

struct Problem {
    features: FeatureMap,
    flow: FlowField,
    saliency: Option<SaliencyMap>,
    params: LossParams,
}

fn load_problem(inputs: &LossInputs) -> Result<Problem> {
    let features = load_features(&inputs.features)?;
    let raw = load_flo(&inputs.flow)?;
    let saliency = inputs.saliency.as_deref().map(load_saliency).transpose()?;
    let (c, h, w) = features.shape();
    if (raw.height(), raw.width()) != (h, w) {
        bail!(
            "dimension mismatch: features are {c}x{h}x{w} (CxHxW) but flow is {}x{} (HxW)",
            raw.height(),
            raw.width()
        );
    }
    if let Some(s) = &saliency {
        if (s.height(), s.width()) != (h, w) {
            bail!(
                "dimension mismatch: features are {c}x{h}x{w} (CxHxW) but saliency is {}x{} (HxW)",
                s.height(),
                s.width()
            );
        }
    }
    let params = inputs.params();
    params.validate()?;
    Ok(Problem {
        features,
        flow: stabilize(&raw, DEFAULT_STABILIZE_EPS),
        saliency,
        params,
    })
}

/// Grayscale P5 image of flow magnitudes scaled so the largest maps to 255.
pub fn norm_pgm(flow: &FlowField) -> Vec<u8> {
    let norms = flow_norm_map(flow);
    let peak = norms.max();
    let mut out = format!("P5\n{} {}\n255\n", norms.width(), norms.height()).into_bytes();
    out.extend(norms.values().iter().map(|&n| {
        if peak < DEFAULT_STABILIZE_EPS {
            0
        } else {
            (255.0 * n / peak).round().clamp(0.0, 255.0) as u8
        }
    }));
    out
}

/// Runs one command, writing results to `out`. Returns the process exit code
/// for outcomes that are not errors (a failed gradient check exits 1).
pub fn execute(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Encode { flo, tiff, scale } => {
            if *scale == 0 {
                bail!("--scale must be at least 1");
            }
            let raw = read(flo)?;
            let flow = read_flo(&raw)
                .with_context(|| format!("{} is not a valid .flo file", flo.display()))?;
            let bytes = encode_tiff(&pack(&quantize(&flow, *scale)), *scale)?;
            write(tiff, &bytes)?;
            writeln!(out, "original: {} bytes", raw.len())?;
            writeln!(out, "compressed: {} bytes", bytes.len())?;
            writeln!(out, "ratio: {:.2}", raw.len() as f64 / bytes.len() as f64)?;
        }
        Command::Decode { tiff, flo } => {
            let (packed, scale) = decode_tiff(&read(tiff)?)
                .with_context(|| format!("cannot decode {}", tiff.display()))?;
            let flow = dequantize(&unpack(&packed, scale)?);
            write(flo, &write_flo(&flow)?)?;
            writeln!(
                out,
                "decoded {}x{} flow (scale {scale})",
                flow.width(),
                flow.height()
            )?;
        }
        Command::Stabilize { input, output } => {
            let flow = stabilize(&load_flo(input)?, DEFAULT_STABILIZE_EPS);
            write(output, &write_flo(&flow)?)?;
        }
        Command::VizNorm {
            input,
            output,
            stabilized,
        } => {
            let mut flow = load_flo(input)?;
            if *stabilized {
                flow = stabilize(&flow, DEFAULT_STABILIZE_EPS);
            }
            write(output, &norm_pgm(&flow))?;
        }
        Command::Loss { inputs, json } => {
            let p = load_problem(inputs)?;
            let report = flow_loss(&p.features, &p.flow, p.saliency.as_ref(), &p.params)?;
            let text = report::to_json(&report, &p.params, p.saliency.is_some());
            match json {
                Some(path) => write(path, text.as_bytes())?,
                None => out.write_all(text.as_bytes())?,
            }
        }
        Command::Gradcheck {
            inputs,
            step,
            samples,
            seed,
            corrupt_gradient,
        } => {
            let p = load_problem(inputs)?;
            let (_, mut gradient) =
                flow_loss_grad(&p.features, &p.flow, p.saliency.as_ref(), &p.params)?;
            if *corrupt_gradient {
                for g in gradient.iter_mut() {
                    *g = *g * 1.5 + 1e-3;
                }
            }
            let sampling = Sampling::Random {
                count: *samples,
                seed: *seed,
            };
            let check = compare_gradient(
                &p.features,
                &p.flow,
                p.saliency.as_ref(),
                &p.params,
                *step,
                sampling,
                &gradient,
            )?;
            writeln!(out, "coordinates: {}", check.entries.len())?;
            writeln!(
                out,
                "max relative error: {}",
                report::format_real(check.max_rel_error)
            )?;
            writeln!(
                out,
                "mean relative error: {}",
                report::format_real(check.mean_rel_error)
            )?;
            if check.max_rel_error >= GRADCHECK_TOLERANCE {
                writeln!(
                    err,
                    "gradient check failed: max relative error >= {GRADCHECK_TOLERANCE:e}"
                )?;
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Reads the thread cap from [`THREADS_ENV`], if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => bail!("{THREADS_ENV} must be a positive integer, got {v:?}"),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{THREADS_ENV}: {e}"),
    }
}
