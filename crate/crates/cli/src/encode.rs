//! `encode` and `decode`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use gsimage::codecio::{
    load_checkpoint, load_gs, load_image, quantize_u8, save_gs, save_heatmap_png, save_image, write_heatmap_raw,
};
use gsimage::fit::write_trace_csv;
use gsimage::init::{gradient_distribution, random_init, sample_positions, DEFAULT_UNIFORM_FLOOR};
use gsimage::metrics::report;
use gsimage::{fit_gaussians, render, FitConfig, GaussianSetF, HeatmapF, ImageF};
use gsnet::{initial_set, AttributeNetF, PositionNetF};

use crate::corpus::guard_output;
use crate::{DecodeArgs, EncodeArgs, FitArgs, InitKind};

pub fn load_posnet(path: &Path) -> Result<PositionNetF> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading position prior {}", path.display()))?;
    PositionNetF::from_checkpoint(&ckpt).with_context(|| format!("position prior {}", path.display()))
}

pub fn load_attrnet(path: &Path) -> Result<AttributeNetF> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading attribute network {}", path.display()))?;
    AttributeNetF::from_checkpoint(&ckpt).with_context(|| format!("attribute network {}", path.display()))
}

/// The map positions are drawn from, scaled to a peak of 1 for previews.
pub fn sampling_heatmap(image: &ImageF, k: usize, init: InitKind, posnet: Option<&PositionNetF>) -> Result<HeatmapF> {
    Ok(match init {
        InitKind::Random => HeatmapF::uniform(image.width, image.height),
        InitKind::Gradient => {
            let p = gradient_distribution(image, DEFAULT_UNIFORM_FLOOR)?;
            let peak = p.iter().cloned().fold(0.0, f64::max);
            HeatmapF::from_values(image.width, image.height, p.iter().map(|v| (v / peak) as f32).collect())
        }
        InitKind::Heatmap => posnet
            .context("--init heatmap needs --posnet")?
            .predict(image, k as f64),
    })
}

/// Initial positions for one strategy. Random init draws uniform cells
/// directly; the other strategies sample their heatmap.
pub fn initial_positions(
    image: &ImageF,
    k: usize,
    seed: u64,
    init: InitKind,
    posnet: Option<&PositionNetF>,
) -> Result<Vec<[f32; 2]>> {
    Ok(match init {
        InitKind::Random => random_init(image.width, image.height, k, seed)?,
        _ => sample_positions(&sampling_heatmap(image, k, init, posnet)?, k, seed)?,
    })
}

pub fn fit_config(fit: &FitArgs, iterations: usize, log_every: usize, seed: u64) -> FitConfig {
    FitConfig {
        iterations,
        lr: fit.lr,
        log_every,
        seed,
        position_unit: fit.position_unit,
        ..FitConfig::default()
    }
}

pub fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.posnet.as_deref());
    inputs.extend(a.attrnet.as_deref());
    for out in [
        Some(&a.output),
        a.trace_csv.as_ref(),
        a.heatmap_raw.as_ref(),
        a.heatmap_png.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        guard_output(out, &inputs)?;
    }
    anyhow::ensure!(a.fit.lr > 0.0, "--lr must be positive");
    let image: ImageF = load_image::<f32>(&a.input)
        .with_context(|| format!("loading {}", a.input.display()))?
        .to_rgb();
    let k = a.k as usize;
    let posnet = a.posnet.as_deref().map(load_posnet).transpose()?;
    let attrnet = a.attrnet.as_deref().map(load_attrnet).transpose()?;

    let positions = initial_positions(&image, k, a.seed, a.init, posnet.as_ref())?;
    if a.heatmap_raw.is_some() || a.heatmap_png.is_some() {
        let heat = sampling_heatmap(&image, k, a.init, posnet.as_ref())?;
        if let Some(p) = &a.heatmap_raw {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_heatmap_raw(&heat, BufWriter::new(f))?;
        }
        if let Some(p) = &a.heatmap_png {
            save_heatmap_png(&heat, p).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    let start = initial_set(&image, &positions, attrnet.as_ref());
    let cfg = fit_config(&a.fit, a.iters, a.log_every, a.seed);
    let out = fit_gaussians(&start, &image, &cfg)?;
    if out.nonfinite_grads > 0 {
        log::warn!("{} non-finite gradient entries were zeroed", out.nonfinite_grads);
    }
    let bytes = save_gs(&out.set, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    if let Some(p) = &a.trace_csv {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_trace_csv(&out.trace, BufWriter::new(f))?;
    }
    // Scored on the 8-bit image a decode would write.
    let m = report(&quantized(&render(&out.set)), &image)?;
    println!("K={k} bytes={bytes} psnr={:.4} ms_ssim={:.6}", m.psnr, m.ms_ssim);
    Ok(())
}

pub fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    guard_output(&a.output, &[&a.input])?;
    let set: GaussianSetF = load_gs(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    save_image(&render(&set), &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    Ok(())
}

/// Rounds every value to the nearest 8-bit code, as image saving does.
pub fn quantized(img: &ImageF) -> ImageF {
    let mut out = img.clone();
    for v in &mut out.data {
        *v = quantize_u8(*v as f64) as f32 / 255.0;
    }
    out
}
