//! `bench`: iteration-indexed quality table over a corpus.

use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::{bail, Context, Result};
use gsimage::metrics::report;
use gsimage::{render, Fitter, ImageF};
use gsnet::{initial_set, AttributeNetF, PositionNetF};
use rayon::prelude::*;

use crate::corpus::{guard_output, load_corpus, CorpusImage};
use crate::encode::{fit_config, initial_positions, load_attrnet, load_posnet};
use crate::{AttrKind, BenchArgs, FitArgs, InitKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strategy {
    pub init: InitKind,
    pub attributes: AttrKind,
}

impl Strategy {
    /// The `init` column: the position strategy, suffixed when attributes
    /// come from the network.
    pub fn label(&self) -> String {
        match self.attributes {
            AttrKind::Heuristic => self.init.name().to_string(),
            AttrKind::Net => format!("{}+attrnet", self.init.name()),
        }
    }

    /// Row name in the ablation grid, if this is one of its cells.
    pub fn ablation_name(&self) -> Option<&'static str> {
        match (self.init, self.attributes) {
            (InitKind::Heatmap, AttrKind::Net) => Some("full"),
            (InitKind::Random, AttrKind::Net) => Some("w/o positions"),
            (InitKind::Heatmap, AttrKind::Heuristic) => Some("w/o attributes"),
            (InitKind::Random, AttrKind::Heuristic) => Some("w/o both"),
            _ => None,
        }
    }
}

pub const ABLATION: [Strategy; 4] = [
    Strategy {
        init: InitKind::Heatmap,
        attributes: AttrKind::Net,
    },
    Strategy {
        init: InitKind::Random,
        attributes: AttrKind::Net,
    },
    Strategy {
        init: InitKind::Heatmap,
        attributes: AttrKind::Heuristic,
    },
    Strategy {
        init: InitKind::Random,
        attributes: AttrKind::Heuristic,
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub image: String,
    pub k: usize,
    pub init: String,
    pub iteration: usize,
    pub psnr: f64,
    pub ms_ssim: f64,
}

pub struct Nets<'a> {
    pub posnet: Option<&'a PositionNetF>,
    pub attrnet: Option<&'a AttributeNetF>,
}

/// Metrics at each checkpoint of one fit: `(iteration, psnr, ms_ssim)`.
pub fn fit_checkpoints(
    image: &ImageF,
    k: usize,
    strategy: Strategy,
    seed: u64,
    checkpoints: &[usize],
    fit: &FitArgs,
    nets: &Nets<'_>,
) -> Result<Vec<(usize, f64, f64)>> {
    let positions = initial_positions(image, k, seed, strategy.init, nets.posnet)?;
    let attrnet = match strategy.attributes {
        AttrKind::Heuristic => None,
        AttrKind::Net => Some(nets.attrnet.context("net attributes need --attrnet")?),
    };
    let start = initial_set(image, &positions, attrnet);
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let mut fitter = Fitter::new(start, image, &fit_config(fit, last, 0, seed))?;
    let mut out = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        while fitter.iteration() < c {
            fitter.step();
        }
        let m = report(&render(fitter.set()), image)?;
        out.push((c, m.psnr, m.ms_ssim));
    }
    Ok(out)
}

/// Every image × K × strategy, averaged over `seeds` consecutive seeds from
/// `base_seed`. Jobs run in parallel; row order is fixed.
#[allow(clippy::too_many_arguments)]
pub fn run_bench(
    corpus: &[CorpusImage],
    ks: &[usize],
    strategies: &[Strategy],
    checkpoints: &[usize],
    seeds: u64,
    base_seed: u64,
    fit: &FitArgs,
    nets: &Nets<'_>,
) -> Result<Vec<BenchRow>> {
    let mut checkpoints = checkpoints.to_vec();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let mut jobs = Vec::new();
    for img in corpus {
        for &k in ks {
            for &s in strategies {
                for seed in 0..seeds {
                    jobs.push((img, k, s, base_seed + seed));
                }
            }
        }
    }
    let results: Vec<Vec<(usize, f64, f64)>> = jobs
        .par_iter()
        .map(|&(img, k, s, seed)| fit_checkpoints(&img.image, k, s, seed, &checkpoints, fit, nets))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (chunk, group) in results.chunks(seeds as usize).zip(jobs.chunks(seeds as usize)) {
        let (img, k, s, _) = group[0];
        for (ci, &iteration) in checkpoints.iter().enumerate() {
            let n = chunk.len() as f64;
            rows.push(BenchRow {
                image: img.name.clone(),
                k,
                init: s.label(),
                iteration,
                psnr: chunk.iter().map(|r| r[ci].1).sum::<f64>() / n,
                ms_ssim: chunk.iter().map(|r| r[ci].2).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "image,K,init,iteration,PSNR,MS-SSIM")?;
    for r in rows {
        writeln!(
            sink,
            "{},{},{},{},{:.6},{:.6}",
            r.image, r.k, r.init, r.iteration, r.psnr, r.ms_ssim
        )?;
    }
    Ok(())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median PSNR over images for one label, K and iteration.
pub fn median_psnr(rows: &[BenchRow], label: &str, k: usize, iteration: usize) -> f64 {
    median(
        rows.iter()
            .filter(|r| r.init == label && r.k == k && r.iteration == iteration)
            .map(|r| r.psnr)
            .collect(),
    )
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut inputs = vec![a.corpus.as_path()];
    inputs.extend(a.posnet.as_deref());
    inputs.extend(a.attrnet.as_deref());
    guard_output(&a.out, &inputs)?;
    anyhow::ensure!(a.k.iter().all(|&k| k >= 1), "every K must be at least 1");
    anyhow::ensure!(!a.iters.is_empty(), "--iters needs at least one checkpoint");
    let strategies: Vec<Strategy> = if a.ablation {
        ABLATION.to_vec()
    } else {
        a.init
            .iter()
            .flat_map(|&init| {
                a.attributes
                    .iter()
                    .map(move |&attributes| Strategy { init, attributes })
            })
            .collect()
    };
    let needs_pos = strategies.iter().any(|s| s.init == InitKind::Heatmap);
    let needs_attr = strategies.iter().any(|s| s.attributes == AttrKind::Net);
    if needs_pos && a.posnet.is_none() {
        bail!("heatmap init needs --posnet");
    }
    if needs_attr && a.attrnet.is_none() {
        bail!("net attributes need --attrnet");
    }
    let corpus = load_corpus(&a.corpus)?;
    let posnet = a.posnet.as_deref().map(load_posnet).transpose()?;
    let attrnet = a.attrnet.as_deref().map(load_attrnet).transpose()?;
    let nets = Nets {
        posnet: posnet.as_ref(),
        attrnet: attrnet.as_ref(),
    };
    let rows = run_bench(&corpus, &a.k, &strategies, &a.iters, a.seeds, a.seed, &a.fit, &nets)?;
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(f);
    write_bench_csv(&rows, &mut w)?;
    w.flush()?;

    let last = a.iters.iter().copied().max().unwrap_or(0);
    for &k in &a.k {
        for s in &strategies {
            let name = s
                .ablation_name()
                .filter(|_| a.ablation)
                .map(|n| format!(" ({n})"))
                .unwrap_or_default();
            println!(
                "K={k} iteration {last}: {}{name} median PSNR {:.3} dB",
                s.label(),
                median_psnr(&rows, &s.label(), k, last)
            );
        }
    }
    Ok(())
}
