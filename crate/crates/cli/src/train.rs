//! `train-prior` and `train-attr`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gsimage::codecio::{load_checkpoint, read_heatmap_raw, save_checkpoint};
use gsimage::{HeatmapF, ImageF};
use gsnet::train::write_train_csv;
use gsnet::{
    train_attribute_net, train_position_net, AttrTrainConfig, AttributeNetF, AttributeTrainer, HeatmapSource,
    PositionNetF, PositionTrainer, PriorTrainConfig, TrainRecord,
};

use crate::corpus::{guard_checkpoint, guard_output, load_corpus, CorpusImage};
use crate::encode::load_posnet;
use crate::{TrainAttrArgs, TrainCommon, TrainPriorArgs};

pub fn prior_config(a: &TrainPriorArgs) -> PriorTrainConfig {
    let c = &a.common;
    let d = PriorTrainConfig::default();
    PriorTrainConfig {
        steps: c.steps,
        lr: c.lr.unwrap_or(d.lr),
        weight_decay: c.weight_decay,
        k_range: (c.k_min, c.k_max),
        t_opt: a.t_opt,
        fit_lr: a.fit_lr,
        fit_position_unit: a.fit_position_unit,
        sigma_proj: a.sigma_proj,
        seed: c.seed,
    }
}

pub fn attr_config(c: &TrainCommon) -> AttrTrainConfig {
    AttrTrainConfig {
        steps: c.steps,
        lr: c.lr.unwrap_or(AttrTrainConfig::default().lr),
        weight_decay: c.weight_decay,
        k_range: (c.k_min, c.k_max),
        seed: c.seed,
    }
}

fn check_common(c: &TrainCommon, extra_inputs: &[&Path]) -> Result<()> {
    anyhow::ensure!(c.k_min >= 1 && c.k_max >= c.k_min, "need 1 <= --k-min <= --k-max");
    let mut inputs: Vec<&Path> = extra_inputs.to_vec();
    inputs.extend(c.resume.as_deref());
    guard_checkpoint(&c.out, &inputs)?;
    if let Some(t) = &c.trace_csv {
        guard_output(t, &inputs)?;
    }
    Ok(())
}

fn images(corpus: &[CorpusImage]) -> Vec<ImageF> {
    corpus.iter().map(|c| c.image.clone()).collect()
}

fn write_trace(path: Option<&Path>, rows: &[TrainRecord]) -> Result<()> {
    if let Some(p) = path {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_train_csv(rows, BufWriter::new(f))?;
    }
    Ok(())
}

fn report(rows: &[TrainRecord], what: &str, out: &Path) {
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        let n = rows.len().min(10);
        let tail = rows[rows.len() - n..].iter().map(|r| r.loss).sum::<f64>() / n as f64;
        println!(
            "{what}: steps {}..={} first loss {:.6} mean of last {n} {:.6}; wrote {}",
            first.step,
            last.step,
            first.loss,
            tail,
            out.display()
        );
    } else {
        println!("{what}: no steps run; wrote {}", out.display());
    }
}

pub fn cmd_train_prior(a: &TrainPriorArgs) -> Result<()> {
    let c = &a.common;
    check_common(c, &[])?;
    let corpus = images(&load_corpus(&c.corpus)?);
    let cfg = prior_config(a);
    let mut trainer = match &c.resume {
        Some(p) => PositionTrainer::from_checkpoint(&load_checkpoint(p)?, &cfg)
            .with_context(|| format!("resuming from {}", p.display()))?,
        None => PositionTrainer::new(PositionNetF::new(c.seed), &cfg),
    };
    let rows = train_position_net(&mut trainer, &corpus, &cfg)?;
    save_checkpoint(&trainer.to_checkpoint(), &c.out).with_context(|| format!("writing {}", c.out.display()))?;
    write_trace(c.trace_csv.as_deref(), &rows)?;
    report(&rows, "position prior", &c.out);
    Ok(())
}

/// Reads `<stem>.heat` for every corpus image and checks its size.
pub fn load_reference_heatmaps(dir: &Path, corpus: &[CorpusImage]) -> Result<Vec<HeatmapF>> {
    corpus
        .iter()
        .map(|c| {
            let p = dir.join(format!("{}.heat", c.name));
            let f = fs::File::open(&p).with_context(|| format!("reference heatmap {}", p.display()))?;
            let h: HeatmapF =
                read_heatmap_raw(std::io::BufReader::new(f)).with_context(|| format!("reading {}", p.display()))?;
            if (h.width, h.height) != (c.image.width, c.image.height) {
                bail!(
                    "{} is {}x{} but {} is {}x{}",
                    p.display(),
                    h.width,
                    h.height,
                    c.path.display(),
                    c.image.width,
                    c.image.height
                );
            }
            Ok(h)
        })
        .collect()
}

pub fn cmd_train_attr(a: &TrainAttrArgs) -> Result<()> {
    let c = &a.common;
    let mut extra: Vec<&Path> = Vec::new();
    extra.extend(a.posnet.as_deref());
    check_common(c, &extra)?;
    if a.posnet.is_none() && a.reference_heatmaps.is_none() {
        bail!("stage II needs a stage I checkpoint (--posnet) or --reference-heatmaps");
    }
    let corpus = load_corpus(&c.corpus)?;
    let cfg = attr_config(c);
    let posnet = a.posnet.as_deref().map(load_posnet).transpose()?;
    let reference = match &a.reference_heatmaps {
        Some(dir) => load_reference_heatmaps(dir, &corpus)?,
        None => Vec::new(),
    };
    let source = match &posnet {
        Some(net) => HeatmapSource::Net(net),
        None => HeatmapSource::Reference(&reference),
    };
    let mut trainer = match &c.resume {
        Some(p) => AttributeTrainer::from_checkpoint(&load_checkpoint(p)?, &cfg)
            .with_context(|| format!("resuming from {}", p.display()))?,
        None => AttributeTrainer::new(AttributeNetF::new(c.seed), &cfg),
    };
    let rows = train_attribute_net(&mut trainer, &source, &images(&corpus), &cfg)?;
    save_checkpoint(&trainer.to_checkpoint(), &c.out).with_context(|| format!("writing {}", c.out.display()))?;
    write_trace(c.trace_csv.as_deref(), &rows)?;
    report(&rows, "attribute network", &c.out);
    Ok(())
}
