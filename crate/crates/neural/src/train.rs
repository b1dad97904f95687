//! Stage I (bootstrapped position prior) and stage II (attribute network
//! trained through the rasterizer).
//!
//! Every step draws its image, budget and sampling seed from an RNG keyed on
//! `(seed, step)`, so a run resumed from a checkpoint continues exactly where
//! an uninterrupted run would have been.

use std::io::{self, Write};

use gsimage::codecio::Checkpoint;
use gsimage::init::{project_positions, sample_positions, DEFAULT_SIGMA_PROJ};
use gsimage::raster::{loss_mse, render, render_backward};
use gsimage::{density_log_scale, fit_gaussians, heuristic_attributes, FitConfig, Heatmap, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attributes::{gather_attributes, gather_backward, AttributeMaps};
use crate::error::NeuralError;
use crate::params::AdamW;
use crate::scalar::NeuralReal;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::unet::{AttributeNet, PositionNet};

#[derive(Debug, Clone, PartialEq)]
pub struct PriorTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Budgets are drawn log-uniformly from this closed range.
    pub k_range: (usize, usize),
    /// Inner fitting iterations per step.
    pub t_opt: usize,
    pub fit_lr: f64,
    /// Position unit of the inner fit; see [`FitConfig::position_unit`].
    pub fit_position_unit: f64,
    pub sigma_proj: f64,
    pub seed: u64,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: 5e-4,
            weight_decay: 0.01,
            k_range: (100, 4000),
            t_opt: 300,
            fit_lr: 2e-3,
            fit_position_unit: 1.0,
            sigma_proj: DEFAULT_SIGMA_PROJ,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttrTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub k_range: (usize, usize),
    pub seed: u64,
}

impl Default for AttrTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: 1e-4,
            weight_decay: 0.01,
            k_range: (100, 4000),
            seed: 0,
        }
    }
}

/// One row of a training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub image: usize,
    pub k: usize,
    pub loss: f64,
}

pub fn write_train_csv<W: Write>(rows: &[TrainRecord], mut sink: W) -> io::Result<()> {
    writeln!(sink, "step,image,k,loss")?;
    for r in rows {
        writeln!(sink, "{},{},{},{}", r.step, r.image, r.k, r.loss)?;
    }
    Ok(())
}

struct StepDraw {
    image: usize,
    k: usize,
    sample_seed: u64,
}

fn draw(seed: u64, step: u64, n_images: usize, k_range: (usize, usize)) -> StepDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let image = rng.gen_range(0..n_images);
    let (lo, hi) = (k_range.0.max(1) as f64, k_range.1.max(k_range.0).max(1) as f64);
    let k = if hi > lo {
        rng.gen_range(lo.ln()..=hi.ln()).exp().round() as usize
    } else {
        lo as usize
    };
    StepDraw {
        image,
        k: k.max(1),
        sample_seed: rng.gen(),
    }
}

/// Position network with its optimizer state and step counter.
pub struct PositionTrainer<T> {
    pub net: PositionNet<T>,
    pub opt: AdamW<T>,
    pub step: u64,
}

impl<T: NeuralReal> PositionTrainer<T> {
    pub fn new(net: PositionNet<T>, cfg: &PriorTrainConfig) -> Self {
        let opt = AdamW::new(&net.store, cfg.lr, cfg.weight_decay);
        Self { net, opt, step: 0 }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &PriorTrainConfig) -> Result<Self, NeuralError> {
        let net = PositionNet::from_checkpoint(ckpt)?;
        let mut t = Self::new(net, cfg);
        t.opt.load_records(&t.net.store, &ckpt.tensors, ckpt.step);
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.net.to_checkpoint(Some(&self.opt), self.step)
    }

    /// predict → sample → heuristic attributes → fit → project → regress.
    pub fn train_step(
        &mut self,
        corpus: &[ImageBuffer<T>],
        cfg: &PriorTrainConfig,
    ) -> Result<TrainRecord, NeuralError> {
        let d = draw(cfg.seed, self.step, corpus.len(), cfg.k_range);
        let image = &corpus[d.image];
        let (w, h) = (image.width, image.height);
        let mut tape = Tape::new();
        let pred = self.net.forward(&mut tape, image, d.k as f64);
        let heat = Heatmap::from_values(w, h, tape.value(pred).data.clone());
        let p_init = sample_positions(&heat, d.k, d.sample_seed)?;
        let p_opt = if cfg.t_opt == 0 {
            p_init
        } else {
            let fit_cfg = FitConfig {
                iterations: cfg.t_opt,
                lr: cfg.fit_lr,
                log_every: 0,
                position_unit: cfg.fit_position_unit,
                ..FitConfig::default()
            };
            let set = heuristic_attributes(&p_init, &image.to_rgb());
            fit_gaussians(&set, &image.to_rgb(), &fit_cfg)?.set.positions()
        };
        let target = project_positions(&p_opt, w, h, cfg.sigma_proj);
        let pv = &tape.value(pred).data;
        let n = pv.len() as f64;
        let mut loss = 0.0;
        let mut seed = Tensor::zeros(&tape.value(pred).shape);
        for ((s, &p), &t) in seed.data.iter_mut().zip(pv).zip(&target.values) {
            let diff = p.wide() - t.wide();
            loss += diff * diff;
            *s = T::of(2.0 * diff / n);
        }
        let grads = tape.backward(pred, seed)?;
        self.opt.lr = cfg.lr;
        let pg = grads.params(&self.net.store);
        let bad = self.opt.update(&mut self.net.store, &pg);
        if bad > 0 {
            log::warn!("step {}: {bad} non-finite gradient entries zeroed", self.step);
        }
        let rec = TrainRecord {
            step: self.step,
            image: d.image,
            k: d.k,
            loss: loss / n,
        };
        self.step += 1;
        Ok(rec)
    }
}

/// Runs `cfg.steps` bootstrapping steps and returns their trace.
pub fn train_position_net<T: NeuralReal>(
    trainer: &mut PositionTrainer<T>,
    corpus: &[ImageBuffer<T>],
    cfg: &PriorTrainConfig,
) -> Result<Vec<TrainRecord>, NeuralError> {
    if corpus.is_empty() {
        return Err(NeuralError::EmptyCorpus);
    }
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let r = trainer.train_step(corpus, cfg)?;
        log::debug!("prior step {} K={} loss={:.6}", r.step, r.k, r.loss);
        trace.push(r);
    }
    Ok(trace)
}

/// Where stage II takes its sampling heatmaps from.
pub enum HeatmapSource<'a, T> {
    /// A frozen position network evaluated at the step's budget.
    Net(&'a PositionNet<T>),
    /// One fixed heatmap per corpus image.
    Reference(&'a [Heatmap<T>]),
}

impl<T: NeuralReal> HeatmapSource<'_, T> {
    fn heatmap(&self, index: usize, image: &ImageBuffer<T>, k: usize) -> Heatmap<T> {
        match self {
            HeatmapSource::Net(net) => net.predict(image, k as f64),
            HeatmapSource::Reference(maps) => maps[index].clone(),
        }
    }
}

pub struct AttributeTrainer<T> {
    pub net: AttributeNet<T>,
    pub opt: AdamW<T>,
    pub step: u64,
}

impl<T: NeuralReal> AttributeTrainer<T> {
    pub fn new(net: AttributeNet<T>, cfg: &AttrTrainConfig) -> Self {
        let opt = AdamW::new(&net.store, cfg.lr, cfg.weight_decay);
        Self { net, opt, step: 0 }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &AttrTrainConfig) -> Result<Self, NeuralError> {
        let net = AttributeNet::from_checkpoint(ckpt)?;
        let mut t = Self::new(net, cfg);
        t.opt.load_records(&t.net.store, &ckpt.tensors, ckpt.step);
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.net.to_checkpoint(Some(&self.opt), self.step)
    }

    /// sample → predict maps → gather → render → reconstruction loss →
    /// backprop through the rasterizer and the gather.
    pub fn train_step(
        &mut self,
        corpus: &[ImageBuffer<T>],
        heatmaps: &HeatmapSource<'_, T>,
        cfg: &AttrTrainConfig,
    ) -> Result<TrainRecord, NeuralError> {
        let d = draw(cfg.seed, self.step, corpus.len(), cfg.k_range);
        let image = corpus[d.image].to_rgb();
        let (w, h) = (image.width, image.height);
        let heat = heatmaps.heatmap(d.image, &image, d.k);
        let positions = sample_positions(&heat, d.k, d.sample_seed)?;
        let mut tape = Tape::new();
        let out = self.net.forward(&mut tape, &image);
        let maps = AttributeMaps::from_tensor(tape.value(out));
        let base = T::of(density_log_scale(w, h, d.k));
        let set = gather_attributes(&maps, &positions, base);
        let (loss, dl) = loss_mse(&render(&set), &image)?;
        let g = render_backward(&set, &dl)?;
        let seed = gather_backward(&maps, &positions, base, &g);
        let grads = tape.backward(out, seed)?;
        self.opt.lr = cfg.lr;
        let pg = grads.params(&self.net.store);
        let bad = self.opt.update(&mut self.net.store, &pg);
        if bad > 0 {
            log::warn!("step {}: {bad} non-finite gradient entries zeroed", self.step);
        }
        let rec = TrainRecord {
            step: self.step,
            image: d.image,
            k: d.k,
            loss: loss.wide(),
        };
        self.step += 1;
        Ok(rec)
    }
}

pub fn train_attribute_net<T: NeuralReal>(
    trainer: &mut AttributeTrainer<T>,
    heatmaps: &HeatmapSource<'_, T>,
    corpus: &[ImageBuffer<T>],
    cfg: &AttrTrainConfig,
) -> Result<Vec<TrainRecord>, NeuralError> {
    if corpus.is_empty() {
        return Err(NeuralError::EmptyCorpus);
    }
    if let HeatmapSource::Reference(maps) = heatmaps {
        if maps.len() != corpus.len() {
            return Err(NeuralError::Shape(format!(
                "{} reference heatmaps for {} images",
                maps.len(),
                corpus.len()
            )));
        }
    }
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let r = trainer.train_step(corpus, heatmaps, cfg)?;
        log::debug!("attr step {} K={} loss={:.6}", r.step, r.k, r.loss);
        trace.push(r);
    }
    Ok(trace)
}
