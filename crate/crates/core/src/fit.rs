//! Gradient-based fitting of a [`GaussianSet`] to a target image.
//!
//! One iteration is `render → loss_mse → render_backward → adam_step`
//! followed by clamping every primitive back into its valid range.
//! Positions are optimized in units of half the larger image extent, so a
//! learning rate means the same relative motion at every resolution; the
//! other parameters are optimized in their stored units.

use std::io::{self, Write};

use crate::error::ShapeError;
use crate::gsmodel::{Gaussian2D, GaussianSet, PARAMS_PER_GAUSSIAN};
use crate::metrics::psnr_from_mse;
use crate::raster::{loss_mse, render_backward_with, render_with, ImageBuffer, RasterConfig};
use crate::scalar::Real;

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, lr: T) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
        }
    }
}

/// Applies one Adam update in place. Non-finite gradient entries are treated
/// as zero; their count is returned.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>) -> Result<usize, ShapeError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(ShapeError::Mismatch {
            expected: format!("{} parameters", state.m.len()),
            actual: format!("{} params / {} grads", params.len(), grads.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() / (T::one() - state.beta1.powi(t));
    let bc2 = T::one() / (T::one() - state.beta2.powi(t));
    let (b1, b2) = (state.beta1, state.beta2);
    let mut nonfinite = 0;
    for i in 0..params.len() {
        let mut g = grads[i];
        if !g.is_finite() {
            g = T::zero();
            nonfinite += 1;
        }
        let m = b1 * state.m[i] + (T::one() - b1) * g;
        let v = b2 * state.v[i] + (T::one() - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m * bc1;
        let v_hat = v * bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(nonfinite)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from `lr` to zero over the run.
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    /// Trace sampling interval; 0 records only the final iteration.
    pub log_every: usize,
    /// Seed recorded with the run. Fitting itself is deterministic; callers
    /// use it to draw initial positions.
    pub seed: u64,
    /// Pixels per optimizer unit for positions. Adam steps are roughly
    /// `lr` in parameter units, so this sets how far centres move per step.
    pub position_unit: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            lr: 2e-3,
            lr_schedule: LrSchedule::Constant,
            log_every: 100,
            seed: 0,
            position_unit: 1.0,
        }
    }
}

impl FitConfig {
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    fn lr_at(&self, iter: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = iter as f64 / self.iterations.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub psnr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub set: GaussianSet<T>,
    pub trace: Vec<TracePoint>,
    /// Gradient entries that were non-finite and zeroed.
    pub nonfinite_grads: usize,
}

/// Steppable optimizer over one set and one target.
pub struct Fitter<T: Real> {
    set: GaussianSet<T>,
    target: ImageBuffer<T>,
    cfg: FitConfig,
    raster: RasterConfig<T>,
    adam: AdamState<T>,
    params: Vec<T>,
    pos_unit: T,
    iteration: usize,
    nonfinite: usize,
}

impl<T: Real> Fitter<T> {
    pub fn new(set: GaussianSet<T>, target: &ImageBuffer<T>, cfg: &FitConfig) -> Result<Self, ShapeError> {
        if target.width != set.width || target.height != set.height || target.channels != 3 {
            return Err(ShapeError::Mismatch {
                expected: format!("{}x{}x3", set.width, set.height),
                actual: format!("{}x{}x{}", target.width, target.height, target.channels),
            });
        }
        let pos_unit = T::of(cfg.position_unit);
        let mut set = set;
        set.clamp_in_place();
        let mut params = set.to_flat();
        for p in params.chunks_exact_mut(PARAMS_PER_GAUSSIAN) {
            p[0] /= pos_unit;
            p[1] /= pos_unit;
        }
        Ok(Self {
            adam: AdamState::new(params.len(), T::of(cfg.lr)),
            set,
            target: target.clone(),
            cfg: cfg.clone(),
            raster: RasterConfig::default(),
            params,
            pos_unit,
            iteration: 0,
            nonfinite: 0,
        })
    }

    pub fn set(&self) -> &GaussianSet<T> {
        &self.set
    }

    pub fn into_set(self) -> GaussianSet<T> {
        self.set
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn nonfinite_grads(&self) -> usize {
        self.nonfinite
    }

    /// Loss of the current parameters.
    pub fn evaluate(&self) -> f64 {
        let img = render_with(&self.set, &self.raster);
        loss_mse(&img, &self.target).map(|(l, _)| l.wide()).unwrap_or(f64::NAN)
    }

    /// One optimization step; returns the loss of the parameters *before*
    /// the update.
    pub fn step(&mut self) -> f64 {
        let img = render_with(&self.set, &self.raster);
        let (loss, dl) = loss_mse(&img, &self.target).expect("shapes checked at construction");
        let grads = render_backward_with(&self.set, &dl, &self.raster).expect("shapes checked at construction");
        let mut flat = grads.to_flat();
        for g in flat.chunks_exact_mut(PARAMS_PER_GAUSSIAN) {
            g[0] *= self.pos_unit;
            g[1] *= self.pos_unit;
        }
        self.adam.lr = T::of(self.cfg.lr_at(self.iteration));
        self.nonfinite += adam_step(&mut self.params, &flat, &mut self.adam).expect("parameter layout is fixed");
        self.sync_set();
        self.iteration += 1;
        loss.wide()
    }

    fn sync_set(&mut self) {
        for (g, p) in self
            .set
            .gaussians
            .iter_mut()
            .zip(self.params.chunks_exact(PARAMS_PER_GAUSSIAN))
        {
            *g = Gaussian2D::new(
                [p[0] * self.pos_unit, p[1] * self.pos_unit],
                [p[2], p[3]],
                p[4],
                [p[5], p[6], p[7]],
            );
        }
        self.set.clamp_in_place();
        for (g, p) in self
            .set
            .gaussians
            .iter()
            .zip(self.params.chunks_exact_mut(PARAMS_PER_GAUSSIAN))
        {
            p[0] = g.mu[0] / self.pos_unit;
            p[1] = g.mu[1] / self.pos_unit;
            p[2] = g.log_s[0];
            p[3] = g.log_s[1];
            p[4] = g.theta;
            p[5] = g.color[0];
            p[6] = g.color[1];
            p[7] = g.color[2];
        }
    }
}

/// Runs `cfg.iterations` optimization steps and records a PSNR trace.
pub fn fit_gaussians<T: Real>(
    set: &GaussianSet<T>,
    target: &ImageBuffer<T>,
    cfg: &FitConfig,
) -> Result<FitOutcome<T>, ShapeError> {
    if cfg.iterations == 0 {
        Fitter::new(set.clone(), target, cfg)?;
        return Ok(FitOutcome {
            set: set.clone(),
            trace: Vec::new(),
            nonfinite_grads: 0,
        });
    }
    let mut fitter = Fitter::new(set.clone(), target, cfg)?;
    let mut trace = Vec::new();
    for i in 0..cfg.iterations {
        let loss = fitter.step();
        if cfg.log_every > 0 && i % cfg.log_every == 0 {
            trace.push(TracePoint {
                iteration: i,
                psnr: psnr_from_mse(loss),
                loss,
            });
        }
    }
    let loss = fitter.evaluate();
    trace.push(TracePoint {
        iteration: cfg.iterations,
        psnr: psnr_from_mse(loss),
        loss,
    });
    if fitter.nonfinite_grads() > 0 {
        log::warn!("{} non-finite gradient entries zeroed", fitter.nonfinite_grads());
    }
    Ok(FitOutcome {
        nonfinite_grads: fitter.nonfinite_grads(),
        set: fitter.into_set(),
        trace,
    })
}

/// `ln(0.5·√(W·H/K))`: half the mean spacing of `K` evenly spread centres.
pub fn density_log_scale(width: usize, height: usize, k: usize) -> f64 {
    (0.5 * ((width * height) as f64 / k.max(1) as f64).sqrt()).ln()
}

/// Initial attributes for positions that come without them: colour sampled
/// at the containing pixel, isotropic scale `0.5·√(W·H/K)`, no rotation.
pub fn heuristic_attributes<T: Real>(positions: &[[T; 2]], target: &ImageBuffer<T>) -> GaussianSet<T> {
    let (w, h) = (target.width, target.height);
    let log_s = T::of(density_log_scale(w, h, positions.len()));
    let gaussians = positions
        .iter()
        .map(|&mu| {
            let x = mu[0].floor().to_usize().unwrap_or(0).min(w.saturating_sub(1));
            let y = mu[1].floor().to_usize().unwrap_or(0).min(h.saturating_sub(1));
            let px = target.pixel(x, y);
            let color = if target.channels == 3 {
                [px[0], px[1], px[2]]
            } else {
                [px[0]; 3]
            };
            Gaussian2D::new(mu, [log_s, log_s], T::zero(), color)
        })
        .collect();
    let mut set = GaussianSet::new(w, h, gaussians);
    set.clamp_in_place();
    set
}

/// Writes `iteration,psnr,loss` rows.
pub fn write_trace_csv<W: Write>(trace: &[TracePoint], mut sink: W) -> io::Result<()> {
    writeln!(sink, "iteration,psnr,loss")?;
    for p in trace {
        writeln!(sink, "{},{:.6},{:.9e}", p.iteration, p.psnr, p.loss)?;
    }
    Ok(())
}
