mod common;

use std::path::Path;
use std::time::Instant;

use gsimage::codecio::load_image;
use gsimage::init::random_init;
use gsimage::metrics::psnr;
use gsimage::{fit_gaussians, heuristic_attributes, render, FitConfig, Gaussian2D, GaussianSet, ImageBuffer};

fn corpus(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

#[test]
fn single_blob_is_recovered() {
    let truth = Gaussian2D::<f64>::isotropic([21.3, 27.8], 4.0, [0.8, 0.4, 0.2]);
    let target = render(&GaussianSet::new(48, 48, vec![truth]));
    // A lone Gaussian renders as a flat disc, and a disc that is too small
    // gets no gradient from the uncovered target pixels. Start wide so the
    // support shrinks onto the target from outside.
    let start = GaussianSet::new(48, 48, vec![Gaussian2D::isotropic([24.0, 24.0], 6.0, [0.5, 0.5, 0.5])]);
    let cfg = FitConfig {
        position_unit: 16.0,
        ..FitConfig::default().with_iterations(500).with_lr(4e-3)
    };
    let t = Instant::now();
    let out = fit_gaussians(&start, &target, &cfg).unwrap();
    let g = &out.set.gaussians[0];
    let p = psnr(&render(&out.set), &target).unwrap();
    eprintln!(
        "blob: mu {:?} s {:?} psnr {p:.2} in {:?}",
        g.mu,
        [g.log_s[0].exp(), g.log_s[1].exp()],
        t.elapsed()
    );
    assert!((g.mu[0] - truth.mu[0]).hypot(g.mu[1] - truth.mu[1]) < 0.5);
    assert!(p > 40.0);
}

#[test]
fn natural_crop_reaches_floor() {
    let target: ImageBuffer<f32> = load_image(&corpus("64/heldout/chelsea_0.png")).unwrap();
    let pos = random_init(64, 64, 1000, 0).unwrap();
    let set = heuristic_attributes(&pos, &target);
    let t = Instant::now();
    let cfg = FitConfig {
        log_every: 500,
        ..FitConfig::default().with_iterations(3000)
    };
    let out = fit_gaussians(&set, &target, &cfg).unwrap();
    let p = psnr(&render(&out.set), &target).unwrap();
    for tp in &out.trace {
        eprintln!("{} {:.2}", tp.iteration, tp.psnr);
    }
    eprintln!("natural: psnr {p:.2} in {:?}", t.elapsed());
    assert!(p >= 25.0);
}
