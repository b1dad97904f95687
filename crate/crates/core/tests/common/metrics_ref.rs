//! Independent metric references on 8-bit code images.

use gsimage::metrics::MS_SSIM_WEIGHTS;
use gsimage::ImageBuffer;
use rand::Rng;

/// 8-bit image pair as integer codes.
pub fn code_pair(r: &mut impl Rng, w: usize, h: usize, noise: i32) -> (Vec<u8>, Vec<u8>) {
    let a: Vec<u8> = (0..w * h * 3).map(|_| r.gen()).collect();
    let b = a
        .iter()
        .map(|&v| (v as i32 + r.gen_range(-noise..=noise)).clamp(0, 255) as u8)
        .collect();
    (a, b)
}

pub fn to_image(codes: &[u8], w: usize, h: usize) -> ImageBuffer<f64> {
    ImageBuffer::from_data(w, h, 3, codes.iter().map(|&c| c as f64 / 255.0).collect()).unwrap()
}

/// PSNR from the exact integer sum of squared code differences.
pub fn psnr_exact(a: &[u8], b: &[u8]) -> f64 {
    let sse: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64)
        .sum();
    if sse == 0 {
        return 99.0;
    }
    10.0 * ((255u64 * 255 * a.len() as u64) as f64).log10() - 10.0 * (sse as f64).log10()
}

/// Literal MS-SSIM: every window evaluated directly with centred moments and
/// the outer-product Gaussian weights.
pub fn ms_ssim_reference(a: &ImageBuffer<f64>, b: &ImageBuffer<f64>) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut scales = 0;
    let (mut sw, mut sh) = (a.width, a.height);
    while scales < 5 && sw >= 11 && sh >= 11 {
        scales += 1;
        sw = sw.div_ceil(2);
        sh = sh.div_ceil(2);
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / gs).collect();

    let mut total = 0.0;
    for c in 0..3 {
        let mut w = a.width;
        let mut h = a.height;
        let mut x: Vec<f64> = (0..w * h).map(|i| a.data[i * 3 + c]).collect();
        let mut y: Vec<f64> = (0..w * h).map(|i| b.data[i * 3 + c]).collect();
        let mut score = 1.0;
        for s in 0..scales {
            let (mut ssim_acc, mut cs_acc, mut n) = (0.0, 0.0, 0.0);
            for oy in 0..=h - 11 {
                for ox in 0..=w - 11 {
                    let (mut mx, mut my) = (0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let k = g[i] * g[j];
                            mx += k * x[(oy + j) * w + ox + i];
                            my += k * y[(oy + j) * w + ox + i];
                        }
                    }
                    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let k = g[i] * g[j];
                            let dx = x[(oy + j) * w + ox + i] - mx;
                            let dy = y[(oy + j) * w + ox + i] - my;
                            vx += k * dx * dx;
                            vy += k * dy * dy;
                            cov += k * dx * dy;
                        }
                    }
                    let cs = (2.0 * cov + c2) / (vx + vy + c2);
                    let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                    cs_acc += cs;
                    ssim_acc += l * cs;
                    n += 1.0;
                }
            }
            let wgt = MS_SSIM_WEIGHTS[s] / wsum;
            if s + 1 == scales {
                score *= (ssim_acc / n).max(0.0).powf(wgt);
            } else {
                score *= (cs_acc / n).max(0.0).powf(wgt);
                let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
                let down = |v: &[f64]| -> Vec<f64> {
                    let mut out = Vec::with_capacity(w2 * h2);
                    for yy in 0..h2 {
                        for xx in 0..w2 {
                            let cells: Vec<f64> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                                .iter()
                                .filter(|(dx, dy)| 2 * xx + dx < w && 2 * yy + dy < h)
                                .map(|(dx, dy)| v[(2 * yy + dy) * w + 2 * xx + dx])
                                .collect();
                            out.push(cells.iter().sum::<f64>() / cells.len() as f64);
                        }
                    }
                    out
                };
                x = down(&x);
                y = down(&y);
                w = w2;
                h = h2;
            }
        }
        total += score;
    }
    total / 3.0
}
