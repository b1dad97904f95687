//! Finite-difference checks (h = 1e-3, f64) of every layer against the
//! tape's backward pass. Each check returns its worst relative error; the
//! acceptance target includes this file directly.

#![allow(dead_code)]

use gsimage::gsmodel::covariance_from_rs;
use gsimage::raster::{loss_mse, render, render_backward};
use gsimage::{GaussianSet, ImageBuffer};
use gsnet::attributes::{gather_attributes, gather_backward, AttributeMaps};
use gsnet::{AttributeNet, ParamStore, PositionNet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;

/// Name, check and the tolerance it must stay under.
pub type LayerCheck = (&'static str, fn() -> f64, f64);

pub const ALL: &[LayerCheck] = &[
    ("conv3x3 stride 1", conv3x3_stride1, 1e-3),
    ("conv3x3 stride 2, odd size", conv3x3_stride2_odd_size, 1e-3),
    ("conv1x1", conv1x1, 1e-3),
    ("linear", linear_layer, 1e-3),
    ("relu", relu, 1e-3),
    ("sigmoid", sigmoid, 1e-3),
    ("tanh", tanh, 1e-3),
    ("scale", scale, 1e-3),
    ("shift", shift, 1e-3),
    ("film", film_modulation, 1e-3),
    ("upsample2", upsample2, 1e-3),
    ("concat", concat, 1e-3),
    ("slice_channels", slice_channels, 1e-3),
    ("crop", crop, 1e-3),
    ("conv stack", small_conv_stack, 1e-2),
    ("position net", position_net_end_to_end, 1e-2),
    ("attribute net", attribute_net_end_to_end, 1e-2),
    ("gather colour cells", colour_map_cells, 1e-3),
    ("gather routing", gather_routing, 1e-3),
];

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks are never crossed by ±h.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = rand_tensor(rng, shape, 0.05, 1.0);
    for v in &mut t.data {
        if rng.gen::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// `L = Σ r ⊙ f(inputs)` for a fixed random `r`; returns the worst relative
/// error over every input entry (or `max_entries` of them per input).
pub fn check(inputs: Vec<Tensor<f64>>, max_entries: usize, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("p{i}"), t))
        .collect();
    let eval = |store: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
        let out = f(&mut tape, &vars);
        (tape, out)
    };
    let (mut tape, out) = eval(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let r = rand_tensor(&mut rng, &tape.value(out).shape, -1.0, 1.0);
    let loss = |store: &ParamStore<f64>| {
        let (tape, out) = eval(store);
        tape.value(out)
            .data
            .iter()
            .zip(&r.data)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let grads = tape.backward(out, r.clone()).unwrap().params(&store);
    let mut worst = 0.0f64;
    for (pi, &id) in ids.iter().enumerate() {
        let n = store.get(id).numel();
        let stride = n.div_ceil(max_entries).max(1);
        for j in (0..n).step_by(stride) {
            let orig = store.get(id).data[j];
            store.get_mut(id).data[j] = orig + H;
            let lp = loss(&store);
            store.get_mut(id).data[j] = orig - H;
            let lm = loss(&store);
            store.get_mut(id).data[j] = orig;
            let fd = (lp - lm) / (2.0 * H);
            let a = grads[pi].data[j];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn conv3x3_stride1() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[2, 3, 6, 5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    let b = rand_tensor(&mut rng, &[4], -0.5, 0.5);
    check(vec![x, w, b], 1000, |t, v| t.conv2d(v[0], v[1], v[2], 1, 1))
}

pub fn conv3x3_stride2_odd_size() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[1, 2, 7, 8], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let b = rand_tensor(&mut rng, &[3], -0.5, 0.5);
    check(vec![x, w, b], 1000, |t, v| t.conv2d(v[0], v[1], v[2], 2, 1))
}

pub fn conv1x1() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[1, 5, 4, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[2, 5, 1, 1], -0.5, 0.5);
    let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
    check(vec![x, w, b], 1000, |t, v| t.conv2d(v[0], v[1], v[2], 1, 0))
}

pub fn linear_layer() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4], -1.0, 1.0);
    check(vec![x, w, b], 1000, |t, v| t.linear(v[0], v[1], v[2]))
}

pub fn relu() -> f64 {
    let x = away_from_zero(&mut ChaCha8Rng::seed_from_u64(5), &[1, 2, 3, 3]);
    check(vec![x], 100, |t, v| t.relu(v[0]))
}

fn activation_input() -> Tensor<f64> {
    rand_tensor(&mut ChaCha8Rng::seed_from_u64(6), &[1, 2, 3, 3], -3.0, 3.0)
}

pub fn sigmoid() -> f64 {
    check(vec![activation_input()], 100, |t, v| t.sigmoid(v[0]))
}

pub fn tanh() -> f64 {
    check(vec![activation_input()], 100, |t, v| t.tanh(v[0]))
}

pub fn scale() -> f64 {
    check(vec![activation_input()], 100, |t, v| t.scale(v[0], -2.5))
}

/// Constant shift followed by a sigmoid, so the identity gradient is seen
/// through a curved op.
pub fn shift() -> f64 {
    let x = activation_input();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let c = rand_tensor(&mut rng, &x.shape, -2.0, 2.0);
    check(vec![x], 100, move |t, v| {
        let y = t.shift(v[0], &c);
        t.sigmoid(y)
    })
}

pub fn film_modulation() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[1, 4, 3, 5], -1.0, 1.0);
    let g = rand_tensor(&mut rng, &[1, 4], -2.0, 2.0);
    let b = rand_tensor(&mut rng, &[1, 4], -1.0, 1.0);
    check(vec![x, g, b], 1000, |t, v| t.film(v[0], v[1], v[2]))
}

fn shape_inputs() -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = rand_tensor(&mut rng, &[2, 2, 3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2, 3, 3, 4], -1.0, 1.0);
    (a, b)
}

pub fn upsample2() -> f64 {
    check(vec![shape_inputs().0], 100, |t, v| t.upsample2(v[0]))
}

pub fn concat() -> f64 {
    let (a, b) = shape_inputs();
    check(vec![a, b], 100, |t, v| t.concat(&[v[0], v[1]]))
}

pub fn slice_channels() -> f64 {
    check(vec![shape_inputs().0], 100, |t, v| t.slice_channels(v[0], 1, 1))
}

pub fn crop() -> f64 {
    check(vec![shape_inputs().0], 100, |t, v| t.crop(v[0], 1, 1, 2, 2))
}

pub fn small_conv_stack() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, &[4, 2, 3, 3], -0.5, 0.5);
    let b1 = rand_tensor(&mut rng, &[4], -0.1, 0.1);
    let w2 = rand_tensor(&mut rng, &[3, 4, 3, 3], -0.5, 0.5);
    let b2 = rand_tensor(&mut rng, &[3], -0.1, 0.1);
    check(vec![x, w1, b1, w2, b2], 300, |t, v| {
        let h = t.conv2d(v[0], v[1], v[2], 2, 1);
        let h = t.relu(h);
        let h = t.conv2d(h, v[3], v[4], 1, 1);
        let h = t.tanh(h);
        let u = t.upsample2(h);
        let s = t.slice_channels(u, 0, 2);
        let c = t.concat(&[s, v[0]]);
        t.sigmoid(c)
    })
}

/// Heads, FiLM generators and biases start at zero; give them values so
/// their gradients are not trivially zero.
fn randomize_zero_tensors(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (name, t) in store.names().to_vec().iter().zip(store.tensors_mut()) {
        if name.starts_with("head") || name.starts_with("film") || name.ends_with(".b") {
            for v in &mut t.data {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
}

/// Differentiates a whole network's parameters by perturbing them in place.
///
/// Steps start at `H`; when `±h` would move some ReLU input across zero the
/// central difference straddles a kink, so `h` is shrunk until both probes
/// share the base activation pattern.
fn check_net(
    store: &mut ParamStore<f64>,
    per_tensor: usize,
    forward: impl Fn(&ParamStore<f64>, &mut Tape<f64>) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let out = forward(store, &mut tape);
    let base = tape.relu_pattern();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = rand_tensor(&mut rng, &tape.value(out).shape, -1.0, 1.0);
    let grads = tape.backward(out, r.clone()).unwrap().params(store);
    let probe = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let out = forward(s, &mut tape);
        let l = tape
            .value(out)
            .data
            .iter()
            .zip(&r.data)
            .map(|(a, b)| a * b)
            .sum::<f64>();
        (l, tape.relu_pattern())
    };
    let mut worst = 0.0f64;
    for i in 0..store.len() {
        let n = store.tensors()[i].numel();
        for _ in 0..per_tensor.min(n) {
            let j = rng.gen_range(0..n);
            let orig = store.tensors()[i].data[j];
            let mut h = H;
            let fd = loop {
                store.tensors_mut()[i].data[j] = orig + h;
                let (lp, pp) = probe(store);
                store.tensors_mut()[i].data[j] = orig - h;
                let (lm, pm) = probe(store);
                store.tensors_mut()[i].data[j] = orig;
                if (pp == base && pm == base) || h < 1e-7 {
                    break (lp - lm) / (2.0 * h);
                }
                h /= 4.0;
            };
            let a = grads[i].data[j];
            let scale = a.abs().max(fd.abs()).max(1e-4);
            worst = worst.max((a - fd).abs() / scale);
        }
    }
    worst
}

pub fn test_image(w: usize, h: usize, seed: u64) -> ImageBuffer<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(w, h, 3, |_, _, _| rng.gen())
}

pub fn position_net_end_to_end() -> f64 {
    let mut net = PositionNet::<f64>::new(3);
    randomize_zero_tensors(&mut net.store, &mut ChaCha8Rng::seed_from_u64(30));
    let img = test_image(12, 8, 1);
    let proto = net.clone();
    check_net(&mut net.store, 3, |store, tape| {
        let mut n = proto.clone();
        n.store = store.clone();
        n.forward(tape, &img, 500.0)
    })
}

pub fn attribute_net_end_to_end() -> f64 {
    let mut net = AttributeNet::<f64>::new(4);
    randomize_zero_tensors(&mut net.store, &mut ChaCha8Rng::seed_from_u64(31));
    let img = test_image(8, 10, 2);
    let proto = net.clone();
    check_net(&mut net.store, 3, |store, tape| {
        let mut n = proto.clone();
        n.store = store.clone();
        n.forward(tape, &img)
    })
}

fn maps_loss(maps: &AttributeMaps<f64>, pos: &[[f64; 2]], target: &ImageBuffer<f64>) -> f64 {
    loss_mse(&render(&gather_attributes(maps, pos, 0.8)), target).unwrap().0
}

/// Which (pixel, Gaussian) pairs fall inside the 3σ support.
fn support_mask(set: &GaussianSet<f64>) -> Vec<bool> {
    let b = set.scale_bounds();
    let mut mask = Vec::new();
    for g in &set.gaussians {
        let conic = covariance_from_rs(g.log_s, g.theta, &b).inverse();
        for y in 0..set.height {
            for x in 0..set.width {
                mask.push(conic.quad(x as f64 + 0.5 - g.mu[0], y as f64 + 0.5 - g.mu[1]) <= 9.0);
            }
        }
    }
    mask
}

/// Central difference in map entry `i`. The hard support edge makes the
/// loss discontinuous, so `h` shrinks until neither probe changes the mask.
pub fn maps_fd(maps: &AttributeMaps<f64>, pos: &[[f64; 2]], target: &ImageBuffer<f64>, i: usize) -> f64 {
    let base = support_mask(&gather_attributes(maps, pos, 0.8));
    let mut h = H;
    loop {
        let mut up = maps.clone();
        up.data[i] += h;
        let mut dn = maps.clone();
        dn.data[i] -= h;
        let same = |m: &AttributeMaps<f64>| support_mask(&gather_attributes(m, pos, 0.8)) == base;
        if (same(&up) && same(&dn)) || h < 1e-8 {
            return (maps_loss(&up, pos, target) - maps_loss(&dn, pos, target)) / (2.0 * h);
        }
        h /= 4.0;
    }
}

pub const GATHER_SIZE: usize = 16;

pub fn gather_fixture() -> (AttributeMaps<f64>, Vec<[f64; 2]>, ImageBuffer<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (w, h) = (GATHER_SIZE, GATHER_SIZE);
    let mut maps = AttributeMaps::neutral(w, h);
    for v in maps.data.iter_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
    let plane = w * h;
    for v in &mut maps.data[5 * plane..] {
        *v = rng.gen_range(0.1..0.9);
    }
    let pos = vec![[4.5, 5.5], [10.5, 9.5], [7.5, 12.5]];
    (maps, pos, test_image(w, h, 9))
}

/// Analytic map gradient of the gather → render → MSE chain.
pub fn gather_gradient(maps: &AttributeMaps<f64>, pos: &[[f64; 2]], target: &ImageBuffer<f64>) -> Vec<f64> {
    let set = gather_attributes(maps, pos, 0.8);
    let (_, dl) = loss_mse(&render(&set), target).unwrap();
    gather_backward(maps, pos, 0.8, &render_backward(&set, &dl).unwrap()).data
}

fn cell_of(p: &[f64; 2]) -> usize {
    p[1] as usize * GATHER_SIZE + p[0] as usize
}

pub fn colour_map_cells() -> f64 {
    let (maps, pos, target) = gather_fixture();
    let g = gather_gradient(&maps, &pos, &target);
    let plane = GATHER_SIZE * GATHER_SIZE;
    let mut worst = 0.0f64;
    for p in &pos {
        for c in 5..8 {
            let i = c * plane + cell_of(p);
            let fd = maps_fd(&maps, &pos, &target, i);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-12));
        }
    }
    worst
}

/// Worst error over all eight channels at the indexed cells. Any gradient
/// (analytic or numeric) reaching an unindexed cell counts as a total miss.
pub fn gather_routing() -> f64 {
    let (maps, pos, target) = gather_fixture();
    let g = gather_gradient(&maps, &pos, &target);
    let plane = GATHER_SIZE * GATHER_SIZE;
    let indexed: Vec<usize> = pos.iter().map(cell_of).collect();
    let mut worst = 0.0f64;
    for cell in 0..plane {
        for c in 0..8 {
            let i = c * plane + cell;
            let fd = maps_fd(&maps, &pos, &target, i);
            if indexed.contains(&cell) {
                if g[i] == 0.0 || fd == 0.0 {
                    return f64::INFINITY;
                }
                worst = worst.max(((g[i] - fd).abs() - 1e-9).max(0.0) / g[i].abs().max(fd.abs()));
            } else if g[i] != 0.0 || fd != 0.0 {
                return f64::INFINITY;
            }
        }
    }
    worst
}
