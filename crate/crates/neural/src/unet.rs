//! Three-level U-Net (16/32/64 channels) shared by both networks, and the
//! two networks built on it.

use gsimage::codecio::Checkpoint;
use gsimage::{Heatmap, ImageBuffer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attributes::AttributeMaps;
use crate::error::NeuralError;
use crate::params::{AdamW, ParamId, ParamStore};
use crate::scalar::NeuralReal;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const CHANNELS: [usize; 3] = [16, 32, 64];
pub const EMBED_DIM: usize = 64;
pub const DEFAULT_K_MAX: f64 = 1e6;
pub const DEFAULT_DELTA_MAX: f64 = 2.0;
/// Spatial sizes must be multiples of this (two stride-2 stages).
pub const SIZE_MULTIPLE: usize = 4;

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn new<T: NeuralReal>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add_kaiming(format!("{name}.w"), &[cout, cin, k, k], cin * k * k, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    fn zeroed<T: NeuralReal>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[cout, cin, 1, 1]));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self {
            w,
            b,
            stride: 1,
            pad: 0,
        }
    }

    fn apply<T: NeuralReal>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv2d(x, w, b, self.stride, self.pad)
    }

    fn relu<T: NeuralReal>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let y = self.apply(tape, store, x);
        tape.relu(y)
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<T: NeuralReal>(
        store: &mut ParamStore<T>,
        name: &str,
        fin: usize,
        fout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add_kaiming(format!("{name}.w"), &[fout, fin], fin, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fout]));
        Self { w, b }
    }

    fn constant<T: NeuralReal>(store: &mut ParamStore<T>, name: &str, fin: usize, fout: usize, bias: f64) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[fout, fin]));
        let b = store.add(format!("{name}.b"), Tensor::filled(&[fout], T::of(bias)));
        Self { w, b }
    }

    fn apply<T: NeuralReal>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }
}

/// Encoder 3→16→16, ↓32→32, ↓64→64 (bottleneck), decoder mirrors it with
/// nearest upsampling and skip concatenation. The 1×1 head also sees the
/// input image and starts at zero.
#[derive(Debug, Clone)]
pub struct UNet {
    enc1: [Conv; 2],
    enc2: [Conv; 2],
    enc3: [Conv; 2],
    up2: Conv,
    dec2: Conv,
    up1: Conv,
    dec1: Conv,
    head: Conv,
    out_channels: usize,
}

impl UNet {
    pub(crate) fn new<T: NeuralReal>(store: &mut ParamStore<T>, out_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2, c3] = CHANNELS;
        Self {
            enc1: [
                Conv::new(store, "enc1.0", 3, c1, 3, 1, rng),
                Conv::new(store, "enc1.1", c1, c1, 3, 1, rng),
            ],
            enc2: [
                Conv::new(store, "enc2.0", c1, c2, 3, 2, rng),
                Conv::new(store, "enc2.1", c2, c2, 3, 1, rng),
            ],
            enc3: [
                Conv::new(store, "enc3.0", c2, c3, 3, 2, rng),
                Conv::new(store, "enc3.1", c3, c3, 3, 1, rng),
            ],
            up2: Conv::new(store, "up2", c3, c2, 3, 1, rng),
            dec2: Conv::new(store, "dec2", 2 * c2, c2, 3, 1, rng),
            up1: Conv::new(store, "up1", c2, c1, 3, 1, rng),
            dec1: Conv::new(store, "dec1", 2 * c1, c1, 3, 1, rng),
            head: Conv::zeroed(store, "head", c1 + 3, out_channels),
            out_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Raw head output for `x (1,3,H,W)`; `film` modulates the bottleneck.
    pub(crate) fn forward<T: NeuralReal>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        film: Option<(Var, Var)>,
    ) -> Var {
        let e1 = self.enc1[0].relu(tape, store, x);
        let e1 = self.enc1[1].relu(tape, store, e1);
        let e2 = self.enc2[0].relu(tape, store, e1);
        let e2 = self.enc2[1].relu(tape, store, e2);
        let e3 = self.enc3[0].relu(tape, store, e2);
        let mut b = self.enc3[1].relu(tape, store, e3);
        if let Some((gamma, beta)) = film {
            b = tape.film(b, gamma, beta);
        }
        let u2 = tape.upsample2(b);
        let u2 = self.up2.relu(tape, store, u2);
        let d2 = tape.concat(&[u2, e2]);
        let d2 = self.dec2.relu(tape, store, d2);
        let u1 = tape.upsample2(d2);
        let u1 = self.up1.relu(tape, store, u1);
        let d1 = tape.concat(&[u1, e1]);
        let d1 = self.dec1.relu(tape, store, d1);
        let h = tape.concat(&[d1, x]);
        self.head.apply(tape, store, h)
    }
}

/// Index into `[0, n)` reflecting about the edges (`…2 1 0 1 2…`).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// `(1, 3, H', W')` tensor of `image` with H', W' rounded up to a multiple
/// of 4 by reflection padding on the bottom and right.
/// Clamp keeping saturated pixels off the flat tails of the sigmoid.
const COLOUR_CLAMP: f64 = 1e-3;

/// `logit(clamp(I))` as a `(1, 3, H, W)` tensor.
fn pixel_logits<T: NeuralReal>(image: &ImageBuffer<T>) -> Tensor<T> {
    let img = image.to_rgb();
    let (w, h) = (img.width, img.height);
    let mut t = Tensor::zeros(&[1, 3, h, w]);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = img.get(x, y, c).to_f64().unwrap().clamp(COLOUR_CLAMP, 1.0 - COLOUR_CLAMP);
                t.data[(c * h + y) * w + x] = T::of((v / (1.0 - v)).ln());
            }
        }
    }
    t
}

pub fn image_tensor<T: NeuralReal>(image: &ImageBuffer<T>) -> Tensor<T> {
    let img = image.to_rgb();
    let (w, h) = (img.width, img.height);
    let (wp, hp) = (
        w.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE,
        h.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE,
    );
    let mut t = Tensor::zeros(&[1, 3, hp, wp]);
    for c in 0..3 {
        for y in 0..hp {
            for x in 0..wp {
                t.data[(c * hp + y) * wp + x] = img.get(reflect(x, w), reflect(y, h), c);
            }
        }
    }
    t
}

/// `ln(1+K) / ln(1+K_max)`, clamped to 1 (with a warning) above `K_max`.
pub fn normalize_k(k: f64, k_max: f64) -> f64 {
    if k > k_max {
        log::warn!("K = {k} exceeds K_max = {k_max}; clamping the conditioning to 1");
        return 1.0;
    }
    (k.max(0.0).ln_1p() / k_max.ln_1p()).clamp(0.0, 1.0)
}

/// K-conditioned heatmap network.
#[derive(Debug, Clone)]
pub struct PositionNet<T> {
    pub store: ParamStore<T>,
    unet: UNet,
    embed: [Linear; 2],
    gamma: Linear,
    beta: Linear,
    pub k_max: f64,
}

impl<T: NeuralReal> PositionNet<T> {
    pub const KIND: &'static str = "position-net";

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let unet = UNet::new(&mut store, 1, &mut rng);
        let embed = [
            Linear::new(&mut store, "embed.0", 1, EMBED_DIM, &mut rng),
            Linear::new(&mut store, "embed.1", EMBED_DIM, EMBED_DIM, &mut rng),
        ];
        let c = CHANNELS[2];
        let gamma = Linear::constant(&mut store, "film.gamma", EMBED_DIM, c, 1.0);
        let beta = Linear::constant(&mut store, "film.beta", EMBED_DIM, c, 0.0);
        Self {
            store,
            unet,
            embed,
            gamma,
            beta,
            k_max: DEFAULT_K_MAX,
        }
    }

    /// FiLM `(γ, β)` vars, each `(1, 64)`, for budget `k`.
    pub fn film_vars(&self, tape: &mut Tape<T>, k: f64) -> (Var, Var) {
        let kh = tape.input(Tensor::filled(&[1, 1], T::of(normalize_k(k, self.k_max))));
        let e = self.embed[0].apply(tape, &self.store, kh);
        let e = tape.relu(e);
        let e = self.embed[1].apply(tape, &self.store, e);
        let e = tape.relu(e);
        (
            self.gamma.apply(tape, &self.store, e),
            self.beta.apply(tape, &self.store, e),
        )
    }

    /// Sigmoid heatmap `(1, 1, H, W)` recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, image: &ImageBuffer<T>, k: f64) -> Var {
        let x = tape.input(image_tensor(image));
        let film = self.film_vars(tape, k);
        let z = self.unet.forward(tape, &self.store, x, Some(film));
        let z = tape.crop(z, 0, 0, image.height, image.width);
        tape.sigmoid(z)
    }

    pub fn predict(&self, image: &ImageBuffer<T>, k: f64) -> Heatmap<T> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, image, k);
        Heatmap::from_values(image.width, image.height, tape.value(out).data.clone())
    }

    pub fn to_checkpoint(&self, opt: Option<&AdamW<T>>, step: u64) -> Checkpoint {
        let mut tensors = self.store.to_records("");
        if let Some(o) = opt {
            tensors.extend(o.to_records(&self.store));
        }
        Checkpoint {
            kind: Self::KIND.into(),
            step,
            meta: serde_json::json!({
                "channels": CHANNELS,
                "embed_dim": EMBED_DIM,
                "k_max": self.k_max,
                "params": self.store.count(),
            }),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, NeuralError> {
        check_kind(ckpt, Self::KIND)?;
        let mut net = Self::new(0);
        net.store.load_records(&ckpt.tensors, "")?;
        if let Some(k) = ckpt.meta.get("k_max").and_then(|v| v.as_f64()) {
            net.k_max = k;
        }
        Ok(net)
    }
}

/// Dense attribute-map network.
#[derive(Debug, Clone)]
pub struct AttributeNet<T> {
    pub store: ParamStore<T>,
    unet: UNet,
    pub delta_max: f64,
}

impl<T: NeuralReal> AttributeNet<T> {
    pub const KIND: &'static str = "attribute-net";

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let unet = UNet::new(&mut store, 8, &mut rng);
        Self {
            store,
            unet,
            delta_max: DEFAULT_DELTA_MAX,
        }
    }

    /// Activated `(1, 8, H, W)` map: offset (tanh·δ_max), log-scale offset
    /// (linear), rotation (tanh·π), colour (sigmoid). The colour logits are
    /// residual on the input pixel, so a zero head copies the image.
    pub fn forward(&self, tape: &mut Tape<T>, image: &ImageBuffer<T>) -> Var {
        let x = tape.input(image_tensor(image));
        let z = self.unet.forward(tape, &self.store, x, None);
        let z = tape.crop(z, 0, 0, image.height, image.width);
        let off = tape.slice_channels(z, 0, 2);
        let off = tape.tanh(off);
        let off = tape.scale(off, self.delta_max);
        let scale = tape.slice_channels(z, 2, 2);
        let rot = tape.slice_channels(z, 4, 1);
        let rot = tape.tanh(rot);
        let rot = tape.scale(rot, std::f64::consts::PI);
        let col = tape.slice_channels(z, 5, 3);
        let col = tape.shift(col, &pixel_logits(image));
        let col = tape.sigmoid(col);
        tape.concat(&[off, scale, rot, col])
    }

    pub fn predict(&self, image: &ImageBuffer<T>) -> AttributeMaps<T> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, image);
        AttributeMaps::from_tensor(tape.value(out))
    }

    pub fn to_checkpoint(&self, opt: Option<&AdamW<T>>, step: u64) -> Checkpoint {
        let mut tensors = self.store.to_records("");
        if let Some(o) = opt {
            tensors.extend(o.to_records(&self.store));
        }
        Checkpoint {
            kind: Self::KIND.into(),
            step,
            meta: serde_json::json!({
                "channels": CHANNELS,
                "delta_max": self.delta_max,
                "params": self.store.count(),
            }),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, NeuralError> {
        check_kind(ckpt, Self::KIND)?;
        let mut net = Self::new(0);
        net.store.load_records(&ckpt.tensors, "")?;
        if let Some(d) = ckpt.meta.get("delta_max").and_then(|v| v.as_f64()) {
            net.delta_max = d;
        }
        Ok(net)
    }
}

fn check_kind(ckpt: &Checkpoint, kind: &str) -> Result<(), NeuralError> {
    if ckpt.kind != kind {
        return Err(NeuralError::Checkpoint(format!(
            "checkpoint holds a {}, expected a {kind}",
            ckpt.kind
        )));
    }
    Ok(())
}
