use gsimage::codecio::TensorRecord;
use rand::Rng;

use crate::error::NeuralError;
use crate::scalar::NeuralReal;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered parameter tensors of one network.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: NeuralReal> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Kaiming-uniform tensor: `U(−√(6/fan_in), √(6/fan_in))`.
    pub fn add_kaiming(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
        self.add(
            name,
            Tensor {
                shape: shape.to_vec(),
                data,
            },
        )
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn to_records(&self, prefix: &str) -> Vec<TensorRecord> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| TensorRecord {
                name: format!("{prefix}{n}"),
                shape: t.shape.clone(),
                data: t.data.iter().map(|v| v.wide() as f32).collect(),
            })
            .collect()
    }

    /// Overwrites every tensor from `records`; names and shapes must match.
    pub fn load_records(&mut self, records: &[TensorRecord], prefix: &str) -> Result<(), NeuralError> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let full = format!("{prefix}{name}");
            let r = records
                .iter()
                .find(|r| r.name == full)
                .ok_or_else(|| NeuralError::Checkpoint(format!("missing tensor {full}")))?;
            if r.shape != t.shape {
                return Err(NeuralError::Checkpoint(format!(
                    "tensor {full} has shape {:?}, expected {:?}",
                    r.shape, t.shape
                )));
            }
            t.data = r.data.iter().map(|&v| T::of(v as f64)).collect();
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay applied to tensors whose name ends in
/// `.w`; biases and FiLM offsets are not decayed.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: NeuralReal> AdamW<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor<T>> = store.tensors().iter().map(|t| Tensor::zeros(&t.shape)).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Returns the number of non-finite gradient entries, which are zeroed.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> usize {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let step = T::of(self.lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(self.eps);
        let mut bad = 0;
        for (i, g) in grads.iter().enumerate() {
            let decay = if store.names[i].ends_with(".w") {
                T::of(1.0 - self.lr * self.weight_decay)
            } else {
                T::one()
            };
            let p = &mut store.tensors[i].data;
            let (m, v) = (&mut self.m[i].data, &mut self.v[i].data);
            for j in 0..p.len() {
                let mut gj = g.data[j];
                if !gj.is_finite() {
                    gj = T::zero();
                    bad += 1;
                }
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                p[j] = p[j] * decay - step * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
        bad
    }

    pub fn to_records(&self, store: &ParamStore<T>) -> Vec<TensorRecord> {
        let mut out = Vec::with_capacity(2 * store.len());
        for (which, bufs) in [("adam.m.", &self.m), ("adam.v.", &self.v)] {
            for (name, t) in store.names().iter().zip(bufs.iter()) {
                out.push(TensorRecord {
                    name: format!("{which}{name}"),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| v.wide() as f32).collect(),
                });
            }
        }
        out
    }

    /// Restores the moments if present; a checkpoint without them starts the
    /// optimizer fresh at `step`.
    pub fn load_records(&mut self, store: &ParamStore<T>, records: &[TensorRecord], step: u64) {
        self.step = step;
        for (which, bufs) in [("adam.m.", &mut self.m), ("adam.v.", &mut self.v)] {
            for (name, t) in store.names().iter().zip(bufs.iter_mut()) {
                let full = format!("{which}{name}");
                if let Some(r) = records.iter().find(|r| r.name == full && r.shape == t.shape) {
                    t.data = r.data.iter().map(|&v| T::of(v as f64)).collect();
                }
            }
        }
    }
}
