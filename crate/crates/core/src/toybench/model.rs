//! Small fully-connected classifier trained from scratch.
//!
//! Parameters live in checkpoints as `layer{i}.weight` (shape `[out, in]`)
//! and `layer{i}.bias` (shape `[out]`), so models flow through the edit
//! operations unchanged. Arithmetic inside forward/backward is f64; the
//! checkpoint stores f32.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::seed;
use crate::toybench::data::Split;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    /// Layer widths, input first: `[8, 32, 32, 4]` by default.
    pub dims: Vec<usize>,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        ToyModelSpec {
            dims: vec![8, 32, 32, 4],
        }
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("layer{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

impl ToyModelSpec {
    pub fn n_layers(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::Config(format!(
                "model dims need at least two positive entries, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.n_layers())
            .flat_map(|i| [weight_name(i), bias_name(i)])
            .collect()
    }

    /// Glorot-uniform weights, zero biases, from the `init` substream.
    pub fn init(&self, master_seed: u64, stream_index: u64) -> Result<Checkpoint> {
        self.validate()?;
        let mut rng = seed::stream(master_seed, "init", stream_index);
        let mut tensors = Vec::new();
        for i in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.dims[i], self.dims[i + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f32> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit) as f32)
                .collect();
            tensors.push((weight_name(i), Tensor::new(vec![fan_out, fan_in], w)?));
            tensors.push((bias_name(i), Tensor::zeros(vec![fan_out])?));
        }
        Checkpoint::new(tensors)
    }

    /// Checks that a checkpoint carries exactly this architecture.
    pub fn check(&self, ckpt: &Checkpoint) -> Result<()> {
        let template = self.init(0, 0)?;
        crate::checkpoint::validate_compatible(&template, ckpt)
    }
}

/// Working copy of the parameters in f64. `params[2*i]` is layer `i`'s
/// weight, `params[2*i + 1]` its bias.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub params: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Mlp> {
        let mut dims = Vec::new();
        let mut params = Vec::new();
        let mut layer = 0;
        while let Some(w) = ckpt.get(&weight_name(layer)) {
            let b = ckpt
                .get(&bias_name(layer))
                .ok_or_else(|| Error::MissingTensors(vec![bias_name(layer)]))?;
            let &[out, inp] = w.shape() else {
                return Err(Error::ShapeMismatch {
                    name: weight_name(layer),
                    left: w.shape().to_vec(),
                    right: vec![0, 0],
                });
            };
            if b.shape() != [out] {
                return Err(Error::ShapeMismatch {
                    name: bias_name(layer),
                    left: b.shape().to_vec(),
                    right: vec![out],
                });
            }
            if layer == 0 {
                dims.push(inp);
            } else if dims[layer] != inp {
                return Err(Error::ShapeMismatch {
                    name: weight_name(layer),
                    left: w.shape().to_vec(),
                    right: vec![out, dims[layer]],
                });
            }
            dims.push(out);
            params.push(w.values().iter().map(|&v| f64::from(v)).collect());
            params.push(b.values().iter().map(|&v| f64::from(v)).collect());
            layer += 1;
        }
        if layer == 0 || ckpt.tensors().len() != 2 * layer {
            let expected: Vec<String> = ToyModelSpec { dims: dims.clone() }.param_names();
            let extra = ckpt
                .tensors()
                .keys()
                .filter(|k| !expected.contains(k))
                .cloned()
                .collect::<Vec<_>>();
            return Err(Error::MissingTensors(if extra.is_empty() {
                vec![weight_name(0)]
            } else {
                extra
            }));
        }
        Ok(Mlp { dims, params })
    }

    /// Writes the parameters back, rounding to f32. Meta is taken from
    /// `template`.
    pub fn to_checkpoint(&self, template: &Checkpoint) -> Checkpoint {
        let mut tensors = template.tensors().clone();
        for i in 0..self.n_layers() {
            for (name, p) in [(weight_name(i), &self.params[2 * i]), (bias_name(i), &self.params[2 * i + 1])] {
                let t = tensors.get_mut(&name).expect("template layout");
                *t = t.with_values(p.iter().map(|&v| v as f32).collect());
            }
        }
        Checkpoint::from_parts(tensors, template.meta().clone())
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_names(&self) -> Vec<String> {
        ToyModelSpec {
            dims: self.dims.clone(),
        }
        .param_names()
    }

    /// Output logits for one input.
    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let mut a: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        for i in 0..self.n_layers() {
            let z = self.affine(i, &a);
            a = if i + 1 < self.n_layers() {
                z.into_iter().map(|v| v.max(0.0)).collect()
            } else {
                z
            };
        }
        a
    }

    fn affine(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let (inp, out) = (self.dims[layer], self.dims[layer + 1]);
        let w = &self.params[2 * layer];
        let b = &self.params[2 * layer + 1];
        (0..out)
            .map(|o| {
                let row = &w[o * inp..(o + 1) * inp];
                b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect()
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &[f32]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate().skip(1) {
            if v > z[best] {
                best = c;
            }
        }
        best
    }

    /// Mean softmax cross-entropy over `rows` of `split`, accumulating the
    /// gradient of that mean into `grads` (same layout as `params`, zeroed
    /// by the caller).
    pub fn loss_and_grad(&self, split: &Split, rows: &[usize], grads: &mut [Vec<f64>]) -> f64 {
        let n_layers = self.n_layers();
        let scale = 1.0 / rows.len() as f64;
        let mut total = 0.0;
        // activations[l] is the input to layer l
        let mut activations: Vec<Vec<f64>> = vec![Vec::new(); n_layers + 1];
        for &r in rows {
            activations[0].clear();
            activations[0].extend(split.sample(r).iter().map(|&v| f64::from(v)));
            for l in 0..n_layers {
                let z = self.affine(l, &activations[l]);
                activations[l + 1] = if l + 1 < n_layers {
                    z.into_iter().map(|v| v.max(0.0)).collect()
                } else {
                    z
                };
            }
            let logits = &activations[n_layers];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let label = split.y[r] as usize;
            total += sum.ln() + max - logits[label];

            let mut delta: Vec<f64> = exps.iter().map(|e| e / sum * scale).collect();
            delta[label] -= scale;
            for l in (0..n_layers).rev() {
                let (inp, out) = (self.dims[l], self.dims[l + 1]);
                let input = &activations[l];
                {
                    let (gw, rest) = grads[2 * l..].split_at_mut(1);
                    let gw = &mut gw[0];
                    let gb = &mut rest[0];
                    for o in 0..out {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, &a) in gw[o * inp..(o + 1) * inp].iter_mut().zip(input) {
                            *g += d * a;
                        }
                    }
                }
                if l > 0 {
                    let w = &self.params[2 * l];
                    let mut prev = vec![0.0; inp];
                    for o in 0..out {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        for (p, &wv) in prev.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                            *p += d * wv;
                        }
                    }
                    // ReLU derivative: zero where the activation was clamped
                    for (p, &a) in prev.iter_mut().zip(input) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        total * scale
    }

    /// Mean loss only.
    pub fn loss(&self, split: &Split, rows: &[usize]) -> f64 {
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        self.loss_and_grad(split, rows, &mut grads)
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }
}

/// Classification error in percent.
pub fn error_rate(model: &Mlp, split: &Split) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let wrong = (0..split.len())
        .filter(|&i| model.predict(split.sample(i)) != split.y[i] as usize)
        .count();
    Ok(100.0 * wrong as f64 / split.len() as f64)
}

/// Classification error of a checkpoint on a split, in percent.
pub fn evaluate(model: &Checkpoint, split: &Split) -> Result<f64> {
    error_rate(&Mlp::from_checkpoint(model)?, split)
}
