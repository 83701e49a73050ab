//! Parameter storage, layer building blocks and the Adam optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Tensor};

/// Ordered, named parameter tensors of one network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn num_parameters(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Wraps every tensor in a graph leaf.
    pub fn bind(&self, trainable: bool) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(_, t)| Var::leaf(t.clone(), trainable))
                .collect(),
        }
    }

    /// Digest of names, shapes and exact values.
    pub fn value_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Digest of names and shapes only.
    pub fn layout_hash(&self, kind: &str) -> String {
        let mut h = Sha256::new();
        h.update(kind.as_bytes());
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            h.update(format!("{:?}", t.shape()).as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Replaces values from `other`, which must share the layout.
    pub fn assign(&mut self, other: Vec<(String, Tensor)>) -> Result<()> {
        if other.len() != self.entries.len() {
            return Err(Error::invalid(format!(
                "parameter count mismatch: expected {}, got {}",
                self.entries.len(),
                other.len()
            )));
        }
        for ((name, t), (oname, ot)) in self.entries.iter_mut().zip(other) {
            if *name != oname || t.shape() != ot.shape() {
                return Err(Error::invalid(format!(
                    "parameter {name} {:?} does not match {oname} {:?}",
                    t.shape(),
                    ot.shape()
                )));
            }
            *t = ot;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }
}

/// Parameters of one forward pass, bound as graph leaves.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, i: usize) -> &Var {
        &self.vars[i]
    }

    pub fn refs(&self) -> Vec<&Var> {
        self.vars.iter().collect()
    }
}

/// Kernel initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitScheme {
    /// Zero-mean normal with σ = 0.02.
    Normal002,
    /// Zero-mean normal with σ = √(2 / fan_in).
    KaimingNormal,
}

/// Allocates and initializes parameters while a network is assembled.
pub struct ParamBuilder {
    params: ParamSet,
    rng: ChaCha8Rng,
    scheme: InitScheme,
}

impl ParamBuilder {
    pub fn new(seed: u64, scheme: InitScheme) -> Self {
        Self {
            params: ParamSet::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            scheme,
        }
    }

    fn kernel(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let std = match self.scheme {
            InitScheme::Normal002 => 0.02,
            InitScheme::KaimingNormal => (2.0 / fan_in as f64).sqrt(),
        };
        Tensor::randn(shape, std, &mut self.rng)
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Conv {
        let w = self.kernel(&[cout, cin, k, k], cin * k * k);
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = bias.then(|| self.params.push(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Conv {
            weight,
            bias,
            geom: ConvGeom::new(stride, pad),
        }
    }

    pub fn conv_transpose(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> ConvTranspose {
        let w = self.kernel(&[cin, cout, k, k], cin * k * k);
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = bias.then(|| self.params.push(format!("{name}.bias"), Tensor::zeros(&[cout])));
        ConvTranspose {
            weight,
            bias,
            geom: ConvGeom::new(stride, pad),
        }
    }

    pub fn instance_norm(&mut self, name: &str, channels: usize) -> InstanceNorm {
        InstanceNorm {
            gamma: self.params.push(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: self.params.push(format!("{name}.beta"), Tensor::zeros(&[channels])),
        }
    }

    pub fn finish(self) -> ParamSet {
        self.params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    weight: usize,
    bias: Option<usize>,
    pub geom: ConvGeom,
}

impl Conv {
    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let y = x.conv2d(p.var(self.weight), self.geom);
        match self.bias {
            Some(b) => y.add_channel_bias(p.var(b)),
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTranspose {
    weight: usize,
    bias: Option<usize>,
    pub geom: ConvGeom,
}

impl ConvTranspose {
    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let y = x.conv_transpose2d(p.var(self.weight), self.geom);
        match self.bias {
            Some(b) => y.add_channel_bias(p.var(b)),
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceNorm {
    gamma: usize,
    beta: usize,
}

impl InstanceNorm {
    pub const EPS: f64 = 1e-5;

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        x.instance_norm(p.var(self.gamma), p.var(self.beta), Self::EPS)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr / bc1;
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                p[j] -= step * m[j] / ((v[j] / bc2).sqrt() + self.eps);
            }
        }
    }

    /// Moments as named tensors, for checkpointing.
    pub fn state_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.m.len() + 1);
        out.push((format!("{prefix}.t"), Tensor::scalar(self.t as f64)));
        for (i, m) in self.m.iter().enumerate() {
            out.push((format!("{prefix}.m.{i}"), m.clone()));
        }
        for (i, v) in self.v.iter().enumerate() {
            out.push((format!("{prefix}.v.{i}"), v.clone()));
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, find: impl Fn(&str) -> Option<Tensor>) -> Result<()> {
        let missing = |n: &str| Error::invalid(format!("optimizer state {n} missing"));
        let t_name = format!("{prefix}.t");
        self.t = find(&t_name).ok_or_else(|| missing(&t_name))?.item() as u64;
        for i in 0..self.m.len() {
            let (mn, vn) = (format!("{prefix}.m.{i}"), format!("{prefix}.v.{i}"));
            let m = find(&mn).ok_or_else(|| missing(&mn))?;
            let v = find(&vn).ok_or_else(|| missing(&vn))?;
            if m.shape() != self.m[i].shape() || v.shape() != self.v[i].shape() {
                return Err(Error::invalid(format!("optimizer state {prefix}.{i} has wrong shape")));
            }
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}
