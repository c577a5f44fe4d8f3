//! Named parameter storage, deterministic initialization, and tape binding.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// What a stored array is, which decides whether the optimizer touches it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamKind {
    /// Convolution kernel, trained.
    Weight,
    /// Convolution bias, trained.
    Bias,
    /// Normalization scale, trained.
    Gamma,
    /// Normalization shift, trained.
    Beta,
    /// Normalization running mean, buffer (updated outside the optimizer).
    RunningMean,
    /// Normalization running variance, buffer.
    RunningVar,
}

impl ParamKind {
    /// Buffers are excluded from gradient descent.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub tensor: Tensor,
    pub kind: ParamKind,
}

/// Ordered map of named arrays. Insertion order is the architecture walk
/// order, which makes initialization and optimizer traversal deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, kind: ParamKind) {
        let name = name.into();
        let prev = self.entries.insert(name.clone(), Param { tensor, kind });
        assert!(prev.is_none(), "duplicate parameter name `{name}`");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
            .tensor
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
            .tensor
    }

    pub fn kind(&self, name: &str) -> ParamKind {
        self.entries[name].kind
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    /// Total number of stored scalars (including buffers).
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.tensor.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.tensor.is_finite())
    }
}

/// Builds a store during the architecture walk, drawing initial values from
/// a seeded stream so two walks with the same seed are bit-identical.
pub struct ParamBuilder {
    pub store: ParamStore,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Kaiming-style fan-in scaled uniform init for a [O,I,K,K] kernel.
    pub fn conv_weight(&mut self, name: &str, cout: usize, cin: usize, k: usize) {
        let fan_in = (cin * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = cout * cin * k * k;
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.store
            .insert(name, Tensor::from_vec(&[cout, cin, k, k], data), ParamKind::Weight);
    }

    /// Zero-initialized bias of length `cout`.
    pub fn conv_bias(&mut self, name: &str, cout: usize) {
        self.store.insert(name, Tensor::zeros(&[cout]), ParamKind::Bias);
    }

    /// Batch-norm affine parameters and running buffers for `c` channels.
    /// Stored as [C,1,1] so they broadcast directly over feature maps.
    pub fn batch_norm(&mut self, prefix: &str, c: usize) {
        self.store.insert(
            format!("{prefix}.gamma"),
            Tensor::filled(&[c, 1, 1], 1.0),
            ParamKind::Gamma,
        );
        self.store
            .insert(format!("{prefix}.beta"), Tensor::zeros(&[c, 1, 1]), ParamKind::Beta);
        self.store.insert(
            format!("{prefix}.running_mean"),
            Tensor::zeros(&[c, 1, 1]),
            ParamKind::RunningMean,
        );
        self.store.insert(
            format!("{prefix}.running_var"),
            Tensor::filled(&[c, 1, 1], 1.0),
            ParamKind::RunningVar,
        );
    }
}

/// Parameters bound onto a tape for one forward pass: name -> Var.
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Creates one tape leaf per stored array. Trainable arrays become gradient
/// leaves when `trainable` is true; buffers are always constants.
pub fn bind_params(tape: &mut Tape, store: &ParamStore, trainable: bool) -> BoundParams {
    let mut vars = IndexMap::with_capacity(store.len());
    for (name, p) in store.iter() {
        let v = if trainable && p.kind.trainable() {
            tape.input(p.tensor.clone())
        } else {
            tape.constant(p.tensor.clone())
        };
        vars.insert(name.clone(), v);
    }
    BoundParams { vars }
}

/// SplitMix64 step, used to derive independent sub-seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for (base, stream) pairs such as (run seed, epoch).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0xA5A5_5A5A_0F0F_F0F0)))
}
