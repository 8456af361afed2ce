//! Linear Inception encoder, nonlinear projector and convolutional classifier.

mod checkpoint;
mod forward;

pub use checkpoint::{read_erpw, write_erpw, Checkpoint, CheckpointEntry, ERPW_MAGIC, ERPW_VERSION};
pub use forward::{
    classifier_forward, encoder_forward, encoder_output, projector_forward, ClassifierVars, EncoderVars, Mode, BN_MOMENTUM,
    ProjectorOutput, ProjectorVars,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub sample_rate: f32,
    /// Temporal kernel length per branch; its length is the branch count.
    pub kernel_lengths: Vec<usize>,
    pub kernels_per_branch: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_channels: 8,
            n_samples: 128,
            sample_rate: 128.0,
            kernel_lengths: vec![64, 32, 16],
            kernels_per_branch: 8,
        }
    }
}

impl EncoderConfig {
    pub fn n_branches(&self) -> usize {
        self.kernel_lengths.len()
    }

    /// Rows of the encoder output.
    pub fn n_maps(&self) -> usize {
        self.n_branches() * self.kernels_per_branch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorConfig {
    /// Average-pooling window and stride applied to the encoder output.
    pub pool: usize,
    pub kernels_per_branch: usize,
    pub dropout: f64,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        Self {
            pool: 4,
            kernels_per_branch: 8,
            dropout: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub filters: (usize, usize),
    pub kernel_lengths: (usize, usize),
    pub pool: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            filters: (16, 8),
            kernel_lengths: (16, 8),
            pool: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub projector: ProjectorConfig,
    pub classifier: ClassifierConfig,
}

impl ModelConfig {
    /// Small configuration for finite-difference checks (2 channels, 16 samples).
    pub fn reduced() -> Self {
        Self {
            encoder: EncoderConfig {
                n_channels: 2,
                n_samples: 16,
                sample_rate: 16.0,
                kernel_lengths: vec![8, 4, 2],
                kernels_per_branch: 2,
            },
            projector: ProjectorConfig {
                pool: 2,
                kernels_per_branch: 2,
                dropout: 0.25,
            },
            classifier: ClassifierConfig {
                filters: (4, 2),
                kernel_lengths: (4, 2),
                pool: 2,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.n_channels == 0 || e.n_samples == 0 || e.kernels_per_branch == 0 || e.kernel_lengths.is_empty() {
            return Err(Error::config("encoder dimensions must be positive"));
        }
        if e.kernel_lengths.contains(&0) {
            return Err(Error::config("encoder kernel lengths must be >= 1"));
        }
        let p = &self.projector;
        if p.pool == 0 || p.pool > e.n_samples || p.kernels_per_branch == 0 {
            return Err(Error::config("projector pool must be in [1, n_samples]"));
        }
        if !(0.0..1.0).contains(&p.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        let c = &self.classifier;
        if c.filters.0 <= c.filters.1 || c.filters.1 == 0 {
            return Err(Error::config("classifier filter counts must strictly decrease"));
        }
        if c.kernel_lengths.0 == 0 || c.kernel_lengths.1 == 0 || c.pool == 0 {
            return Err(Error::config("classifier kernel lengths and pool must be >= 1"));
        }
        if e.n_samples / c.pool / c.pool == 0 {
            return Err(Error::config("classifier pooling leaves no samples"));
        }
        Ok(())
    }

    /// Projector temporal kernel lengths: encoder lengths divided by the pool stride.
    pub fn projector_kernel_lengths(&self) -> Vec<usize> {
        self.encoder
            .kernel_lengths
            .iter()
            .map(|&p| (p / self.projector.pool).max(1))
            .collect()
    }

    pub fn projector_time(&self) -> usize {
        self.encoder.n_samples / self.projector.pool
    }

    /// Length of the projector's output vector.
    pub fn embedding_dim(&self) -> usize {
        self.encoder.n_branches() * self.projector.kernels_per_branch * self.projector_time()
    }

    pub fn classifier_features(&self) -> usize {
        let c = &self.classifier;
        c.filters.1 * (self.encoder.n_samples / c.pool / c.pool)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T: Scalar> {
    /// Per branch `[K, P_b]`.
    pub temporal: Vec<Tensor<T>>,
    /// Per branch `[K, M]`, one channel-weight vector per temporal kernel.
    pub spatial: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams<T: Scalar> {
    pub temporal: Vec<Tensor<T>>,
    /// Per branch `[K, B*K1]` over the encoder maps.
    pub spatial: Vec<Tensor<T>>,
    pub bn_gamma: Vec<Tensor<T>>,
    pub bn_beta: Vec<Tensor<T>>,
    pub running_mean: Vec<Tensor<T>>,
    pub running_var: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<T: Scalar> {
    pub conv1_weight: Tensor<T>,
    pub conv1_bias: Tensor<T>,
    pub conv2_weight: Tensor<T>,
    pub conv2_bias: Tensor<T>,
    pub dense_weight: Tensor<T>,
    pub dense_bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Projector,
    /// Batch-norm running moments; never trained.
    ProjectorState,
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub config: ModelConfig,
    pub encoder: EncoderParams<T>,
    pub projector: ProjectorParams<T>,
    pub classifier: ClassifierParams<T>,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// Uniform in ±1/√fan_in.
    fn uniform<T: Scalar>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(self.rng.random_range(-bound..=bound))).collect();
        Tensor::new(shape, data).expect("consistent shape")
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Deterministic initialization from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let e = &config.encoder;
        let k1 = e.kernels_per_branch;
        let mut encoder = EncoderParams {
            temporal: Vec::new(),
            spatial: Vec::new(),
        };
        for &p in &e.kernel_lengths {
            encoder.temporal.push(init.uniform(vec![k1, p], p));
            encoder.spatial.push(init.uniform(vec![k1, e.n_channels], e.n_channels));
        }

        let k2 = config.projector.kernels_per_branch;
        let maps = e.n_maps();
        let feat = k2 * config.projector_time();
        let mut projector = ProjectorParams {
            temporal: Vec::new(),
            spatial: Vec::new(),
            bn_gamma: Vec::new(),
            bn_beta: Vec::new(),
            running_mean: Vec::new(),
            running_var: Vec::new(),
        };
        for p in config.projector_kernel_lengths() {
            projector.temporal.push(init.uniform(vec![k2, p], p));
            projector.spatial.push(init.uniform(vec![k2, maps], maps));
            projector.bn_gamma.push(Tensor::full(vec![feat], T::one()));
            projector.bn_beta.push(Tensor::zeros(vec![feat]));
            projector.running_mean.push(Tensor::zeros(vec![feat]));
            projector.running_var.push(Tensor::full(vec![feat], T::one()));
        }

        let c = &config.classifier;
        let (f1, f2) = c.filters;
        let (l1, l2) = c.kernel_lengths;
        let dense_in = config.classifier_features();
        let classifier = ClassifierParams {
            conv1_weight: init.uniform(vec![f1, maps, l1], maps * l1),
            conv1_bias: init.uniform(vec![f1], maps * l1),
            conv2_weight: init.uniform(vec![f2, f1, l2], f1 * l2),
            conv2_bias: init.uniform(vec![f2], f1 * l2),
            dense_weight: init.uniform(vec![dense_in, 1], dense_in),
            dense_bias: init.uniform(vec![1], dense_in),
        };
        Ok(Self {
            config: config.clone(),
            encoder,
            projector,
            classifier,
        })
    }

    /// Every tensor with its checkpoint name and group, in a fixed order.
    pub fn named(&self) -> Vec<(String, Group, &Tensor<T>)> {
        let mut out = Vec::new();
        for (b, t) in self.encoder.temporal.iter().enumerate() {
            out.push((format!("encoder.temporal.{b}"), Group::Encoder, t));
        }
        for (b, t) in self.encoder.spatial.iter().enumerate() {
            out.push((format!("encoder.spatial.{b}"), Group::Encoder, t));
        }
        let p = &self.projector;
        for (b, t) in p.temporal.iter().enumerate() {
            out.push((format!("projector.temporal.{b}"), Group::Projector, t));
        }
        for (b, t) in p.spatial.iter().enumerate() {
            out.push((format!("projector.spatial.{b}"), Group::Projector, t));
        }
        for (b, t) in p.bn_gamma.iter().enumerate() {
            out.push((format!("projector.bn_gamma.{b}"), Group::Projector, t));
        }
        for (b, t) in p.bn_beta.iter().enumerate() {
            out.push((format!("projector.bn_beta.{b}"), Group::Projector, t));
        }
        for (b, t) in p.running_mean.iter().enumerate() {
            out.push((format!("projector.running_mean.{b}"), Group::ProjectorState, t));
        }
        for (b, t) in p.running_var.iter().enumerate() {
            out.push((format!("projector.running_var.{b}"), Group::ProjectorState, t));
        }
        let c = &self.classifier;
        for (name, t) in [
            ("classifier.conv1.weight", &c.conv1_weight),
            ("classifier.conv1.bias", &c.conv1_bias),
            ("classifier.conv2.weight", &c.conv2_weight),
            ("classifier.conv2.bias", &c.conv2_bias),
            ("classifier.dense.weight", &c.dense_weight),
            ("classifier.dense.bias", &c.dense_bias),
        ] {
            out.push((name.to_string(), Group::Classifier, t));
        }
        out
    }

    /// Mutable tensors of the given groups, in [`ModelParams::named`] order.
    pub fn named_mut(&mut self, groups: &[Group]) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        let want = |g: Group| groups.contains(&g);
        if want(Group::Encoder) {
            for (b, t) in self.encoder.temporal.iter_mut().enumerate() {
                out.push((format!("encoder.temporal.{b}"), t));
            }
            for (b, t) in self.encoder.spatial.iter_mut().enumerate() {
                out.push((format!("encoder.spatial.{b}"), t));
            }
        }
        let p = &mut self.projector;
        if want(Group::Projector) {
            for (b, t) in p.temporal.iter_mut().enumerate() {
                out.push((format!("projector.temporal.{b}"), t));
            }
            for (b, t) in p.spatial.iter_mut().enumerate() {
                out.push((format!("projector.spatial.{b}"), t));
            }
            for (b, t) in p.bn_gamma.iter_mut().enumerate() {
                out.push((format!("projector.bn_gamma.{b}"), t));
            }
            for (b, t) in p.bn_beta.iter_mut().enumerate() {
                out.push((format!("projector.bn_beta.{b}"), t));
            }
        }
        if want(Group::ProjectorState) {
            for (b, t) in p.running_mean.iter_mut().enumerate() {
                out.push((format!("projector.running_mean.{b}"), t));
            }
            for (b, t) in p.running_var.iter_mut().enumerate() {
                out.push((format!("projector.running_var.{b}"), t));
            }
        }
        if want(Group::Classifier) {
            let c = &mut self.classifier;
            out.push(("classifier.conv1.weight".into(), &mut c.conv1_weight));
            out.push(("classifier.conv1.bias".into(), &mut c.conv1_bias));
            out.push(("classifier.conv2.weight".into(), &mut c.conv2_weight));
            out.push(("classifier.conv2.bias".into(), &mut c.conv2_bias));
            out.push(("classifier.dense.weight".into(), &mut c.dense_weight));
            out.push(("classifier.dense.bias".into(), &mut c.dense_bias));
        }
        out
    }

    /// Learnable scalar count (running moments excluded).
    pub fn parameter_count(&self) -> usize {
        self.named()
            .iter()
            .filter(|(_, g, _)| *g != Group::ProjectorState)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c = |v: &Vec<Tensor<T>>| v.iter().map(Tensor::cast).collect::<Vec<_>>();
        ModelParams {
            config: self.config.clone(),
            encoder: EncoderParams {
                temporal: c(&self.encoder.temporal),
                spatial: c(&self.encoder.spatial),
            },
            projector: ProjectorParams {
                temporal: c(&self.projector.temporal),
                spatial: c(&self.projector.spatial),
                bn_gamma: c(&self.projector.bn_gamma),
                bn_beta: c(&self.projector.bn_beta),
                running_mean: c(&self.projector.running_mean),
                running_var: c(&self.projector.running_var),
            },
            classifier: ClassifierParams {
                conv1_weight: self.classifier.conv1_weight.cast(),
                conv1_bias: self.classifier.conv1_bias.cast(),
                conv2_weight: self.classifier.conv2_weight.cast(),
                conv2_bias: self.classifier.conv2_bias.cast(),
                dense_weight: self.classifier.dense_weight.cast(),
                dense_bias: self.classifier.dense_bias.cast(),
            },
        }
    }

    /// Checkpoint holding the tensors of `groups`.
    pub fn to_checkpoint(&self, groups: &[Group]) -> Checkpoint {
        Checkpoint {
            entries: self
                .named()
                .into_iter()
                .filter(|(_, g, _)| groups.contains(g))
                .map(|(name, _, t)| CheckpointEntry {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
                })
                .collect(),
        }
    }

    /// Overwrites tensors named in the checkpoint after validating their shapes.
    /// Fails if any of `required` groups is absent from the checkpoint.
    pub fn apply_checkpoint(&mut self, ckpt: &Checkpoint, required: &[Group]) -> Result<()> {
        let groups_of: Vec<(String, Group)> = self.named().into_iter().map(|(n, g, _)| (n, g)).collect();
        for g in required {
            let names: Vec<&String> = groups_of.iter().filter(|(_, gg)| gg == g).map(|(n, _)| n).collect();
            if let Some(missing) = names.iter().find(|n| !ckpt.entries.iter().any(|e| &&e.name == *n)) {
                return Err(Error::config(format!("checkpoint lacks required tensor `{missing}`")));
            }
        }
        let all = [Group::Encoder, Group::Projector, Group::ProjectorState, Group::Classifier];
        let mut slots = self.named_mut(&all);
        for entry in &ckpt.entries {
            let (_, slot) = slots
                .iter_mut()
                .find(|(n, _)| *n == entry.name)
                .ok_or_else(|| Error::config(format!("unknown checkpoint tensor `{}`", entry.name)))?;
            if slot.shape() != entry.shape.as_slice() {
                return Err(Error::shape(format!(
                    "checkpoint tensor `{}` has shape {:?}, config expects {:?}",
                    entry.name,
                    entry.shape,
                    slot.shape()
                )));
            }
            for (d, &v) in slot.data_mut().iter_mut().zip(&entry.data) {
                *d = T::from_f64(v as f64);
            }
        }
        Ok(())
    }
}
