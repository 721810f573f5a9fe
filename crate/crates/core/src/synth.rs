//! SynthDyna's generative planning model.
//!
//! A two-layer network maps a Gaussian noise vector to a synthetic transition
//! `(φ̃, r̃, φ̃′)`:
//!
//! ```text
//! out = W2 · tanh(W1 · z + b1) + b2,   φ̃ = out[..n],  r̃ = out[n],  φ̃′ = out[n+1..]
//! ```
//!
//! The model is not trained to reproduce the environment. It is trained on a
//! meta-loss that measures how useful its samples are to the value learner:
//! starting from stored weights θ_p, run `k` TD updates on generated tuples
//! (step size ζ) to get θ′, then score θ′ by the squared TD error on a stored
//! veridical transition,
//!
//! ```text
//! L(η) = (r + γ θ_p⊤φ′ − θ′⊤φ)²
//! ```
//!
//! The target keeps θ_p and is detached, so only the prediction θ′⊤φ carries
//! gradient back through the unrolled updates into η.

use std::borrow::Cow;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamError, AdamState, GraphError, Gradients, Graph, NodeId, ParamGrad, Tensor};
use crate::replay::TransitionSource;
use crate::value::{Transition, ValueWeights};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Adam(#[from] AdamError),
    #[error("non-finite value at inner planning step {step}")]
    NonFiniteInner { step: usize },
    #[error("non-finite meta-loss {0}")]
    NonFiniteLoss(f64),
    #[error("expected {expected} noise vectors, got {found}")]
    NoiseCount { expected: usize, found: usize },
    #[error("noise vector has {found} entries, generator expects {expected}")]
    NoiseDim { expected: usize, found: usize },
    #[error("meta-update needs a non-empty batch")]
    EmptyBatch,
    #[error("inner step size must be finite and positive, got {0}")]
    StepSize(f64),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Generator weights η.
///
/// Serialized as a checkpoint with the shape header
/// `noise_dim`, `hidden`, `feature_dim`, then `w1` (hidden × noise_dim,
/// row-major), `b1`, `w2` ((2·feature_dim + 1) × hidden, row-major), `b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub noise_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GeneratorParams {
    pub const GROUP_NAMES: [&'static str; 4] = ["w1", "b1", "w2", "b2"];

    pub fn zeros(noise_dim: usize, hidden: usize, feature_dim: usize) -> Self {
        let out = 2 * feature_dim + 1;
        Self {
            noise_dim,
            hidden,
            feature_dim,
            w1: vec![0.0; hidden * noise_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; out * hidden],
            b2: vec![0.0; out],
        }
    }

    /// Each layer drawn from U(−1/√fan_in, 1/√fan_in).
    pub fn init<R: Rng + ?Sized>(
        noise_dim: usize,
        hidden: usize,
        feature_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(noise_dim, hidden, feature_dim);
        let mut fill = |xs: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            xs.iter_mut().for_each(|x| *x = dist.sample(rng));
        };
        fill(&mut p.w1, noise_dim);
        fill(&mut p.b1, noise_dim);
        fill(&mut p.w2, hidden);
        fill(&mut p.b2, hidden);
        p
    }

    pub fn output_dim(&self) -> usize {
        2 * self.feature_dim + 1
    }

    pub fn group_lens(&self) -> [usize; 4] {
        [self.w1.len(), self.b1.len(), self.w2.len(), self.b2.len()]
    }

    pub fn num_params(&self) -> usize {
        self.group_lens().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn groups(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn groups_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// All parameters in checkpoint order.
    pub fn flatten(&self) -> Vec<f64> {
        self.groups().concat()
    }

    /// Inverse of [`flatten`](Self::flatten) with this generator's shapes.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut p = self.clone();
        let mut offset = 0;
        for g in p.groups_mut() {
            let n = g.len();
            g.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        p
    }

    fn validate(&self) -> Result<(), SynthError> {
        let expected = [
            self.hidden * self.noise_dim,
            self.hidden,
            self.output_dim() * self.hidden,
            self.output_dim(),
        ];
        for ((name, len), want) in Self::GROUP_NAMES.iter().zip(self.group_lens()).zip(expected) {
            if len != want {
                return Err(SynthError::Checkpoint(format!(
                    "`{name}` has {len} entries, shape header implies {want}"
                )));
            }
        }
        if !self.is_finite() {
            return Err(SynthError::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let p: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.validate()?;
        Ok(p)
    }

    /// Synthetic transition for noise `z`, without gradient tracking.
    pub fn generate(&self, z: &[f64]) -> Result<Transition, SynthError> {
        if z.len() != self.noise_dim {
            return Err(SynthError::NoiseDim {
                expected: self.noise_dim,
                found: z.len(),
            });
        }
        let h: Vec<f64> = self
            .w1
            .chunks_exact(self.noise_dim)
            .zip(&self.b1)
            .map(|(row, b)| (row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + b).tanh())
            .collect();
        let out: Vec<f64> = self
            .w2
            .chunks_exact(self.hidden)
            .zip(&self.b2)
            .map(|(row, b)| row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        let n = self.feature_dim;
        Ok(Transition {
            phi: out[..n].to_vec(),
            reward: out[n],
            next_phi: out[n + 1..].to_vec(),
            terminal: false,
        })
    }
}

/// Fresh standard-normal noise, one vector per generated transition.
pub fn draw_noise<R: Rng + ?Sized>(noise_dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..noise_dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Planning source that samples the generator with fresh noise per draw.
pub struct GeneratorSource<'a>(pub &'a GeneratorParams);

impl TransitionSource for GeneratorSource<'_> {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Cow<'_, Transition>> {
        let z: Vec<f64> = (0..self.0.noise_dim).map(|_| StandardNormal.sample(rng)).collect();
        Some(Cow::Owned(self.0.generate(&z).expect("noise sized to generator")))
    }
}

/// `(θ_p, φ, r, φ′)`: the weights saved before planning, with a veridical
/// transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaSample {
    pub theta_p: ValueWeights,
    pub transition: Transition,
}

/// Every meta-sample seen so far; minibatches are drawn uniformly.
#[derive(Clone, Debug, Default)]
pub struct MetaBuffer {
    entries: Vec<MetaSample>,
}

impl MetaBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: MetaSample) {
        self.entries.push(sample);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MetaSample] {
        &self.entries
    }

    /// `size` draws with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<&MetaSample> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        (0..size)
            .map(|_| self.entries.choose(rng).expect("non-empty"))
            .collect()
    }
}

/// Settings of the differentiated inner planning loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerLoop {
    /// Planning updates unrolled per meta-sample.
    pub k: usize,
    /// Inner step size ζ.
    pub zeta: f64,
    pub gamma: f64,
}

/// Leaf nodes holding η inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLeaves {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl GeneratorLeaves {
    pub fn attach(graph: &mut Graph, eta: &GeneratorParams) -> Self {
        Self {
            w1: graph.leaf("w1", Tensor::matrix(eta.hidden, eta.noise_dim, eta.w1.clone())),
            b1: graph.leaf("b1", Tensor::vector(eta.b1.clone())),
            w2: graph.leaf("w2", Tensor::matrix(eta.output_dim(), eta.hidden, eta.w2.clone())),
            b2: graph.leaf("b2", Tensor::vector(eta.b2.clone())),
        }
    }

    fn ids(&self) -> [NodeId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Gradient groups in [`GeneratorParams::GROUP_NAMES`] order.
    pub fn gradients(&self, grads: &Gradients) -> [Vec<f64>; 4] {
        self.ids().map(|id| grads.wrt(id).into_data())
    }

    /// Differentiable generator output `(φ̃, r̃, φ̃′)` for one noise vector.
    pub fn generate(
        &self,
        graph: &mut Graph,
        feature_dim: usize,
        z: &[f64],
    ) -> Result<(NodeId, NodeId, NodeId), GraphError> {
        let z = graph.constant(Tensor::vector(z.to_vec()));
        let pre = graph.affine(self.w1, z, self.b1)?;
        let hidden = graph.tanh(pre)?;
        let out = graph.affine(self.w2, hidden, self.b2)?;
        let phi = graph.slice(out, 0, feature_dim)?;
        let reward = graph.element(out, feature_dim)?;
        let next_phi = graph.slice(out, feature_dim + 1, feature_dim)?;
        Ok((phi, reward, next_phi))
    }
}

/// Node handles for one sample's meta-loss.
#[derive(Clone, Copy, Debug)]
pub struct MetaLossNodes {
    /// Starting weights of the inner loop.
    pub theta_start: NodeId,
    /// Weights used in the TD target.
    pub theta_target: NodeId,
    /// `r + γ θ_target⊤φ′` before the stop-gradient.
    pub raw_target: NodeId,
    /// θ′⊤φ after the inner loop.
    pub prediction: NodeId,
    pub loss: NodeId,
}

/// Appends one sample's meta-loss to `graph`.
///
/// `theta_start` and `theta_target` are normally both θ_p; keeping them
/// separate lets tests perturb the target branch alone. Both enter as leaves
/// so their adjoints can be inspected.
pub fn append_meta_loss(
    graph: &mut Graph,
    eta: &GeneratorLeaves,
    feature_dim: usize,
    theta_start: &[f64],
    theta_target: &[f64],
    transition: &Transition,
    noise: &[Vec<f64>],
    inner: InnerLoop,
) -> Result<MetaLossNodes, SynthError> {
    if noise.len() != inner.k {
        return Err(SynthError::NoiseCount {
            expected: inner.k,
            found: noise.len(),
        });
    }
    if !(inner.zeta.is_finite() && inner.zeta > 0.0) {
        return Err(SynthError::StepSize(inner.zeta));
    }
    let start = graph.leaf("theta_start", Tensor::vector(theta_start.to_vec()));
    let mut theta = start;
    for (step, z) in noise.iter().enumerate() {
        let (phi, reward, next_phi) = eta.generate(graph, feature_dim, z)?;
        let pred = graph.dot(theta, phi)?;
        let next = graph.dot(theta, next_phi)?;
        let disc = graph.scale(next, inner.gamma)?;
        let target = graph.add(reward, disc)?;
        let delta = graph.sub(target, pred)?;
        let step_delta = graph.scale(delta, inner.zeta)?;
        let update = graph.scalar_mul(step_delta, phi)?;
        theta = graph.add(theta, update)?;
        if !graph.value(theta).data().iter().all(|x| x.is_finite()) {
            return Err(SynthError::NonFiniteInner { step });
        }
    }

    let target_theta = graph.leaf("theta_target", Tensor::vector(theta_target.to_vec()));
    let next_phi = graph.constant(Tensor::vector(transition.next_phi.clone()));
    let bootstrap = graph.dot(target_theta, next_phi)?;
    let disc = graph.scale(bootstrap, inner.gamma)?;
    let reward = graph.constant(Tensor::scalar(transition.reward));
    let raw_target = graph.add(reward, disc)?;
    let target = graph.detach(raw_target)?;

    let phi = graph.constant(Tensor::vector(transition.phi.clone()));
    let prediction = graph.dot(theta, phi)?;
    let err = graph.sub(target, prediction)?;
    let loss = graph.square(err)?;
    let value = graph.value(loss).item();
    if !value.is_finite() {
        return Err(SynthError::NonFiniteLoss(value));
    }
    Ok(MetaLossNodes {
        theta_start: start,
        theta_target: target_theta,
        raw_target,
        prediction,
        loss,
    })
}

/// A built meta-loss graph for a single sample.
pub struct MetaLossGraph {
    pub graph: Graph,
    pub eta: GeneratorLeaves,
    pub nodes: MetaLossNodes,
}

impl MetaLossGraph {
    pub fn build(
        eta: &GeneratorParams,
        sample: &MetaSample,
        noise: &[Vec<f64>],
        inner: InnerLoop,
    ) -> Result<Self, SynthError> {
        Self::build_split(
            eta,
            sample.theta_p.as_slice(),
            sample.theta_p.as_slice(),
            &sample.transition,
            noise,
            inner,
        )
    }

    pub fn build_split(
        eta: &GeneratorParams,
        theta_start: &[f64],
        theta_target: &[f64],
        transition: &Transition,
        noise: &[Vec<f64>],
        inner: InnerLoop,
    ) -> Result<Self, SynthError> {
        let mut graph = Graph::with_capacity(16 * inner.k + 16);
        let leaves = GeneratorLeaves::attach(&mut graph, eta);
        let nodes = append_meta_loss(
            &mut graph,
            &leaves,
            eta.feature_dim,
            theta_start,
            theta_target,
            transition,
            noise,
            inner,
        )?;
        Ok(Self {
            graph,
            eta: leaves,
            nodes,
        })
    }

    pub fn loss(&self) -> f64 {
        self.graph.value(self.nodes.loss).item()
    }

    pub fn backward(&self) -> Result<Gradients, SynthError> {
        Ok(self.graph.backward(self.nodes.loss)?)
    }
}

/// The meta-loss value for one sample and fixed noise.
pub fn meta_loss(
    eta: &GeneratorParams,
    sample: &MetaSample,
    noise: &[Vec<f64>],
    inner: InnerLoop,
) -> Result<f64, SynthError> {
    Ok(MetaLossGraph::build(eta, sample, noise, inner)?.loss())
}

/// Meta-loss and its gradient, flattened in checkpoint order.
pub fn meta_loss_grad(
    eta: &GeneratorParams,
    sample: &MetaSample,
    noise: &[Vec<f64>],
    inner: InnerLoop,
) -> Result<(f64, Vec<f64>), SynthError> {
    let g = MetaLossGraph::build(eta, sample, noise, inner)?;
    let grads = g.backward()?;
    Ok((g.loss(), g.eta.gradients(&grads).concat()))
}

/// Mean meta-loss over a batch and its gradient groups, for fixed noise
/// (`noise[i]` holds the `k` vectors of sample `i`).
pub fn batch_meta_loss_grad(
    eta: &GeneratorParams,
    batch: &[&MetaSample],
    noise: &[Vec<Vec<f64>>],
    inner: InnerLoop,
) -> Result<(f64, [Vec<f64>; 4]), SynthError> {
    if batch.is_empty() {
        return Err(SynthError::EmptyBatch);
    }
    if noise.len() != batch.len() {
        return Err(SynthError::NoiseCount {
            expected: batch.len(),
            found: noise.len(),
        });
    }
    let mut graph = Graph::with_capacity(batch.len() * (16 * inner.k + 16) + 8);
    let leaves = GeneratorLeaves::attach(&mut graph, eta);
    let losses = batch
        .iter()
        .zip(noise)
        .map(|(s, z)| {
            append_meta_loss(
                &mut graph,
                &leaves,
                eta.feature_dim,
                s.theta_p.as_slice(),
                s.theta_p.as_slice(),
                &s.transition,
                z,
                inner,
            )
            .map(|n| n.loss)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean = graph.mean(&losses)?;
    let grads = graph.backward(mean)?;
    Ok((graph.value(mean).item(), leaves.gradients(&grads)))
}

/// One Adam step on the mean meta-loss of `batch`, with fresh noise per
/// sample per inner step. Returns the batch loss before the step.
pub fn meta_update<R: Rng + ?Sized>(
    eta: &mut GeneratorParams,
    batch: &[&MetaSample],
    adam: &mut AdamState,
    inner: InnerLoop,
    rng: &mut R,
) -> Result<f64, SynthError> {
    let noise: Vec<Vec<Vec<f64>>> = batch
        .iter()
        .map(|_| draw_noise(eta.noise_dim, inner.k, rng))
        .collect();
    let (loss, grads) = batch_meta_loss_grad(eta, batch, &noise, inner)?;
    let [w1, b1, w2, b2] = eta.groups_mut();
    let [g_w1, g_b1, g_w2, g_b2] = &grads;
    let [n_w1, n_b1, n_w2, n_b2] = GeneratorParams::GROUP_NAMES;
    adam.step(&mut [
        ParamGrad {
            name: n_w1,
            values: w1,
            grad: g_w1,
        },
        ParamGrad {
            name: n_b1,
            values: b1,
            grad: g_b1,
        },
        ParamGrad {
            name: n_w2,
            values: w2,
            grad: g_w2,
        },
        ParamGrad {
            name: n_b2,
            values: b2,
            grad: g_b2,
        },
    ])?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::AdamConfig;
    use crate::hallway::{FEATURE_DIM, GAMMA};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const N: usize = FEATURE_DIM;

    fn e(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; N];
        v[i] = 1.0;
        v
    }

    fn inner(k: usize) -> InnerLoop {
        InnerLoop {
            k,
            zeta: 0.1,
            gamma: GAMMA,
        }
    }

    /// Bias-only generator that always emits `(phi, r, next_phi)`.
    fn pinned(phi: &[f64], r: f64, next_phi: &[f64]) -> GeneratorParams {
        let mut g = GeneratorParams::zeros(4, 3, N);
        g.b2 = [phi, &[r][..], next_phi].concat();
        g
    }

    fn sample(theta: Vec<f64>, phi: Vec<f64>, r: f64, next_phi: Vec<f64>) -> MetaSample {
        MetaSample {
            theta_p: ValueWeights::from_vec(theta),
            transition: Transition::new(phi, r, next_phi, false),
        }
    }

    #[test]
    fn generate_examples() {
        let z = [0.3, -1.0, 2.0, 0.1];
        let t = GeneratorParams::zeros(4, 3, N).generate(&z).unwrap();
        assert_eq!((t.phi, t.reward, t.next_phi), (vec![0.0; N], 0.0, vec![0.0; N]));

        let t = pinned(&e(3), 1.0, &[0.0; N]).generate(&z).unwrap();
        assert_eq!((t.phi, t.reward, t.next_phi), (e(3), 1.0, vec![0.0; N]));

        assert!(matches!(
            GeneratorParams::zeros(4, 3, N).generate(&[0.0; 2]),
            Err(SynthError::NoiseDim { expected: 4, found: 2 })
        ));
    }

    #[test]
    fn graph_generator_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eta = GeneratorParams::init(8, 32, N, &mut rng);
        let z = draw_noise(8, 1, &mut rng).pop().unwrap();
        let plain = eta.generate(&z).unwrap();
        let mut g = Graph::new();
        let leaves = GeneratorLeaves::attach(&mut g, &eta);
        let (phi, r, next) = leaves.generate(&mut g, N, &z).unwrap();
        assert_eq!(g.value(phi).data(), &plain.phi[..]);
        assert_eq!(g.value(r).item(), plain.reward);
        assert_eq!(g.value(next).data(), &plain.next_phi[..]);
    }

    #[test]
    fn meta_loss_without_planning_is_squared_td_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eta = GeneratorParams::init(8, 16, N, &mut rng);
        let theta: Vec<f64> = (0..N).map(|i| 0.05 * i as f64 - 0.3).collect();
        let s = sample(theta.clone(), e(4), 0.7, e(9));
        let td = 0.7 + GAMMA * theta[9] - theta[4];
        let l = meta_loss(&eta, &s, &[], inner(0)).unwrap();
        assert!((l - td * td).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_planning_leaves_loss_unchanged() {
        let theta: Vec<f64> = (0..N).map(|i| (i as f64).sin()).collect();
        let s = sample(theta, e(2), -1.0, e(7));
        let eta = pinned(&e(11), 0.4, &e(12));
        let base = meta_loss(&eta, &s, &[], inner(0)).unwrap();
        let noise = vec![vec![0.0; 4]; 5];
        assert_eq!(meta_loss(&eta, &s, &noise, inner(5)).unwrap(), base);
    }

    #[test]
    fn single_inner_step_algebra() {
        let s = sample(vec![0.0; N], e(6), 1.0, vec![0.0; N]);
        let eta = pinned(&e(6), 1.0, &[0.0; N]);
        let g = MetaLossGraph::build(&eta, &s, &[vec![0.0; 4]], inner(1)).unwrap();
        // θ′₆ = 0.1 after one step, so loss = (1 − 0.1)²
        assert!((g.graph.value(g.nodes.prediction).item() - 0.1).abs() < 1e-15);
        assert!((g.loss() - 0.81).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = sample(vec![0.0; N], e(0), 0.0, e(1));
        let eta = GeneratorParams::zeros(4, 3, N);
        assert!(matches!(
            meta_loss(&eta, &s, &[], inner(2)),
            Err(SynthError::NoiseCount { expected: 2, found: 0 })
        ));
        let bad = InnerLoop { zeta: 0.0, ..inner(0) };
        assert!(matches!(meta_loss(&eta, &s, &[], bad), Err(SynthError::StepSize(_))));
        let mut huge = pinned(&vec![1e200; N], 1e200, &vec![1e200; N]);
        huge.w1[0] = 1.0;
        let s = sample(vec![1e200; N], e(0), 0.0, e(1));
        assert!(matches!(
            meta_loss(&huge, &s, &[vec![0.0; 4], vec![0.0; 4]], inner(2)),
            Err(SynthError::NonFiniteInner { step: 0 })
        ));
        assert!(matches!(
            batch_meta_loss_grad(&eta, &[], &[], inner(0)),
            Err(SynthError::EmptyBatch)
        ));
    }

    #[test]
    fn evaluation_is_deterministic_given_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eta = GeneratorParams::init(8, 32, N, &mut rng);
        let theta: Vec<f64> = (0..N).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = sample(theta, e(1), 0.0, e(2));
        let noise = draw_noise(8, 5, &mut rng);
        let a = meta_loss_grad(&eta, &s, &noise, inner(5)).unwrap();
        let b = meta_loss_grad(&eta, &s, &noise, inner(5)).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eta = GeneratorParams::init(8, 32, N, &mut rng);
        let mk = |rng: &mut ChaCha8Rng, i: usize| {
            let theta = (0..N).map(|_| rng.random_range(-1.0..1.0)).collect();
            sample(theta, e(i), 1.0, e(i + 1))
        };
        let (a, b) = (mk(&mut rng, 3), mk(&mut rng, 8));
        let (na, nb) = (draw_noise(8, 5, &mut rng), draw_noise(8, 5, &mut rng));

        let (_, single) = batch_meta_loss_grad(&eta, &[&a], &[na.clone()], inner(5)).unwrap();
        let (_, ga) = meta_loss_grad(&eta, &a, &na, inner(5)).unwrap();
        assert_eq!(single.concat(), ga);

        let (_, pair) =
            batch_meta_loss_grad(&eta, &[&a, &b], &[na.clone(), nb.clone()], inner(5)).unwrap();
        let (_, gb) = meta_loss_grad(&eta, &b, &nb, inner(5)).unwrap();
        for ((p, x), y) in pair.concat().iter().zip(&ga).zip(&gb) {
            assert!((p - 0.5 * (x + y)).abs() <= 1e-12 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn zero_gradient_batch_leaves_eta_unchanged() {
        // generator emits zeros, so planning does nothing and depends on η only
        // through terms multiplied by φ̃ = 0; δ = 0 on the stored transition
        let mut eta = GeneratorParams::zeros(4, 3, N);
        let s = sample(vec![0.0; N], e(0), 0.0, e(1));
        let before = eta.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &eta.group_lens());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        meta_update(&mut eta, &[&s, &s], &mut adam, inner(5), &mut rng).unwrap();
        assert_eq!(eta, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn meta_buffer_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = MetaBuffer::new();
        assert!(buf.sample_batch(4, &mut rng).is_empty());
        buf.push(sample(vec![0.0; N], e(0), 0.0, e(1)));
        let batch = buf.sample_batch(16, &mut rng);
        assert_eq!(batch.len(), 16);
        assert!(batch.iter().all(|s| **s == buf.entries()[0]));
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eta = GeneratorParams::init(8, 32, N, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eta.json");
        eta.save(&path).unwrap();
        assert_eq!(GeneratorParams::load(&path).unwrap(), eta);

        let mut broken = eta.clone();
        broken.b1.pop();
        broken.save(&path).unwrap();
        assert!(matches!(GeneratorParams::load(&path), Err(SynthError::Checkpoint(_))));

        assert_eq!(eta.with_flat(&eta.flatten()), eta);
    }
}
