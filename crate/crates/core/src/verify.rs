//! Finite-difference verification of the differentiation path.

use std::convert::Infallible;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, relative_error, GradCheck, Graph, GraphError, NodeId, Shape, Tensor};
use crate::hallway::{FEATURE_DIM, GAMMA};
use crate::synth::{draw_noise, meta_loss_grad, GeneratorParams, InnerLoop, MetaLossGraph, MetaSample, SynthError};
use crate::value::{Transition, ValueWeights};

/// Tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-6;
/// Tolerance for the unrolled meta-loss.
pub const META_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

type Builder = fn(&mut Graph, &[NodeId]) -> Result<NodeId, GraphError>;

/// Loss = Σ_i c_i · f(x)_i with fixed random `c`, so every output entry of
/// the primitive is exercised.
fn primitive_check(
    shapes: &[(usize, usize)],
    build: Builder,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheck, GraphError> {
    let sizes: Vec<usize> = shapes.iter().map(|&(r, c)| (r * c).max(1)).collect();
    let point = uniform(rng, sizes.iter().sum());
    let probe_seed: u64 = rng.random();

    let eval = |flat: &[f64]| -> Result<(f64, Vec<f64>), GraphError> {
        let mut g = Graph::new();
        let mut offset = 0;
        let leaves: Vec<NodeId> = shapes
            .iter()
            .zip(&sizes)
            .enumerate()
            .map(|(i, (&(r, c), &n))| {
                let data = flat[offset..offset + n].to_vec();
                offset += n;
                let t = match (r, c) {
                    (0, _) => Tensor::scalar(data[0]),
                    (_, 1) => Tensor::vector(data),
                    _ => Tensor::matrix(r, c, data),
                };
                g.leaf(format!("x{i}"), t)
            })
            .collect();
        let out = build(&mut g, &leaves)?;
        let loss = match g.shape(out) {
            Shape::Scalar => out,
            shape => {
                let mut prng = ChaCha8Rng::seed_from_u64(probe_seed);
                let c = g.constant(Tensor::vector(uniform(&mut prng, shape.len())));
                g.dot(out, c)?
            }
        };
        let grads = g.backward(loss)?;
        let grad = leaves.iter().flat_map(|&l| grads.wrt(l).into_data()).collect();
        Ok((g.value(loss).item(), grad))
    };
    grad_check(eval, &point, h)
}

/// Runs every check and returns one line per check.
pub fn gradient_report(seed: u64, k: usize, h: f64) -> Result<Vec<CheckLine>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();

    // (rows, cols) per operand; rows = 0 marks a scalar, cols = 1 a vector
    let primitives: [(&str, Vec<(usize, usize)>, Builder); 12] = [
        ("add", vec![(4, 1), (4, 1)], |g, x| g.add(x[0], x[1])),
        ("sub", vec![(4, 1), (4, 1)], |g, x| g.sub(x[0], x[1])),
        ("scale", vec![(4, 1)], |g, x| g.scale(x[0], -1.7)),
        ("scalar_mul", vec![(0, 1), (4, 1)], |g, x| g.scalar_mul(x[0], x[1])),
        ("mul", vec![(4, 1), (4, 1)], |g, x| g.mul(x[0], x[1])),
        ("matvec", vec![(3, 4), (4, 1)], |g, x| g.matvec(x[0], x[1])),
        ("dot", vec![(5, 1), (5, 1)], |g, x| g.dot(x[0], x[1])),
        ("affine", vec![(3, 4), (4, 1), (3, 1)], |g, x| g.affine(x[0], x[1], x[2])),
        ("tanh", vec![(4, 1)], |g, x| g.tanh(x[0])),
        ("square", vec![(4, 1)], |g, x| g.square(x[0])),
        ("sum", vec![(3, 1), (3, 1)], |g, x| g.sum(&[x[0], x[1], x[0]])),
        ("mean", vec![(0, 1), (0, 1)], |g, x| g.mean(&[x[0], x[1]])),
    ];
    for (name, shapes, build) in primitives {
        let r = primitive_check(&shapes, build, h, &mut rng)?;
        lines.push(CheckLine {
            name: format!("primitive {name}"),
            max_rel_error: r.max_rel_error,
            tolerance: PRIMITIVE_TOL,
        });
    }

    let (eta, sample, noise) = random_meta_problem(&mut rng, k);
    let inner = InnerLoop { k, zeta: 0.1, gamma: GAMMA };
    let r = grad_check(|flat| meta_loss_grad(&eta.with_flat(flat), &sample, &noise, inner), &eta.flatten(), h)?;
    lines.push(CheckLine {
        name: format!("meta-loss k={k}"),
        max_rel_error: r.max_rel_error,
        tolerance: META_TOL,
    });

    let d = detach_check(&eta, &sample, &noise, inner, h)?;
    lines.push(CheckLine {
        name: "target branch adjoint".into(),
        max_rel_error: d.target_adjoint_norm,
        tolerance: f64::MIN_POSITIVE,
    });
    lines.push(CheckLine {
        name: "detached target, start-weight gradient".into(),
        max_rel_error: d.start_rel_error,
        tolerance: META_TOL,
    });
    Ok(lines)
}

/// Random generator, meta-sample and noise of realistic size.
pub fn random_meta_problem(rng: &mut ChaCha8Rng, k: usize) -> (GeneratorParams, MetaSample, Vec<Vec<f64>>) {
    let eta = GeneratorParams::init(8, 32, FEATURE_DIM, rng);
    let theta = uniform(rng, FEATURE_DIM).iter().map(|x| 0.5 * x).collect();
    let phi_idx = rng.random_range(0..FEATURE_DIM);
    let next_idx = rng.random_range(0..FEATURE_DIM);
    let mut phi = vec![0.0; FEATURE_DIM];
    let mut next_phi = vec![0.0; FEATURE_DIM];
    phi[phi_idx] = 1.0;
    next_phi[next_idx] = 1.0;
    let sample = MetaSample {
        theta_p: ValueWeights::from_vec(theta),
        transition: Transition::new(phi, rng.random_range(-1.0..1.0), next_phi, false),
    };
    let noise = draw_noise(eta.noise_dim, k, rng);
    (eta, sample, noise)
}

#[derive(Clone, Debug)]
pub struct DetachCheck {
    /// Norm of every adjoint that reached the target before the stop-gradient.
    pub target_adjoint_norm: f64,
    /// ∂L/∂θ_target from the analytic pass (must be zero).
    pub target_weight_grad_norm: f64,
    /// Finite-difference change of L under target-only perturbations
    /// (non-zero: the target does influence the loss value).
    pub target_fd_norm: f64,
    /// Relative error between analytic ∂L/∂θ_start and finite differences
    /// that perturb only the inner-loop start with the target held fixed.
    pub start_rel_error: f64,
}

/// Checks that the TD target contributes no gradient.
pub fn detach_check(
    eta: &GeneratorParams,
    sample: &MetaSample,
    noise: &[Vec<f64>],
    inner: InnerLoop,
    h: f64,
) -> Result<DetachCheck, SynthError> {
    let theta = sample.theta_p.as_slice();
    let t = &sample.transition;
    let g = MetaLossGraph::build(eta, sample, noise, inner)?;
    let grads = g.backward()?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target_adjoint_norm = norm(grads.wrt(g.nodes.raw_target).data());
    let target_weight_grad_norm = norm(grads.wrt(g.nodes.theta_target).data());
    let analytic_start = grads.wrt(g.nodes.theta_start).into_data();

    let loss_at = |start: &[f64], target: &[f64]| -> Result<f64, SynthError> {
        Ok(MetaLossGraph::build_split(eta, start, target, t, noise, inner)?.loss())
    };
    let mut probe = theta.to_vec();
    let mut target_fd = Vec::with_capacity(theta.len());
    let mut start_err: f64 = 0.0;
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let (t_up, s_up) = (loss_at(theta, &probe)?, loss_at(&probe, theta)?);
        probe[i] = theta[i] - h;
        let (t_down, s_down) = (loss_at(theta, &probe)?, loss_at(&probe, theta)?);
        probe[i] = theta[i];
        target_fd.push((t_up - t_down) / (2.0 * h));
        start_err = start_err.max(relative_error(analytic_start[i], (s_up - s_down) / (2.0 * h)));
    }
    Ok(DetachCheck {
        target_adjoint_norm,
        target_weight_grad_norm,
        target_fd_norm: norm(&target_fd),
        start_rel_error: start_err,
    })
}

/// A quadratic sanity check of the checker itself.
pub fn quadratic_check(h: f64) -> f64 {
    let f = |x: &[f64]| -> Result<(f64, Vec<f64>), Infallible> {
        Ok((x.iter().map(|v| 0.5 * v * v).sum(), x.to_vec()))
    };
    grad_check(f, &[0.3, -1.1, 1.9], h).expect("infallible").max_rel_error
}
