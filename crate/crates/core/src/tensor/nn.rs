//! Multilayer perceptrons and the tanh-squashed Gaussian policy head.
//!
//! The taped entry points are the single source of the forward formulas;
//! value-only callers run them on a scratch tape and drop it. That keeps the
//! rollout path and the gradient path bit-identical.

use super::tape::{Tape, TapeOp, ValId};
use super::{Result, Tensor, TensorError};
use rand::Rng;
use rand_distr::StandardNormal;

/// Clamp interval for the policy's log standard deviation.
pub const LOGSTD_MIN: f64 = -20.0;
pub const LOGSTD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918938533204672742; // 0.5 * ln(2*pi)
const LN_2: f64 = std::f64::consts::LN_2;
/// Foreign actions are clamped strictly inside (-1, 1) before atanh.
pub const ATANH_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

/// Fully connected ReLU network; optional tanh on the final output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub tanh_output: bool,
}

impl MlpParams {
    /// `dims = [in, h1, ..., out]`; weights ~ N(0, 1/fan_in), zero biases.
    pub fn init(dims: &[usize], tanh_output: bool, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Layer {
                    weight: Tensor::new(vec![fan_in, fan_out], data).unwrap(),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        MlpParams {
            layers,
            tanh_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    /// Parameter tensors in canonical order: w0, b0, w1, b1, ...
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.all_finite() && l.bias.all_finite())
    }
}

/// Tape handles for one registered MLP.
#[derive(Debug, Clone)]
pub struct MlpIds {
    pub layers: Vec<(ValId, ValId)>,
    pub tanh_output: bool,
}

/// Put every parameter tensor of `mlp` on the tape as a leaf.
pub fn register_mlp(tape: &mut Tape, mlp: &MlpParams, differentiable: bool) -> MlpIds {
    let layers = mlp
        .layers
        .iter()
        .map(|l| {
            (
                tape.leaf(l.weight.clone(), differentiable),
                tape.leaf(l.bias.clone(), differentiable),
            )
        })
        .collect();
    MlpIds {
        layers,
        tanh_output: mlp.tanh_output,
    }
}

/// Batched forward pass `[B, in] -> [B, out]`, recorded on the tape.
pub fn mlp_forward_taped(tape: &mut Tape, ids: &MlpIds, input: ValId) -> Result<ValId> {
    let mut x = input;
    let last = ids.layers.len() - 1;
    for (i, (w, b)) in ids.layers.iter().enumerate() {
        x = tape.apply(TapeOp::MatMul, &[x, *w])?;
        x = tape.apply(TapeOp::AddRow, &[x, *b])?;
        if i < last {
            x = tape.apply(TapeOp::Relu, &[x])?;
        } else if ids.tanh_output {
            x = tape.apply(TapeOp::Tanh, &[x])?;
        }
    }
    Ok(x)
}

/// Value-only forward pass.
pub fn mlp_forward(mlp: &MlpParams, input: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let ids = register_mlp(&mut tape, mlp, false);
    let x = tape.leaf(input.clone(), false);
    let out = mlp_forward_taped(&mut tape, &ids, x)?;
    Ok(tape.value(out).clone())
}

/// Policy network: the trunk emits `[mean, logstd]` per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTanhPolicy {
    pub trunk: MlpParams,
    pub action_dim: usize,
}

impl GaussianTanhPolicy {
    pub fn init(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * action_dim);
        GaussianTanhPolicy {
            trunk: MlpParams::init(&dims, false, rng),
            action_dim,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }
}

/// Tape handles for a registered policy.
#[derive(Debug, Clone)]
pub struct PolicyIds {
    pub trunk: MlpIds,
    pub action_dim: usize,
}

pub fn register_policy(tape: &mut Tape, policy: &GaussianTanhPolicy, differentiable: bool) -> PolicyIds {
    PolicyIds {
        trunk: register_mlp(tape, &policy.trunk, differentiable),
        action_dim: policy.action_dim,
    }
}

/// Mean and clamped log-std of the action distribution at a state batch.
#[derive(Debug, Clone, Copy)]
pub struct DistIds {
    pub mean: ValId,
    pub logstd: ValId,
}

pub fn policy_dist_taped(tape: &mut Tape, policy: &PolicyIds, states: ValId) -> Result<DistIds> {
    let out = mlp_forward_taped(tape, &policy.trunk, states)?;
    let a = policy.action_dim;
    let mean = tape.apply(TapeOp::SliceLast(0, a), &[out])?;
    let raw = tape.apply(TapeOp::SliceLast(a, a), &[out])?;
    let logstd = tape.apply(TapeOp::Clamp(LOGSTD_MIN, LOGSTD_MAX), &[raw])?;
    Ok(DistIds { mean, logstd })
}

/// A reparameterized draw: `action = tanh(mean + std * noise)`.
#[derive(Debug, Clone, Copy)]
pub struct SampleIds {
    pub noise: ValId,
    pub pre_tanh: ValId,
    pub action: ValId,
}

pub fn dist_sample_taped(tape: &mut Tape, dist: &DistIds, noise: ValId) -> Result<SampleIds> {
    let std = tape.apply(TapeOp::Exp, &[dist.logstd])?;
    let scaled = tape.apply(TapeOp::Mul, &[std, noise])?;
    let pre_tanh = tape.apply(TapeOp::Add, &[dist.mean, scaled])?;
    let action = tape.apply(TapeOp::Tanh, &[pre_tanh])?;
    Ok(SampleIds {
        noise,
        pre_tanh,
        action,
    })
}

/// Log-density of the distribution's own sample, summed over action
/// dimensions, with the tanh change-of-variables correction. Uses the saved
/// pre-tanh value, so no atanh is involved.
pub fn logprob_of_sample_taped(tape: &mut Tape, dist: &DistIds, sample: &SampleIds) -> Result<ValId> {
    // Gaussian part: -0.5*eps^2 - logstd - 0.5*ln(2*pi), with eps the noise.
    let eps_sq = tape.apply(TapeOp::Square, &[sample.noise])?;
    let t1 = tape.apply(TapeOp::MulScalar(-0.5), &[eps_sq])?;
    let base = tape.apply(TapeOp::Sub, &[t1, dist.logstd])?;
    let half_ln_2pi = tape.leaf(Tensor::scalar(HALF_LN_2PI), false);
    let base = tape.apply(TapeOp::Sub, &[base, half_ln_2pi])?;
    let corr = log_one_minus_tanh_sq(tape, sample.pre_tanh)?;
    let elem = tape.apply(TapeOp::Sub, &[base, corr])?;
    tape.apply(TapeOp::SumLast, &[elem])
}

/// `ln(1 - tanh(u)^2) = 2*(ln 2 - u - softplus(-2u))`, stable for large |u|.
fn log_one_minus_tanh_sq(tape: &mut Tape, pre_tanh: ValId) -> Result<ValId> {
    let n2u = tape.apply(TapeOp::MulScalar(-2.0), &[pre_tanh])?;
    let sp = tape.apply(TapeOp::Softplus, &[n2u])?;
    let ln2 = tape.leaf(Tensor::scalar(LN_2), false);
    let t = tape.apply(TapeOp::Sub, &[ln2, pre_tanh])?;
    let t = tape.apply(TapeOp::Sub, &[t, sp])?;
    tape.apply(TapeOp::MulScalar(2.0), &[t])
}

/// Log-density of an arbitrary `(-1, 1)` action under the distribution,
/// recovered through atanh.
pub fn logprob_foreign_taped(tape: &mut Tape, dist: &DistIds, action: ValId) -> Result<ValId> {
    let bound = 1.0 - ATANH_MARGIN;
    let a = tape.apply(TapeOp::Clamp(-bound, bound), &[action])?;
    let u = tape.apply(TapeOp::Atanh, &[a])?;
    let delta = tape.apply(TapeOp::Sub, &[u, dist.mean])?;
    let std = tape.apply(TapeOp::Exp, &[dist.logstd])?;
    let z = tape.apply(TapeOp::Div, &[delta, std])?;
    let z_sq = tape.apply(TapeOp::Square, &[z])?;
    let t1 = tape.apply(TapeOp::MulScalar(-0.5), &[z_sq])?;
    let base = tape.apply(TapeOp::Sub, &[t1, dist.logstd])?;
    let half_ln_2pi = tape.leaf(Tensor::scalar(HALF_LN_2PI), false);
    let base = tape.apply(TapeOp::Sub, &[base, half_ln_2pi])?;
    let a_sq = tape.apply(TapeOp::Square, &[a])?;
    let one = tape.leaf(Tensor::scalar(1.0), false);
    let om = tape.apply(TapeOp::Sub, &[one, a_sq])?;
    let corr = tape.apply(TapeOp::LogGuard, &[om])?;
    let elem = tape.apply(TapeOp::Sub, &[base, corr])?;
    tape.apply(TapeOp::SumLast, &[elem])
}

/// Reparameterized sample and its log-probability (value path).
///
/// `noise` must hold standard-normal draws of shape `[B, action_dim]`.
pub fn policy_sample_and_logprob(
    policy: &GaussianTanhPolicy,
    states: &Tensor,
    noise: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let ids = register_policy(&mut tape, policy, false);
    let s = tape.leaf(states.clone(), false);
    let dist = policy_dist_taped(&mut tape, &ids, s)?;
    if noise.shape() != tape.value(dist.mean).shape() {
        return Err(TensorError::ShapeMismatch {
            op: "policy_sample_and_logprob",
            lhs: noise.shape().to_vec(),
            rhs: tape.value(dist.mean).shape().to_vec(),
        });
    }
    let n = tape.leaf(noise.clone(), false);
    let sample = dist_sample_taped(&mut tape, &dist, n)?;
    let logp = logprob_of_sample_taped(&mut tape, &dist, &sample)?;
    Ok((tape.value(sample.action).clone(), tape.value(logp).clone()))
}

/// Deterministic action `tanh(mean)` for evaluation rollouts.
pub fn policy_mean_action(policy: &GaussianTanhPolicy, states: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let ids = register_policy(&mut tape, policy, false);
    let s = tape.leaf(states.clone(), false);
    let dist = policy_dist_taped(&mut tape, &ids, s)?;
    let a = tape.apply(TapeOp::Tanh, &[dist.mean])?;
    Ok(tape.value(a).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mlp_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = MlpParams::init(&[3, 4, 2], false, &mut rng);
        for l in &mut mlp.layers {
            l.weight = Tensor::zeros(l.weight.shape());
        }
        let x = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        let y = mlp_forward(&mlp, &x).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = MlpParams {
            layers: vec![Layer {
                weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: Tensor::zeros(&[2]),
            }],
            tanh_output: false,
        };
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(mlp_forward(&mlp, &x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = MlpParams::init(&[3, 5, 2], false, &mut rng);
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| 0.1 * i as f64).collect()).unwrap();
        let y = mlp_forward(&mlp, &x).unwrap();
        // Straightforward per-element oracle.
        for b in 0..4 {
            let mut h = vec![0.0; 5];
            for j in 0..5 {
                let mut acc = mlp.layers[0].bias.data()[j];
                for k in 0..3 {
                    acc += x.data()[b * 3 + k] * mlp.layers[0].weight.data()[k * 5 + j];
                }
                h[j] = acc.max(0.0);
            }
            for j in 0..2 {
                let mut acc = mlp.layers[1].bias.data()[j];
                for k in 0..5 {
                    acc += h[k] * mlp.layers[1].weight.data()[k * 2 + j];
                }
                assert_relative_eq!(y.data()[b * 2 + j], acc, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn logprob_at_mode_matches_closed_form() {
        // Zero weights/biases: mean = 0, logstd = 0. With zero noise the
        // action is 0 and the per-dim logprob is -0.5*ln(2*pi).
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut policy = GaussianTanhPolicy::init(3, 2, &[4], &mut rng);
        for l in &mut policy.trunk.layers {
            l.weight = Tensor::zeros(l.weight.shape());
            l.bias = Tensor::zeros(l.bias.shape());
        }
        let states = Tensor::new(vec![1, 3], vec![0.3, -0.1, 0.9]).unwrap();
        let noise = Tensor::zeros(&[1, 2]);
        let (action, logp) = policy_sample_and_logprob(&policy, &states, &noise).unwrap();
        assert_eq!(action.data(), &[0.0, 0.0]);
        assert_relative_eq!(logp.data()[0], -2.0 * 0.918938533204672742, max_relative = 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_given_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = GaussianTanhPolicy::init(3, 1, &[8], &mut rng);
        let states = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -0.5, 0.0, 1.0]).unwrap();
        let noise = Tensor::new(vec![2, 1], vec![0.7, -1.1]).unwrap();
        let (a1, l1) = policy_sample_and_logprob(&policy, &states, &noise).unwrap();
        let (a2, l2) = policy_sample_and_logprob(&policy, &states, &noise).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(l1, l2);
        assert!(a1.data().iter().all(|a| a.abs() < 1.0));
    }

    #[test]
    fn density_integrates_to_one_on_grid() {
        // Trapezoid rule over the 1-D action interval.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let policy = GaussianTanhPolicy::init(2, 1, &[8], &mut rng);
        let states = Tensor::new(vec![1, 2], vec![0.4, -0.2]).unwrap();

        let n = 4001;
        let lo = -1.0 + 1e-5;
        let hi = 1.0 - 1e-5;
        let h = (hi - lo) / (n - 1) as f64;
        let mut integral = 0.0;
        let mut prev = f64::NAN;
        for i in 0..n {
            let a = lo + h * i as f64;
            let mut tape = Tape::new();
            let ids = register_policy(&mut tape, &policy, false);
            let s = tape.leaf(states.clone(), false);
            let dist = policy_dist_taped(&mut tape, &ids, s).unwrap();
            let av = tape.leaf(Tensor::new(vec![1, 1], vec![a]).unwrap(), false);
            let lp = logprob_foreign_taped(&mut tape, &dist, av).unwrap();
            let p = tape.value(lp).data()[0].exp();
            if i > 0 {
                integral += 0.5 * (p + prev) * h;
            }
            prev = p;
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral = {integral}");
    }
}
