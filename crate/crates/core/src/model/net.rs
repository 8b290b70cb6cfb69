//! Forward and backward passes through the siamese actor-critic.

use crate::numerics::{
    affine_relu_backward, affine_relu_forward, softmax, AffineCache, GradBlock, ParamBlock,
};

use super::{ModelError, ObservationStack};

/// The weight-shared trunk: one embedding block serving both streams and
/// the fusion layer joining them. `goal_first` flips the concatenation
/// order for ablations.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseCore {
    pub embed: ParamBlock,
    pub fusion: ParamBlock,
    pub goal_first: bool,
}

/// Scene-specific layers: one hidden layer and the two output heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBranch {
    pub key: String,
    pub fc1: ParamBlock,
    pub policy_head: ParamBlock,
    pub value_head: ParamBlock,
}

/// Network outputs for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub probs: Vec<f32>,
    pub value: f32,
}

/// One stream's embedding output plus the cache to backpropagate through
/// it. A goal's StreamEmbed can be computed once and reused across every
/// step that shares the goal and parameter snapshot.
#[derive(Debug, Clone)]
pub struct StreamEmbed {
    pub output: Vec<f32>,
    pub cache: AffineCache,
}

/// Caches for the layers above the embeddings, one per step.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub fusion: AffineCache,
    pub fc1: AffineCache,
    pub policy: AffineCache,
    pub value: AffineCache,
}

/// Everything `model_backward` needs from one full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub state: StreamEmbed,
    pub goal: StreamEmbed,
    pub step: StepCache,
}

/// Gradients for the five parameter blocks of one (core, branch) pair.
/// Block names are captured at construction so the set can be submitted
/// to the parameter store directly.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    names: [String; 5],
    pub embed: GradBlock,
    pub fusion: GradBlock,
    pub fc1: GradBlock,
    pub policy: GradBlock,
    pub value: GradBlock,
}

impl ModelGrads {
    pub fn zeros_like(core: &SiameseCore, branch: &SceneBranch) -> ModelGrads {
        ModelGrads {
            names: [
                core.embed.name.clone(),
                core.fusion.name.clone(),
                branch.fc1.name.clone(),
                branch.policy_head.name.clone(),
                branch.value_head.name.clone(),
            ],
            embed: GradBlock::zeros_like(&core.embed),
            fusion: GradBlock::zeros_like(&core.fusion),
            fc1: GradBlock::zeros_like(&branch.fc1),
            policy: GradBlock::zeros_like(&branch.policy_head),
            value: GradBlock::zeros_like(&branch.value_head),
        }
    }

    pub fn zero(&mut self) {
        self.embed.zero();
        self.fusion.zero();
        self.fc1.zero();
        self.policy.zero();
        self.value.zero();
    }

    /// (store name, gradient) pairs, ready for `ParamStore::apply_gradients`.
    pub fn pairs(&mut self) -> [(&str, &mut GradBlock); 5] {
        [
            (self.names[0].as_str(), &mut self.embed),
            (self.names[1].as_str(), &mut self.fusion),
            (self.names[2].as_str(), &mut self.fc1),
            (self.names[3].as_str(), &mut self.policy),
            (self.names[4].as_str(), &mut self.value),
        ]
    }
}

/// Runs one observation stack through the shared embedding block.
pub fn embed_stack(core: &SiameseCore, stack: &ObservationStack) -> Result<StreamEmbed, ModelError> {
    if stack.as_slice().len() != core.embed.in_dim {
        return Err(ModelError::DimMismatch {
            what: "embed_stack input",
            expected: core.embed.in_dim,
            got: stack.as_slice().len(),
        });
    }
    let (output, cache) = affine_relu_forward(&core.embed, stack.as_slice(), false)?;
    Ok(StreamEmbed { output, cache })
}

/// Fuses precomputed stream embeddings and runs the scene branch. The
/// fusion input is (state, goal) unless `core.goal_first`.
pub fn heads_forward(
    core: &SiameseCore,
    branch: &SceneBranch,
    state: &StreamEmbed,
    goal: &StreamEmbed,
) -> Result<(PolicyValue, StepCache), ModelError> {
    let mut joint = Vec::with_capacity(state.output.len() + goal.output.len());
    let (first, second) = if core.goal_first { (goal, state) } else { (state, goal) };
    joint.extend_from_slice(&first.output);
    joint.extend_from_slice(&second.output);

    let (fused, fusion_cache) = affine_relu_forward(&core.fusion, &joint, false)?;
    let (hidden, fc1_cache) = affine_relu_forward(&branch.fc1, &fused, false)?;
    let (logits, policy_cache) = affine_relu_forward(&branch.policy_head, &hidden, true)?;
    let (value_out, value_cache) = affine_relu_forward(&branch.value_head, &hidden, true)?;

    Ok((
        PolicyValue {
            probs: softmax(&logits),
            value: value_out[0],
        },
        StepCache {
            fusion: fusion_cache,
            fc1: fc1_cache,
            policy: policy_cache,
            value: value_cache,
        },
    ))
}

/// Full forward pass: both streams through the shared embedding, fusion,
/// scene branch, softmaxed policy and scalar value.
pub fn model_forward(
    core: &SiameseCore,
    branch: &SceneBranch,
    state: &ObservationStack,
    goal: &ObservationStack,
) -> Result<(PolicyValue, ForwardCache), ModelError> {
    let state_embed = embed_stack(core, state)?;
    let goal_embed = embed_stack(core, goal)?;
    let (out, step) = heads_forward(core, branch, &state_embed, &goal_embed)?;
    Ok((
        out,
        ForwardCache {
            state: state_embed,
            goal: goal_embed,
            step,
        },
    ))
}

/// Backpropagates one step's head gradients (`dlogits` already folds in
/// the softmax Jacobian) down to all five blocks, accumulating into
/// `grads`. The shared embedding receives the sum of both streams'
/// contributions: state first, then goal.
pub fn heads_backward(
    core: &SiameseCore,
    branch: &SceneBranch,
    step: &StepCache,
    state: &StreamEmbed,
    goal: &StreamEmbed,
    dlogits: &[f32],
    dvalue: f32,
    grads: &mut ModelGrads,
) -> Result<(), ModelError> {
    let dh_policy = affine_relu_backward(&branch.policy_head, &step.policy, dlogits, true, &mut grads.policy)?;
    let dh_value = affine_relu_backward(&branch.value_head, &step.value, &[dvalue], true, &mut grads.value)?;
    let dh: Vec<f32> = dh_policy.iter().zip(&dh_value).map(|(a, b)| a + b).collect();

    let dfused = affine_relu_backward(&branch.fc1, &step.fc1, &dh, false, &mut grads.fc1)?;
    let djoint = affine_relu_backward(&core.fusion, &step.fusion, &dfused, false, &mut grads.fusion)?;

    let half = state.output.len();
    let (dstate, dgoal) = if core.goal_first {
        (&djoint[half..], &djoint[..half])
    } else {
        (&djoint[..half], &djoint[half..])
    };
    affine_relu_backward(&core.embed, &state.cache, dstate, false, &mut grads.embed)?;
    affine_relu_backward(&core.embed, &goal.cache, dgoal, false, &mut grads.embed)?;
    Ok(())
}

/// Backward pass matching one [`model_forward`] call.
pub fn model_backward(
    core: &SiameseCore,
    branch: &SceneBranch,
    cache: &ForwardCache,
    dlogits: &[f32],
    dvalue: f32,
    grads: &mut ModelGrads,
) -> Result<(), ModelError> {
    heads_backward(core, branch, &cache.step, &cache.state, &cache.goal, dlogits, dvalue, grads)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::numerics::{init_param_block, InitKind};

    use super::super::{ArchConfig, HISTORY_LEN};
    use super::*;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            percept_dim: 5,
            embed_dim: 6,
            fuse_dim: 4,
            goal_first: false,
        }
    }

    fn build(arch: &ArchConfig, seed: u64, zero_heads: bool) -> (SiameseCore, SceneBranch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head_init = if zero_heads { InitKind::Zero } else { InitKind::UniformFanIn };
        let core = SiameseCore {
            embed: init_param_block("core/embed", arch.embed_dim, arch.stack_dim(), InitKind::UniformFanIn, &mut rng),
            fusion: init_param_block("core/fusion", arch.fuse_dim, 2 * arch.embed_dim, InitKind::UniformFanIn, &mut rng),
            goal_first: arch.goal_first,
        };
        let branch = SceneBranch {
            key: "s".into(),
            fc1: init_param_block("branch/s/fc1", arch.fuse_dim, arch.fuse_dim, InitKind::UniformFanIn, &mut rng),
            policy_head: init_param_block("branch/s/policy", 4, arch.fuse_dim, head_init, &mut rng),
            value_head: init_param_block("branch/s/value", 1, arch.fuse_dim, head_init, &mut rng),
        };
        (core, branch)
    }

    fn random_stack(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> ObservationStack {
        let mut stack =
            ObservationStack::reset_from_values(&random_frame(arch.percept_dim, rng));
        for _ in 0..HISTORY_LEN - 1 {
            stack.push_values(&random_frame(arch.percept_dim, rng)).unwrap();
        }
        stack
    }

    fn random_frame(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..dim).map(|_| rng.random_range(-1.0..1.0f32)).collect()
    }

    #[test]
    fn zero_heads_give_exactly_uniform_policy() {
        let arch = small_arch();
        let (core, branch) = build(&arch, 3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = random_stack(&arch, &mut rng);
        let goal = random_stack(&arch, &mut rng);
        let (out, _) = model_forward(&core, &branch, &state, &goal).unwrap();
        assert_eq!(out.probs, vec![0.25; 4]);
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn identical_stacks_share_embeddings() {
        let arch = small_arch();
        let (core, branch) = build(&arch, 5, false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stack = random_stack(&arch, &mut rng);
        let (_, cache) = model_forward(&core, &branch, &stack, &stack).unwrap();
        assert_eq!(cache.state.output, cache.goal.output);
        assert_eq!(cache.state.cache.pre_activation, cache.goal.cache.pre_activation);
    }

    #[test]
    fn embedding_block_is_shared_not_copied() {
        let arch = small_arch();
        let (mut core, branch) = build(&arch, 7, false);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let state = random_stack(&arch, &mut rng);
        let goal = random_stack(&arch, &mut rng);
        let (_, before) = model_forward(&core, &branch, &state, &goal).unwrap();
        core.embed.weights[0] += 0.5;
        let (_, after) = model_forward(&core, &branch, &state, &goal).unwrap();
        assert_ne!(before.state.output, after.state.output);
        assert_ne!(before.goal.output, after.goal.output);
    }

    #[test]
    fn goal_first_flag_swaps_the_streams() {
        let arch = small_arch();
        let (mut core, branch) = build(&arch, 9, false);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_stack(&arch, &mut rng);
        let b = random_stack(&arch, &mut rng);
        let (plain, _) = model_forward(&core, &branch, &a, &b).unwrap();
        core.goal_first = true;
        let (swapped, _) = model_forward(&core, &branch, &b, &a).unwrap();
        assert_eq!(plain.probs, swapped.probs);
        assert_eq!(plain.value, swapped.value);
    }

    #[test]
    fn forward_rejects_wrong_stack_dimension() {
        let arch = small_arch();
        let (core, branch) = build(&arch, 11, false);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let bad = ObservationStack::reset_from_values(&random_frame(3, &mut rng));
        let good = random_stack(&arch, &mut rng);
        assert!(matches!(
            model_forward(&core, &branch, &bad, &good),
            Err(ModelError::DimMismatch { .. })
        ));
    }

    #[test]
    fn zero_head_grads_produce_zero_grads() {
        let arch = small_arch();
        let (core, branch) = build(&arch, 13, false);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let state = random_stack(&arch, &mut rng);
        let goal = random_stack(&arch, &mut rng);
        let (_, cache) = model_forward(&core, &branch, &state, &goal).unwrap();
        let mut grads = ModelGrads::zeros_like(&core, &branch);
        model_backward(&core, &branch, &cache, &[0.0; 4], 0.0, &mut grads).unwrap();
        for g in [&grads.embed, &grads.fusion, &grads.fc1, &grads.policy, &grads.value] {
            assert!(g.weights.iter().all(|v| *v == 0.0));
            assert!(g.bias.iter().all(|v| *v == 0.0));
        }
    }

    /// With state == goal and mirrored fusion halves, the two streams see
    /// identical inputs and identical upstream gradients, so each must
    /// contribute the same embed gradient and their sum must be exactly
    /// what model_backward reports.
    #[test]
    fn streams_contribute_equal_embed_gradients() {
        let arch = small_arch();
        let (mut core, branch) = build(&arch, 15, false);
        let e = arch.embed_dim;
        for o in 0..arch.fuse_dim {
            let row = o * 2 * e;
            let first_half: Vec<f32> = core.fusion.weights[row..row + e].to_vec();
            core.fusion.weights[row + e..row + 2 * e].copy_from_slice(&first_half);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let stack = random_stack(&arch, &mut rng);
        let (_, cache) = model_forward(&core, &branch, &stack, &stack).unwrap();

        let dlogits: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0f32)).collect();
        let dvalue: f32 = rng.random_range(-1.0..1.0);
        let mut grads = ModelGrads::zeros_like(&core, &branch);
        model_backward(&core, &branch, &cache, &dlogits, dvalue, &mut grads).unwrap();

        // Replay the chain manually to isolate the per-stream terms.
        let mut scratch = ModelGrads::zeros_like(&core, &branch);
        let dh_p = affine_relu_backward(&branch.policy_head, &cache.step.policy, &dlogits, true, &mut scratch.policy).unwrap();
        let dh_v = affine_relu_backward(&branch.value_head, &cache.step.value, &[dvalue], true, &mut scratch.value).unwrap();
        let dh: Vec<f32> = dh_p.iter().zip(&dh_v).map(|(a, b)| a + b).collect();
        let dfused = affine_relu_backward(&branch.fc1, &cache.step.fc1, &dh, false, &mut scratch.fc1).unwrap();
        let djoint = affine_relu_backward(&core.fusion, &cache.step.fusion, &dfused, false, &mut scratch.fusion).unwrap();

        let mut g_state = GradBlock::zeros_like(&core.embed);
        let mut g_goal = GradBlock::zeros_like(&core.embed);
        affine_relu_backward(&core.embed, &cache.state.cache, &djoint[..e], false, &mut g_state).unwrap();
        affine_relu_backward(&core.embed, &cache.goal.cache, &djoint[e..], false, &mut g_goal).unwrap();

        assert_eq!(g_state, g_goal, "mirrored fusion must equalize stream terms");
        let summed: Vec<f32> = g_state.weights.iter().zip(&g_goal.weights).map(|(a, b)| a + b).collect();
        assert_eq!(grads.embed.weights, summed);
    }

    /// f64 oracle for the composed loss -log pi(a) + (ret - V)^2 over
    /// every parameter of every block.
    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let arch = small_arch();
        for seed in 0..5 {
            let (core, branch) = build(&arch, 100 + seed, false);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let state = random_stack(&arch, &mut rng);
            let goal = random_stack(&arch, &mut rng);
            let action = rng.random_range(0..4usize);
            let ret: f32 = rng.random_range(-1.0..1.0);

            let (out, cache) = model_forward(&core, &branch, &state, &goal).unwrap();
            let dlogits: Vec<f32> = out
                .probs
                .iter()
                .enumerate()
                .map(|(i, p)| p - if i == action { 1.0 } else { 0.0 })
                .collect();
            let dvalue = -2.0 * (ret - out.value);
            let mut grads = ModelGrads::zeros_like(&core, &branch);
            model_backward(&core, &branch, &cache, &dlogits, dvalue, &mut grads).unwrap();

            // The perturbation lives inside the f64 mirror, never in the
            // f32 parameters: casting theta +/- h back to f32 would warp
            // the step by up to an f32 ulp, ~1e-4 relative at h = 1e-4.
            let oracle = |perturb: Perturb| -> (f64, Vec<bool>) {
                loss_f64(&core, &branch, state.as_slice(), goal.as_slice(), action, ret as f64, perturb)
            };
            let h = 1e-4f64;
            let blocks: [(&str, &GradBlock); 5] = [
                ("embed", &grads.embed),
                ("fusion", &grads.fusion),
                ("fc1", &grads.fc1),
                ("policy", &grads.policy),
                ("value", &grads.value),
            ];
            let mut checked = 0usize;
            let mut skipped = 0usize;
            for (which, grad) in blocks {
                let n_weights = grad.weights.len();
                for idx in 0..n_weights + grad.bias.len() {
                    let (f_up, mask_up) = oracle(Some((which, idx, h)));
                    let (f_down, mask_down) = oracle(Some((which, idx, -h)));
                    // A ReLU kink inside [theta-h, theta+h] makes the central
                    // difference measure a chord, not the derivative.
                    if mask_up != mask_down {
                        skipped += 1;
                        continue;
                    }
                    checked += 1;
                    let fd = (f_up - f_down) / (2.0 * h);
                    let got = if idx < n_weights { grad.weights[idx] } else { grad.bias[idx - n_weights] } as f64;
                    let rel = (got - fd).abs() / fd.abs().max(1e-4);
                    assert!(rel < 1e-4, "seed {seed} {which}[{idx}]: analytic {got} vs fd {fd}");
                }
            }
            assert!(
                skipped * 100 <= checked,
                "seed {seed}: {skipped} kink skips against {checked} checked coordinates"
            );
        }
    }

    /// One perturbed coordinate: block tag, flat index (weights then
    /// bias), and an offset applied in f64 inside the mirror.
    type Perturb<'a> = Option<(&'a str, usize, f64)>;

    /// Full-precision mirror of the forward pass plus the test loss.
    /// Also reports the sign pattern of every ReLU pre-activation so the
    /// finite-difference loop can detect kink crossings.
    fn loss_f64(
        core: &SiameseCore,
        branch: &SceneBranch,
        state: &[f32],
        goal: &[f32],
        action: usize,
        ret: f64,
        perturb: Perturb,
    ) -> (f64, Vec<bool>) {
        let mut mask = Vec::new();
        let mut layer = |tag: &str, b: &ParamBlock, x: &[f64], relu: bool| -> Vec<f64> {
            let delta = |flat: usize| -> f64 {
                match perturb {
                    Some((t, i, d)) if t == tag && i == flat => d,
                    _ => 0.0,
                }
            };
            let n_w = b.weights.len();
            (0..b.out_dim)
                .map(|o| {
                    let mut acc = b.bias[o] as f64 + delta(n_w + o);
                    for i in 0..b.in_dim {
                        let flat = o * b.in_dim + i;
                        acc += (b.weights[flat] as f64 + delta(flat)) * x[i];
                    }
                    if relu {
                        mask.push(acc > 0.0);
                        acc.max(0.0)
                    } else {
                        acc
                    }
                })
                .collect()
        };
        let to64 = |v: &[f32]| v.iter().map(|x| *x as f64).collect::<Vec<f64>>();
        let es = layer("embed", &core.embed, &to64(state), true);
        let eg = layer("embed", &core.embed, &to64(goal), true);
        let joint: Vec<f64> = if core.goal_first {
            eg.iter().chain(&es).copied().collect()
        } else {
            es.iter().chain(&eg).copied().collect()
        };
        let fused = layer("fusion", &core.fusion, &joint, true);
        let hidden = layer("fc1", &branch.fc1, &fused, true);
        let logits = layer("policy", &branch.policy_head, &hidden, false);
        let value = layer("value", &branch.value_head, &hidden, false)[0];
        let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_pi = logits[action] - max - sum.ln();
        (-log_pi + (ret - value) * (ret - value), mask)
    }
}
