//! n-step returns and the actor-critic loss with gradients at the policy
//! and value head outputs.

use super::NumericsError;

/// Discounted n-step returns: `R_t = r_t + gamma * R_{t+1}`, seeded past
/// the last step with 0 on terminal segments and `bootstrap_value`
/// otherwise.
pub fn n_step_returns(rewards: &[f32], bootstrap_value: f32, terminal: bool, gamma: f32) -> Vec<f32> {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma {gamma} outside (0, 1]");
    let mut returns = vec![0.0f32; rewards.len()];
    let mut acc = if terminal { 0.0 } else { bootstrap_value };
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    returns
}

/// Loss components summed over one rollout segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f32,
    pub policy: f32,
    pub value: f32,
    pub entropy: f32,
}

/// Per-step gradients at the two head outputs, ready to backpropagate
/// through the network body.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    /// `dL/d logits_t`, one vector per step, softmax backward included.
    pub dlogits: Vec<Vec<f32>>,
    /// `dL/d V_t` from the value loss alone; the advantage in the policy
    /// term is a constant, so no policy gradient flows into the critic.
    pub dvalue: Vec<f32>,
    pub loss: LossBreakdown,
}

/// Actor-critic segment loss. Per step `t` with advantage
/// `A_t = R_t - V_t` held constant:
///
/// ```text
/// policy   -log pi(a_t) * A_t
/// entropy  -beta * H(pi_t)
/// value    (R_t - V_t)^2
/// ```
///
/// summed over steps. Gradients at the logits fold in the softmax
/// Jacobian: `A(pi_i - [i = a]) + beta * pi_i (log pi_i + H)`.
pub fn a3c_loss_and_grads(
    policy_probs: &[Vec<f32>],
    values: &[f32],
    actions: &[usize],
    returns: &[f32],
    beta: f32,
) -> Result<HeadGrads, NumericsError> {
    let steps = policy_probs.len();
    for (what, len) in [("values", values.len()), ("actions", actions.len()), ("returns", returns.len())] {
        if len != steps {
            return Err(NumericsError::DimMismatch {
                op: "a3c_loss_and_grads",
                expected: steps,
                got: len,
            });
        }
        let _ = what;
    }

    let mut dlogits = Vec::with_capacity(steps);
    let mut dvalue = Vec::with_capacity(steps);
    let (mut policy_loss, mut value_loss, mut entropy_loss) = (0.0f32, 0.0f32, 0.0f32);

    for t in 0..steps {
        let probs = &policy_probs[t];
        let a = actions[t];
        if a >= probs.len() {
            return Err(NumericsError::DimMismatch {
                op: "a3c_loss_and_grads action index",
                expected: probs.len(),
                got: a,
            });
        }
        if probs[a] <= 0.0 {
            return Err(NumericsError::ZeroProbability { step: t });
        }
        let advantage = returns[t] - values[t];
        let entropy: f32 = probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum();

        policy_loss += -probs[a].ln() * advantage;
        entropy_loss += -beta * entropy;
        value_loss += advantage * advantage;

        let mut dz = Vec::with_capacity(probs.len());
        for (i, &p) in probs.iter().enumerate() {
            let indicator = if i == a { 1.0 } else { 0.0 };
            let policy_term = advantage * (p - indicator);
            let entropy_term = if p > 0.0 { beta * p * (p.ln() + entropy) } else { 0.0 };
            dz.push(policy_term + entropy_term);
        }
        dlogits.push(dz);
        dvalue.push(-2.0 * advantage);
    }

    Ok(HeadGrads {
        dlogits,
        dvalue,
        loss: LossBreakdown {
            total: policy_loss + entropy_loss + value_loss,
            policy: policy_loss,
            value: value_loss,
            entropy: entropy_loss,
        },
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::super::softmax;
    use super::*;

    #[test]
    fn terminal_three_step_return() {
        let r = n_step_returns(&[-0.01, -0.01, 10.0], 5.0, true, 0.99);
        // Hand recursion: -0.01 + 0.99 * (-0.01 + 0.99 * 10).
        assert!((r[0] - 9.7811).abs() < 1e-4, "{}", r[0]);
        assert!((r[1] - 9.89).abs() < 1e-4);
        assert!((r[2] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn gamma_one_gives_suffix_sums() {
        let r = n_step_returns(&[1.0, 2.0, 3.0], 0.0, true, 1.0);
        assert_eq!(r, vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn empty_rewards_give_empty_returns() {
        assert!(n_step_returns(&[], 3.0, false, 0.99).is_empty());
    }

    #[test]
    fn non_terminal_segments_bootstrap() {
        let r = n_step_returns(&[-0.01], 2.0, false, 0.99);
        assert!((r[0] - 1.97).abs() < 1e-6);
    }

    #[test]
    fn zero_rewards_zero_bootstrap_stay_zero() {
        for gamma in [0.1, 0.5, 0.99, 1.0] {
            let r = n_step_returns(&[0.0; 7], 0.0, false, gamma);
            assert_eq!(r, vec![0.0; 7]);
        }
    }

    #[test]
    fn zero_advantage_and_zero_beta_zero_the_loss() {
        let probs = vec![vec![0.25f32; 4]; 3];
        let values = vec![1.5f32; 3];
        let returns = values.clone();
        let out = a3c_loss_and_grads(&probs, &values, &[0, 1, 2], &returns, 0.0).unwrap();
        assert_eq!(out.loss.value, 0.0);
        assert_eq!(out.loss.policy, 0.0);
        assert_eq!(out.loss.total, 0.0);
        assert!(out.dvalue.iter().all(|d| *d == 0.0));
        assert!(out.dlogits.iter().flatten().all(|d| *d == 0.0));
    }

    #[test]
    fn uniform_policy_has_ln4_entropy() {
        let probs = vec![vec![0.25f32; 4]; 2];
        let out = a3c_loss_and_grads(&probs, &[0.0; 2], &[0, 0], &[0.0; 2], 0.01).unwrap();
        let expected = -0.01 * 2.0 * (4.0f32).ln();
        assert!((out.loss.entropy - expected).abs() < 1e-6);
    }

    #[test]
    fn hand_computed_gradients() {
        // Single step: pi = (0.7, 0.1, 0.1, 0.1), a = 0, R = 1, V = 0.5,
        // beta = 0. Advantage 0.5: dz_0 = 0.5 * (0.7 - 1) = -0.15,
        // dz_i = 0.5 * 0.1 = 0.05, dV = -2 * 0.5 = -1.
        let probs = vec![vec![0.7f32, 0.1, 0.1, 0.1]];
        let out = a3c_loss_and_grads(&probs, &[0.5], &[0], &[1.0], 0.0).unwrap();
        assert!((out.dlogits[0][0] + 0.15).abs() < 1e-6);
        for i in 1..4 {
            assert!((out.dlogits[0][i] - 0.05).abs() < 1e-6);
        }
        assert!((out.dvalue[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_zero_probability_action() {
        let probs = vec![vec![1.0f32, 0.0, 0.0, 0.0]];
        let r = a3c_loss_and_grads(&probs, &[0.0], &[1], &[1.0], 0.01);
        assert!(matches!(r, Err(NumericsError::ZeroProbability { step: 0 })));
    }

    #[test]
    fn rejects_misaligned_arrays() {
        let probs = vec![vec![0.25f32; 4]; 2];
        let r = a3c_loss_and_grads(&probs, &[0.0], &[0, 0], &[0.0; 2], 0.01);
        assert!(matches!(r, Err(NumericsError::DimMismatch { .. })));
    }

    /// f64 oracle: the total loss as a function of logits (through
    /// softmax) and of the value in its stop-gradient split, centrally
    /// differenced.
    #[test]
    fn gradients_match_finite_differences() {
        let beta = 0.01f64;
        let loss_f64 = |z: &[f64], v_val: f64, v_adv: f64, a: usize, ret: f64| -> f64 {
            let max = z.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let exps: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let pi: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            let adv = ret - v_adv;
            let entropy: f64 = pi.iter().map(|p| -p * p.ln()).sum();
            -pi[a].ln() * adv - beta * entropy + (ret - v_val) * (ret - v_val)
        };

        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<f32> = (0..4).map(|_| rng.random_range(-1.5..1.5f32)).collect();
            let probs = softmax(&z);
            let v = rng.random_range(-1.0..1.0f32);
            let ret = rng.random_range(-1.0..1.0f32);
            let a = rng.random_range(0..4usize);
            let out =
                a3c_loss_and_grads(&[probs.clone()], &[v], &[a], &[ret], beta as f32).unwrap();

            let z64: Vec<f64> = z.iter().map(|x| *x as f64).collect();
            let h = 1e-5;
            for i in 0..4 {
                let mut hi = z64.clone();
                let mut lo = z64.clone();
                hi[i] += h;
                lo[i] -= h;
                let fd = (loss_f64(&hi, v as f64, v as f64, a, ret as f64)
                    - loss_f64(&lo, v as f64, v as f64, a, ret as f64))
                    / (2.0 * h);
                let got = out.dlogits[0][i] as f64;
                let rel = (got - fd).abs() / fd.abs().max(1e-5);
                assert!(rel < 1e-4, "seed {seed} dz[{i}]: {got} vs fd {fd}");
            }
            // Value gradient: perturb only the value-loss slot, keeping
            // the advantage frozen at the unperturbed value.
            let fd_v = (loss_f64(&z64, v as f64 + h, v as f64, a, ret as f64)
                - loss_f64(&z64, v as f64 - h, v as f64, a, ret as f64))
                / (2.0 * h);
            let got = out.dvalue[0] as f64;
            let rel = (got - fd_v).abs() / fd_v.abs().max(1e-5);
            assert!(rel < 1e-4, "seed {seed} dV: {got} vs fd {fd_v}");
        }
    }
}
