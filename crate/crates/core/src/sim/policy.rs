use crate::error::{Error, Result};
use crate::mdp::{Action, StateFeatures};

/// What a policy sees at a decision point.
///
/// `p_click` and `session_lift` are the simulator's own expected responses to
/// a send. They stand in for the supervised response models an existing
/// notification system would already have; learned policies ignore them.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub state: &'a StateFeatures,
    pub p_click: f64,
    pub session_lift: f64,
}

/// A (possibly stochastic) send policy: probabilities indexed by
/// [`Action::index`].
pub trait DecisionPolicy: Sync {
    fn action_probs(&self, ctx: &DecisionContext<'_>) -> Result<[f64; 2]>;

    fn describe(&self) -> String;
}

pub(crate) fn check_distribution(p: [f64; 2]) -> Result<[f64; 2]> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || ((p[0] + p[1]) - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("policy returned an invalid distribution {p:?}")));
    }
    Ok(p)
}

/// `1 − ε + ε/2` for the base action, `ε/2` for the other.
pub fn epsilon_greedy_propensity(base_action: Action, queried: Action, epsilon: f64) -> f64 {
    let explore = epsilon / Action::COUNT as f64;
    if queried == base_action {
        1.0 - epsilon + explore
    } else {
        explore
    }
}

/// MOO baseline rule: send iff `p_session_lift + beta·p_click > lambda`.
pub fn moo_baseline_decide(p_session_lift: f64, p_click: f64, beta: f64, lambda: f64) -> Action {
    if p_session_lift + beta * p_click > lambda {
        Action::Send
    } else {
        Action::NotSend
    }
}

/// Always picks the same action.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub Action);

impl DecisionPolicy for FixedPolicy {
    fn action_probs(&self, _ctx: &DecisionContext<'_>) -> Result<[f64; 2]> {
        let mut p = [0.0; 2];
        p[self.0.index()] = 1.0;
        Ok(p)
    }

    fn describe(&self) -> String {
        format!("always {}", self.0)
    }
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy;

impl DecisionPolicy for UniformPolicy {
    fn action_probs(&self, _ctx: &DecisionContext<'_>) -> Result<[f64; 2]> {
        Ok([0.5, 0.5])
    }

    fn describe(&self) -> String {
        "uniform random".into()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MooBaseline {
    pub beta: f64,
    pub lambda: f64,
}

impl DecisionPolicy for MooBaseline {
    fn action_probs(&self, ctx: &DecisionContext<'_>) -> Result<[f64; 2]> {
        FixedPolicy(moo_baseline_decide(ctx.session_lift, ctx.p_click, self.beta, self.lambda))
            .action_probs(ctx)
    }

    fn describe(&self) -> String {
        format!("moo baseline (beta={}, lambda={})", self.beta, self.lambda)
    }
}

/// Epsilon-greedy wrapper around a deterministic base policy.
///
/// The base policy's most likely action is treated as its choice (ties go
/// to `NOT_SEND`).
pub struct EpsilonGreedy<P> {
    pub base: P,
    pub epsilon: f64,
}

impl<P: DecisionPolicy> EpsilonGreedy<P> {
    pub fn new(base: P, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon must be in [0, 1], got {epsilon}")));
        }
        Ok(Self { base, epsilon })
    }
}

impl<P: DecisionPolicy> DecisionPolicy for EpsilonGreedy<P> {
    fn action_probs(&self, ctx: &DecisionContext<'_>) -> Result<[f64; 2]> {
        let p = check_distribution(self.base.action_probs(ctx)?)?;
        let base = if p[Action::Send.index()] > p[Action::NotSend.index()] {
            Action::Send
        } else {
            Action::NotSend
        };
        Ok(Action::ALL.map(|a| epsilon_greedy_propensity(base, a, self.epsilon)))
    }

    fn describe(&self) -> String {
        format!("epsilon-greedy (epsilon={}) over {}", self.epsilon, self.base.describe())
    }
}
