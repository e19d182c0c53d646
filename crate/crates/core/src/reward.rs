//! Supervised reward predictors and scalar reward construction.
//!
//! Three reward variants are supported, selected by [`RewardSpec`] flags:
//!
//! | variant            | sessions term | clicks term | volume term |
//! |--------------------|---------------|-------------|-------------|
//! | observed           | `m_s`         | `m_c`       | `m_v`       |
//! | predicted clicks   | `m_s`         | `Ê(m_c|s,a)`| `m_v`       |
//! | predicted both     | `Ê(m_s|s,a)`  | `Ê(m_c|s,a)`| `m_v`       |
//!
//! The volume term is deterministic given the action and is always observed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, FeatureSchema, PreferenceVector, StateFeatures, Transition};
use crate::sim::Dataset;

const CLICK_RIDGE: f64 = 1e-4;
const CLICK_MAX_ITERS: usize = 100;

/// Logistic click model over the raw state features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickModel {
    pub schema: FeatureSchema,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Fitted click model plus the per-iteration training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickFit {
    pub model: ClickModel,
    pub loss_history: Vec<f64>,
    pub n_samples: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_width(schema: &FeatureSchema, s: &StateFeatures) -> Result<()> {
    if s.len() != schema.len() {
        return Err(Error::Schema(format!(
            "state has {} features, model schema has {}",
            s.len(),
            schema.len()
        )));
    }
    Ok(())
}

/// Column means and scales (standard deviation, or 1 for constant columns).
fn column_stats(rows: &[&[f64]], width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; width];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let scale = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 { sd } else { 1.0 }
        })
        .collect();
    (mean, scale)
}

/// Logistic regression of `m_c` on SEND transitions.
///
/// Newton iterations with step halving on standardized features and a small
/// ridge penalty on the weights (not the intercept); the training loss is
/// non-increasing across iterations. Coefficients are mapped back to raw
/// feature units.
pub fn fit_click_model(dataset: &Dataset) -> Result<ClickFit> {
    let sends: Vec<&Transition> = dataset.transitions().filter(|t| t.action == Action::Send).collect();
    if sends.is_empty() {
        return Err(Error::Data(
            "click model needs at least one SEND transition in the dataset".into(),
        ));
    }
    let d = dataset.schema.len();
    let rows: Vec<&[f64]> = sends.iter().map(|t| t.state.values()).collect();
    for t in &sends {
        check_width(&dataset.schema, &t.state)?;
    }
    let (mean, scale) = column_stats(&rows, d);
    let n = sends.len();
    // design matrix with a leading intercept column
    let x = DMatrix::from_fn(n, d + 1, |i, j| {
        if j == 0 { 1.0 } else { (rows[i][j - 1] - mean[j - 1]) / scale[j - 1] }
    });
    let y = DVector::from_iterator(n, sends.iter().map(|t| t.reward.m_c));

    let loss = |beta: &DVector<f64>| -> f64 {
        let z = &x * beta;
        let nll: f64 = z.iter().zip(y.iter()).map(|(z, y)| softplus(*z) - y * z).sum::<f64>() / n as f64;
        nll + 0.5 * CLICK_RIDGE * beta.rows(1, d).norm_squared()
    };

    let mut beta = DVector::zeros(d + 1);
    let mut current = loss(&beta);
    let mut history = vec![current];
    for _ in 0..CLICK_MAX_ITERS {
        let z = &x * &beta;
        let p: DVector<f64> = z.map(sigmoid);
        let mut grad = x.transpose() * (&p - &y) / n as f64;
        let mut hess = DMatrix::zeros(d + 1, d + 1);
        for i in 0..n {
            let w = p[i] * (1.0 - p[i]) / n as f64;
            let row = x.row(i);
            hess += w * row.transpose() * row;
        }
        for j in 1..=d {
            grad[j] += CLICK_RIDGE * beta[j];
            hess[(j, j)] += CLICK_RIDGE;
        }
        // keeps the intercept direction invertible when all labels agree
        hess[(0, 0)] += 1e-12;
        let Some(chol) = hess.cholesky() else { break };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta - t * &step;
            let l = loss(&cand);
            if l <= current {
                accepted = Some((cand, l));
                break;
            }
            t *= 0.5;
        }
        let Some((next, l)) = accepted else { break };
        let improvement = current - l;
        beta = next;
        current = l;
        history.push(current);
        if improvement < 1e-12 {
            break;
        }
    }

    let weights: Vec<f64> = (0..d).map(|j| beta[j + 1] / scale[j]).collect();
    let intercept = beta[0] - (0..d).map(|j| beta[j + 1] * mean[j] / scale[j]).sum::<f64>();
    if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("click model coefficients".into()));
    }
    Ok(ClickFit {
        model: ClickModel {
            schema: dataset.schema.clone(),
            weights,
            intercept,
        },
        loss_history: history,
        n_samples: n,
    })
}

impl ClickModel {
    pub fn logit(&self, s: &StateFeatures) -> Result<f64> {
        check_width(&self.schema, s)?;
        Ok(self.intercept + self.weights.iter().zip(s.values()).map(|(w, x)| w * x).sum::<f64>())
    }
}

/// `Ê(m_c | s, a)`: logistic prediction for SEND, exactly 0 for NOT_SEND.
pub fn predict_click(model: &ClickModel, s: &StateFeatures, a: Action) -> Result<f64> {
    let z = model.logit(s)?;
    Ok(match a {
        Action::Send => sigmoid(z),
        Action::NotSend => 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Ordinary least squares on centered features (minimum-norm solution,
    /// so constant columns get zero weight).
    fn fit(rows: &[&[f64]], y: &[f64], width: usize) -> Result<(Self, f64)> {
        let n = rows.len();
        let (mean, _) = column_stats(rows, width);
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let x = DMatrix::from_fn(n, width, |i, j| rows[i][j] - mean[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let weights: Vec<f64> = if width == 0 {
            Vec::new()
        } else {
            let svd = x.clone().svd(true, true);
            let max_sv = svd.singular_values.max();
            let eps = (max_sv * 1e-12).max(f64::MIN_POSITIVE);
            svd.solve(&yc, eps)
                .map_err(|e| Error::NonFinite(format!("least squares solve failed: {e}")))?
                .iter()
                .copied()
                .collect()
        };
        let intercept = y_mean - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
        let resid: f64 = (0..n)
            .map(|i| {
                let pred = intercept + weights.iter().zip(rows[i].iter()).map(|(w, v)| w * v).sum::<f64>();
                (y[i] - pred).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("session model coefficients".into()));
        }
        Ok((Self { weights, intercept }, resid))
    }
}

/// Per-action linear predictor of visits in the next inter-decision window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionModel {
    pub schema: FeatureSchema,
    pub send: LinearModel,
    pub not_send: LinearModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFit {
    pub model: SessionModel,
    pub mse_send: f64,
    pub mse_not_send: f64,
    pub n_send: usize,
    pub n_not_send: usize,
}

pub fn fit_session_model(dataset: &Dataset) -> Result<SessionFit> {
    let d = dataset.schema.len();
    let mut fits = Vec::with_capacity(2);
    for action in Action::ALL {
        let ts: Vec<&Transition> = dataset.transitions().filter(|t| t.action == action).collect();
        if ts.is_empty() {
            return Err(Error::Data(format!(
                "session model needs {action} transitions in the dataset"
            )));
        }
        for t in &ts {
            check_width(&dataset.schema, &t.state)?;
        }
        let rows: Vec<&[f64]> = ts.iter().map(|t| t.state.values()).collect();
        let y: Vec<f64> = ts.iter().map(|t| t.reward.m_s).collect();
        let (model, mse) = LinearModel::fit(&rows, &y, d)?;
        fits.push((model, mse, ts.len()));
    }
    let (not_send, mse_not_send, n_not_send) = fits.pop().expect("two fits");
    let (send, mse_send, n_send) = fits.pop().expect("two fits");
    Ok(SessionFit {
        model: SessionModel {
            schema: dataset.schema.clone(),
            send,
            not_send,
        },
        mse_send,
        mse_not_send,
        n_send,
        n_not_send,
    })
}

/// `Ê(m_s | s, a)`, clamped at zero.
pub fn predict_sessions(model: &SessionModel, s: &StateFeatures, a: Action) -> Result<f64> {
    check_width(&model.schema, s)?;
    let lm = match a {
        Action::Send => &model.send,
        Action::NotSend => &model.not_send,
    };
    Ok(lm.predict_raw(s.values()).max(0.0))
}

/// Which reward components are replaced by model predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub prefs: PreferenceVector,
    pub use_predicted_clicks: bool,
    pub use_predicted_sessions: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub click_model: Option<ClickModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_model: Option<SessionModel>,
}

impl RewardSpec {
    /// Observed rewards only.
    pub fn observed(prefs: PreferenceVector) -> Self {
        Self {
            prefs,
            use_predicted_clicks: false,
            use_predicted_sessions: false,
            click_model: None,
            session_model: None,
        }
    }

    /// Predicted clicks, observed sessions.
    pub fn predicted_clicks(prefs: PreferenceVector, click: ClickModel) -> Self {
        Self {
            use_predicted_clicks: true,
            click_model: Some(click),
            ..Self::observed(prefs)
        }
    }

    /// Predicted clicks and predicted sessions.
    pub fn predicted_sessions(prefs: PreferenceVector, click: ClickModel, session: SessionModel) -> Self {
        Self {
            use_predicted_sessions: true,
            session_model: Some(session),
            ..Self::predicted_clicks(prefs, click)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prefs.validate()?;
        if self.use_predicted_clicks && self.click_model.is_none() {
            return Err(Error::Config("predicted clicks requested but no click model is present".into()));
        }
        if self.use_predicted_sessions && self.session_model.is_none() {
            return Err(Error::Config(
                "predicted sessions requested but no session model is present".into(),
            ));
        }
        Ok(())
    }

    pub fn with_prefs(&self, prefs: PreferenceVector) -> Self {
        Self { prefs, ..self.clone() }
    }

    /// Scalar reward of one transition.
    pub fn reward(&self, t: &Transition) -> Result<f64> {
        let sessions = match (&self.session_model, self.use_predicted_sessions) {
            (Some(m), true) => predict_sessions(m, &t.state, t.action)?,
            _ => t.reward.m_s,
        };
        let clicks = match (&self.click_model, self.use_predicted_clicks) {
            (Some(m), true) => predict_click(m, &t.state, t.action)?,
            _ => t.reward.m_c,
        };
        Ok(self.prefs.w_s * sessions + self.prefs.w_c * clicks + self.prefs.w_v * t.reward.m_v)
    }
}

/// Per-trajectory, per-step scalar rewards under `spec`.
pub fn build_scalar_rewards(dataset: &Dataset, spec: &RewardSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    for (name, schema) in [
        ("click model", spec.click_model.as_ref().map(|m| &m.schema)),
        ("session model", spec.session_model.as_ref().map(|m| &m.schema)),
    ] {
        if let Some(s) = schema {
            s.ensure_same(&dataset.schema, name)?;
        }
    }
    dataset
        .trajectories
        .iter()
        .map(|traj| traj.steps.iter().map(|t| spec.reward(t)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{RewardVector, Trajectory};
    use crate::sim::Provenance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn transition(state: Vec<f64>, action: Action, m_s: f64, clicked: bool) -> Transition {
        Transition {
            state: StateFeatures(state.clone()),
            action,
            t_k: 0.0,
            t_next: 1.0,
            reward: RewardVector::for_action(action, m_s as u32, clicked && action == Action::Send),
            next_state: StateFeatures(state),
            behavior_propensity: 0.5,
            episode_id: 0,
            terminal: true,
        }
    }

    fn dataset(width: usize, ts: Vec<Transition>) -> Dataset {
        Dataset {
            schema: FeatureSchema::new((0..width).map(|i| format!("f{i}"))),
            trajectories: ts
                .into_iter()
                .enumerate()
                .map(|(i, mut t)| {
                    t.episode_id = i as u64;
                    Trajectory { episode_id: i as u64, user_id: i as u64, steps: vec![t] }
                })
                .collect(),
            provenance: Provenance::default(),
        }
    }

    /// Fraction of (positive, negative) pairs ranked correctly.
    fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut good, mut total) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        good += 1.0;
                    } else if scores[i] == scores[j] {
                        good += 0.5;
                    }
                }
            }
        }
        good / total
    }

    #[test]
    fn separable_data_gets_perfect_auc() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
        let labels: Vec<bool> = xs.iter().map(|&x| x > 5.0).collect();
        let ds = dataset(
            1,
            xs.iter().zip(&labels).map(|(&x, &l)| transition(vec![x], Action::Send, 0.0, l)).collect(),
        );
        let fit = fit_click_model(&ds).unwrap();
        let scores: Vec<f64> = xs
            .iter()
            .map(|&x| predict_click(&fit.model, &StateFeatures(vec![x]), Action::Send).unwrap())
            .collect();
        assert_eq!(brute_force_auc(&scores, &labels), 1.0);
        assert!(fit.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn all_negative_labels_predict_below_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = dataset(
            2,
            (0..50)
                .map(|_| transition(vec![rng.random(), rng.random()], Action::Send, 0.0, false))
                .collect(),
        );
        let fit = fit_click_model(&ds).unwrap();
        for _ in 0..20 {
            let s = StateFeatures(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            assert!(predict_click(&fit.model, &s, Action::Send).unwrap() < 0.5);
        }
    }

    #[test]
    fn intercept_only_recovers_base_rate() {
        // 30 of 100 clicked, constant features: MLE is logit(0.3)
        let ds = dataset(
            3,
            (0..100).map(|i| transition(vec![1.0, 2.0, 3.0], Action::Send, 0.0, i < 30)).collect(),
        );
        let fit = fit_click_model(&ds).unwrap();
        let p = predict_click(&fit.model, &StateFeatures(vec![1.0, 2.0, 3.0]), Action::Send).unwrap();
        assert!((p - 0.3).abs() < 0.01, "{p}");
    }

    #[test]
    fn no_sends_is_an_error() {
        let ds = dataset(1, vec![transition(vec![0.0], Action::NotSend, 1.0, false)]);
        let err = fit_click_model(&ds).unwrap_err();
        assert!(err.to_string().contains("SEND"), "{err}");
    }

    #[test]
    fn predict_click_examples() {
        let mut m = ClickModel { schema: FeatureSchema::new(["a"]), weights: vec![0.0], intercept: 0.0 };
        let s = StateFeatures(vec![4.0]);
        assert_eq!(predict_click(&m, &s, Action::Send).unwrap(), 0.5);
        assert_eq!(predict_click(&m, &s, Action::NotSend).unwrap(), 0.0);
        m.intercept = 3f64.ln();
        assert!((predict_click(&m, &s, Action::Send).unwrap() - 0.75).abs() < 1e-15);
        assert!(predict_click(&m, &StateFeatures(vec![1.0, 2.0]), Action::Send).is_err());
    }

    #[test]
    fn session_model_constant_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ts = Vec::new();
        for _ in 0..60 {
            let s = vec![rng.random_range(0.0..5.0), rng.random_range(-1.0..1.0)];
            ts.push(transition(s.clone(), Action::Send, 3.0, false));
            ts.push(transition(s, Action::NotSend, 1.0, false));
        }
        let fit = fit_session_model(&dataset(2, ts)).unwrap();
        assert!((fit.model.send.intercept - 3.0).abs() < 1e-9);
        assert!((fit.model.not_send.intercept - 1.0).abs() < 1e-9);
        assert!(fit.model.send.weights.iter().chain(&fit.model.not_send.weights).all(|w| w.abs() < 1e-9));
    }

    /// Normal equations solved by Gauss-Jordan elimination, independent of
    /// the SVD path in `LinearModel::fit`.
    fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let d = rows[0].len() + 1;
        let mut a = vec![vec![0.0; d + 1]; d];
        for (r, &yi) in rows.iter().zip(y) {
            let x: Vec<f64> = std::iter::once(1.0).chain(r.iter().copied()).collect();
            for i in 0..d {
                for j in 0..d {
                    a[i][j] += x[i] * x[j];
                }
                a[i][d] += x[i] * yi;
            }
        }
        for c in 0..d {
            let piv = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=d {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..d).map(|i| a[i][d] / a[i][i]).collect()
    }

    #[test]
    fn session_model_matches_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..80).map(|_| (0..3).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
        // exact linear target (integer valued so it survives the u32 visit count)
        let mut ts = Vec::new();
        let mut ys = Vec::new();
        for r in &rows {
            let rounded: Vec<f64> = r.iter().map(|v| v.round()).collect();
            let y = 2.0 + 1.0 * rounded[0] + 3.0 * rounded[1] + 0.0 * rounded[2];
            ts.push(transition(rounded.clone(), Action::Send, y, false));
            ts.push(transition(rounded.clone(), Action::NotSend, 1.0 + rounded[2], false));
            ys.push((rounded, y));
        }
        let fit = fit_session_model(&dataset(3, ts)).unwrap();
        let oracle = normal_equations(
            &ys.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>(),
            &ys.iter().map(|(_, y)| *y).collect::<Vec<_>>(),
        );
        assert!((fit.model.send.intercept - oracle[0]).abs() < 1e-6);
        for j in 0..3 {
            assert!((fit.model.send.weights[j] - oracle[j + 1]).abs() < 1e-6);
        }
        assert!((fit.model.send.weights[0] - 1.0).abs() < 1e-6);
        assert!((fit.model.send.weights[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn session_prediction_clamps_at_zero() {
        let m = SessionModel {
            schema: FeatureSchema::new(["a"]),
            send: LinearModel { weights: vec![-1.0], intercept: 0.0 },
            not_send: LinearModel { weights: vec![0.0], intercept: 0.0 },
        };
        assert_eq!(predict_sessions(&m, &StateFeatures(vec![5.0]), Action::Send).unwrap(), 0.0);
    }

    #[test]
    fn session_model_needs_both_actions() {
        let ds = dataset(1, vec![transition(vec![0.0], Action::Send, 1.0, false)]);
        assert!(fit_session_model(&ds).is_err());
    }

    fn send_fixture() -> (Dataset, ClickModel) {
        let ds = dataset(
            1,
            vec![
                transition(vec![0.0], Action::Send, 2.0, true),
                transition(vec![0.0], Action::NotSend, 4.0, false),
            ],
        );
        // logit ln(0.25) → p = 0.2
        let click = ClickModel { schema: ds.schema.clone(), weights: vec![0.0], intercept: 0.25f64.ln() };
        (ds, click)
    }

    #[test]
    fn scalar_reward_examples() {
        let (ds, click) = send_fixture();
        let prefs = PreferenceVector::new(1.0, 1.0, -0.5).unwrap();
        let observed = build_scalar_rewards(&ds, &RewardSpec::observed(prefs)).unwrap();
        assert_eq!(observed[0][0], 3.5);
        let predicted = build_scalar_rewards(&ds, &RewardSpec::predicted_clicks(prefs, click)).unwrap();
        assert!((predicted[0][0] - 2.7).abs() < 1e-12);
        let p = PreferenceVector::new(0.0, 1.0, 1.0).unwrap();
        assert_eq!(build_scalar_rewards(&ds, &RewardSpec::observed(p)).unwrap()[1][0], 0.0);
    }

    #[test]
    fn missing_model_rejected() {
        let (ds, _) = send_fixture();
        let mut spec = RewardSpec::observed(PreferenceVector::new(1.0, 1.0, 1.0).unwrap());
        spec.use_predicted_sessions = true;
        assert!(matches!(build_scalar_rewards(&ds, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn fitting_ignores_transition_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ts: Vec<Transition> = (0..60)
            .map(|i| {
                let a = if i % 3 == 0 { Action::NotSend } else { Action::Send };
                transition(vec![rng.random_range(0.0..2.0)], a, rng.random_range(0..4) as f64, rng.random_bool(0.4))
            })
            .collect();
        let fwd = dataset(1, ts.clone());
        let rev = dataset(1, ts.into_iter().rev().collect());
        let (a, b) = (fit_click_model(&fwd).unwrap().model, fit_click_model(&rev).unwrap().model);
        assert!((a.intercept - b.intercept).abs() < 1e-9 && (a.weights[0] - b.weights[0]).abs() < 1e-9);
        let (a, b) = (fit_session_model(&fwd).unwrap().model, fit_session_model(&rev).unwrap().model);
        assert!((a.send.weights[0] - b.send.weights[0]).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn predicted_clicks_change_only_click_term(
            w in (-2.0f64..2.0, 0.1f64..2.0, -2.0f64..2.0), b in -2.0f64..2.0, x in -3.0f64..3.0,
            send in any::<bool>(), clicked in any::<bool>(), visits in 0u32..5,
        ) {
            let prefs = PreferenceVector { w_s: w.0, w_c: w.1, w_v: w.2 };
            let a = if send { Action::Send } else { Action::NotSend };
            let ds = dataset(1, vec![transition(vec![x], a, visits as f64, clicked)]);
            let click = ClickModel { schema: ds.schema.clone(), weights: vec![0.7], intercept: b };
            let t = &ds.trajectories[0].steps[0];
            let obs = build_scalar_rewards(&ds, &RewardSpec::observed(prefs)).unwrap()[0][0];
            let pred = build_scalar_rewards(&ds, &RewardSpec::predicted_clicks(prefs, click.clone())).unwrap()[0][0];
            let e_c = predict_click(&click, &t.state, a).unwrap();
            prop_assert!(((pred - obs) - prefs.w_c * (e_c - t.reward.m_c)).abs() < 1e-12);
        }

        #[test]
        fn rewards_scale_with_preferences(c in -3.0f64..3.0, x in -3.0f64..3.0, send in any::<bool>()) {
            let a = if send { Action::Send } else { Action::NotSend };
            let ds = dataset(1, vec![transition(vec![x], a, 2.0, true)]);
            let prefs = PreferenceVector { w_s: 0.5, w_c: 1.5, w_v: 0.7 };
            let base = build_scalar_rewards(&ds, &RewardSpec::observed(prefs)).unwrap()[0][0];
            let spec = RewardSpec::observed(prefs.scaled(c));
            let scaled = spec.reward(&ds.trajectories[0].steps[0]).unwrap();
            prop_assert!((scaled - c * base).abs() < 1e-12);
        }

        #[test]
        fn click_prediction_monotone_in_positive_weight(x1 in -5.0f64..5.0, dx in 0.0f64..5.0, w in 0.0f64..3.0) {
            let m = ClickModel { schema: FeatureSchema::new(["a", "b"]), weights: vec![w, -1.0], intercept: 0.2 };
            let lo = predict_click(&m, &StateFeatures(vec![x1, 1.0]), Action::Send).unwrap();
            let hi = predict_click(&m, &StateFeatures(vec![x1 + dx, 1.0]), Action::Send).unwrap();
            prop_assert!(hi >= lo);
        }
    }
}
