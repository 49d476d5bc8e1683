//! Composite-objective training: AdamW with decoupled weight decay,
//! per-group learning rates, a linear warmup/decay schedule, a central
//! finite-difference gradient oracle, and a deterministic epoch loop.

use crate::error::{Error, Result};
use crate::model::{LossBreakdown, Model, Objective, ParamGroup};
use crate::tasks::{Dataset, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Adaptive-moment hyperparameters with decoupled weight decay.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Separate learning rates for experts, router, and head.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GroupLrs {
    pub expert: f64,
    pub router: f64,
    pub head: f64,
}

impl GroupLrs {
    pub fn uniform(lr: f64) -> Self {
        Self {
            expert: lr,
            router: lr,
            head: lr,
        }
    }

    fn for_group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Expert => self.expert,
            ParamGroup::Router => self.router,
            ParamGroup::Head => self.head,
        }
    }
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let n = model.num_params();
        Self {
            model,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update: `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// bias-corrected step, weight decay applied directly to the parameters.
/// `lr_multiplier` carries the schedule; group base rates come from `lrs`.
pub fn optimizer_step(
    state: &mut TrainState,
    grads: &[f64],
    lrs: &GroupLrs,
    lr_multiplier: f64,
    adam: &AdamParams,
    grad_clip: Option<f64>,
) -> Result<()> {
    let layout = state.model.layout();
    let n = state.model.num_params();
    if grads.len() != n {
        return Err(Error::Parameter(format!(
            "gradient length {} does not match parameter count {n}",
            grads.len()
        )));
    }
    if !(0.0..1.0).contains(&adam.beta1) || !(0.0..1.0).contains(&adam.beta2) {
        return Err(Error::Parameter("betas must lie in [0, 1)".into()));
    }

    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        let seg = layout
            .iter()
            .find(|s| s.range.contains(&bad))
            .map(|s| format!("{} (offset {})", s.label, bad - s.range.start))
            .unwrap_or_else(|| format!("parameter {bad}"));
        return Err(Error::Training(format!("non-finite gradient at {seg}")));
    }

    let clip_scale = match grad_clip {
        Some(max_norm) => {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max_norm {
                max_norm / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - adam.beta1.powi(t);
    let bc2 = 1.0 - adam.beta2.powi(t);

    let mut params = state.model.flatten_params();
    for seg in &layout {
        let lr = lrs.for_group(seg.group) * lr_multiplier;
        for i in seg.range.clone() {
            let g = grads[i] * clip_scale;
            state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
            state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            params[i] -= lr * adam.weight_decay * params[i];
            params[i] -= lr * m_hat / (v_hat.sqrt() + adam.epsilon);
        }
    }
    state.model.set_params(&params)
}

/// Central finite differences over every trainable scalar, compared to the
/// analytic gradient. Returns the maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check(
    model: &mut Model,
    inputs: &[Vec<f64>],
    objective: &Objective,
    lambda: f64,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Parameter("eps must be positive".into()));
    }
    let (_, trace) = model.loss(inputs, objective, lambda)?;
    let analytic = model.backward(inputs, objective, lambda, &trace)?;
    let original = model.flatten_params();
    let mut worst = 0.0f64;
    for i in 0..original.len() {
        let mut probe = original.clone();
        probe[i] = original[i] + eps;
        model.set_params(&probe)?;
        let up = model.loss(inputs, objective, lambda)?.0.total;
        probe[i] = original[i] - eps;
        model.set_params(&probe)?;
        let down = model.loss(inputs, objective, lambda)?.0.total;
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    model.set_params(&original)?;
    Ok(worst)
}

/// Whether per-step wall time is measured or pinned to zero (for
/// byte-identical logs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    Wall,
    None,
}

/// Scheduled learning-rate multiplier: linear warmup to 1 over
/// `warmup_ratio` of the run, then linear decay.
pub fn schedule_multiplier(step_index: u64, total_steps: u64, warmup_ratio: f64) -> f64 {
    if total_steps == 0 {
        return 1.0;
    }
    let warmup = (warmup_ratio * total_steps as f64).round() as u64;
    if warmup > 0 && step_index < warmup {
        (step_index + 1) as f64 / warmup as f64
    } else {
        let denom = (total_steps - warmup).max(1) as f64;
        ((total_steps - step_index) as f64 / denom).clamp(0.0, 1.0)
    }
}

/// One metrics-log record per optimizer step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss_task: f64,
    pub loss_aux: f64,
    pub loss_total: f64,
    pub wall_ms: u64,
}

/// Per-epoch held-out evaluation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochEval {
    pub epoch: usize,
    pub eval_metric: String,
    pub eval_value: f64,
}

/// Everything a run produces besides the final state.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EpochEval>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub lrs: GroupLrs,
    pub adam: AdamParams,
    pub warmup_ratio: f64,
    pub grad_clip: Option<f64>,
    pub timing: TimingMode,
}

fn batch_objective<'a>(dataset: &'a Dataset, labels: &'a [usize]) -> Objective<'a> {
    match &dataset.target {
        Some(t) => Objective::TargetFit { target: t },
        None => Objective::Classify { labels },
    }
}

/// Held-out metric: classification accuracy, or for target fitting the mean
/// relative error `‖η·ΔW_comp(x) − T‖_F / ‖T‖_F` over test tokens.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<EpochEval> {
    let samples: &[Sample] = if dataset.test.is_empty() {
        &dataset.train
    } else {
        &dataset.test
    };
    match &dataset.target {
        Some(target) => {
            let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
            let trace = model.forward(&inputs, true)?;
            let site = &model.sites()[0];
            let eta = site.eta();
            let t_norm = target.frobenius_norm().max(f64::MIN_POSITIVE);
            let composites = trace.composites.unwrap();
            let mut sum = 0.0;
            for comp in &composites {
                let mut sq = 0.0;
                for (c, t) in comp.data().iter().zip(target.data().iter()) {
                    let r = eta * c - t;
                    sq += r * r;
                }
                sum += sq.sqrt() / t_norm;
            }
            Ok(EpochEval {
                epoch: 0,
                eval_metric: "fit_error".into(),
                eval_value: sum / composites.len() as f64,
            })
        }
        None => {
            let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
            let trace = model.forward(&inputs, false)?;
            let logits = trace
                .logits
                .ok_or_else(|| Error::Parameter("classification eval requires a head".into()))?;
            let mut correct = 0usize;
            for (row, s) in logits.iter().zip(samples.iter()) {
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if pred == s.label {
                    correct += 1;
                }
            }
            Ok(EpochEval {
                epoch: 0,
                eval_metric: "accuracy".into(),
                eval_value: correct as f64 / samples.len() as f64,
            })
        }
    }
}

/// Runs the epoch loop. Bit-reproducible for a fixed seed: batch order,
/// reductions, and every random draw are fully determined by it.
pub fn train(
    mut state: TrainState,
    dataset: &Dataset,
    options: &TrainOptions,
    seed: u64,
) -> Result<(TrainState, RunLog)> {
    let mut log = RunLog::default();
    if options.epochs == 0 {
        return Ok((state, log));
    }
    if dataset.train.is_empty() {
        return Err(Error::Parameter("empty training set".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::Parameter("batch_size must be >= 1".into()));
    }

    let initial_supports = expert_supports(&state.model);
    let steps_per_epoch = dataset.train.len().div_ceil(options.batch_size) as u64;
    let total_steps = steps_per_epoch * options.epochs as u64;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();

    for epoch in 0..options.epochs {
        // Fisher-Yates driven by the run RNG.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(options.batch_size) {
            let started = Instant::now();
            let inputs: Vec<Vec<f64>> =
                chunk.iter().map(|&i| dataset.train[i].x.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.train[i].label).collect();
            let objective = batch_objective(dataset, &labels);

            let (loss, trace) = state.model.loss(&inputs, &objective, options.lambda)?;
            let grads = state
                .model
                .backward(&inputs, &objective, options.lambda, &trace)?;
            let mult = schedule_multiplier(state.step, total_steps, options.warmup_ratio);
            optimizer_step(
                &mut state,
                &grads,
                &options.lrs,
                mult,
                &options.adam,
                options.grad_clip,
            )?;

            let wall_ms = match options.timing {
                TimingMode::Wall => started.elapsed().as_millis() as u64,
                TimingMode::None => 0,
            };
            log.steps.push(StepRecord {
                step: state.step,
                lr: options.lrs.expert * mult,
                loss_task: loss.task,
                loss_aux: loss.aux,
                loss_total: loss.total,
                wall_ms,
            });
        }

        if expert_supports(&state.model) != initial_supports {
            return Err(Error::Training(
                "expert support changed during training".into(),
            ));
        }
        let mut eval = evaluate(&state.model, dataset)?;
        eval.epoch = epoch + 1;
        log.evals.push(eval);
    }

    Ok((state, log))
}

fn expert_supports(model: &Model) -> Vec<Vec<Option<Vec<crate::matrix::FrequencyIndex>>>> {
    model
        .sites()
        .iter()
        .map(|site| {
            site.experts()
                .iter()
                .map(|e| match e {
                    crate::moe::ExpertParams::Spectral(se) => Some(se.support()),
                    crate::moe::ExpertParams::Unsymmetric(ue) => {
                        Some(ue.bins().iter().map(|(i, _)| *i).collect())
                    }
                    crate::moe::ExpertParams::LowRank(_) => None,
                })
                .collect()
        })
        .collect()
}

/// Total loss over an explicit batch; thin wrapper used by the CLI and the
/// property suites.
pub fn total_loss(
    model: &Model,
    inputs: &[Vec<f64>],
    objective: &Objective,
    lambda: f64,
) -> Result<LossBreakdown> {
    Ok(model.loss(inputs, objective, lambda)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::RealMatrix;
    use crate::model::Head;
    use crate::moe::AdapterSite;

    fn scalar_state() -> TrainState {
        // A 1x1 "head"-only model: single trainable scalar via the head.
        let site = AdapterSite::new(
            RealMatrix::zeros(1, 1),
            vec![crate::moe::ExpertParams::LowRank(
                crate::baselines::LowRankExpert::init((1, 1), 1, 0).unwrap(),
            )],
            crate::router::Router::new(RealMatrix::zeros(1, 1), 1).unwrap(),
            0.0,
        )
        .unwrap();
        let head = Head::new(RealMatrix::zeros(1, 1), vec![0.0]).unwrap();
        TrainState::new(Model::new(vec![site], Some(head)).unwrap())
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut state = scalar_state();
        let before = state.model.flatten_params();
        let grads = vec![0.0; before.len()];
        optimizer_step(
            &mut state,
            &grads,
            &GroupLrs::uniform(0.1),
            1.0,
            &AdamParams::default(),
            None,
        )
        .unwrap();
        assert_eq!(state.model.flatten_params(), before);
    }

    #[test]
    fn degenerate_betas_give_plain_normalized_step() {
        let mut state = scalar_state();
        let n = state.model.num_params();
        let mut grads = vec![0.0; n];
        grads[0] = 1.0;
        let adam = AdamParams {
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-8,
            weight_decay: 0.0,
        };
        let before = state.model.flatten_params()[0];
        optimizer_step(&mut state, &grads, &GroupLrs::uniform(0.1), 1.0, &adam, None).unwrap();
        let after = state.model.flatten_params()[0];
        assert!((before - after - 0.1).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_is_identified() {
        let mut state = scalar_state();
        let n = state.model.num_params();
        let mut grads = vec![0.0; n];
        grads[n - 1] = f64::NAN;
        let err = optimizer_step(
            &mut state,
            &grads,
            &GroupLrs::uniform(0.1),
            1.0,
            &AdamParams::default(),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("head"), "{err}");
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // L = (theta - 3)^2 on a single scalar, 500 steps, lr 0.05.
        let mut theta = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let adam = AdamParams::default();
        for t in 1..=500 {
            let g = 2.0 * (theta - 3.0);
            m = adam.beta1 * m + (1.0 - adam.beta1) * g;
            v = adam.beta2 * v + (1.0 - adam.beta2) * g * g;
            let m_hat = m / (1.0 - adam.beta1.powi(t));
            let v_hat = v / (1.0 - adam.beta2.powi(t));
            theta -= 0.05 * m_hat / (v_hat.sqrt() + adam.epsilon);
        }
        assert!((theta - 3.0).abs() <= 1e-3, "theta = {theta}");
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let total = 100;
        let w = 0.1;
        assert!(schedule_multiplier(0, total, w) < schedule_multiplier(5, total, w));
        assert!((schedule_multiplier(9, total, w) - 1.0).abs() < 1e-12);
        assert!(schedule_multiplier(50, total, w) < 1.0);
        assert!(schedule_multiplier(99, total, w) > 0.0);
        assert!(schedule_multiplier(99, total, w) < schedule_multiplier(50, total, w));
    }

    #[test]
    fn quadratic_fd_check_is_exact_to_roundoff() {
        // The target-fit loss is quadratic in the coefficients, so central
        // differences are exact up to floating-point noise.
        let site = crate::model::tests::build_site((4, 4), 2, 1, 4, 1.0, 11);
        let mut model = Model::new(vec![site], None).unwrap();
        let target = RealMatrix::from_vec(4, 4, (0..16).map(|i| (i as f64 * 0.3).sin()).collect());
        let inputs = vec![vec![0.5, -0.25, 1.0, 0.0]];
        let objective = Objective::TargetFit { target: &target };
        // Only the expert segment is quadratic; router params enter through
        // softmax. Use a small eps and a loose quadratic bound overall.
        let err = finite_difference_check(&mut model, &inputs, &objective, 0.0, 1e-5).unwrap();
        assert!(err <= 1e-6, "err = {err}");
    }

    #[test]
    fn analytic_gradients_match_finite_differences_on_full_model() {
        // Two chained sites with tanh in between, a classification head,
        // and a nonzero aux weight so the load-balance pathway is exercised.
        use crate::model::Head;
        let dims = (6, 6);
        let s0 = crate::model::tests::build_site(dims, 3, 2, 8, 1.5, 41);
        let s1 = crate::model::tests::build_site(dims, 3, 2, 8, 1.5, 42);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(43);
        let classes = 3;
        let head = Head::new(
            RealMatrix::from_vec(
                classes,
                dims.0,
                (0..classes * dims.0)
                    .map(|_| rand::Rng::gen_range(&mut rng, -0.5..0.5))
                    .collect(),
            ),
            vec![0.0; classes],
        )
        .unwrap();
        let mut model = Model::new(vec![s0, s1], Some(head)).unwrap();
        let batch: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                (0..dims.1)
                    .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
                    .collect()
            })
            .collect();
        let labels = vec![0usize, 1, 2, 1];
        let objective = Objective::Classify { labels: &labels };
        let err = finite_difference_check(&mut model, &batch, &objective, 0.05, 1e-6).unwrap();
        assert!(err <= 1e-5, "max relative error {err}");
    }

    #[test]
    fn renormalized_gates_also_pass_gradient_check() {
        let dims = (5, 5);
        let mut site = crate::model::tests::build_site(dims, 4, 2, 6, 2.0, 77);
        let phi = site.router().phi().clone();
        *site.router_mut() =
            crate::router::Router::with_options(phi, 2, true).unwrap();
        use crate::model::Head;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(78);
        let head = Head::new(
            RealMatrix::from_vec(
                2,
                dims.0,
                (0..2 * dims.0)
                    .map(|_| rand::Rng::gen_range(&mut rng, -0.5..0.5))
                    .collect(),
            ),
            vec![0.0; 2],
        )
        .unwrap();
        let mut model = Model::new(vec![site], Some(head)).unwrap();
        let batch: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..dims.1)
                    .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
                    .collect()
            })
            .collect();
        let labels = vec![0usize, 1, 0];
        let objective = Objective::Classify { labels: &labels };
        let err = finite_difference_check(&mut model, &batch, &objective, 0.02, 1e-6).unwrap();
        assert!(err <= 1e-5, "max relative error {err}");
    }

    #[test]
    fn pathological_eps_still_returns_finite() {
        let site = crate::model::tests::build_site((4, 4), 2, 1, 4, 1.0, 13);
        let mut model = Model::new(vec![site], None).unwrap();
        let target = RealMatrix::zeros(4, 4);
        let inputs = vec![vec![1.0, 0.0, 0.0, 0.0]];
        let objective = Objective::TargetFit { target: &target };
        let err = finite_difference_check(&mut model, &inputs, &objective, 0.0, 1.0).unwrap();
        assert!(err.is_finite());
    }
}
