use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport};
use crate::dataset::Dataset;
use crate::domain::KnowledgeMatrix;
use crate::error::{Error, Result};
use crate::labeling::{PosWeightSpec, PosWeightStrategy};
use crate::loss::{au_loss, au_targets, combined_loss, expression_loss, AuReduction, DEFAULT_EXPRESSION_FACTOR};
use crate::model::{backward, forward, init_params, optimizer_step, ModelParams, OptimizerState, DEFAULT_HIDDEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub strategy: PosWeightStrategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub expression_factor: f64,
    pub au_reduction: AuReduction,
    pub knowledge: Option<PathBuf>,
    pub pos_weights: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            strategy: PosWeightStrategy::Distinct,
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.05,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            expression_factor: DEFAULT_EXPRESSION_FACTOR,
            au_reduction: AuReduction::Elements,
            knowledge: None,
            pos_weights: None,
            train_data: None,
            test_data: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay nonnegative");
        }
        if !(self.expression_factor > 0.0) {
            return bad("expression factor must be positive");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Per-epoch record. Epoch 0 is the initialization, before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub expression_loss: f64,
    pub au_loss: f64,
    pub total_loss: f64,
    pub lambda: f64,
    pub train_war: f64,
    pub train_uar: f64,
    pub test_war: Option<f64>,
    pub test_uar: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub logs: Vec<EpochLog>,
    /// Set when training stopped on a non-finite loss or gradient; `params`
    /// then hold the last fully finished epoch.
    pub aborted: Option<String>,
}

impl TrainOutcome {
    pub fn final_log(&self) -> &EpochLog {
        self.logs.last().expect("epoch 0 is always logged")
    }
}

/// Wall-clock timer; reads zero where the platform has no clock (wasm32).
#[derive(Clone, Copy)]
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

struct Batch {
    features: Array2<f64>,
    labels: Vec<usize>,
    expressions: Vec<crate::domain::ExpressionClass>,
    targets: Array2<f64>,
}

fn batch(data: &Dataset, rows: &[usize]) -> Batch {
    let sub = data.select(rows);
    Batch {
        labels: sub.labels.iter().map(|l| l.expression.index()).collect(),
        expressions: sub.expressions(),
        targets: au_targets(sub.labels.iter().map(|l| &l.y)),
        features: sub.features,
    }
}

struct StepResult {
    expression: f64,
    au: f64,
}

fn losses_and_grads(
    params: &ModelParams,
    b: &Batch,
    cfg: &TrainConfig,
    knowledge: &KnowledgeMatrix,
    pw: &PosWeightSpec,
) -> Result<(StepResult, ModelParams)> {
    let pass = forward(params, b.features.view())?;
    let (le, ge) = expression_loss(pass.expression_logits.view(), &b.labels, cfg.expression_factor)?;
    let (la, ga) = au_loss(
        pass.au_logits.view(),
        b.targets.view(),
        &b.expressions,
        knowledge,
        pw,
        cfg.au_reduction,
    )?;
    if !(le.is_finite() && la.is_finite()) {
        return Err(Error::NonFinite(format!("loss L_e = {le}, L_AU = {la}")));
    }
    let grads = backward(
        params,
        &pass,
        (ge * (1.0 - cfg.lambda)).view(),
        (ga * cfg.lambda).view(),
    )?;
    Ok((StepResult { expression: le, au: la }, grads))
}

fn full_losses(
    params: &ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    knowledge: &KnowledgeMatrix,
    pw: &PosWeightSpec,
) -> Result<StepResult> {
    let all: Vec<usize> = (0..data.len()).collect();
    let b = batch(data, &all);
    let pass = forward(params, b.features.view())?;
    let (le, _) = expression_loss(pass.expression_logits.view(), &b.labels, cfg.expression_factor)?;
    let (la, _) = au_loss(
        pass.au_logits.view(),
        b.targets.view(),
        &b.expressions,
        knowledge,
        pw,
        cfg.au_reduction,
    )?;
    Ok(StepResult { expression: le, au: la })
}

#[allow(clippy::too_many_arguments)]
fn log_epoch(
    epoch: usize,
    losses: &StepResult,
    cfg: &TrainConfig,
    params: &ModelParams,
    train: &Dataset,
    test: Option<&Dataset>,
    started: Stopwatch,
) -> Result<EpochLog> {
    let tr: EvalReport = evaluate(params, train)?;
    let te = test
        .filter(|t| !t.is_empty())
        .map(|t| evaluate(params, t))
        .transpose()?;
    Ok(EpochLog {
        epoch,
        expression_loss: losses.expression,
        au_loss: losses.au,
        total_loss: combined_loss(losses.expression, losses.au, cfg.lambda)?,
        lambda: cfg.lambda,
        train_war: tr.war,
        train_uar: tr.uar,
        test_war: te.as_ref().map(|r| r.war),
        test_uar: te.as_ref().map(|r| r.uar),
        wall_seconds: started.seconds(),
    })
}

/// Minibatch training on `(1 - λ) L_e + λ L_AU`. With λ = 0 the AU head gets
/// no gradient and the run is the expression-only baseline. Deterministic for
/// a given config and data.
pub fn train(
    cfg: &TrainConfig,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    knowledge: &KnowledgeMatrix,
    pw: &PosWeightSpec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training data".into()));
    }
    let started = Stopwatch::start();
    let mut params = init_params(cfg.seed, train_data.feature_dim(), &cfg.hidden)?;
    let mut optimizer = OptimizerState::new(&params, cfg.learning_rate, cfg.weight_decay);
    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);

    let init = full_losses(&params, train_data, cfg, knowledge, pw)?;
    let mut logs = vec![log_epoch(0, &init, cfg, &params, train_data, test_data, started)?];
    let mut last_good = (params.clone(), optimizer.clone());
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffler);
        let mut sum_e = 0.0;
        let mut sum_a = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let b = batch(train_data, rows);
            let step = losses_and_grads(&params, &b, cfg, knowledge, pw)
                .and_then(|(s, g)| optimizer_step(&mut params, &g, &mut optimizer).map(|_| s));
            match step {
                Ok(s) => {
                    sum_e += s.expression * rows.len() as f64;
                    sum_a += s.au * rows.len() as f64;
                }
                Err(Error::NonFinite(msg)) => {
                    let (p, o) = last_good;
                    return Ok(TrainOutcome {
                        params: p,
                        optimizer: o,
                        logs,
                        aborted: Some(format!("epoch {epoch}: {msg}")),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let n = train_data.len() as f64;
        let epoch_losses = StepResult {
            expression: sum_e / n,
            au: sum_a / n,
        };
        logs.push(log_epoch(
            epoch,
            &epoch_losses,
            cfg,
            &params,
            train_data,
            test_data,
            started,
        )?);
        last_good = (params.clone(), optimizer.clone());
    }
    Ok(TrainOutcome {
        params,
        optimizer,
        logs,
        aborted: None,
    })
}
