//! Browser demo: three small operations over the core library, exported to
//! JavaScript. Each returns a JSON string; the page in `www/` renders it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use audfer::harness::experiment::{prepare, run_prepared, BenchmarkConfig};
use audfer::harness::report::confusion_svg;
use audfer::knowledge::{aggregate_knowledge, MidpointPolicy};
use audfer::labeling::{PosWeightSpec, PosWeightStrategy};
use audfer::loss::{au_loss, AuReduction};
use audfer::synth::prototype_knowledge_with;
use audfer::{ActionUnit, ExpressionClass, KnowledgeMatrix, KnowledgeStage, NUM_AUS, NUM_EXPRESSIONS};
use ndarray::Array2;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Loss of a single AU element as the logit sweeps over [-6, 6], for a
/// positive and a negative target, at knowledge weight `k` (0..5) and
/// positive weight `pw`.
pub fn loss_curve(k: f64, pw: f64, points: usize) -> Result<String, String> {
    if !(k > 0.0 && k < 5.0) || !(pw > 0.0) || points < 2 {
        return Err("need 0 < k < 5, pw > 0 and at least two points".into());
    }
    let knowledge = KnowledgeMatrix::filled(k, KnowledgeStage::LossScaled);
    let mut weights = PosWeightSpec::ones();
    weights.values = [[pw; NUM_AUS]; NUM_EXPRESSIONS];

    let xs: Vec<f64> = (0..points)
        .map(|i| -6.0 + 12.0 * i as f64 / (points - 1) as f64)
        .collect();
    let mut curves = Vec::new();
    for target in [1.0, 0.0] {
        let mut ys = Vec::with_capacity(points);
        for &x in &xs {
            let logits = Array2::from_elem((1, NUM_AUS), x);
            let targets = Array2::from_elem((1, NUM_AUS), target);
            let (loss, _) = au_loss(
                logits.view(),
                targets.view(),
                &[ExpressionClass::Happy],
                &knowledge,
                &weights,
                AuReduction::Elements,
            )
            .map_err(|e| e.to_string())?;
            ys.push(loss);
        }
        curves.push(ys);
    }
    Ok(json!({ "x": xs, "positive": curves[0], "negative": curves[1] }).to_string())
}

fn demo_bench(active: f64, inactive: f64, au_noise: f64, total: usize) -> BenchmarkConfig {
    let mut bench = BenchmarkConfig::default();
    bench.synth.total = total;
    bench.synth.feature_dim = 32;
    bench.synth.au_noise_sd = au_noise;
    bench.synth.ground_truth_knowledge = Some(prototype_knowledge_with(active, inactive));
    bench
}

fn heatmap_svg(m: &KnowledgeMatrix, max: f64) -> String {
    const W: usize = 44;
    const H: usize = 18;
    const LEFT: usize = 48;
    const TOP: usize = 20;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="10">"#,
        LEFT + W * NUM_EXPRESSIONS + 4,
        TOP + H * NUM_AUS + 4
    );
    for (c, class) in ExpressionClass::ALL.iter().enumerate() {
        s += &format!(
            r#"<text x="{}" y="14" text-anchor="middle">{}</text>"#,
            LEFT + c * W + W / 2,
            class.short_name()
        );
    }
    for au in ActionUnit::ALL {
        let j = au.index();
        s += &format!(r#"<text x="4" y="{}">{}</text>"#, TOP + j * H + 13, au.name());
        for c in 0..NUM_EXPRESSIONS {
            let v = m.values[j][c];
            let shade = (255.0 * (1.0 - (v / max).clamp(0.0, 1.0))) as u8;
            s += &format!(
                r#"<rect x="{}" y="{}" width="{W}" height="{H}" fill="rgb({shade},{shade},255)"><title>{} / {}: {v:.3}</title></rect>"#,
                LEFT + c * W,
                TOP + j * H,
                au.name(),
                ExpressionClass::ALL[c].name()
            );
        }
    }
    s + "</svg>"
}

fn correlation(a: &KnowledgeMatrix, b: &KnowledgeMatrix) -> f64 {
    let xs: Vec<f64> = a.values.iter().flatten().copied().collect();
    let ys: Vec<f64> = b.values.iter().flatten().copied().collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Generates a synthetic corpus, extracts knowledge from its training split
/// and sets it beside the generator's ground truth (divided by 5 so both sit
/// in [0, 1]).
pub fn knowledge_map(active: f64, inactive: f64, au_noise: f64, total: usize, seed: u64) -> Result<String, String> {
    if !(0.0..=5.0).contains(&active) || !(0.0..=5.0).contains(&inactive) || !(au_noise >= 0.0) {
        return Err("levels must lie in [0, 5] and noise must be nonnegative".into());
    }
    let bench = demo_bench(active, inactive, au_noise, total);
    let prepared = prepare(&bench, seed).map_err(|e| e.to_string())?;
    let extracted = aggregate_knowledge(
        std::slice::from_ref(&prepared.dataset_knowledge),
        MidpointPolicy::General,
    )
    .map_err(|e| e.to_string())?;
    let mut truth = bench.synth.ground_truth();
    truth.values.iter_mut().flatten().for_each(|v| *v /= 5.0);
    Ok(json!({
        "extracted_svg": heatmap_svg(&extracted, 1.0),
        "truth_svg": heatmap_svg(&truth, 1.0),
        "correlation": correlation(&extracted, &truth),
        "train_clips": prepared.train.len(),
    })
    .to_string())
}

/// Trains once on a small synthetic benchmark and reports test metrics with
/// the confusion heatmap.
pub fn train_once(lambda: f64, strategy: &str, epochs: usize, total: usize, seed: u64) -> Result<String, String> {
    let strategy: PosWeightStrategy = strategy.parse().map_err(|e: audfer::Error| e.to_string())?;
    let mut bench = demo_bench(3.2, 1.8, 1.0, total);
    bench.train.lambda = if strategy == PosWeightStrategy::None {
        0.0
    } else {
        lambda
    };
    bench.train.strategy = strategy;
    bench.train.epochs = epochs;
    bench.train.hidden = vec![32];
    let prepared = prepare(&bench, seed).map_err(|e| e.to_string())?;
    let run = run_prepared(&prepared, &bench.train).map_err(|e| e.to_string())?;
    let recalls: Vec<serde_json::Value> = ExpressionClass::ALL
        .iter()
        .map(|&c| json!({ "class": c.name(), "recall": run.report.recall(c) }))
        .collect();
    Ok(json!({
        "lambda": run.lambda,
        "strategy": strategy.as_str(),
        "war": run.report.war,
        "uar": run.report.uar,
        "minor_recall": run.report.minor_recall(),
        "recalls": recalls,
        "final_loss": run.outcome.final_log().total_loss,
        "confusion_svg": confusion_svg(&run.report.confusion),
    })
    .to_string())
}

#[wasm_bindgen(js_name = lossCurve)]
pub fn loss_curve_js(k: f64, pw: f64, points: usize) -> Result<String, JsError> {
    to_js(loss_curve(k, pw, points))
}

#[wasm_bindgen(js_name = knowledgeMap)]
pub fn knowledge_map_js(active: f64, inactive: f64, au_noise: f64, total: usize, seed: u32) -> Result<String, JsError> {
    to_js(knowledge_map(active, inactive, au_noise, total, seed as u64))
}

#[wasm_bindgen(js_name = trainOnce)]
pub fn train_once_js(lambda: f64, strategy: &str, epochs: usize, total: usize, seed: u32) -> Result<String, JsError> {
    to_js(train_once(lambda, strategy, epochs, total, seed as u64))
}
