use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ReportError, Result};
use crate::corpus::Corpus;
use crate::fmt::sig9;
use crate::lm::{evaluate, ModelParams, TrainConfig, TrainExample, Vocab};
use crate::rft::{train_weighted, LabelSource, WeightScheme};

/// What the default sweep metric measures. Desk-scale runs have no
/// downstream benchmark, so a held-out loss stands in for it.
pub const PROXY_METRIC: &str =
    "held-out reasoning-group loss (proxy for downstream accuracy; lower is better)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub inv_tau: f64,
    pub metric: Option<f64>,
    pub final_loss_boilerplate: Option<f64>,
    pub final_loss_reasoning: Option<f64>,
    pub error: Option<String>,
}

/// Mean ground-truth reasoning-group loss on `heldout`.
pub fn heldout_reasoning_loss(
    heldout: &[TrainExample],
) -> impl Fn(&ModelParams) -> std::result::Result<f64, String> + Sync + '_ {
    move |params| {
        evaluate(params, heldout)
            .l_r
            .ok_or_else(|| "held-out set has no labelled reasoning tokens".to_string())
    }
}

/// One RFT run from `base` per entry of `inv_taus` (1/τ; 0 means equal
/// group weights), each scored by `eval`. A failing run is recorded in its
/// row and the sweep moves on. Rows come back sorted by 1/τ.
pub fn tau_sweep(
    base: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocab,
    source: LabelSource<'_>,
    inv_taus: &[f64],
    config: &TrainConfig,
    eval: &(dyn Fn(&ModelParams) -> std::result::Result<f64, String> + Sync),
) -> Result<Vec<SweepRow>> {
    if inv_taus.is_empty() {
        return Err(ReportError::Input(
            "tau sweep needs at least one 1/tau value".into(),
        ));
    }
    let mut rows: Vec<SweepRow> = inv_taus
        .par_iter()
        .map(|&inv_tau| {
            let failed = |error: String| SweepRow {
                inv_tau,
                metric: None,
                final_loss_boilerplate: None,
                final_loss_reasoning: None,
                error: Some(error),
            };
            let scheme = WeightScheme::Rft { inv_tau };
            let (params, history) =
                match train_weighted(base, corpus, vocab, config, &scheme, source) {
                    Ok(out) => out,
                    Err(e) => return failed(e.to_string()),
                };
            match eval(&params) {
                Ok(metric) => SweepRow {
                    inv_tau,
                    metric: Some(metric),
                    final_loss_boilerplate: history.final_loss("boilerplate"),
                    final_loss_reasoning: history.final_loss("reasoning"),
                    error: None,
                },
                Err(e) => failed(e),
            }
        })
        .collect();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        log::warn!(
            "1/tau = {}: {}",
            r.inv_tau,
            r.error.as_deref().unwrap_or_default()
        );
    }
    rows.sort_by(|a, b| a.inv_tau.total_cmp(&b.inv_tau));
    Ok(rows)
}

/// CSV with the proxy named in the metric column header.
pub fn sweep_csv(rows: &[SweepRow]) -> Vec<u8> {
    let opt = |x: Option<f64>| x.map(sig9).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "inv_tau",
        "heldout_reasoning_loss_proxy",
        "final_train_loss_boilerplate",
        "final_train_loss_reasoning",
        "error",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            sig9(r.inv_tau),
            opt(r.metric),
            opt(r.final_loss_boilerplate),
            opt(r.final_loss_reasoning),
            r.error.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}
