//! The pipeline stages as plain functions over in-memory values. The
//! commands in [`crate::stages`] wrap these with artifact files.

use anyhow::{Context, Result};
use shad_core::corpus::{
    generate_corpus, shuffle_outputs, Corpus, GeneratorConfig, ShuffledCorpus,
};
use shad_core::lm::{
    build_vocab_from, checkpoint_hash, evaluate, grad_check, tokenize, train, EvalStats,
    ModelParams, TrainHistory, Vocab,
};
use shad_core::report::{heldout_reasoning_loss, tau_sweep, SweepRow};
use shad_core::rft::{resolve_labels, train_weighted, LabelSource, Ruleset, WeightScheme};
use shad_core::shad::{
    annotate_corpus, tune_discriminator, AnnotatedCorpus, ClassifyOptions, Fingerprint,
};

use crate::config::{LabelKind, RunConfig};

pub struct Data {
    pub corpus: Corpus,
    pub pretrain: Corpus,
    pub vocab: Vocab,
}

pub fn make_data(cfg: &RunConfig) -> Result<Data> {
    let corpus = generate_corpus(&cfg.generator).context("generating the target corpus")?;
    let pre = GeneratorConfig::pretraining(cfg.pretraining.n_samples, cfg.pretraining.seed);
    let pretrain = generate_corpus(&pre).context("generating the pretraining corpus")?;
    let vocab = build_vocab_from(&[&corpus, &pretrain], cfg.vocab.max_size)?;
    Ok(Data {
        corpus,
        pretrain,
        vocab,
    })
}

pub struct Base {
    pub params: ModelParams,
    pub history: TrainHistory,
    /// Largest relative finite-difference error at initialisation.
    pub grad_check: f64,
}

/// Pretrains θ_o on the pretraining corpus only.
pub fn make_base(cfg: &RunConfig, data: &Data) -> Result<Base> {
    let arch = cfg.model.arch(data.vocab.len());
    let init = ModelParams::init(arch, cfg.model.init_seed)?;
    let probe_sample = &data.pretrain.samples[0];
    let tok = tokenize(probe_sample, &data.vocab, arch.context)?;
    let gc = &cfg.grad_check;
    let grad_check = grad_check(&init, &tok, gc.probes, gc.epsilon, gc.seed);
    log::info!("gradient check at init: max relative error {grad_check:.3e}");
    let (params, history) = train(
        &init,
        &data.pretrain,
        &data.vocab,
        &cfg.base,
        &WeightScheme::Sft,
    )?;
    Ok(Base {
        params,
        history,
        grad_check,
    })
}

pub struct Shad {
    pub shuffled: ShuffledCorpus,
    pub theta_s: ModelParams,
    pub annotations: AnnotatedCorpus,
}

pub fn make_shad(cfg: &RunConfig, data: &Data, theta_o: &ModelParams) -> Result<Shad> {
    let s = &cfg.shad;
    let shuffled = shuffle_outputs(&data.corpus, s.ratio, s.shuffle_seed)?;
    let theta_s = tune_discriminator(theta_o, &shuffled, &data.vocab, &s.tune)?;
    let fingerprint = Fingerprint {
        shuffle_seed: s.shuffle_seed,
        ratio: s.ratio,
        tune: s.tune.clone(),
        theta_o_sha256: checkpoint_hash(theta_o),
        theta_s_sha256: checkpoint_hash(&theta_s),
        margin: s.margin,
        format_threshold: s.format_threshold,
    };
    let opts = ClassifyOptions {
        margin: s.margin,
        format_threshold: s.format_threshold,
        max_len: theta_o.arch.context,
    };
    let annotations = annotate_corpus(
        theta_o,
        &theta_s,
        &data.corpus,
        &data.vocab,
        &opts,
        fingerprint,
    )?;
    Ok(Shad {
        shuffled,
        theta_s,
        annotations,
    })
}

/// Splits off the trailing `fraction` of the corpus as a held-out set.
pub fn split_heldout(corpus: &Corpus, fraction: f64) -> (Corpus, Corpus) {
    let n_held = (fraction * corpus.len() as f64).floor() as usize;
    let cut = corpus.len() - n_held.min(corpus.len());
    let part = |samples: &[_]| Corpus {
        samples: samples.to_vec(),
        provenance: corpus.provenance.clone(),
    };
    (part(&corpus.samples[..cut]), part(&corpus.samples[cut..]))
}

fn with_source<T>(
    labels: LabelKind,
    annotations: Option<&AnnotatedCorpus>,
    f: impl FnOnce(LabelSource<'_>) -> Result<T>,
) -> Result<T> {
    let rules = Ruleset::react_json();
    let source = match labels {
        LabelKind::Truth => LabelSource::GroundTruth,
        LabelKind::Regex => LabelSource::Regex(&rules),
        LabelKind::Shad => LabelSource::Shad(annotations.context("SHAD labels need annotations")?),
    };
    f(source)
}

fn heldout_examples(
    cfg: &RunConfig,
    data: &Data,
    held: &Corpus,
) -> Result<Vec<shad_core::lm::TrainExample>> {
    Ok(resolve_labels(
        held,
        &data.vocab,
        cfg.train.max_sequence_length,
        LabelSource::GroundTruth,
    )?)
}

pub struct TrainRun {
    pub params: ModelParams,
    pub history: TrainHistory,
    /// Ground-truth group losses on the held-out tail.
    pub heldout: Option<EvalStats>,
}

/// Fine-tunes θ_o on the non-held-out part of the target corpus.
pub fn make_train(
    cfg: &RunConfig,
    data: &Data,
    theta_o: &ModelParams,
    annotations: Option<&AnnotatedCorpus>,
) -> Result<TrainRun> {
    let scheme = cfg.scheme.scheme()?;
    let (train_c, held) = split_heldout(&data.corpus, cfg.scheme.heldout_fraction);
    let (params, history) = with_source(cfg.scheme.labels, annotations, |source| {
        Ok(train_weighted(
            theta_o,
            &train_c,
            &data.vocab,
            &cfg.train,
            &scheme,
            source,
        )?)
    })?;
    let heldout = if held.is_empty() {
        None
    } else {
        Some(evaluate(&params, &heldout_examples(cfg, data, &held)?))
    };
    Ok(TrainRun {
        params,
        history,
        heldout,
    })
}

pub fn make_tau_sweep(
    cfg: &RunConfig,
    data: &Data,
    theta_o: &ModelParams,
    annotations: Option<&AnnotatedCorpus>,
) -> Result<Vec<SweepRow>> {
    let (train_c, held) = split_heldout(&data.corpus, cfg.scheme.heldout_fraction);
    anyhow::ensure!(
        !held.is_empty(),
        "the tau sweep needs scheme.heldout_fraction > 0"
    );
    let held_ex = heldout_examples(cfg, data, &held)?;
    let eval = heldout_reasoning_loss(&held_ex);
    with_source(cfg.scheme.labels, annotations, |source| {
        Ok(tau_sweep(
            theta_o,
            &train_c,
            &data.vocab,
            source,
            &cfg.report.inv_taus,
            &cfg.train,
            &eval,
        )?)
    })
}
