//! Acceptance run: one PASS/FAIL line per criterion, with the measured
//! values. Exits non-zero if any criterion fails.
//!
//! Criteria 4-6 share one full pipeline per seed (10,000-sample corpus,
//! pretrained base, tuned discriminator); expect roughly twenty minutes on a
//! single core.

use std::fmt::Write as _;
use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use shad_cli::config::{LabelKind, RunConfig, SchemeKind};
use shad_cli::pipeline::{self, Base, Data, Shad};
use shad_core::corpus::{
    load_jsonl, save_jsonl, to_jsonl_bytes, Corpus, GeneratorConfig, RoleLabel,
};
use shad_core::lm::{
    grad_check, read_checkpoint, tokenize, write_checkpoint, Arch, ModelParams, TrainHistory,
};
use shad_core::report::{loss_curves, misclassification, sweep_csv};
use shad_core::rft::{rft_weights, weighted_loss, GroupLoss, WeightScheme};
use shad_core::rng::Rng;
use shad_core::shad::{classify, loss_diff, AnnotatedCorpus, ClassifyOptions};

const SEEDS: [u64; 3] = [1, 2, 3];
/// Fine-tuning runs of criteria 5 and 6 train on this many leading samples
/// and score the held-out tail.
const TRAIN_SAMPLES: usize = 2000;
const HELDOUT_SAMPLES: usize = 500;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn report(v: &Verdict) {
    println!(
        "{} criterion {} ({}): {} [{:.1}s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.id,
        v.name,
        v.detail,
        v.elapsed.as_secs_f64()
    );
}

fn seeded_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        generator: GeneratorConfig::with_defaults(10_000, seed),
        ..Default::default()
    };
    cfg.pretraining.seed = 1000 + seed;
    cfg.model.init_seed = seed;
    cfg.base.seed = seed;
    cfg.grad_check.seed = seed;
    cfg.shad.shuffle_seed = seed;
    cfg.shad.tune.seed = seed;
    cfg.train.seed = seed;
    cfg
}

struct SeedRun {
    cfg: RunConfig,
    data: Data,
    base: Base,
    shad: Shad,
    elapsed: Duration,
}

fn seed_run(seed: u64) -> SeedRun {
    let t = Instant::now();
    let cfg = seeded_config(seed);
    let data = pipeline::make_data(&cfg).expect("data");
    let base = pipeline::make_base(&cfg, &data).expect("base");
    let shad = pipeline::make_shad(&cfg, &data, &base.params).expect("shad");
    eprintln!(
        "seed {seed}: pipeline built in {:.0}s",
        t.elapsed().as_secs_f64()
    );
    SeedRun {
        cfg,
        data,
        base,
        shad,
        elapsed: t.elapsed(),
    }
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let corpus =
        shad_core::corpus::generate_corpus(&GeneratorConfig::with_defaults(4, 11)).unwrap();
    let vocab = shad_core::lm::build_vocab(&corpus, 512).unwrap();
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for d in [16, 64] {
        for l in [1, 2] {
            let arch = Arch {
                vocab_size: vocab.len(),
                d_model: d,
                n_layers: l,
                n_heads: 2,
                context: 256,
            };
            let p = ModelParams::<f32>::init_scaled(arch, 7, 0.3)
                .unwrap()
                .cast::<f64>();
            let tok = tokenize(&corpus.samples[0], &vocab, 256).unwrap();
            let e = grad_check(&p, &tok, 64, 1e-5, 13);
            worst = worst.max(e);
            write!(detail, "d={d},L={l}: {e:.2e}; ").unwrap();
        }
    }
    Verdict {
        id: 1,
        name: "gradient correctness",
        pass: worst < 1e-5,
        detail: format!("{detail}max {worst:.2e} < 1e-5"),
        elapsed: t.elapsed(),
    }
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut rng = Rng::new(2);
    let (mut sum_err, mut shift_err) = (0.0f64, 0.0f64);
    for _ in 0..20_000 {
        let l_b = rng.unit() * 40.0;
        let l_r = rng.unit() * 40.0;
        let tau = (rng.unit() * 12.0 - 6.0).exp();
        let d = rng.unit() * 30.0;
        let (w_b, w_r) = rft_weights(l_b, l_r, tau).unwrap();
        sum_err = sum_err.max((w_b + w_r - 1.0).abs());
        let (s_b, s_r) = rft_weights(l_b + d, l_r + d, tau).unwrap();
        shift_err = shift_err.max((s_b - w_b).abs()).max((s_r - w_r).abs());
    }
    // Oracle: e/(1+e) from a 30-digit evaluation, rounded to f64.
    let oracle = 0.731_058_578_630_004_9;
    let w_r = rft_weights(1.0, 2.0, 1.0).unwrap().1;
    let gl = GroupLoss {
        l_b: 1.5,
        l_r: 3.25,
        n_b: 3,
        n_r: 2,
    };
    let a0 = weighted_loss(&gl, &WeightScheme::AlphaFt { alpha: 0.0 }).unwrap();
    let a5 = weighted_loss(&gl, &WeightScheme::AlphaFt { alpha: 0.5 }).unwrap();
    let pass = sum_err <= 1e-12
        && shift_err <= 1e-12
        && (w_r - oracle).abs() <= 1e-9
        && a0 == 3.25
        && a5 == 2.375;
    Verdict {
        id: 2,
        name: "weighting algebra",
        pass,
        detail: format!(
            "sum err {sum_err:.1e}, shift err {shift_err:.1e} (<= 1e-12); w_r(1,2,1) = {w_r:.12} vs {oracle:.12}; alpha 0 -> {a0}, 0.5 -> {a5}"
        ),
        elapsed: t.elapsed(),
    }
}

fn criterion_3(run: &SeedRun) -> Verdict {
    let t = Instant::now();
    let mut ok = classify(0.0).unwrap() == shad_core::corpus::CoarseRole::Boilerplate
        && classify(-0.0).unwrap() == shad_core::corpus::CoarseRole::Boilerplate
        && classify(f64::MIN_POSITIVE).unwrap() == shad_core::corpus::CoarseRole::Reasoning
        && classify(f64::NAN).is_err()
        && classify(f64::INFINITY).is_ok()
        && classify(f64::NEG_INFINITY).is_ok();
    let mut rng = Rng::new(3);
    for _ in 0..10_000 {
        ok &= classify((rng.unit() - 0.5) * 1e6).is_ok();
    }
    let boundary = ok;
    let opts = ClassifyOptions {
        max_len: run.base.params.arch.context,
        ..Default::default()
    };
    let corpus = &run.data.corpus;
    let picks = rng.sample_indices(corpus.len(), 100);
    let (mut tokens, mut mismatches) = (0usize, 0usize);
    for i in picks {
        let s = &corpus.samples[i];
        let a = loss_diff(
            &run.base.params,
            &run.shad.theta_s,
            s,
            &run.data.vocab,
            &opts,
        )
        .unwrap();
        let b = loss_diff(
            &run.shad.theta_s,
            &run.base.params,
            s,
            &run.data.vocab,
            &opts,
        )
        .unwrap();
        tokens += a.len();
        mismatches += a
            .iter()
            .zip(&b)
            .filter(|(x, y)| x.ld != -y.ld || x.l_o != y.l_s)
            .count();
    }
    Verdict {
        id: 3,
        name: "classifier contract",
        pass: boundary && mismatches == 0,
        detail: format!(
            "boundary and exhaustiveness {}; antisymmetry exact on {tokens} tokens of 100 samples, {mismatches} mismatches",
            if boundary { "hold" } else { "VIOLATED" }
        ),
        elapsed: t.elapsed(),
    }
}

fn criterion_4(runs: &[SeedRun]) -> Verdict {
    let mut pass = true;
    let mut detail = String::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let m = misclassification(&run.shad.annotations).unwrap();
        let format = m.rate(RoleLabel::Format).unwrap();
        pass &= format < 0.05 && m.coarse_rate < 0.15;
        write!(
            detail,
            "seed {seed}: Format {:.2}%, coarse {:.2}% (TC {:.1}%, Reasoning {:.1}%, Copied {:.1}% reported only); ",
            100.0 * format,
            100.0 * m.coarse_rate,
            100.0 * m.rate(RoleLabel::TemplateConnecting).unwrap(),
            100.0 * m.rate(RoleLabel::Reasoning).unwrap(),
            100.0 * m.rate(RoleLabel::Copied).unwrap(),
        )
        .unwrap();
    }
    let elapsed: Duration = runs.iter().map(|r| r.elapsed).sum();
    pass &= elapsed < Duration::from_secs(45 * 60);
    Verdict {
        id: 4,
        name: "SHAD discrimination quality",
        pass,
        detail: format!(
            "{detail}bounds Format < 5%, coarse < 15%; pipelines took {:.0}s (< 2700s)",
            elapsed.as_secs_f64()
        ),
        elapsed,
    }
}

/// Leading training samples plus the held-out tail, laid out so the
/// trailing-fraction split picks the tail.
fn fine_tune_data(run: &SeedRun) -> (Data, RunConfig) {
    let c = &run.data.corpus;
    let samples = c.samples[..TRAIN_SAMPLES]
        .iter()
        .chain(&c.samples[c.len() - HELDOUT_SAMPLES..])
        .cloned()
        .collect();
    let data = Data {
        corpus: Corpus {
            samples,
            provenance: c.provenance.clone(),
        },
        pretrain: Corpus {
            samples: Vec::new(),
            provenance: c.provenance.clone(),
        },
        vocab: run.data.vocab.clone(),
    };
    let mut cfg = run.cfg.clone();
    cfg.scheme.heldout_fraction = HELDOUT_SAMPLES as f64 / (TRAIN_SAMPLES + HELDOUT_SAMPLES) as f64;
    (data, cfg)
}

struct FineTune {
    sft: TrainHistory,
    rft_truth: TrainHistory,
    heldout_shad: f64,
    heldout_regex: f64,
}

fn fine_tune(run: &SeedRun) -> FineTune {
    let (data, mut cfg) = fine_tune_data(run);
    let mut go = |kind, labels| {
        cfg.scheme.kind = kind;
        cfg.scheme.labels = labels;
        cfg.scheme.tau = 1.0;
        pipeline::make_train(&cfg, &data, &run.base.params, Some(&run.shad.annotations))
            .expect("training run")
    };
    let sft = go(SchemeKind::Sft, LabelKind::Truth);
    let rft_truth = go(SchemeKind::Rft, LabelKind::Truth);
    let shad = go(SchemeKind::Rft, LabelKind::Shad);
    let regex = go(SchemeKind::Rft, LabelKind::Regex);
    let r = |t: &pipeline::TrainRun| {
        t.heldout
            .and_then(|e| e.l_r)
            .expect("held-out reasoning loss")
    };
    FineTune {
        heldout_shad: r(&shad),
        heldout_regex: r(&regex),
        sft: sft.history,
        rft_truth: rft_truth.history,
    }
}

fn criterion_5(tunes: &[FineTune], elapsed: Duration) -> Verdict {
    let mut pass = true;
    let mut detail = String::new();
    for (seed, f) in SEEDS.iter().zip(tunes) {
        let steps = (
            f.sft.rows.last().unwrap().step,
            f.rft_truth.rows.last().unwrap().step,
        );
        let (sb, sr) = (
            f.sft.final_loss("boilerplate").unwrap(),
            f.sft.final_loss("reasoning").unwrap(),
        );
        let (rb, rr) = (
            f.rft_truth.final_loss("boilerplate").unwrap(),
            f.rft_truth.final_loss("reasoning").unwrap(),
        );
        let ok = steps.0 == steps.1 && rr < sr && rb <= 1.2 * sb;
        pass &= ok;
        write!(
            detail,
            "seed {seed} @ step {}: reasoning SFT {sr:.4} vs RFT {rr:.4}, boilerplate SFT {sb:.4} vs RFT {rb:.4} ({:+.1}%); ",
            steps.0,
            100.0 * (rb / sb - 1.0)
        )
        .unwrap();
    }
    Verdict {
        id: 5,
        name: "RFT loss dynamics",
        pass: pass && elapsed < Duration::from_secs(30 * 60),
        detail: format!("{detail}need RFT reasoning < SFT and boilerplate <= +20%"),
        elapsed,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_6(tunes: &[FineTune], elapsed: Duration) -> Verdict {
    let shad: Vec<f64> = tunes.iter().map(|f| f.heldout_shad).collect();
    let regex: Vec<f64> = tunes.iter().map(|f| f.heldout_regex).collect();
    let (ms, mr) = (median(shad.clone()), median(regex.clone()));
    Verdict {
        id: 6,
        name: "label-source sensitivity",
        pass: ms <= mr,
        detail: format!(
            "held-out reasoning loss SHAD {shad:.4?} (median {ms:.4}) vs regex {regex:.4?} (median {mr:.4})"
        ),
        elapsed,
    }
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig {
        generator: GeneratorConfig::with_defaults(300, 5),
        ..Default::default()
    };
    cfg.pretraining.n_samples = 300;
    cfg.base.epochs = 1;
    cfg.shad.ratio = 0.05;
    cfg.train.epochs = 1;
    cfg.report.inv_taus = vec![0.0, 1.0];
    cfg
}

/// Everything a pipeline run writes, as bytes.
fn artifacts(cfg: &RunConfig) -> Vec<(&'static str, Vec<u8>)> {
    let data = pipeline::make_data(cfg).unwrap();
    let base = pipeline::make_base(cfg, &data).unwrap();
    let shad = pipeline::make_shad(cfg, &data, &base.params).unwrap();
    let run = pipeline::make_train(cfg, &data, &base.params, Some(&shad.annotations)).unwrap();
    let sweep =
        pipeline::make_tau_sweep(cfg, &data, &base.params, Some(&shad.annotations)).unwrap();
    let curves = loss_curves(&[&base.history, &run.history]).unwrap();
    vec![
        ("corpus", to_jsonl_bytes(&data.corpus.samples)),
        ("vocab", data.vocab.to_text().into_bytes()),
        ("theta_o", write_checkpoint(&base.params)),
        ("theta_s", write_checkpoint(&shad.theta_s)),
        ("annotations", shad.annotations.to_jsonl()),
        ("model", write_checkpoint(&run.params)),
        (
            "misclass",
            misclassification(&shad.annotations).unwrap().to_csv(),
        ),
        ("curves", curves.to_svg().into_bytes()),
        ("sweep", sweep_csv(&sweep)),
    ]
}

fn criterion_7() -> Verdict {
    let t = Instant::now();
    let cfg = small_config();
    let (a, b) = (artifacts(&cfg), artifacts(&cfg));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0)
        .collect();

    let data = pipeline::make_data(&cfg).unwrap();
    let base = pipeline::make_base(&cfg, &data).unwrap();
    let shad = pipeline::make_shad(&cfg, &data, &base.params).unwrap();
    let bytes = write_checkpoint(&shad.theta_s);
    let ckpt_ok = write_checkpoint(&read_checkpoint(&bytes, Some(&shad.theta_s.arch)).unwrap())
        == bytes
        && read_checkpoint(&bytes, None).unwrap().data == shad.theta_s.data;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    save_jsonl(&data.corpus, &path).unwrap();
    let corpus_ok = load_jsonl(&path).unwrap().samples == data.corpus.samples;
    let text = String::from_utf8(shad.annotations.to_jsonl()).unwrap();
    let back = AnnotatedCorpus::from_jsonl(&text).unwrap();
    let ann_ok = back == shad.annotations && back.to_jsonl() == shad.annotations.to_jsonl();
    let elapsed = t.elapsed();
    Verdict {
        id: 7,
        name: "determinism and round-trips",
        pass: differing.is_empty() && ckpt_ok && corpus_ok && ann_ok && elapsed < Duration::from_secs(300),
        detail: format!(
            "{} artifacts compared, differing {differing:?}; checkpoint {}, corpus JSONL {}, annotations JSONL {}",
            a.len(),
            ok_str(ckpt_ok),
            ok_str(corpus_ok),
            ok_str(ann_ok)
        ),
        elapsed,
    }
}

fn ok_str(b: bool) -> &'static str {
    if b {
        "lossless"
    } else {
        "LOSSY"
    }
}

fn criterion_8() -> Verdict {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "workdir = \"run\"\n[generator]\nn_samples = 1000\nseed = 1\n",
    )
    .unwrap();
    let commands: [&[&str]; 5] = [
        &["gen-data"],
        &["train-base"],
        &["shad"],
        &["train"],
        &["report", "--kind", "misclass"],
    ];
    let mut failures = Vec::new();
    for args in commands {
        let out = Command::new(env!("CARGO_BIN_EXE_shad"))
            .current_dir(dir.path())
            .env("RUST_LOG", "warn")
            .env_remove("SHAD_WORKDIR")
            .args(["--config", "run.toml"])
            .args(args)
            .output()
            .unwrap();
        if !out.status.success() {
            failures.push(format!(
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    let run = dir.path().join("run");
    let report_dir = fs::read_dir(run.join("reports"))
        .ok()
        .and_then(|mut rd| rd.next())
        .and_then(|e| e.ok())
        .map(|e| e.path());
    let mut expected = vec![
        run.join("data/corpus.jsonl"),
        run.join("data/pretrain.jsonl"),
        run.join("data/vocab.txt"),
        run.join("base/theta_o.ckpt"),
        run.join("base/history.csv"),
        run.join("shad/shuffled.jsonl"),
        run.join("shad/theta_s.ckpt"),
        run.join("shad/annotations.jsonl"),
        run.join("train/rft-tau1-shad/model.ckpt"),
        run.join("train/rft-tau1-shad/history.csv"),
        run.join("train/rft-tau1-shad/eval.json"),
    ];
    if let Some(r) = &report_dir {
        expected.extend(["misclass.csv", "misclass.json"].map(|f| r.join(f)));
    }
    for stage in ["data", "base", "shad", "train/rft-tau1-shad"] {
        expected.extend(["config.toml", "fingerprints.json"].map(|f| run.join(stage).join(f)));
    }
    let missing: Vec<String> = expected
        .iter()
        .filter(|p| !p.exists())
        .map(|p| {
            p.strip_prefix(dir.path())
                .unwrap_or(p)
                .display()
                .to_string()
        })
        .collect();
    let elapsed = t.elapsed();
    Verdict {
        id: 8,
        name: "end-to-end smoke",
        pass: failures.is_empty()
            && report_dir.is_some()
            && missing.is_empty()
            && elapsed < Duration::from_secs(600),
        detail: format!(
            "5 commands on 1000 samples: {} failed, {} artifacts checked, missing {missing:?}{}",
            failures.len(),
            expected.len(),
            failures
                .iter()
                .map(|f| format!("; {f}"))
                .collect::<String>()
        ),
        elapsed,
    }
}

fn main() {
    let mut verdicts = Vec::new();
    let mut record = |v: Verdict| {
        report(&v);
        verdicts.push(v);
    };
    record(criterion_1());
    record(criterion_2());
    record(criterion_7());
    record(criterion_8());

    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| seed_run(s)).collect();
    record(criterion_3(&runs[0]));
    record(criterion_4(&runs));
    let t = Instant::now();
    let tunes: Vec<FineTune> = runs.iter().map(fine_tune).collect();
    let elapsed = t.elapsed();
    record(criterion_5(&tunes, elapsed));
    record(criterion_6(&tunes, elapsed));

    verdicts.sort_by_key(|v| v.id);
    println!("\nsummary:");
    for v in &verdicts {
        report(v);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!(
        "{} of {} criteria passed",
        verdicts.len() - failed,
        verdicts.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
