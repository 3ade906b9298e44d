//! The five commands, as write-once stage directories under the workdir.
//!
//! ```text
//! <workdir>/data/                corpus.jsonl pretrain.jsonl vocab.txt
//! <workdir>/base/                theta_o.ckpt history.csv
//! <workdir>/shad/                shuffled.jsonl theta_s.ckpt annotations.jsonl
//! <workdir>/train/<run>/         model.ckpt history.csv eval.json
//! <workdir>/reports/<kind>-<key>/
//! ```
//!
//! Every stage directory also holds `config.toml` (the frozen run config)
//! and `fingerprints.json` (SHA-256 of each artifact plus the key of the
//! inputs that produced them). A directory is built under a temporary name
//! and renamed into place, so it either exists complete or not at all.
//! Rerunning a command with the same inputs is a no-op; rerunning it with
//! different inputs is refused.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use shad_core::corpus::{load_jsonl, save_jsonl, save_shuffled_jsonl};
use shad_core::fmt::sig9;
use shad_core::lm::{load_checkpoint, save_checkpoint, ModelParams, TrainHistory, Vocab};
use shad_core::report::{
    loss_curves_named, misclassification, sweep_csv, MetricReport, PROXY_METRIC,
};
use shad_core::shad::{
    calibrate_format_threshold, load_annotations, save_annotations, AnnotatedCorpus,
};

use crate::config::{LabelKind, RunConfig};
use crate::pipeline::{self, Data};

/// An upstream artifact is absent; `command` produces it.
#[derive(Debug)]
pub struct MissingArtifact {
    pub artifact: String,
    pub command: &'static str,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing {}; run {} first", self.artifact, self.command)
    }
}

impl std::error::Error for MissingArtifact {}

/// A stage directory exists but was produced from different inputs.
#[derive(Debug)]
pub struct StageConflict {
    pub dir: PathBuf,
}

impl fmt::Display for StageConflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} was produced from different inputs; outputs are write-once, use another workdir",
            self.dir.display()
        )
    }
}

impl std::error::Error for StageConflict {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub stage: String,
    /// SHA-256 over the config sections and upstream artifacts this stage
    /// read.
    pub inputs: String,
    pub artifacts: BTreeMap<String, String>,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

/// What a command did, printed as JSON on success.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub command: String,
    pub status: &'static str,
    pub dir: PathBuf,
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn key_of(value: &serde_json::Value) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("json serializes"))
}

pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.workdir.clone(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn base_dir(&self) -> PathBuf {
        self.root.join("base")
    }
    pub fn shad_dir(&self) -> PathBuf {
        self.root.join("shad")
    }
    pub fn train_root(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn reports_root(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn read_fingerprints(dir: &Path) -> Result<Option<Fingerprints>> {
    let path = dir.join("fingerprints.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    Ok(Some(
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    ))
}

/// Reads a finished stage, checking every artifact against its recorded
/// hash.
fn upstream(dir: &Path, artifact: &str, command: &'static str) -> Result<Fingerprints> {
    let missing = || MissingArtifact {
        artifact: format!("{artifact} ({})", dir.display()),
        command,
    };
    let fp = read_fingerprints(dir)?.ok_or_else(missing)?;
    for (name, hash) in &fp.artifacts {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|_| missing())?;
        if sha256_hex(&bytes) != *hash {
            bail!(
                "{} does not match its recorded fingerprint; it was modified after being written",
                path.display()
            );
        }
    }
    Ok(fp)
}

/// Existing stage with these inputs: `Some(outcome)`. Absent: `None`.
fn existing(command: &str, dir: &Path, inputs: &str) -> Result<Option<Outcome>> {
    match read_fingerprints(dir)? {
        Some(fp) if fp.inputs == inputs => Ok(Some(Outcome {
            command: command.into(),
            status: "up-to-date",
            dir: dir.to_path_buf(),
            artifacts: fp.artifacts,
        })),
        Some(_) => Err(StageConflict {
            dir: dir.to_path_buf(),
        }
        .into()),
        None if dir.exists() => bail!(
            "{} exists but has no fingerprints.json (interrupted or foreign); remove it",
            dir.display()
        ),
        None => Ok(None),
    }
}

/// Runs `build` in a scratch directory, then records fingerprints and
/// moves the result to `dir`.
fn commit(
    command: &str,
    dir: &Path,
    inputs: String,
    cfg: &RunConfig,
    build: impl FnOnce(&Path) -> Result<BTreeMap<String, serde_json::Value>>,
) -> Result<Outcome> {
    let parent = dir.parent().context("stage directory has no parent")?;
    fs::create_dir_all(parent)?;
    let name = dir
        .file_name()
        .context("stage directory has no name")?
        .to_string_lossy();
    let tmp = parent.join(format!(".{name}.partial"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let notes = build(&tmp)?;
    let mut artifacts = BTreeMap::new();
    let mut names: Vec<_> = fs::read_dir(&tmp)?.collect::<std::io::Result<Vec<_>>>()?;
    names.sort_by_key(|e| e.file_name());
    for entry in names {
        let file = entry.file_name().to_string_lossy().into_owned();
        artifacts.insert(file, sha256_hex(&fs::read(entry.path())?));
    }
    fs::write(tmp.join("config.toml"), cfg.to_toml())?;
    let fp = Fingerprints {
        stage: command.into(),
        inputs,
        artifacts: artifacts.clone(),
        notes,
    };
    let mut json = serde_json::to_vec_pretty(&fp)?;
    json.push(b'\n');
    fs::write(tmp.join("fingerprints.json"), json)?;
    fs::rename(&tmp, dir).with_context(|| format!("moving results into {}", dir.display()))?;
    Ok(Outcome {
        command: command.into(),
        status: "created",
        dir: dir.to_path_buf(),
        artifacts,
    })
}

fn load_data(ws: &Workspace) -> Result<(Data, Fingerprints)> {
    let dir = ws.data_dir();
    let fp = upstream(&dir, "corpus and vocabulary", "gen-data")?;
    let data = Data {
        corpus: load_jsonl(&dir.join("corpus.jsonl"))?,
        pretrain: load_jsonl(&dir.join("pretrain.jsonl"))?,
        vocab: Vocab::load(&dir.join("vocab.txt"))?,
    };
    Ok((data, fp))
}

fn load_base(ws: &Workspace, data: &Data) -> Result<(ModelParams, Fingerprints)> {
    let dir = ws.base_dir();
    let fp = upstream(&dir, "θ_o checkpoint", "train-base")?;
    let params = load_checkpoint(&dir.join("theta_o.ckpt"), None)?;
    anyhow::ensure!(
        params.arch.vocab_size == data.vocab.len(),
        "θ_o expects {} tokens but the vocabulary has {}",
        params.arch.vocab_size,
        data.vocab.len()
    );
    Ok((params, fp))
}

fn load_shad(ws: &Workspace) -> Result<(AnnotatedCorpus, Fingerprints)> {
    let dir = ws.shad_dir();
    let fp = upstream(&dir, "SHAD annotations", "shad")?;
    Ok((load_annotations(&dir.join("annotations.jsonl"))?, fp))
}

pub fn gen_data(cfg: &RunConfig) -> Result<Outcome> {
    let ws = Workspace::new(cfg);
    let dir = ws.data_dir();
    let inputs = key_of(&json!({
        "generator": cfg.generator,
        "pretraining": cfg.pretraining,
        "vocab": cfg.vocab,
    }));
    if let Some(o) = existing("gen-data", &dir, &inputs)? {
        return Ok(o);
    }
    let data = pipeline::make_data(cfg)?;
    commit("gen-data", &dir, inputs, cfg, |tmp| {
        save_jsonl(&data.corpus, &tmp.join("corpus.jsonl"))?;
        save_jsonl(&data.pretrain, &tmp.join("pretrain.jsonl"))?;
        data.vocab.save(&tmp.join("vocab.txt"))?;
        Ok(BTreeMap::from([
            ("n_samples".into(), json!(data.corpus.len())),
            ("n_pretrain".into(), json!(data.pretrain.len())),
            ("vocab_size".into(), json!(data.vocab.len())),
        ]))
    })
}

pub fn train_base(cfg: &RunConfig) -> Result<Outcome> {
    let ws = Workspace::new(cfg);
    let (data, data_fp) = load_data(&ws)?;
    let dir = ws.base_dir();
    let inputs = key_of(&json!({
        "data": data_fp.artifacts,
        "model": cfg.model,
        "base": cfg.base,
        "grad_check": cfg.grad_check,
    }));
    if let Some(o) = existing("train-base", &dir, &inputs)? {
        return Ok(o);
    }
    let base = pipeline::make_base(cfg, &data)?;
    commit("train-base", &dir, inputs, cfg, |tmp| {
        save_checkpoint(&base.params, &tmp.join("theta_o.ckpt"))?;
        fs::write(tmp.join("history.csv"), base.history.to_csv())?;
        Ok(BTreeMap::from([
            ("grad_check_max_rel_error".into(), json!(base.grad_check)),
            ("final_loss".into(), json!(base.history.final_loss("all"))),
        ]))
    })
}

pub fn shad(cfg: &RunConfig) -> Result<Outcome> {
    let ws = Workspace::new(cfg);
    let (data, data_fp) = load_data(&ws)?;
    let (theta_o, base_fp) = load_base(&ws, &data)?;
    let dir = ws.shad_dir();
    let inputs = key_of(&json!({
        "data": data_fp.artifacts,
        "base": base_fp.artifacts,
        "shad": cfg.shad,
    }));
    if let Some(o) = existing("shad", &dir, &inputs)? {
        return Ok(o);
    }
    let out = pipeline::make_shad(cfg, &data, &theta_o)?;
    commit("shad", &dir, inputs, cfg, |tmp| {
        save_shuffled_jsonl(&out.shuffled, &tmp.join("shuffled.jsonl"))?;
        save_checkpoint(&out.theta_s, &tmp.join("theta_s.ckpt"))?;
        save_annotations(&out.annotations, &tmp.join("annotations.jsonl"))?;
        Ok(BTreeMap::from([
            ("annotated".into(), json!(out.annotations.samples.len())),
            ("errors".into(), json!(out.annotations.errors)),
        ]))
    })
}

pub fn train(cfg: &RunConfig) -> Result<Outcome> {
    let ws = Workspace::new(cfg);
    let (data, data_fp) = load_data(&ws)?;
    let (theta_o, base_fp) = load_base(&ws, &data)?;
    let shad = match cfg.scheme.labels {
        LabelKind::Shad => Some(load_shad(&ws)?),
        _ => None,
    };
    let dir = ws.train_root().join(cfg.scheme.run_name());
    let inputs = key_of(&json!({
        "data": data_fp.artifacts,
        "base": base_fp.artifacts,
        "shad": shad.as_ref().map(|s| &s.1.artifacts),
        "train": cfg.train,
        "scheme": cfg.scheme,
    }));
    if let Some(o) = existing("train", &dir, &inputs)? {
        return Ok(o);
    }
    let run = pipeline::make_train(cfg, &data, &theta_o, shad.as_ref().map(|s| &s.0))?;
    commit("train", &dir, inputs, cfg, |tmp| {
        save_checkpoint(&run.params, &tmp.join("model.ckpt"))?;
        fs::write(tmp.join("history.csv"), run.history.to_csv())?;
        let mut eval = serde_json::to_vec_pretty(&json!({ "heldout": run.heldout }))?;
        eval.push(b'\n');
        fs::write(tmp.join("eval.json"), eval)?;
        Ok(BTreeMap::new())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportKind {
    Misclass,
    Curves,
    TauSweep,
}

impl ReportKind {
    fn as_str(self) -> &'static str {
        match self {
            ReportKind::Misclass => "misclass",
            ReportKind::Curves => "curves",
            ReportKind::TauSweep => "tau-sweep",
        }
    }
}

fn write_json(path: &Path, report: &MetricReport) -> Result<()> {
    fs::write(path, report.to_json())?;
    Ok(())
}

pub fn report(cfg: &RunConfig, kind: ReportKind) -> Result<Outcome> {
    let ws = Workspace::new(cfg);
    let command = format!("report {}", kind.as_str());
    let report_dir = |inputs: &str| {
        ws.reports_root()
            .join(format!("{}-{}", kind.as_str(), &inputs[..12]))
    };
    match kind {
        ReportKind::Misclass => {
            let (annotated, fp) = load_shad(&ws)?;
            let inputs = key_of(
                &json!({ "shad": fp.artifacts, "candidates": cfg.shad.threshold_candidates }),
            );
            let dir = report_dir(&inputs);
            if let Some(o) = existing(&command, &dir, &inputs)? {
                return Ok(o);
            }
            let m = misclassification(&annotated)?;
            let mut report = MetricReport {
                fingerprint: fp.artifacts.clone(),
                misclassification: Some(m.clone()),
                ..Default::default()
            };
            let mut notes = BTreeMap::new();
            match calibrate_format_threshold(annotated.records(), &cfg.shad.threshold_candidates) {
                Ok((rows, best)) => {
                    notes.insert("best_format_threshold".into(), json!(best));
                    report.format_threshold = Some(rows);
                }
                Err(e) => report
                    .warnings
                    .push(format!("format threshold calibration skipped: {e}")),
            }
            commit(&command, &dir, inputs, cfg, |tmp| {
                fs::write(tmp.join("misclass.csv"), m.to_csv())?;
                if let Some(rows) = &report.format_threshold {
                    let mut csv = String::from("threshold,accuracy,n\n");
                    for r in rows {
                        csv.push_str(&format!(
                            "{},{},{}\n",
                            sig9(r.threshold),
                            sig9(r.accuracy),
                            r.n
                        ));
                    }
                    fs::write(tmp.join("format_threshold.csv"), csv)?;
                }
                write_json(&tmp.join("misclass.json"), &report)?;
                Ok(notes)
            })
        }
        ReportKind::Curves => {
            let root = ws.train_root();
            let mut runs: Vec<PathBuf> = match fs::read_dir(&root) {
                Ok(rd) => rd
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.join("fingerprints.json").exists())
                    .collect(),
                Err(_) => Vec::new(),
            };
            runs.sort();
            if runs.is_empty() {
                return Err(MissingArtifact {
                    artifact: format!("training histories ({})", root.display()),
                    command: "train",
                }
                .into());
            }
            let mut histories = Vec::new();
            let mut names = Vec::new();
            let mut fingerprint = BTreeMap::new();
            for run in &runs {
                let fp = upstream(run, "training history", "train")?;
                let name = run
                    .file_name()
                    .expect("named")
                    .to_string_lossy()
                    .into_owned();
                fingerprint.insert(
                    format!("{name}/history.csv"),
                    fp.artifacts["history.csv"].clone(),
                );
                histories.push(TrainHistory::from_csv(&fs::read(run.join("history.csv"))?)?);
                names.push(name);
            }
            let inputs = key_of(&json!({ "histories": fingerprint }));
            let dir = report_dir(&inputs);
            if let Some(o) = existing(&command, &dir, &inputs)? {
                return Ok(o);
            }
            let named: Vec<(&str, &TrainHistory)> =
                names.iter().map(String::as_str).zip(&histories).collect();
            let curves = loss_curves_named(&named)?;
            let report = MetricReport {
                fingerprint,
                loss_curves: Some(curves.rows.clone()),
                warnings: curves.warnings.clone(),
                ..Default::default()
            };
            commit(&command, &dir, inputs, cfg, |tmp| {
                fs::write(tmp.join("curves.csv"), curves.to_csv())?;
                fs::write(tmp.join("curves.svg"), curves.to_svg())?;
                write_json(&tmp.join("curves.json"), &report)?;
                Ok(BTreeMap::new())
            })
        }
        ReportKind::TauSweep => {
            let (data, data_fp) = load_data(&ws)?;
            let (theta_o, base_fp) = load_base(&ws, &data)?;
            let shad = match cfg.scheme.labels {
                LabelKind::Shad => Some(load_shad(&ws)?),
                _ => None,
            };
            let mut fingerprint = BTreeMap::new();
            for (stage, fp) in [
                ("data", Some(&data_fp)),
                ("base", Some(&base_fp)),
                ("shad", shad.as_ref().map(|s| &s.1)),
            ] {
                for (name, hash) in fp.map(|f| &f.artifacts).into_iter().flatten() {
                    fingerprint.insert(format!("{stage}/{name}"), hash.clone());
                }
            }
            let inputs = key_of(&json!({
                "upstream": fingerprint,
                "train": cfg.train,
                "labels": cfg.scheme.labels,
                "heldout_fraction": cfg.scheme.heldout_fraction,
                "inv_taus": cfg.report.inv_taus,
            }));
            let dir = report_dir(&inputs);
            if let Some(o) = existing(&command, &dir, &inputs)? {
                return Ok(o);
            }
            let rows = pipeline::make_tau_sweep(cfg, &data, &theta_o, shad.as_ref().map(|s| &s.0))?;
            let report = MetricReport {
                fingerprint,
                sweep_metric: Some(PROXY_METRIC.into()),
                sweep: Some(rows.clone()),
                ..Default::default()
            };
            commit(&command, &dir, inputs, cfg, |tmp| {
                fs::write(tmp.join("tau_sweep.csv"), sweep_csv(&rows))?;
                write_json(&tmp.join("tau_sweep.json"), &report)?;
                Ok(BTreeMap::new())
            })
        }
    }
}
