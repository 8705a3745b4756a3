//! Metrics, experiment runs, sweeps and report emission.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use slscom_autograd::{ParamStore, Tensor};

use crate::checkpoint;
use crate::config::{ExperimentConfig, HybridCode, Mode, TRANSFER_STANDIN};
use crate::data::{self, make_splits, Dataset, Splits};
use crate::digital::{hybrid_transmit, ChannelCode, DigitalLink, MuLaw, NullCode, RegularLdpc};
use crate::error::{Error, Result};
use crate::finetune::{
    classify, evaluate, features, finetune_run, save_finetuned, supervised_pretrain, FinetuneOutcome, FinetuneRng, FinetuneStep, EVAL_BATCH,
};
use crate::link::Link;
use crate::nn::{Component, Model};
use crate::pretrain::{pretrain_run, PretrainRng, PretrainStep};
use crate::seed::{derive_rng, derive_seed, Rng};

/// Fraction of rows whose argmax equals the label. Ties go to the lowest class index.
pub fn top1_accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::LengthError("top-1 accuracy of an empty batch".into()));
    }
    if probs.ndim() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::LengthError(format!(
            "{} labels for predictions of shape {:?}",
            labels.len(),
            probs.shape()
        )));
    }
    let hits = probs.rows().zip(labels).filter(|(row, &l)| argmax(row) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

// ---- reports ----

/// One trained model evaluated once at one test SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub mode: Mode,
    pub labels: usize,
    pub train_rep: usize,
    pub test_rep: usize,
    pub seed: u64,
    pub train_snr: f64,
    pub test_snr: f64,
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub mode: Mode,
    pub labels: usize,
    pub train_snr: f64,
    pub test_snr: f64,
    pub mean_top1: f64,
    pub std_top1: f64,
    pub runs: usize,
}

pub const AGGREGATE_HEADER: [&str; 7] = ["mode", "labels", "train_snr", "test_snr", "mean_top1", "std_top1", "runs"];
pub const RUN_HEADER: [&str; 8] = ["mode", "labels", "train_rep", "test_rep", "seed", "train_snr", "test_snr", "top1"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub fingerprint: String,
    pub mode: Mode,
    pub seed: u64,
    pub labels: usize,
    pub train_snr: f64,
    pub rows: Vec<RunRow>,
    /// One trace per training repetition (empty when the mode skips pre-training
    /// or the encoder came from the cache of an earlier run).
    pub pretrain_traces: Vec<Vec<PretrainStep>>,
    pub finetune_traces: Vec<Vec<FinetuneStep>>,
    pub best_epochs: Vec<usize>,
    /// Clipped feature values in the hybrid baseline, summed over all evaluations.
    pub saturated: usize,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        aggregate(&self.rows)
    }

    /// Mean Top-1 per test SNR, in configured order.
    pub fn per_snr(&self) -> Vec<(f64, f64)> {
        self.aggregate().iter().map(|r| (r.test_snr, r.mean_top1)).collect()
    }

    pub fn mean_top1(&self) -> f64 {
        self.rows.iter().map(|r| r.top1).sum::<f64>() / self.rows.len() as f64
    }
}

/// Group by (mode, labels, train SNR, test SNR) in first-seen order. The standard
/// deviation is the sample one (`n - 1`), zero for a single run.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<((Mode, usize, u64, u64), Vec<f64>)> = vec![];
    for r in rows {
        let key = (r.mode, r.labels, r.train_snr.to_bits(), r.test_snr.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.top1),
            None => groups.push((key, vec![r.top1])),
        }
    }
    groups
        .into_iter()
        .map(|((mode, labels, tr, te), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                mode,
                labels,
                train_snr: f64::from_bits(tr),
                test_snr: f64::from_bits(te),
                mean_top1: mean,
                std_top1: std,
                runs: v.len(),
            }
        })
        .collect()
}

fn fingerprint_line(fingerprints: &[&str]) -> String {
    format!("# fingerprint={}\n", fingerprints.join(" "))
}

fn write_csv(path: &Path, fingerprints: &[&str], header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut out = fingerprint_line(fingerprints).into_bytes();
    out.extend(body);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Fingerprints from the comment line and the data records.
fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or_default();
    let fps = first
        .strip_prefix("# fingerprint=")
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .unwrap_or_default();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let records = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((fps, records))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::BadValue {
            key: format!("{} column {i}", path.display()),
            value: rec.get(i).unwrap_or_default().to_string(),
            reason: "unparseable field".into(),
        })
}

fn aggregate_records(rows: &[AggregateRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.mode.to_string(),
                r.labels.to_string(),
                r.train_snr.to_string(),
                r.test_snr.to_string(),
                r.mean_top1.to_string(),
                r.std_top1.to_string(),
                r.runs.to_string(),
            ]
        })
        .collect()
}

pub fn write_aggregate_csv(path: &Path, fingerprints: &[&str], rows: &[AggregateRow]) -> Result<()> {
    write_csv(path, fingerprints, &AGGREGATE_HEADER, aggregate_records(rows))
}

pub fn read_aggregate_csv(path: &Path) -> Result<(Vec<String>, Vec<AggregateRow>)> {
    let (fps, recs) = read_csv(path)?;
    let rows = recs
        .iter()
        .map(|r| {
            Ok(AggregateRow {
                mode: field(r, 0, path)?,
                labels: field(r, 1, path)?,
                train_snr: field(r, 2, path)?,
                test_snr: field(r, 3, path)?,
                mean_top1: field(r, 4, path)?,
                std_top1: field(r, 5, path)?,
                runs: field(r, 6, path)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((fps, rows))
}

/// Files of one run: `runs.csv`, `aggregate.csv`, per-repetition trace CSVs and the
/// canonical config text.
pub fn write_run(dir: &Path, report: &RunReport, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let fp = [report.fingerprint.as_str()];
    fs::write(dir.join("config.txt"), format!("{}{}", fingerprint_line(&fp), cfg.to_text()))?;
    let runs = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.mode.to_string(),
                r.labels.to_string(),
                r.train_rep.to_string(),
                r.test_rep.to_string(),
                r.seed.to_string(),
                r.train_snr.to_string(),
                r.test_snr.to_string(),
                r.top1.to_string(),
            ]
        })
        .collect();
    write_csv(&dir.join("runs.csv"), &fp, &RUN_HEADER, runs)?;
    write_aggregate_csv(&dir.join("aggregate.csv"), &fp, &report.aggregate())?;
    write_traces(dir, report)
}

/// Loss-trace CSVs, one file per training repetition and stage.
pub fn write_traces(dir: &Path, report: &RunReport) -> Result<()> {
    let fp = [report.fingerprint.as_str()];
    for (t, trace) in report.pretrain_traces.iter().enumerate().filter(|(_, t)| !t.is_empty()) {
        let rows = trace
            .iter()
            .map(|s| vec![s.step.to_string(), s.l_pre.to_string(), s.l_c.to_string(), s.l_r.to_string()])
            .collect();
        write_csv(&dir.join(format!("pretrain_trace_t{t}.csv")), &fp, &["step", "L_pre", "L_c", "L_r"], rows)?;
    }
    for (t, trace) in report.finetune_traces.iter().enumerate() {
        let rows = trace
            .iter()
            .map(|s| {
                vec![
                    s.step.to_string(),
                    s.l_app.to_string(),
                    s.l_mse.to_string(),
                    s.l_ce.to_string(),
                    s.train_acc.to_string(),
                ]
            })
            .collect();
        write_csv(
            &dir.join(format!("finetune_trace_t{t}.csv")),
            &fp,
            &["step", "L_app", "L_mse", "L_ce", "train_acc"],
            rows,
        )?;
    }
    Ok(())
}

/// Rebuild a report from the files written by [`write_run`].
pub fn load_run(dir: &Path) -> Result<RunReport> {
    let path = dir.join("runs.csv");
    let (fps, recs) = read_csv(&path)?;
    let rows: Vec<RunRow> = recs
        .iter()
        .map(|r| {
            Ok(RunRow {
                mode: field(r, 0, &path)?,
                labels: field(r, 1, &path)?,
                train_rep: field(r, 2, &path)?,
                test_rep: field(r, 3, &path)?,
                seed: field(r, 4, &path)?,
                train_snr: field(r, 5, &path)?,
                test_snr: field(r, 6, &path)?,
                top1: field(r, 7, &path)?,
            })
        })
        .collect::<Result<_>>()?;
    let first = rows
        .first()
        .ok_or_else(|| Error::LengthError(format!("{} holds no runs", path.display())))?
        .clone();
    let mut pretrain_traces = vec![];
    let mut finetune_traces = vec![];
    for t in 0.. {
        let p = dir.join(format!("pretrain_trace_t{t}.csv"));
        if !p.exists() {
            break;
        }
        let (_, recs) = read_csv(&p)?;
        pretrain_traces.push(
            recs.iter()
                .map(|r| {
                    Ok(PretrainStep {
                        step: field(r, 0, &p)?,
                        l_pre: field(r, 1, &p)?,
                        l_c: field(r, 2, &p)?,
                        l_r: field(r, 3, &p)?,
                    })
                })
                .collect::<Result<_>>()?,
        );
    }
    for t in 0.. {
        let p = dir.join(format!("finetune_trace_t{t}.csv"));
        if !p.exists() {
            break;
        }
        let (_, recs) = read_csv(&p)?;
        finetune_traces.push(
            recs.iter()
                .map(|r| {
                    Ok(FinetuneStep {
                        step: field(r, 0, &p)?,
                        l_app: field(r, 1, &p)?,
                        l_mse: field(r, 2, &p)?,
                        l_ce: field(r, 3, &p)?,
                        train_acc: field(r, 4, &p)?,
                    })
                })
                .collect::<Result<_>>()?,
        );
    }
    Ok(RunReport {
        fingerprint: fps.into_iter().next().unwrap_or_default(),
        mode: first.mode,
        seed: first.seed,
        labels: first.labels,
        train_snr: first.train_snr,
        rows,
        pretrain_traces,
        finetune_traces,
        best_epochs: vec![],
        saturated: 0,
        wall_seconds: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub labels_table: PathBuf,
    pub snr_table: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Accuracy-vs-labels and accuracy-vs-SNR tables plus SVG plots drawn from them and
/// from the loss traces. The labels table keeps, per report, the test SNR equal to
/// the training SNR (or the first one evaluated).
pub fn emit_report(reports: &[RunReport], dir: &Path) -> Result<ReportFiles> {
    let fps: Vec<&str> = reports.iter().map(|r| r.fingerprint.as_str()).collect();
    let mut labels_rows = vec![];
    let mut snr_rows = vec![];
    for r in reports {
        let agg = r.aggregate();
        let pick = agg.iter().find(|a| a.test_snr == a.train_snr).or_else(|| agg.first());
        labels_rows.extend(pick.cloned());
        snr_rows.extend(agg);
    }
    let labels_table = dir.join("accuracy_vs_labels.csv");
    let snr_table = dir.join("accuracy_vs_snr.csv");
    write_aggregate_csv(&labels_table, &fps, &labels_rows)?;
    write_aggregate_csv(&snr_table, &fps, &snr_rows)?;

    let (_, labels_rows) = read_aggregate_csv(&labels_table)?;
    let (_, snr_rows) = read_aggregate_csv(&snr_table)?;
    let mut by_mode: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &labels_rows {
        by_mode.entry(r.mode.to_string()).or_default().push((r.labels as f64, r.mean_top1));
    }
    let mut by_run: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &snr_rows {
        by_run
            .entry(format!("{} {}", r.mode, r.labels))
            .or_default()
            .push((r.test_snr, r.mean_top1));
    }
    let mut losses: Vec<(String, Vec<(f64, f64)>)> = vec![];
    for r in reports {
        if let Some(t) = r.pretrain_traces.first().filter(|t| !t.is_empty()) {
            losses.push((format!("{} {} L_pre", r.mode, r.labels), t.iter().map(|s| (s.step as f64, s.l_pre)).collect()));
        }
        if let Some(t) = r.finetune_traces.first().filter(|t| !t.is_empty()) {
            losses.push((format!("{} {} L_app", r.mode, r.labels), t.iter().map(|s| (s.step as f64, s.l_app)).collect()));
        }
    }
    let plots = vec![
        (dir.join("accuracy_vs_labels.svg"), svg_plot("Top-1 vs labeled samples", "labeled samples", "top-1", &by_mode.into_iter().collect::<Vec<_>>(), &fps)),
        (dir.join("accuracy_vs_snr.svg"), svg_plot("Top-1 vs test SNR", "test SNR (dB)", "top-1", &by_run.into_iter().collect::<Vec<_>>(), &fps)),
        (dir.join("train_loss.svg"), svg_plot("Training losses", "step", "loss", &losses, &fps)),
    ];
    let mut paths = vec![];
    for (p, body) in plots {
        fs::write(&p, body)?;
        paths.push(p);
    }
    Ok(ReportFiles {
        labels_table,
        snr_table,
        plots: paths,
    })
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Minimal line chart.
pub fn svg_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)], fingerprints: &[&str]) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n<!-- fingerprint={} -->\n",
        fingerprints.join(" ")
    );
    out += &format!("<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", w / 2.0, xml(title));
    out += &format!(
        "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - m,
        w - m,
        h - m,
        h - m
    );
    out += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", w / 2.0, h - 20.0, xml(xlabel));
    out += &format!("<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>\n", h / 2.0, h / 2.0, xml(ylabel));
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        out += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\">{}</text>\n", sx(v), h - m + 16.0, tick(v));
    }
    for v in [y0, y1] {
        out += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", m - 4.0, sy(v) + 4.0, tick(v));
    }
    for (i, (name, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        out += &format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", path.join(" "));
        if s.len() < 30 {
            for &(x, y) in s {
                out += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n", sx(x), sy(y));
            }
        }
        out += &format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            w - m - 150.0,
            m + 14.0 * i as f64,
            xml(name)
        );
    }
    out += "</svg>\n";
    out
}

fn tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e6 {
        format!("{v}")
    } else {
        format!("{v:.3}")
    }
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

// ---- experiment harness ----

/// Datasets plus caches shared by the runs of a sweep.
pub struct Harness {
    pub train: Dataset,
    pub test: Dataset,
    /// Source of D_r for `slscom_ds`.
    pub pretrain_train: Option<Dataset>,
    encoders: HashMap<String, (ParamStore, Vec<PretrainStep>)>,
}

fn check_shape(cfg: &ExperimentConfig, d: &Dataset) -> Result<()> {
    if d.shape != cfg.image_shape || d.classes != cfg.classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset has shape {:?} with {} classes, config expects {:?} with {}",
            d.shape, d.classes, cfg.image_shape, cfg.classes
        )));
    }
    Ok(())
}

/// Config reduced to what pre-training depends on.
fn pretrain_key(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.mode = if cfg.mode == Mode::SlscomDs { Mode::SlscomDs } else { Mode::Slscom };
    c.split.labeled = 1;
    c.split.excluded_classes.clear();
    c.split.per_class_uniform = false;
    c.split.val_fraction = 0.0;
    c.test_snrs = vec![0.0];
    c.test_limit = 0;
    c.repeats_train = 1;
    c.repeats_test = 1;
    c.hyper.epochs_finetune = 0;
    c.hyper.mu = 1.0;
    c.hyper.train_snr_db = 0.0;
    c.pretrained_path = None;
    c.hybrid_code = HybridCode::Null;
    c.clip_sigmas = 1.0;
    c.checkpoint_every = 0;
    c.fingerprint()
}

/// Seed of training repetition `rep`.
pub fn train_seed(master: u64, rep: usize) -> u64 {
    derive_seed(master, &format!("train/{rep}"))
}

/// Seed of test repetition `rep` of a model trained with `train_seed`.
pub fn test_seed(train_seed: u64, rep: usize) -> u64 {
    derive_seed(train_seed, &format!("test/{rep}"))
}

impl Harness {
    pub fn new(train: Dataset, test: Dataset, pretrain_train: Option<Dataset>) -> Self {
        Self {
            train,
            test,
            pretrain_train,
            encoders: HashMap::new(),
        }
    }

    /// Load the datasets named by `cfg`.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let (train, test) = data::load(cfg.dataset, cfg.data_dir.as_deref(), (cfg.synthetic_train, cfg.synthetic_test), "data")?;
        let pretrain_train = match cfg.pretrain_dataset {
            Some(kind) => Some(
                data::load(kind, cfg.pretrain_data_dir.as_deref(), (cfg.synthetic_train, cfg.synthetic_test), "pretrain")?.0,
            ),
            None => None,
        };
        Ok(Self::new(train, test, pretrain_train))
    }

    pub fn splits(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Splits> {
        make_splits(
            &self.train,
            self.test.len(),
            &cfg.split,
            cfg.tscom_standin_labels,
            cfg.test_limit,
            &mut derive_rng(seed, "data/split"),
        )
    }

    /// Store holding the pre-trained encoder for training repetition `seed`,
    /// computed once per distinct pre-training configuration. The trace is empty
    /// on a cache hit.
    pub fn pretrained_encoder(
        &mut self,
        cfg: &ExperimentConfig,
        seed: u64,
        splits: &Splits,
        checkpoint_dir: Option<&Path>,
    ) -> Result<(ParamStore, Vec<PretrainStep>)> {
        let key = format!("ssl:{seed}:{}", pretrain_key(cfg));
        if let Some((store, _)) = self.encoders.get(&key) {
            return Ok((store.clone(), vec![]));
        }
        let mut model = Model::new(cfg, &mut derive_rng(seed, "init"))?;
        let (data, idx) = if cfg.mode == Mode::SlscomDs {
            let d = self
                .pretrain_train
                .as_ref()
                .ok_or_else(|| Error::DatasetMissing("slscom_ds needs pretrain_dataset".into()))?;
            check_shape(cfg, d)?;
            if d.len() < cfg.split.unlabeled {
                return Err(Error::InfeasibleSplit(format!(
                    "pre-training dataset has {} samples, {} requested",
                    d.len(),
                    cfg.split.unlabeled
                )));
            }
            let mut order: Vec<usize> = (0..d.len()).collect();
            order.shuffle(&mut derive_rng(seed, "pretrain/split"));
            order.truncate(cfg.split.unlabeled);
            (d, order)
        } else {
            (&self.train, splits.unlabeled.clone())
        };
        let trace = pretrain_run(
            &mut model,
            data,
            &idx,
            cfg,
            PretrainRng {
                data: &mut derive_rng(seed, "pretrain/data"),
                augment: &mut derive_rng(seed, "pretrain/augment"),
            },
            checkpoint_dir,
        )?;
        self.encoders.insert(key, (model.store.clone(), trace.clone()));
        Ok((model.store, trace))
    }

    /// Supervised stand-in for external transfer weights, trained on the reserved split.
    pub fn standin_encoder(&mut self, cfg: &ExperimentConfig, seed: u64, splits: &Splits) -> Result<ParamStore> {
        let key = format!("standin:{seed}:{}", pretrain_key(cfg));
        if let Some((store, _)) = self.encoders.get(&key) {
            return Ok(store.clone());
        }
        let mut model = Model::new(cfg, &mut derive_rng(seed, "init"))?;
        supervised_pretrain(&mut model, &self.train, &splits.reserved, cfg, &mut derive_rng(seed, "standin/data"))?;
        self.encoders.insert(key, (model.store.clone(), vec![]));
        Ok(model.store)
    }

    /// Train repetition `rep` of `cfg`: obtain the encoder the mode asks for, then
    /// fine-tune. Checkpoints go to `checkpoint_dir` when given.
    pub fn train_rep(&mut self, cfg: &ExperimentConfig, rep: usize, checkpoint_dir: Option<&Path>) -> Result<TrainedRep> {
        cfg.validate()?;
        check_shape(cfg, &self.train)?;
        check_shape(cfg, &self.test)?;
        let seed = train_seed(cfg.seed, rep);
        let link = experiment_link(cfg)?;
        let splits = self.splits(cfg, seed)?;
        let mut model = Model::new(cfg, &mut derive_rng(seed, "init"))?;
        let mut pretrain_trace = vec![];
        match cfg.mode {
            Mode::Slscom | Mode::SlscomFw | Mode::SlscomDs | Mode::Hybrid => {
                if let Some(path) = &cfg.pretrained_path {
                    let (_, store) = checkpoint::load(path)?;
                    model.copy_component(&store, Component::Encoder)?;
                } else {
                    let (store, trace) = self.pretrained_encoder(cfg, seed, &splits, checkpoint_dir)?;
                    model.copy_component(&store, Component::Encoder)?;
                    pretrain_trace = trace;
                }
            }
            Mode::Tscom | Mode::TscomFw => {
                let store = if cfg.uses_transfer_standin() {
                    self.standin_encoder(cfg, seed, &splits)?
                } else {
                    let path = cfg.pretrained_path.as_ref().expect("validated");
                    checkpoint::load(path)?.1
                };
                model.copy_component(&store, Component::Encoder)?;
            }
            Mode::Rscom => {}
        }
        let outcome = finetune_run(
            &mut model,
            &link,
            &self.train,
            &splits.labeled,
            &splits.val,
            cfg,
            FinetuneRng {
                data: &mut derive_rng(seed, "finetune/data"),
                channel: &mut derive_rng(seed, "finetune/channel"),
                noise: &mut derive_rng(seed, "finetune/noise"),
                val_seed: derive_seed(seed, "val"),
            },
            checkpoint_dir,
        )?;
        let quant = if cfg.mode == Mode::Hybrid {
            let q = hybrid_quantizer(&model, &self.train, &splits.labeled, cfg.clip_sigmas)?;
            if let Some(dir) = checkpoint_dir {
                save_finetuned(&dir.join("finetune.ckpt"), &model, cfg, [(MULAW_BOUND.to_string(), q.bound)].into_iter().collect())?;
            }
            Some(q)
        } else {
            None
        };
        Ok(TrainedRep {
            rep,
            seed,
            model,
            splits,
            quant,
            pretrain_trace,
            outcome,
        })
    }

    /// Evaluate a trained model on the test split for every test repetition and SNR.
    pub fn test_rows(&self, cfg: &ExperimentConfig, trained: &TrainedRep) -> Result<(Vec<RunRow>, usize)> {
        let link = experiment_link(cfg)?;
        let digital = DigitalLink::new(cfg.ofdm, link.pilots.clone(), cfg.channel(0.0));
        let code = hybrid_code(cfg)?;
        let mut rows = vec![];
        let mut saturated = 0;
        for u in 0..cfg.repeats_test {
            let ts = test_seed(trained.seed, u);
            for &snr in &cfg.test_snrs {
                let mut ch = derive_rng(ts, "test/channel");
                let mut nz = derive_rng(ts, "test/noise");
                let top1 = match &trained.quant {
                    Some(q) => {
                        let (acc, sat) = evaluate_hybrid(&trained.model, q, code.as_ref(), &digital, &self.test, &trained.splits.test, snr, &mut ch)?;
                        saturated += sat;
                        acc
                    }
                    None => evaluate(&trained.model, &link, &self.test, &trained.splits.test, snr, &mut ch, &mut nz)?,
                };
                rows.push(RunRow {
                    mode: cfg.mode,
                    labels: cfg.split.labeled,
                    train_rep: trained.rep,
                    test_rep: u,
                    seed: trained.seed,
                    train_snr: cfg.hyper.train_snr_db,
                    test_snr: snr,
                    top1,
                });
            }
        }
        Ok((rows, saturated))
    }

    /// Train and evaluate every repetition of `cfg`.
    pub fn run(&mut self, cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunReport> {
        let start = Instant::now();
        let mut report = RunReport::empty(cfg);
        for t in 0..cfg.repeats_train {
            let ckpt_dir = out_dir.map(|d| d.join(format!("t{t}")));
            let trained = self.train_rep(cfg, t, ckpt_dir.as_deref())?;
            let (rows, sat) = self.test_rows(cfg, &trained)?;
            report.rows.extend(rows);
            report.saturated += sat;
            report.pretrain_traces.push(trained.pretrain_trace);
            report.finetune_traces.push(trained.outcome.trace);
            report.best_epochs.push(trained.outcome.best_epoch);
        }
        report.wall_seconds = start.elapsed().as_secs_f64();
        if let Some(dir) = out_dir {
            write_run(dir, &report, cfg)?;
        }
        Ok(report)
    }
}

/// Key of the quantizer bound in a hybrid checkpoint manifest.
pub const MULAW_BOUND: &str = "mulaw_bound";

/// One trained model with what is needed to test it.
pub struct TrainedRep {
    pub rep: usize,
    pub seed: u64,
    pub model: Model,
    pub splits: Splits,
    pub quant: Option<MuLaw>,
    pub pretrain_trace: Vec<PretrainStep>,
    pub outcome: FinetuneOutcome,
}

impl RunReport {
    pub fn empty(cfg: &ExperimentConfig) -> Self {
        Self {
            fingerprint: cfg.fingerprint(),
            mode: cfg.mode,
            seed: cfg.seed,
            labels: cfg.split.labeled,
            train_snr: cfg.hyper.train_snr_db,
            rows: vec![],
            pretrain_traces: vec![],
            finetune_traces: vec![],
            best_epochs: vec![],
            saturated: 0,
            wall_seconds: 0.0,
        }
    }
}

pub fn experiment_link(cfg: &ExperimentConfig) -> Result<Link> {
    let dims = cfg.dims()?;
    Ok(Link::new(cfg, dims.channel_len, dims.frames_per_image))
}

pub fn hybrid_code(cfg: &ExperimentConfig) -> Result<Box<dyn ChannelCode>> {
    Ok(match cfg.hybrid_code {
        HybridCode::Null => Box::new(NullCode),
        HybridCode::Ldpc => Box::new(RegularLdpc::new(2304, 864, 3, &mut derive_rng(cfg.seed, "ldpc"))?),
    })
}

/// Rebuild a fine-tuned model from a checkpoint and test it like repetition 0 of `cfg`.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, path: &Path, out_dir: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let harness = Harness::load(cfg)?;
    check_shape(cfg, &harness.test)?;
    let (manifest, store) = checkpoint::load(path)?;
    let seed = train_seed(cfg.seed, 0);
    let mut model = Model::new(cfg, &mut derive_rng(seed, "init"))?;
    for c in [Component::Encoder, Component::JsccEncoder, Component::JsccDecoder, Component::Task] {
        model.copy_component(&store, c)?;
    }
    let quant = if cfg.mode == Mode::Hybrid {
        let bound = manifest
            .extra
            .get(MULAW_BOUND)
            .ok_or_else(|| Error::Checkpoint(format!("{} has no {MULAW_BOUND}", path.display())))?;
        Some(MuLaw::new(*bound)?)
    } else {
        None
    };
    let splits = harness.splits(cfg, seed)?;
    let trained = TrainedRep {
        rep: 0,
        seed,
        model,
        splits,
        quant,
        pretrain_trace: vec![],
        outcome: FinetuneOutcome {
            trace: vec![],
            val_acc: vec![],
            best_epoch: 0,
        },
    };
    let start = Instant::now();
    let mut report = RunReport::empty(cfg);
    let (rows, sat) = harness.test_rows(cfg, &trained)?;
    report.rows = rows;
    report.saturated = sat;
    report.wall_seconds = start.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        write_run(dir, &report, cfg)?;
    }
    Ok(report)
}

/// Pre-training of repetition 0 alone; writes the encoder checkpoint and trace.
pub fn pretrain_only(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PretrainStep>> {
    cfg.validate()?;
    let mut harness = Harness::load(cfg)?;
    check_shape(cfg, &harness.train)?;
    let seed = train_seed(cfg.seed, 0);
    let splits = harness.splits(cfg, seed)?;
    let (_, trace) = harness.pretrained_encoder(cfg, seed, &splits, Some(out_dir))?;
    let mut report = RunReport::empty(cfg);
    report.pretrain_traces.push(trace.clone());
    write_traces(out_dir, &report)?;
    Ok(trace)
}

/// Training of every repetition without testing; checkpoints and traces per repetition.
pub fn finetune_only(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<FinetuneOutcome>> {
    let mut harness = Harness::load(cfg)?;
    let mut report = RunReport::empty(cfg);
    let mut outcomes = vec![];
    for t in 0..cfg.repeats_train {
        let trained = harness.train_rep(cfg, t, Some(&out_dir.join(format!("t{t}"))))?;
        report.pretrain_traces.push(trained.pretrain_trace);
        report.finetune_traces.push(trained.outcome.trace.clone());
        outcomes.push(trained.outcome);
    }
    write_traces(out_dir, &report)?;
    Ok(outcomes)
}

/// Mu-law bound from the encoder's features over the labeled split.
pub fn hybrid_quantizer(model: &Model, data: &Dataset, indices: &[usize], sigmas: f64) -> Result<MuLaw> {
    let mut values = vec![];
    for chunk in indices.chunks(EVAL_BATCH) {
        values.extend_from_slice(features(model, data.batch(chunk)).data());
    }
    MuLaw::from_features(&values, sigmas)
}

/// Top-1 of the hybrid baseline and the number of clipped feature values.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_hybrid(
    model: &Model,
    quant: &MuLaw,
    code: &dyn ChannelCode,
    link: &DigitalLink,
    data: &Dataset,
    indices: &[usize],
    snr_db: f64,
    rng: &mut Rng,
) -> Result<(f64, usize)> {
    if indices.is_empty() {
        return Err(Error::LengthError("no samples to evaluate".into()));
    }
    let (mut correct, mut saturated) = (0.0, 0);
    for chunk in indices.chunks(EVAL_BATCH) {
        let x = features(model, data.batch(chunk));
        let width = x.row_len();
        let mut rec = Vec::with_capacity(x.len());
        for row in x.rows() {
            let out = hybrid_transmit(row, quant, code, link, Some(snr_db), rng)?;
            saturated += out.saturated;
            rec.extend(out.x_hat);
        }
        let probs = classify(model, Tensor::from_vec(&[chunk.len(), width], rec)?);
        let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
        correct += top1_accuracy(&probs, &labels)? * chunk.len() as f64;
    }
    Ok((correct / indices.len() as f64, saturated))
}

/// Load data and run one configuration.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    Harness::load(cfg)?.run(cfg, out_dir)
}

/// Config for one cell of a sweep. Transfer modes without weights get the stand-in;
/// other modes drop any transfer path.
pub fn sweep_config(base: &ExperimentConfig, mode: Mode, labels: usize) -> ExperimentConfig {
    let mut c = base.clone();
    c.mode = mode;
    c.split.labeled = labels;
    match mode {
        Mode::Tscom | Mode::TscomFw => {
            if c.pretrained_path.is_none() {
                c.pretrained_path = Some(PathBuf::from(TRANSFER_STANDIN));
            }
        }
        _ => {
            if c.uses_transfer_standin() || mode == Mode::Rscom {
                c.pretrained_path = None;
            }
        }
    }
    c
}

/// Every mode at every labeled-set size, sharing pre-trained encoders across
/// cells. Each cell writes to `<out>/<mode>_<labels>`; tables and plots go to `<out>`.
pub fn sweep(base: &ExperimentConfig, modes: &[Mode], labels: &[usize], out_dir: Option<&Path>) -> Result<Vec<RunReport>> {
    let mut harness = Harness::load(base)?;
    let mut reports = vec![];
    for &l in labels {
        for &m in modes {
            let cfg = sweep_config(base, m, l);
            let dir = out_dir.map(|d| d.join(format!("{m}_{l}")));
            reports.push(harness.run(&cfg, dir.as_deref())?);
        }
    }
    if let Some(dir) = out_dir {
        emit_report(&reports, dir)?;
    }
    Ok(reports)
}
