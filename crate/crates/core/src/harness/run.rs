//! Preparation glue, per-fold pipelines and the full scenario grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::eval::{self, Summary, OVERALL, SEPARATION};
use super::folds::{make_fold_plan, FoldPlan};
use super::train::{
    generate_all, scenario_inputs, train_classifier, train_seq2res, CheckpointSink, TrainLog,
};
use super::Scenario;
use crate::classifiers::{
    export_predictions, ClassifierModel, HeadKind, LabelPrediction, SeqInput,
};
use crate::data::casas::{Corrections, ParseOptions};
use crate::data::prep::{
    self, build_vocab, list_day_files, prepare_day, read_class_names, DaySummary, EncodedInstance,
    Instance, ADLMR_CLASSES, CLASSES_FILE, INSTANCES_FILE, VOCAB_FILE,
};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics::{bleu_report, render_table, MetricRecord};
use crate::numerics::checkpoint;
use crate::parallel;
use crate::seq2res::{export_decoded, Seq2ResModel};

pub const SUMMARY_FILE: &str = "summary.tsv";
pub const REPORT_FILE: &str = "report.txt";
pub const TIMING_FILE: &str = "timing.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";

/// Parses every day file under `input` and writes `instances.tsv`,
/// `vocab.tsv` (all days, for inspection; folds build their own from the
/// train split) and `classes.txt` to `out`.
pub fn prep_dir(
    input: &Path,
    out: &Path,
    corrections: Option<&Path>,
    exec: parallel::Exec,
) -> Result<Vec<DaySummary>> {
    let names = match read_class_names(input)? {
        Some(n) => n,
        None => ADLMR_CLASSES.iter().map(|s| s.to_string()).collect(),
    };
    let corrections = match corrections {
        Some(p) if !p.exists() => return Err(Error::MissingFile(p.to_path_buf())),
        Some(p) => Corrections::parse(&fs::read_to_string(p)?, &p.display().to_string())?,
        None => Corrections::default(),
    };
    let opts = ParseOptions {
        activity_base: 1,
        num_classes: names.len(),
        corrections,
    };
    let files = list_day_files(input)?;
    if files.is_empty() {
        return Err(Error::EmptyInput("no day files in input directory"));
    }
    let jobs: Vec<(usize, &PathBuf)> = files.iter().enumerate().map(|(i, f)| (i + 1, f)).collect();
    let days = parallel::map(
        exec,
        &jobs,
        |(day, file)| -> Result<(Vec<Instance>, DaySummary)> {
            let text = fs::read_to_string(file)?;
            let (inst, mut summary) = prepare_day(&text, *day, &opts)?;
            summary.file = file.to_path_buf();
            Ok((inst, summary))
        },
    );
    let mut instances = Vec::new();
    let mut summaries = Vec::new();
    for d in days {
        let (inst, s) = d?;
        instances.extend(inst);
        summaries.push(s);
    }
    fs::create_dir_all(out)?;
    prep::write_instances(&out.join(INSTANCES_FILE), &instances)?;
    build_vocab(&instances).save(&out.join(VOCAB_FILE))?;
    fs::write(out.join(CLASSES_FILE), names.join("\n") + "\n")?;
    Ok(summaries)
}

/// Prepared instances with their class names and fold plan.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub class_names: Vec<String>,
    pub plan: FoldPlan,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let instances = prep::read_instances(&dir.join(INSTANCES_FILE))?;
        let width = instances.first().map_or(0, |i| i.labels.len());
        if let Some(bad) = instances.iter().find(|i| i.labels.len() != width) {
            return Err(Error::LengthMismatch {
                left: bad.labels.len(),
                right: width,
            });
        }
        let class_names = match read_class_names(dir)? {
            Some(n) if n.len() == width => n,
            Some(n) => {
                return Err(Error::LengthMismatch {
                    left: n.len(),
                    right: width,
                })
            }
            None => (0..width).map(|c| format!("class{c}")).collect(),
        };
        let mut days: Vec<usize> = instances.iter().map(|i| i.day).collect();
        days.sort_unstable();
        days.dedup();
        let plan = make_fold_plan(&days)?;
        Ok(Self {
            instances,
            class_names,
            plan,
        })
    }

    /// Train and test instances of fold `k` (0-based).
    pub fn split(&self, k: usize) -> (Vec<Instance>, Vec<Instance>) {
        let test = self.plan.test_days(k);
        self.instances
            .iter()
            .cloned()
            .partition(|i| !test.contains(&i.day))
    }
}

/// Independent seed for one (fold, component) pair.
pub fn derive_seed(base: u64, fold: usize, component: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((fold as u64) << 32) | component);
    rng.gen()
}

fn instance_id(i: &EncodedInstance) -> String {
    format!("d{}:{}", i.day, i.start)
}

fn predict_all(
    model: &ClassifierModel,
    inputs: &[SeqInput],
    exec: parallel::Exec,
) -> Result<Vec<LabelPrediction>> {
    let refs: Vec<&SeqInput> = inputs.iter().collect();
    let chunks: Vec<&[&SeqInput]> = refs.chunks(50).collect();
    let mut out = Vec::with_capacity(inputs.len());
    for part in parallel::map(exec, &chunks, |c| model.predict(c)) {
        out.extend(part?);
    }
    Ok(out)
}

/// Everything one fold needs: its vocabulary (train split only), encoded
/// splits and output directories.
pub struct FoldContext<'a> {
    pub cfg: &'a RunConfig,
    /// 1-based fold number.
    pub fold: usize,
    pub out_dir: PathBuf,
    pub class_names: &'a [String],
    pub vocab: Vocabulary,
    pub train: Vec<EncodedInstance>,
    pub test: Vec<EncodedInstance>,
}

impl<'a> FoldContext<'a> {
    pub fn new(
        cfg: &'a RunConfig,
        fold: usize,
        train: &[Instance],
        test: &[Instance],
        class_names: &'a [String],
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("fold training split"));
        }
        let vocab = build_vocab(train);
        Ok(Self {
            cfg,
            fold,
            out_dir: cfg.run.out_dir.clone(),
            class_names,
            train: train.iter().map(|i| i.encode(&vocab)).collect(),
            test: test.iter().map(|i| i.encode(&vocab)).collect(),
            vocab,
        })
    }

    pub fn separator_dir(&self) -> PathBuf {
        self.out_dir
            .join(SEPARATION.0)
            .join(SEPARATION.1)
            .join(format!("fold{}", self.fold))
    }

    pub fn classifier_dir(&self, scenario: Scenario, kind: HeadKind) -> PathBuf {
        self.out_dir
            .join(scenario.name())
            .join(kind.slug())
            .join(format!("fold{}", self.fold))
    }

    fn save_vocab(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    pub fn train_separator(&self) -> Result<(Seq2ResModel, TrainLog)> {
        let dir = self.separator_dir();
        self.save_vocab(&dir)?;
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = self
            .train
            .iter()
            .map(|i| (i.window.clone(), i.target_seq.clone()))
            .collect();
        train_seq2res(
            self.cfg.seq2res,
            self.vocab.len(),
            &pairs,
            &self.cfg.seq2res_train,
            derive_seed(self.cfg.run.seed, self.fold, 0),
            self.cfg.run.exec,
            Some(CheckpointSink {
                dir: &dir,
                prefix: "seq2res",
            }),
        )
    }

    pub fn load_separator(&self) -> Result<Seq2ResModel> {
        let path = self.separator_dir().join("seq2res-final.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Seq2ResModel::new(self.cfg.seq2res, self.vocab.len(), &mut rng)?;
        model.store.load_from(&checkpoint::load(&path)?)?;
        Ok(model)
    }

    /// BLEU of generated separations against the ground truth, overall and
    /// per activity class.
    pub fn evaluate_separator(&self, sep: &Seq2ResModel) -> Result<Vec<MetricRecord>> {
        if self.test.is_empty() {
            return Err(Error::EmptyInput("fold test split"));
        }
        let windows: Vec<&[usize]> = self.test.iter().map(|i| i.window.as_slice()).collect();
        let generated = generate_all(sep, &windows, self.cfg.run.max_len, 50, self.cfg.run.exec)?;
        let preds: Vec<&[usize]> = generated.iter().map(|g| g.tokens.as_slice()).collect();
        let refs: Vec<&[usize]> = self.test.iter().map(|i| i.target_seq.as_slice()).collect();
        let classes: Vec<Vec<usize>> = self.test.iter().map(labels_of).collect();
        let report = bleu_report(
            &preds,
            &refs,
            &classes,
            self.class_names.len(),
            self.cfg.run.smoothing,
        )?;
        let records = eval::bleu_records(&report, self.class_names);
        let dir = self.separator_dir();
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(METRICS_FILE), eval::records_to_tsv(&records))?;
        fs::write(
            dir.join("decoded.txt"),
            export_decoded(&generated, &self.vocab)?,
        )?;
        Ok(records)
    }

    /// Train and test inputs of a scenario.
    pub fn scenario_inputs(
        &self,
        scenario: Scenario,
        sep: Option<&Seq2ResModel>,
    ) -> Result<(Vec<SeqInput>, Vec<SeqInput>)> {
        let (max_len, exec) = (self.cfg.run.max_len, self.cfg.run.exec);
        Ok((
            scenario_inputs(scenario, &self.train, sep, max_len, exec)?,
            scenario_inputs(scenario, &self.test, sep, max_len, exec)?,
        ))
    }

    pub fn train_classifier(
        &self,
        scenario: Scenario,
        kind: HeadKind,
        inputs: &[SeqInput],
    ) -> Result<(ClassifierModel, TrainLog)> {
        let dir = self.classifier_dir(scenario, kind);
        self.save_vocab(&dir)?;
        let labels: Vec<Vec<f64>> = self.train.iter().map(|i| i.labels.clone()).collect();
        train_classifier(
            self.cfg.classifier,
            kind,
            self.vocab.len(),
            inputs,
            &labels,
            &self.cfg.classifier_train,
            derive_seed(self.cfg.run.seed, self.fold, 1),
            self.cfg.run.exec,
            Some(CheckpointSink {
                dir: &dir,
                prefix: kind.slug(),
            }),
        )
    }

    pub fn load_classifier(&self, scenario: Scenario, kind: HeadKind) -> Result<ClassifierModel> {
        let path = self
            .classifier_dir(scenario, kind)
            .join(format!("{}-final.ckpt", kind.slug()));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = ClassifierModel::new(
            self.cfg.classifier,
            kind,
            self.vocab.len(),
            self.class_names.len(),
            &mut rng,
        )?;
        model.store.load_from(&checkpoint::load(&path)?)?;
        Ok(model)
    }

    pub fn evaluate_classifier(
        &self,
        scenario: Scenario,
        model: &ClassifierModel,
        inputs: &[SeqInput],
    ) -> Result<Vec<MetricRecord>> {
        if model.num_labels != self.class_names.len() {
            return Err(Error::LengthMismatch {
                left: model.num_labels,
                right: self.class_names.len(),
            });
        }
        let preds = predict_all(model, inputs, self.cfg.run.exec)?;
        let truth: Vec<Vec<usize>> = self.test.iter().map(labels_of).collect();
        let scores = eval::evaluate(&preds, &truth, self.class_names.len())?;
        let records = eval::classification_records(
            scenario.name(),
            model.kind.name(),
            &scores,
            self.class_names,
        );
        let dir = self.classifier_dir(scenario, model.kind);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(METRICS_FILE), eval::records_to_tsv(&records))?;
        let ids: Vec<String> = self.test.iter().map(instance_id).collect();
        fs::write(
            dir.join("predictions.tsv"),
            export_predictions(&ids, &preds, self.class_names)?,
        )?;
        Ok(records)
    }

    /// The whole grid for this fold.
    pub fn run(&self) -> Result<Vec<MetricRecord>> {
        let mut records = Vec::new();
        let sep = if self.cfg.needs_seq2res() {
            let (sep, _) = self.train_separator()?;
            records.extend(self.evaluate_separator(&sep)?);
            Some(sep)
        } else {
            None
        };
        for &scenario in &self.cfg.run.scenarios {
            let (train_in, test_in) = self.scenario_inputs(scenario, sep.as_ref())?;
            for &kind in &self.cfg.run.models {
                let (model, _) = self.train_classifier(scenario, kind, &train_in)?;
                records.extend(self.evaluate_classifier(scenario, &model, &test_in)?);
            }
        }
        Ok(records)
    }
}

fn labels_of(i: &EncodedInstance) -> Vec<usize> {
    (0..i.labels.len()).filter(|&l| i.labels[l] > 0.5).collect()
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub out_dir: PathBuf,
    pub seconds: f64,
}

/// Runs the configured folds × scenarios × models and writes the report
/// tree. Metric files are deterministic under the seed; wall-clock goes to
/// a separate timing file.
pub fn run_all(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let data = Dataset::load(&cfg.data_dir())?;
    let out = cfg.run.out_dir.clone();
    fs::create_dir_all(&out)?;
    let mut snapshot = String::from(
        "# Effective configuration of this run.\n# Folds: consecutive test blocks, 6 x 3 days over days 1-18, then 4 x 2 days over days 19-26.\n",
    );
    snapshot.push_str(&cfg.to_toml());
    fs::write(out.join("config.toml"), snapshot)?;
    let mut plan_text = String::new();
    for (k, days) in data.plan.folds().iter().enumerate() {
        let days: Vec<String> = days.iter().map(|d| d.to_string()).collect();
        plan_text.push_str(&format!("fold{}\t{}\n", k + 1, days.join(",")));
    }
    fs::write(out.join("folds.tsv"), plan_text)?;
    fs::write(out.join(CLASSES_FILE), data.class_names.join("\n") + "\n")?;

    let folds: Vec<usize> = (0..cfg.run.max_folds.min(data.plan.len())).collect();
    let results = parallel::with_workers(cfg.run.jobs, || {
        parallel::map(
            cfg.run.exec,
            &folds,
            |&k| -> Result<(Vec<MetricRecord>, f64)> {
                let t = Instant::now();
                let (train, test) = data.split(k);
                let ctx = FoldContext::new(cfg, k + 1, &train, &test, &data.class_names)?;
                let records = ctx.run()?;
                log::info!("fold {} done in {:.1}s", k + 1, t.elapsed().as_secs_f64());
                Ok((records, t.elapsed().as_secs_f64()))
            },
        )
    });
    let mut per_fold = Vec::new();
    let mut timing = String::from("# fold\tseconds\n");
    for (k, r) in results.into_iter().enumerate() {
        let (records, secs) = r?;
        per_fold.push(records);
        timing.push_str(&format!("fold{}\t{secs:.3}\n", k + 1));
    }
    let summary = Summary::aggregate(&per_fold);
    fs::write(out.join(SUMMARY_FILE), summary.to_tsv())?;
    fs::write(
        out.join(REPORT_FILE),
        render_report(&summary, &data.class_names),
    )?;
    let seconds = started.elapsed().as_secs_f64();
    timing.push_str(&format!("total\t{seconds:.3}\n"));
    fs::write(out.join(TIMING_FILE), timing)?;
    Ok(RunOutcome {
        summary,
        out_dir: out,
        seconds,
    })
}

const REPORT_HEADER: &str = "\
Accuracy counts an instance as correct only when the predicted label set equals the true set.
Folds test on consecutive day blocks: 6 x 3 days over days 1-18, then 4 x 2 days over days 19-26.
Every scenario trains its classifiers from a fresh initialization drawn from the same fold seed.

";

fn cell(r: Option<&MetricRecord>, scale: f64, digits: usize) -> String {
    match r {
        None => "-".to_string(),
        Some(r) => match r.std {
            Some(s) => format!("{:.*} ({:.*})", digits, r.value * scale, digits, s * scale),
            None => format!("{:.*}", digits, r.value * scale),
        },
    }
}

/// Plain-text tables: separation BLEU per class, accuracy and macro-F1 per
/// model and scenario, and per-class F1.
pub fn render_report(summary: &Summary, class_names: &[String]) -> String {
    let mut out = String::from(REPORT_HEADER);
    let (sep_s, sep_m) = SEPARATION;
    if summary.records.iter().any(|r| r.scenario == sep_s) {
        out.push_str("Separation BLEU (mean over folds, std in parentheses)\n\n");
        let mut rows: Vec<Vec<String>> = class_names
            .iter()
            .map(|c| {
                vec![
                    c.clone(),
                    cell(summary.get(sep_s, sep_m, c, "bleu"), 1.0, 4),
                ]
            })
            .collect();
        rows.push(vec![
            "Overall".into(),
            cell(summary.get(sep_s, sep_m, OVERALL, "bleu"), 1.0, 4),
        ]);
        out.push_str(&render_table(&["Class", "Seq2Res"], &rows));
        out.push('\n');
    }
    let mut scenarios: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for r in summary.records.iter().filter(|r| r.scenario != sep_s) {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    if scenarios.is_empty() {
        return out;
    }
    let mut header = vec!["Model"];
    header.extend(&scenarios);
    for (metric, title) in [("accuracy", "Accuracy (%)"), ("macro_f1", "Macro-F1 (%)")] {
        out.push_str(title);
        out.push_str("\n\n");
        let rows: Vec<Vec<String>> = models
            .iter()
            .map(|m| {
                let mut row = vec![m.to_string()];
                row.extend(
                    scenarios
                        .iter()
                        .map(|s| cell(summary.get(s, m, OVERALL, metric), 100.0, 2)),
                );
                row
            })
            .collect();
        out.push_str(&render_table(&header, &rows));
        out.push('\n');
    }
    for m in &models {
        out.push_str(&format!("Per-class F1 (%), {m}\n\n"));
        let mut header = vec!["Class"];
        header.extend(&scenarios);
        let rows: Vec<Vec<String>> = class_names
            .iter()
            .map(|c| {
                let mut row = vec![c.clone()];
                row.extend(
                    scenarios
                        .iter()
                        .map(|s| cell(summary.get(s, m, c, "f1"), 100.0, 2)),
                );
                row
            })
            .collect();
        out.push_str(&render_table(&header, &rows));
        out.push('\n');
    }
    out
}

/// Re-renders `report.txt` from a run directory's `summary.tsv`.
pub fn report_dir(dir: &Path, class_names: Option<&[String]>) -> Result<String> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let summary = Summary::from_tsv(&fs::read_to_string(&path)?);
    let names: Vec<String> = match class_names {
        Some(n) => n.to_vec(),
        None => {
            let mut seen: Vec<String> = Vec::new();
            for r in &summary.records {
                if r.class != OVERALL && !seen.contains(&r.class) {
                    seen.push(r.class.clone());
                }
            }
            seen
        }
    };
    Ok(render_report(&summary, &names))
}
