use std::fs;
use std::path::Path;

use resep::classifiers::HeadKind;
use resep::data::synth::{generate_synthetic, write_day_files, SyntheticConfig};
use resep::data::{Instance, UNK};
use resep::harness::run::{prep_dir, Dataset, FoldContext};
use resep::harness::{RunConfig, Scenario};
use resep::parallel::Exec;

fn dataset(root: &Path) -> Dataset {
    let home = generate_synthetic(&SyntheticConfig {
        days: 26,
        events_per_day: 70,
        seed: 4,
        ..SyntheticConfig::default()
    })
    .unwrap();
    write_day_files(&root.join("raw"), &home).unwrap();
    let days = prep_dir(&root.join("raw"), &root.join("inst"), None, Exec::Parallel).unwrap();
    assert_eq!(days.len(), 26);
    Dataset::load(&root.join("inst")).unwrap()
}

fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(
        "[seq2res]\nenc_embed = 8\nenc_hidden = 8\ndec_embed = 8\ndec_hidden = 16\n\
         [seq2res_train]\nepochs = 2\nbatch = 40\n\
         [classifier]\nembed = 8\nhidden = 8\nlayers = 1\nheads = 2\nff_mult = 2\n\
         [classifier_train]\nepochs = 2\nbatch = 40\n",
    )
    .unwrap();
    cfg.run.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn folds_partition_the_prepared_instances() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    assert_eq!(data.plan.len(), 10);
    let mut seen = 0;
    for k in 0..data.plan.len() {
        let (train, test) = data.split(k);
        assert_eq!(train.len() + test.len(), data.instances.len());
        assert!(test.iter().all(|i| data.plan.test_days(k).contains(&i.day)));
        assert!(train
            .iter()
            .all(|i| !data.plan.test_days(k).contains(&i.day)));
        seen += test.len();
    }
    assert_eq!(seen, data.instances.len());
}

#[test]
fn test_split_never_reaches_training() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let (train, test) = data.split(0);

    // same train split, a different test split with an unseen sensor
    let mut other: Vec<Instance> = data.split(9).1;
    other[0].tokens[0] = "Z99:ON".into();

    let mut outputs = Vec::new();
    for (name, held_out) in [("a", &test), ("b", &other)] {
        let cfg = tiny_config(&tmp.path().join(name));
        let ctx = FoldContext::new(&cfg, 1, &train, held_out, &data.class_names).unwrap();
        assert!(!ctx.vocab.contains("Z99:ON"));
        ctx.train_separator().unwrap();
        let sep = ctx.load_separator().unwrap();
        for scenario in Scenario::ALL {
            let (train_in, _) = ctx.scenario_inputs(scenario, Some(&sep)).unwrap();
            ctx.train_classifier(scenario, HeadKind::Q2l, &train_in)
                .unwrap();
        }
        if name == "b" {
            assert_eq!(ctx.test[0].window[0], UNK);
        }
        let files = [
            ctx.separator_dir().join("seq2res-final.ckpt"),
            ctx.separator_dir().join("vocab.tsv"),
            ctx.classifier_dir(Scenario::NoSep, HeadKind::Q2l)
                .join("q2l-final.ckpt"),
            ctx.classifier_dir(Scenario::S2sSep, HeadKind::Q2l)
                .join("q2l-final.ckpt"),
            ctx.classifier_dir(Scenario::GtSep, HeadKind::Q2l)
                .join("q2l-final.ckpt"),
        ];
        outputs.push(files.map(|f| fs::read(f).unwrap()));
    }
    assert!(
        outputs[0] == outputs[1],
        "checkpoints depend on the test split"
    );
}

#[test]
fn checkpoints_round_trip_through_the_fold_context() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let (train, test) = data.split(3);
    let cfg = tiny_config(&tmp.path().join("out"));
    let ctx = FoldContext::new(&cfg, 4, &train, &test, &data.class_names).unwrap();
    let (trained, _) = ctx
        .train_classifier(
            Scenario::GtSep,
            HeadKind::Bn,
            &ctx.scenario_inputs(Scenario::GtSep, None).unwrap().0,
        )
        .unwrap();
    let loaded = ctx.load_classifier(Scenario::GtSep, HeadKind::Bn).unwrap();
    let (_, test_in) = ctx.scenario_inputs(Scenario::GtSep, None).unwrap();
    let a = ctx
        .evaluate_classifier(Scenario::GtSep, &trained, &test_in)
        .unwrap();
    let b = ctx
        .evaluate_classifier(Scenario::GtSep, &loaded, &test_in)
        .unwrap();
    assert_eq!(a, b);
    let preds = fs::read_to_string(
        ctx.classifier_dir(Scenario::GtSep, HeadKind::Bn)
            .join("predictions.tsv"),
    )
    .unwrap();
    assert_eq!(preds.lines().count(), test.len());
    assert!(preds.starts_with(&format!("d{}:", test[0].day)));
}
