//! Label completion, event filtering, windowing and instance files.

use std::fs;
use std::path::{Path, PathBuf};

use super::casas::{parse_casas, ParseDiagnostics, ParseOptions, SensorEvent};
use super::vocab::{Vocabulary, EOS, SOS};
use crate::error::{Error, Result};
use crate::seq2res::{make_separation_target, SeparationTarget};

pub const WINDOW: usize = 16;
pub const STEP: usize = 3;
/// Events at the end of a window that vote on its labels.
pub const VOTE_SPAN: usize = 3;

pub const EOS_TOKEN: &str = "EOS";
pub const SOS_TOKEN: &str = "SOS";

/// Class names file expected next to the day files.
pub const CLASSES_FILE: &str = "classes.txt";
pub const INSTANCES_FILE: &str = "instances.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";

/// Activity classes of the two-resident CASAS benchmark, ids 1..=15.
pub const ADLMR_CLASSES: [&str; 15] = [
    "Fill medication dispenser",
    "Hang up clothes",
    "Move couch and table",
    "Read on couch (user B)",
    "Water plants",
    "Sweep kitchen floor",
    "Play checkers",
    "Set out dinner ingredients",
    "Set dinner table",
    "Read on couch (user A)",
    "Pay electric bill",
    "Prepare picnic basket",
    "Retrieve dishes",
    "Pack supplies in basket",
    "Pack food in basket",
];

/// Per-resident label slots; `None` is the "none yet" value.
pub type LabelPair = [Option<usize>; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEvent {
    pub event: SensorEvent,
    pub labels: LabelPair,
}

/// Slot of each resident: ids in ascending order.
fn resident_slots(events: &[SensorEvent]) -> Vec<u32> {
    let mut ids: Vec<u32> = events
        .iter()
        .flat_map(|e| e.resident.into_iter().chain(e.co_annotation.map(|p| p.0)))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Carries each resident's last activity forward so every event holds the
/// current activity of both residents.
pub fn complete_second_labels(events: Vec<SensorEvent>) -> Vec<LabeledEvent> {
    let ids = resident_slots(&events);
    let slot = |r: u32| ids.iter().position(|&x| x == r).unwrap_or(0).min(1);
    let mut current: LabelPair = [None, None];
    events
        .into_iter()
        .map(|event| {
            if let (Some(r), Some(a)) = (event.resident, event.activity) {
                current[slot(r)] = Some(a);
            }
            if let Some((r, a)) = event.co_annotation {
                current[slot(r)] = Some(a);
            }
            LabeledEvent {
                event,
                labels: current,
            }
        })
        .collect()
}

/// Automatic deactivation of a motion sensor.
pub fn is_motion_off(e: &SensorEvent) -> bool {
    e.sensor.starts_with('M') && e.value == "OFF"
}

pub fn filter_motion_off(events: Vec<SensorEvent>) -> Vec<SensorEvent> {
    events.into_iter().filter(|e| !is_motion_off(e)).collect()
}

/// Per-resident majority over the last three label pairs; a three-way tie
/// goes to the most recent label. Returns the length-`classes` target.
pub fn majority_vote(last3: &[LabelPair; 3], classes: usize) -> Result<Vec<bool>> {
    let mut out = vec![false; classes];
    for slot in 0..2 {
        let votes = [last3[0][slot], last3[1][slot], last3[2][slot]];
        let winner = if votes[0] == votes[1] || votes[0] == votes[2] {
            votes[0]
        } else {
            // votes[1] == votes[2] or a three-way tie: either way the most recent
            votes[2]
        };
        if let Some(c) = winner {
            *out.get_mut(c)
                .ok_or(Error::LabelOutOfRange { index: c, classes })? = true;
        }
    }
    Ok(out)
}

/// Number of full windows in a stream of `n` events.
pub fn window_count(n: usize, width: usize, step: usize) -> usize {
    if n < width {
        0
    } else {
        (n - width) / step + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub day: usize,
    pub start: usize,
    pub tokens: Vec<String>,
    pub target: SeparationTarget<String>,
    pub labels: Vec<bool>,
}

impl Instance {
    pub fn label_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i]).collect()
    }

    pub fn to_line(&self) -> String {
        let mask: String = self
            .labels
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.day,
            self.start,
            self.tokens.join(" "),
            self.target
                .serialize(EOS_TOKEN.to_string(), SOS_TOKEN.to_string())
                .join(" "),
            mask
        )
    }

    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(format!("expected 5 tab-separated fields, got {}", f.len()));
        }
        let day = f[0].parse().map_err(|_| format!("bad day `{}`", f[0]))?;
        let start = f[1].parse().map_err(|_| format!("bad start `{}`", f[1]))?;
        let tokens: Vec<String> = f[2].split(' ').map(str::to_string).collect();
        let target_tokens: Vec<String> = f[3].split(' ').map(str::to_string).collect();
        let target = SeparationTarget::parse(
            &target_tokens,
            &EOS_TOKEN.to_string(),
            &SOS_TOKEN.to_string(),
        )
        .map_err(|e| e.to_string())?;
        let labels = f[4]
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(format!("bad label mask `{}`", f[4])),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            day,
            start,
            tokens,
            target,
            labels,
        })
    }

    pub fn encode(&self, vocab: &Vocabulary) -> EncodedInstance {
        let target = SeparationTarget {
            first: vocab.encode(&self.target.first),
            second: vocab.encode(&self.target.second),
        };
        EncodedInstance {
            day: self.day,
            start: self.start,
            window: vocab.encode(&self.tokens),
            target_seq: target.serialize(EOS, SOS),
            gt_input: target.serialize_open(EOS, SOS),
            labels: self
                .labels
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// An instance mapped through a fold's vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInstance {
    pub day: usize,
    pub start: usize,
    pub window: Vec<usize>,
    /// `first EOS SOS second EOS`.
    pub target_seq: Vec<usize>,
    /// Ground-truth separated classifier input (no final EOS).
    pub gt_input: Vec<usize>,
    pub labels: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowReport {
    pub instances: Vec<Instance>,
    /// Windows dropped because an event lacked a resident annotation.
    pub skipped_unannotated: usize,
    pub too_short: bool,
}

pub fn window_instances(
    events: &[LabeledEvent],
    day: usize,
    width: usize,
    step: usize,
    classes: usize,
) -> Result<WindowReport> {
    if width < VOTE_SPAN || step == 0 {
        return Err(Error::Config(format!(
            "window width must be >= {VOTE_SPAN} and step > 0"
        )));
    }
    let mut report = WindowReport {
        too_short: events.len() < width,
        ..WindowReport::default()
    };
    for k in 0..window_count(events.len(), width, step) {
        let start = k * step;
        let w = &events[start..start + width];
        let tokens: Vec<String> = w.iter().map(|e| e.event.token()).collect();
        let residents: Vec<Option<u32>> = w.iter().map(|e| e.event.resident).collect();
        let target = match make_separation_target(&tokens, &residents) {
            Ok(t) => t,
            Err(Error::MissingAnnotation(_)) => {
                report.skipped_unannotated += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let last = [
            w[width - 3].labels,
            w[width - 2].labels,
            w[width - 1].labels,
        ];
        report.instances.push(Instance {
            day,
            start,
            tokens,
            target,
            labels: majority_vote(&last, classes)?,
        });
    }
    Ok(report)
}

#[derive(Clone, Debug, Default)]
pub struct DaySummary {
    pub day: usize,
    pub file: PathBuf,
    pub parse: ParseDiagnostics,
    pub events: usize,
    pub removed_motion_off: usize,
    pub skipped_unannotated: usize,
    pub instances: usize,
}

/// The full per-day pipeline: parse (with corrections), label completion,
/// motion-off removal, windowing.
pub fn prepare_day(
    text: &str,
    day: usize,
    opts: &ParseOptions,
) -> Result<(Vec<Instance>, DaySummary)> {
    let (events, parse) = parse_casas(text, opts)?;
    let n = events.len();
    let mut labeled = complete_second_labels(events);
    labeled.retain(|e| !is_motion_off(&e.event));
    let report = window_instances(&labeled, day, WINDOW, STEP, opts.num_classes)?;
    if report.too_short {
        log::warn!("day {day}: {} events, fewer than one window", labeled.len());
    }
    let summary = DaySummary {
        day,
        file: PathBuf::new(),
        parse,
        events: n,
        removed_motion_off: n - labeled.len(),
        skipped_unannotated: report.skipped_unannotated,
        instances: report.instances.len(),
    };
    Ok((report.instances, summary))
}

/// Day files in `dir`, sorted by name; day ids count from 1 in that order.
pub fn list_day_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            !name.starts_with('.') && name != CLASSES_FILE
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Class names from `classes.txt` (one per line), if present.
pub fn read_class_names(dir: &Path) -> Result<Option<Vec<String>>> {
    let path = dir.join(CLASSES_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    Ok(Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
    ))
}

pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut text = String::new();
    for inst in instances {
        text.push_str(&inst.to_line());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = path.display().to_string();
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            Instance::parse(l).map_err(|msg| Error::Parse {
                file: file.clone(),
                msg: format!("line {}: {msg}", n + 1),
            })
        })
        .collect()
}

/// Vocabulary over the window tokens of the given instances.
pub fn build_vocab<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Vocabulary {
    let tokens: Vec<&str> = instances
        .into_iter()
        .flat_map(|i| i.tokens.iter().map(String::as_str))
        .collect();
    Vocabulary::build(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn ev(i: usize, sensor: &str, value: &str, who: Option<(u32, usize)>) -> SensorEvent {
        let t = NaiveDate::from_ymd_opt(2008, 11, 10)
            .unwrap()
            .and_hms_opt(10, 0, 0)
            .unwrap()
            + chrono::Duration::seconds(i as i64);
        SensorEvent {
            timestamp: t,
            sensor: sensor.to_string(),
            value: value.to_string(),
            resident: who.map(|w| w.0),
            activity: who.map(|w| w.1),
            co_annotation: None,
        }
    }

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;

    #[test]
    fn carry_forward_example() {
        let events = vec![
            ev(0, "M1", "ON", Some((1, A))),
            ev(1, "M2", "ON", Some((2, B))),
            ev(2, "M3", "ON", Some((1, C))),
        ];
        let out = complete_second_labels(events);
        let labels: Vec<LabelPair> = out.iter().map(|e| e.labels).collect();
        assert_eq!(
            labels,
            vec![[Some(A), None], [Some(A), Some(B)], [Some(C), Some(B)]]
        );
    }

    #[test]
    fn single_resident_keeps_none_yet() {
        let events: Vec<_> = (0..5)
            .map(|i| ev(i, "M1", "ON", Some((2, i % 3))))
            .collect();
        for e in complete_second_labels(events) {
            assert_eq!(e.labels[1], None);
            assert!(e.labels[0].is_some());
        }
    }

    #[test]
    fn co_annotation_updates_other_slot() {
        let mut e = ev(0, "M1", "ON", Some((1, A)));
        e.co_annotation = Some((2, C));
        let out = complete_second_labels(vec![e]);
        assert_eq!(out[0].labels, [Some(A), Some(C)]);
    }

    proptest! {
        #[test]
        fn slots_match_scan_oracle(stream in proptest::collection::vec((1u32..=2, 0usize..6), 1..80)) {
            let events: Vec<_> = stream
                .iter()
                .enumerate()
                .map(|(i, &(r, a))| ev(i, "M1", "ON", Some((r, a))))
                .collect();
            let out = complete_second_labels(events.clone());
            let ids = resident_slots(&events);
            for (i, e) in out.iter().enumerate() {
                // unchanged event fields
                prop_assert_eq!(&e.event, &events[i]);
                for (slot, id) in ids.iter().enumerate() {
                    let want = stream[..=i].iter().rev().find(|p| p.0 == *id).map(|p| p.1);
                    prop_assert_eq!(e.labels[slot], want);
                }
            }
        }

        #[test]
        fn filter_conserves_count(spec in proptest::collection::vec((0usize..3, 0usize..2), 0..50)) {
            let sensors = ["M1", "D1", "I1"];
            let values = ["ON", "OFF"];
            let events: Vec<_> = spec
                .iter()
                .enumerate()
                .map(|(i, &(s, v))| ev(i, sensors[s], values[v], None))
                .collect();
            let removed = events.iter().filter(|e| is_motion_off(e)).count();
            let kept = filter_motion_off(events.clone());
            prop_assert_eq!(kept.len() + removed, events.len());
            let want: Vec<_> = events.into_iter().filter(|e| !(e.sensor == "M1" && e.value == "OFF")).collect();
            prop_assert_eq!(kept, want);
        }

        #[test]
        fn window_count_matches_enumeration(n in 0usize..200) {
            let want = (0..n).filter(|s| s % STEP == 0 && s + WINDOW <= n).count();
            prop_assert_eq!(window_count(n, WINDOW, STEP), want);
        }
    }

    #[test]
    fn motion_off_examples() {
        let events = vec![
            ev(0, "M1", "ON", None),
            ev(1, "M1", "OFF", None),
            ev(2, "D1", "OPEN", None),
        ];
        let kept: Vec<String> = filter_motion_off(events)
            .iter()
            .map(|e| e.token())
            .collect();
        assert_eq!(kept, vec!["M1:ON", "D1:OPEN"]);
        let doors = vec![ev(0, "D1", "OPEN", None), ev(1, "D1", "CLOSE", None)];
        assert_eq!(filter_motion_off(doors.clone()), doors);
    }

    #[test]
    fn vote_examples() {
        let v = |l: [LabelPair; 3]| majority_vote(&l, 4).unwrap();
        // r1 A,A,B -> A; r2 none-yet throughout
        assert_eq!(
            v([[Some(A), None], [Some(A), None], [Some(B), None]]),
            vec![true, false, false, false]
        );
        // three-way tie -> most recent
        assert_eq!(
            v([[Some(A), None], [Some(B), None], [Some(C), None]]),
            vec![false, false, true, false]
        );
        // both residents on the same class -> one bit
        let same = v([[Some(B), Some(B)], [Some(B), Some(B)], [Some(A), Some(B)]]);
        assert_eq!(same.iter().filter(|b| **b).count(), 1);
        assert!(same[B]);
        // none-yet majority for r2 -> single label
        assert_eq!(
            v([[Some(A), None], [Some(A), None], [Some(A), Some(C)]]),
            vec![true, false, false, false]
        );
        assert!(majority_vote(&[[Some(9), None]; 3], 4).is_err());
    }

    fn stream(n: usize) -> Vec<LabeledEvent> {
        let events: Vec<_> = (0..n)
            .map(|i| {
                ev(
                    i,
                    &format!("M{}", i % 4),
                    "ON",
                    Some(((i % 2) as u32 + 1, i % 3)),
                )
            })
            .collect();
        complete_second_labels(events)
    }

    #[test]
    fn window_examples() {
        let starts = |n| -> Vec<usize> {
            window_instances(&stream(n), 1, WINDOW, STEP, 3)
                .unwrap()
                .instances
                .iter()
                .map(|i| i.start)
                .collect()
        };
        assert_eq!(starts(22), vec![0, 3, 6]);
        assert_eq!(starts(16), vec![0]);
        assert!(starts(15).is_empty());
        assert!(
            window_instances(&stream(15), 1, WINDOW, STEP, 3)
                .unwrap()
                .too_short
        );
    }

    #[test]
    fn windows_have_one_or_two_labels_and_partition() {
        let report = window_instances(&stream(60), 4, WINDOW, STEP, 3).unwrap();
        for inst in &report.instances {
            assert_eq!(inst.tokens.len(), WINDOW);
            let n = inst.labels.iter().filter(|b| **b).count();
            assert!((1..=2).contains(&n));
            assert_eq!(inst.target.first.len() + inst.target.second.len(), WINDOW);
            assert_eq!(inst.day, 4);
        }
    }

    #[test]
    fn unannotated_windows_are_skipped() {
        let mut events: Vec<_> = (0..19).map(|i| ev(i, "M1", "ON", Some((1, 0)))).collect();
        events[17].resident = None;
        events[17].activity = None;
        let report = window_instances(&complete_second_labels(events), 1, WINDOW, STEP, 3).unwrap();
        // windows [0,16) and [3,19): only the second contains event 17
        assert_eq!(report.instances.len(), 1);
        assert_eq!(report.skipped_unannotated, 1);
    }

    #[test]
    fn instance_line_round_trip_and_encoding() {
        let report = window_instances(&stream(16), 2, WINDOW, STEP, 3).unwrap();
        let inst = &report.instances[0];
        let back = Instance::parse(&inst.to_line()).unwrap();
        assert_eq!(&back, inst);
        let vocab = build_vocab([inst]);
        let enc = inst.encode(&vocab);
        assert_eq!(enc.window.len(), WINDOW);
        assert_eq!(enc.target_seq.len(), WINDOW + 3);
        assert_eq!(enc.gt_input.len(), WINDOW + 2);
        assert_eq!(enc.target_seq.iter().filter(|&&t| t == EOS).count(), 2);
        assert!(enc.window.iter().all(|&t| t > 3));
        assert!(Instance::parse("1\t0\ta\tb").is_err());
    }

    #[test]
    fn prepare_day_is_pure() {
        let mut text = String::new();
        for i in 0..40 {
            let value = if i % 5 == 4 { "OFF" } else { "ON" };
            text.push_str(&format!(
                "2008-11-10 10:00:{:02} M{:02} {value} {} {}\n",
                i,
                i % 7,
                i % 2 + 1,
                i % 4 + 1
            ));
        }
        let opts = ParseOptions::default();
        let (a, sa) = prepare_day(&text, 1, &opts).unwrap();
        let (b, _) = prepare_day(&text, 1, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa.removed_motion_off, 8);
        assert_eq!(sa.instances, window_count(32, WINDOW, STEP));
    }
}
