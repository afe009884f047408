//! Two-resident home simulator.
//!
//! Stations sit on a line, one motion sensor each. Resident 1 owns the
//! stations `[0, Z)`, resident 2 owns `[Z - o, 2Z - o)` with
//! `o = round(ω·Z)` shared. An activity is anchored at a station of the
//! owner's zone and emits events on the anchor and its two neighbours,
//! either at random (`wander`) or as an ordered sweep (`up`, `down`).
//! Each resident is a Poisson process; the two streams are merged by time.

use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::casas::SensorEvent;
use super::prep::{
    complete_second_labels, is_motion_off, window_instances, Instance, CLASSES_FILE, STEP, WINDOW,
};
use crate::error::{Error, Result};

const PATTERNS: [&str; 3] = ["wander", "up", "down"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Stations per resident zone.
    pub zone_size: usize,
    /// Fraction ω of a zone shared with the other resident.
    pub overlap: f64,
    pub days: usize,
    /// ON events per day, both residents together.
    pub events_per_day: usize,
    /// Events per second for each resident.
    pub rate: f64,
    /// Mean number of events in one activity.
    pub mean_activity_events: f64,
    /// Activity patterns in use, 1 to 3 of wander/up/down.
    pub patterns: usize,
    /// Distance between activity anchors; 3 or more gives every activity
    /// its own sensors.
    pub anchor_spacing: usize,
    /// Emit a motion OFF after every ON.
    pub emit_off: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            zone_size: 7,
            overlap: 0.0,
            days: 26,
            events_per_day: 600,
            rate: 0.2,
            mean_activity_events: 12.0,
            patterns: 3,
            anchor_spacing: 2,
            emit_off: true,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "overlap must lie in [0, 1], got {}",
                self.overlap
            )));
        }
        if self.zone_size < 3 {
            return Err(Error::Config("zone_size must be at least 3".into()));
        }
        if !(1..=PATTERNS.len()).contains(&self.patterns) {
            return Err(Error::Config(format!(
                "patterns must be 1..={}",
                PATTERNS.len()
            )));
        }
        if self.anchor_spacing == 0 {
            return Err(Error::Config("anchor_spacing must be positive".into()));
        }
        if !(self.rate > 0.0) || !(self.mean_activity_events >= 1.0) {
            return Err(Error::Config(
                "rate must be > 0 and mean_activity_events >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn shared_stations(&self) -> usize {
        (self.overlap * self.zone_size as f64).round() as usize
    }

    pub fn num_stations(&self) -> usize {
        2 * self.zone_size - self.shared_stations()
    }

    /// Station range owned by resident 0 or 1.
    pub fn zone(&self, resident: usize) -> std::ops::Range<usize> {
        let start = resident * (self.zone_size - self.shared_stations());
        start..start + self.zone_size
    }

    fn anchors(&self, resident: usize) -> Vec<usize> {
        let z = self.zone(resident);
        (z.start + 1..z.end - 1)
            .step_by(self.anchor_spacing)
            .collect()
    }

    /// Activity classes as `(anchor, pattern)`, sorted.
    pub fn classes(&self) -> Vec<(usize, usize)> {
        let mut anchors = self.anchors(0);
        anchors.extend(self.anchors(1));
        anchors.sort_unstable();
        anchors.dedup();
        anchors
            .into_iter()
            .flat_map(|a| (0..self.patterns).map(move |p| (a, p)))
            .collect()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes()
            .into_iter()
            .map(|(a, p)| format!("{}-{}", sensor_name(a), PATTERNS[p]))
            .collect()
    }
}

pub fn sensor_name(station: usize) -> String {
    format!("M{station:02}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticHome {
    pub days: Vec<Vec<SensorEvent>>,
    pub class_names: Vec<String>,
}

struct Walker {
    resident: u32,
    choices: Vec<usize>,
    class: usize,
    remaining: usize,
    phase: usize,
    next_time: f64,
}

impl Walker {
    fn start_activity<R: Rng>(&mut self, rng: &mut R, mean: f64) {
        self.class = *self.choices.choose(rng).expect("zone has anchors");
        // geometric length with the configured mean, at least one event
        let p = 1.0 / mean;
        let mut n = 1;
        while rng.gen::<f64>() >= p {
            n += 1;
        }
        self.remaining = n;
        self.phase = rng.gen_range(0..3);
    }

    fn station<R: Rng>(&mut self, rng: &mut R, classes: &[(usize, usize)]) -> usize {
        let (anchor, pattern) = classes[self.class];
        let offset = match pattern {
            0 => rng.gen_range(0..3),
            1 => self.phase % 3,
            _ => 2 - self.phase % 3,
        };
        self.phase += 1;
        anchor + offset - 1
    }
}

fn micros(t: f64) -> Duration {
    Duration::microseconds((t * 1e6).round() as i64)
}

fn day_events<R: Rng>(cfg: &SyntheticConfig, day: usize, rng: &mut R) -> Vec<SensorEvent> {
    let classes = cfg.classes();
    let origin: NaiveDateTime = NaiveDate::from_ymd_opt(2009, 2, 2)
        .expect("valid date")
        .and_hms_opt(8, 0, 0)
        .expect("valid time")
        + Duration::days(day as i64);
    let gap = Exp::new(cfg.rate).expect("rate validated");
    let mut walkers: Vec<Walker> = (0..2)
        .map(|r| {
            let anchors = cfg.anchors(r);
            Walker {
                resident: r as u32 + 1,
                choices: (0..classes.len())
                    .filter(|&c| anchors.contains(&classes[c].0))
                    .collect(),
                class: 0,
                remaining: 0,
                phase: 0,
                next_time: 0.0,
            }
        })
        .collect();
    for w in &mut walkers {
        w.next_time = gap.sample(rng);
    }
    let mut events = Vec::with_capacity(cfg.events_per_day * 2);
    for _ in 0..cfg.events_per_day {
        let i = if walkers[0].next_time <= walkers[1].next_time {
            0
        } else {
            1
        };
        let w = &mut walkers[i];
        if w.remaining == 0 {
            w.start_activity(rng, cfg.mean_activity_events);
        }
        w.remaining -= 1;
        let station = w.station(rng, &classes);
        let t = w.next_time;
        let on = SensorEvent {
            timestamp: origin + micros(t),
            sensor: sensor_name(station),
            value: "ON".into(),
            resident: Some(w.resident),
            activity: Some(w.class),
            co_annotation: None,
        };
        if cfg.emit_off {
            let mut off = on.clone();
            off.value = "OFF".into();
            off.timestamp = origin + micros(t + rng.gen_range(0.5..2.0));
            events.push(off);
        }
        events.push(on);
        w.next_time += gap.sample(rng);
    }
    // OFF events were pushed ahead of their ON; a stable sort restores time order
    events.sort_by_key(|e| e.timestamp);
    events
}

/// Annotated day streams; deterministic under `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticHome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let days = (0..cfg.days)
        .map(|d| day_events(cfg, d, &mut rng))
        .collect();
    Ok(SyntheticHome {
        days,
        class_names: cfg.class_names(),
    })
}

/// Runs the preprocessing pipeline (label completion, motion-off removal,
/// 16/3 windows) over every simulated day; day ids count from 1.
pub fn synthetic_instances(home: &SyntheticHome) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (d, events) in home.days.iter().enumerate() {
        let mut labeled = complete_second_labels(events.clone());
        labeled.retain(|e| !is_motion_off(&e.event));
        out.extend(
            window_instances(&labeled, d + 1, WINDOW, STEP, home.class_names.len())?.instances,
        );
    }
    Ok(out)
}

/// Writes `dayNN.txt` files in CASAS format plus the class-name list.
pub fn write_day_files(dir: &Path, home: &SyntheticHome) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (d, events) in home.days.iter().enumerate() {
        let mut text = String::new();
        for e in events {
            text.push_str(&e.to_line(1));
            text.push('\n');
        }
        fs::write(dir.join(format!("day{:02}.txt", d + 1)), text)?;
    }
    let mut names = home.class_names.join("\n");
    names.push('\n');
    fs::write(dir.join(CLASSES_FILE), names)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::casas::{parse_casas, ParseOptions};
    use std::collections::{HashMap, HashSet};

    fn cfg(overlap: f64) -> SyntheticConfig {
        SyntheticConfig {
            overlap,
            days: 2,
            events_per_day: 400,
            ..SyntheticConfig::default()
        }
    }

    fn sensors_by_resident(home: &SyntheticHome) -> HashMap<String, HashSet<u32>> {
        let mut map: HashMap<String, HashSet<u32>> = HashMap::new();
        for e in home.days.iter().flatten() {
            map.entry(e.sensor.clone())
                .or_default()
                .insert(e.resident.unwrap());
        }
        map
    }

    #[test]
    fn disjoint_zones_without_overlap() {
        let home = generate_synthetic(&cfg(0.0)).unwrap();
        for (sensor, who) in sensors_by_resident(&home) {
            assert_eq!(who.len(), 1, "{sensor} used by {who:?}");
        }
    }

    #[test]
    fn full_overlap_shares_every_zone() {
        let c = cfg(1.0);
        assert_eq!(c.zone(0), c.zone(1));
        let home = generate_synthetic(&c).unwrap();
        let map = sensors_by_resident(&home);
        assert!(map.values().all(|w| w.len() == 2));
    }

    #[test]
    fn same_seed_same_stream() {
        let a = generate_synthetic(&cfg(0.5)).unwrap();
        let b = generate_synthetic(&cfg(0.5)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig {
            seed: 2,
            ..cfg(0.5)
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_rate_matches_config() {
        let c = SyntheticConfig {
            days: 1,
            events_per_day: 10_000,
            emit_off: false,
            rate: 0.5,
            ..SyntheticConfig::default()
        };
        let home = generate_synthetic(&c).unwrap();
        for r in [1, 2] {
            let times: Vec<f64> = home.days[0]
                .iter()
                .filter(|e| e.resident == Some(r))
                .map(|e| e.timestamp.and_utc().timestamp_micros() as f64 / 1e6)
                .collect();
            let span = times.last().unwrap() - times.first().unwrap();
            let observed = (times.len() - 1) as f64 / span;
            assert!(
                (observed - c.rate).abs() / c.rate < 0.05,
                "resident {r}: {observed} events/s"
            );
        }
    }

    #[test]
    fn invalid_overlap_rejected() {
        assert!(generate_synthetic(&cfg(1.5)).is_err());
        assert!(generate_synthetic(&cfg(-0.1)).is_err());
    }

    #[test]
    fn class_layout() {
        assert_eq!(cfg(0.0).classes().len(), 18);
        assert_eq!(cfg(1.0).classes().len(), 9);
        let one = SyntheticConfig {
            patterns: 1,
            ..cfg(0.0)
        };
        assert_eq!(one.class_names()[0], "M01-wander");
        let sparse = SyntheticConfig {
            anchor_spacing: 3,
            ..one
        };
        let anchors: Vec<usize> = sparse.classes().iter().map(|c| c.0).collect();
        assert_eq!(anchors, vec![1, 4, 8, 11]);
    }

    #[test]
    fn pipeline_matches_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let home = generate_synthetic(&cfg(0.5)).unwrap();
        write_day_files(dir.path(), &home).unwrap();
        let opts = ParseOptions {
            num_classes: home.class_names.len(),
            ..ParseOptions::default()
        };
        let mut via_files = Vec::new();
        for d in 0..home.days.len() {
            let text = fs::read_to_string(dir.path().join(format!("day{:02}.txt", d + 1))).unwrap();
            via_files.extend(
                crate::data::prep::prepare_day(&text, d + 1, &opts)
                    .unwrap()
                    .0,
            );
        }
        assert_eq!(synthetic_instances(&home).unwrap(), via_files);
    }

    #[test]
    fn files_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(0.25);
        let home = generate_synthetic(&c).unwrap();
        write_day_files(dir.path(), &home).unwrap();
        let text = fs::read_to_string(dir.path().join("day01.txt")).unwrap();
        let opts = ParseOptions {
            num_classes: home.class_names.len(),
            ..ParseOptions::default()
        };
        let (events, diag) = parse_casas(&text, &opts).unwrap();
        assert!(diag.malformed.is_empty());
        assert_eq!(diag.out_of_order, 0);
        assert_eq!(events, home.days[0]);
    }
}
