//! CASAS-style day files: `date time sensor value [resident activity]{0,2}`.

use std::collections::HashMap;
use std::fmt;

use chrono::NaiveDateTime;

use crate::error::{Error, Result};

const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S%.f";

#[derive(Clone, Debug, PartialEq)]
pub struct SensorEvent {
    pub timestamp: NaiveDateTime,
    pub sensor: String,
    pub value: String,
    pub resident: Option<u32>,
    /// Activity class index.
    pub activity: Option<usize>,
    /// Second annotation pair on the same line: another resident's
    /// concurrent activity.
    pub co_annotation: Option<(u32, usize)>,
}

impl SensorEvent {
    /// Vocabulary token `sensor:value`.
    pub fn token(&self) -> String {
        format!("{}:{}", self.sensor, self.value)
    }

    pub fn to_line(&self, activity_base: usize) -> String {
        let mut s = format!(
            "{} {} {}",
            self.timestamp.format("%Y-%m-%d %H:%M:%S%.6f"),
            self.sensor,
            self.value
        );
        if let (Some(r), Some(a)) = (self.resident, self.activity) {
            s.push_str(&format!(" {r} {}", a + activity_base));
        }
        if let Some((r, a)) = self.co_annotation {
            s.push_str(&format!(" {r} {}", a + activity_base));
        }
        s
    }
}

/// Which annotation layout the parser saw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AnnotationVariant {
    #[default]
    Unannotated,
    OnePair,
    TwoPair,
    Mixed,
}

impl fmt::Display for AnnotationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotationVariant::Unannotated => "unannotated",
            AnnotationVariant::OnePair => "one-pair",
            AnnotationVariant::TwoPair => "two-pair",
            AnnotationVariant::Mixed => "mixed one/two-pair",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseDiagnostics {
    pub skipped_blank_or_comment: usize,
    /// `(line number, reason)` for every rejected line.
    pub malformed: Vec<(usize, String)>,
    pub out_of_order: usize,
    pub unannotated: usize,
    pub variant: AnnotationVariant,
}

impl ParseDiagnostics {
    fn saw(&mut self, v: AnnotationVariant) {
        use AnnotationVariant::*;
        self.variant = match (self.variant, v) {
            (Unannotated, x) => x,
            (x, y) if x == y => x,
            _ => Mixed,
        };
    }
}

/// Activity label rewrites (`old new` per line), applied to the raw
/// activity column before it is interpreted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corrections {
    map: HashMap<String, String>,
}

impl Corrections {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(Error::Parse {
                    file: file.to_string(),
                    msg: format!("line {}: expected `old new`", n + 1),
                });
            }
            map.insert(f[0].to_string(), f[1].to_string());
        }
        Ok(Self { map })
    }

    pub fn apply<'a>(&'a self, raw: &'a str) -> &'a str {
        self.map.get(raw).map_or(raw, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ParseOptions {
    /// Activity id in the file that maps to class 0.
    pub activity_base: usize,
    pub num_classes: usize,
    pub corrections: Corrections,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            activity_base: 1,
            num_classes: 15,
            corrections: Corrections::default(),
        }
    }
}

fn parse_pair(r: &str, a: &str, opts: &ParseOptions) -> std::result::Result<(u32, usize), String> {
    let resident: u32 = r.parse().map_err(|_| format!("bad resident id `{r}`"))?;
    let a = opts.corrections.apply(a);
    let raw: usize = a.parse().map_err(|_| format!("bad activity id `{a}`"))?;
    match raw.checked_sub(opts.activity_base) {
        Some(c) if c < opts.num_classes => Ok((resident, c)),
        _ => Err(format!(
            "activity id {raw} outside the {} classes",
            opts.num_classes
        )),
    }
}

/// Parses one day file. Malformed lines are collected, not dropped
/// silently; events come back stably sorted by timestamp.
pub fn parse_casas(
    text: &str,
    opts: &ParseOptions,
) -> Result<(Vec<SensorEvent>, ParseDiagnostics)> {
    let mut diag = ParseDiagnostics::default();
    let mut events = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            diag.skipped_blank_or_comment += 1;
            continue;
        }
        let f: Vec<&str> = trimmed.split_whitespace().collect();
        if f.len() < 4 {
            diag.malformed
                .push((lineno, "fewer than four fields".into()));
            continue;
        }
        let stamp = format!("{} {}", f[0], f[1]);
        let timestamp = match NaiveDateTime::parse_from_str(&stamp, TIME_FORMAT) {
            Ok(t) => t,
            Err(e) => {
                diag.malformed
                    .push((lineno, format!("bad timestamp `{stamp}`: {e}")));
                continue;
            }
        };
        let pairs = match f.len() - 4 {
            0 => Ok((None, None)),
            2 => parse_pair(f[4], f[5], opts).map(|p| (Some(p), None)),
            4 => parse_pair(f[4], f[5], opts)
                .and_then(|p| parse_pair(f[6], f[7], opts).map(|q| (Some(p), Some(q)))),
            k => Err(format!("{k} annotation fields (expected 0, 2 or 4)")),
        };
        let (first, second) = match pairs {
            Ok(p) => p,
            Err(msg) => {
                diag.malformed.push((lineno, msg));
                continue;
            }
        };
        match (first, second) {
            (None, _) => diag.unannotated += 1,
            (Some(_), None) => diag.saw(AnnotationVariant::OnePair),
            (Some(_), Some(_)) => diag.saw(AnnotationVariant::TwoPair),
        }
        events.push(SensorEvent {
            timestamp,
            sensor: f[2].to_string(),
            value: f[3].to_string(),
            resident: first.map(|p| p.0),
            activity: first.map(|p| p.1),
            co_annotation: second,
        });
    }
    let mut ids: Vec<u32> = Vec::new();
    for e in &events {
        for r in e
            .resident
            .iter()
            .chain(e.co_annotation.as_ref().map(|p| &p.0))
        {
            if !ids.contains(r) {
                ids.push(*r);
            }
        }
    }
    if ids.len() > 2 {
        return Err(Error::TooManyResidents);
    }
    diag.out_of_order = events
        .windows(2)
        .filter(|w| w[1].timestamp < w[0].timestamp)
        .count();
    if diag.out_of_order > 0 {
        log::warn!(
            "{} out-of-order timestamps; sorting stably",
            diag.out_of_order
        );
        events.sort_by_key(|e| e.timestamp);
    }
    Ok((events, diag))
}
