//! Per-person clustering of classified proposals and the `actmap/1`
//! document.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{ActivityKind, ActivityLabelRecord};
use crate::error::{Error, Result};

pub const SCHEMA: &str = "actmap/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityInstance {
    pub kind: ActivityKind,
    pub person: String,
    pub t_start: f64,
    pub t_end: f64,
    pub probability: f64,
}

impl ActivityInstance {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > self.t_start) || !self.t_start.is_finite() || !self.t_end.is_finite() {
            return Err(Error::Record(format!(
                "instance of `{}` has empty span [{}, {})",
                self.person, self.t_start, self.t_end
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Record(format!(
                "instance probability {} outside [0,1]",
                self.probability
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub kind: ActivityKind,
    pub person: String,
    pub t_start: f64,
    pub t_end: f64,
    /// Member count.
    pub n: usize,
    /// Mean member probability.
    pub p_mean: f64,
    #[serde(default)]
    pub link: String,
}

impl Cluster {
    pub fn span(&self) -> f64 {
        self.t_end - self.t_start
    }

    fn overlaps(&self, t0: f64, t1: f64) -> bool {
        self.t_start < t1 && t0 < self.t_end
    }
}

fn order(a: &Cluster, b: &Cluster) -> std::cmp::Ordering {
    (a.person.as_str(), a.kind as u8)
        .cmp(&(b.person.as_str(), b.kind as u8))
        .then(a.t_start.total_cmp(&b.t_start))
        .then(a.t_end.total_cmp(&b.t_end))
}

fn by_doc_order(a: &Cluster, b: &Cluster) -> std::cmp::Ordering {
    a.person
        .cmp(&b.person)
        .then(a.t_start.total_cmp(&b.t_start))
        .then((a.kind as u8).cmp(&(b.kind as u8)))
        .then(a.t_end.total_cmp(&b.t_end))
}

/// Merges clusters of the same person and kind whose gap is below
/// `gap_seconds`. Output is sorted by person, then start.
pub fn merge_clusters(mut items: Vec<Cluster>, gap_seconds: f64) -> Vec<Cluster> {
    items.sort_by(order);
    let mut out: Vec<Cluster> = Vec::with_capacity(items.len());
    for c in items {
        if let Some(last) = out.last_mut() {
            if last.person == c.person
                && last.kind == c.kind
                && c.t_start - last.t_end < gap_seconds
            {
                let n = last.n + c.n;
                last.p_mean = (last.p_mean * last.n as f64 + c.p_mean * c.n as f64) / n as f64;
                last.n = n;
                last.t_end = last.t_end.max(c.t_end);
                continue;
            }
        }
        out.push(c);
    }
    out.sort_by(by_doc_order);
    out
}

pub fn cluster_instances(instances: &[ActivityInstance], gap_seconds: f64) -> Vec<Cluster> {
    let singles = instances
        .iter()
        .map(|i| Cluster {
            kind: i.kind,
            person: i.person.clone(),
            t_start: i.t_start,
            t_end: i.t_end,
            n: 1,
            p_mean: i.probability,
            link: String::new(),
        })
        .collect();
    merge_clusters(singles, gap_seconds)
}

pub fn filter_min_duration(clusters: Vec<Cluster>, min_seconds: f64) -> Vec<Cluster> {
    clusters
        .into_iter()
        .filter(|c| c.span() >= min_seconds)
        .collect()
}

/// Where typing clusters of different persons overlap, only the cluster
/// with the higher mean probability keeps the overlap (ties: smaller
/// pseudonym). Losers are trimmed or split; pieces keep the parent's
/// member count and mean. Other kinds pass through.
pub fn resolve_simultaneous_typing(clusters: Vec<Cluster>) -> Vec<Cluster> {
    let (typing, mut out): (Vec<Cluster>, Vec<Cluster>) = clusters
        .into_iter()
        .partition(|c| c.kind == ActivityKind::Typing);
    let mut cuts: Vec<f64> = typing.iter().flat_map(|c| [c.t_start, c.t_end]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let beats = |a: &Cluster, b: &Cluster| {
        a.p_mean > b.p_mean || (a.p_mean == b.p_mean && a.person < b.person)
    };
    // Pieces won by each cluster, as runs of elementary intervals.
    let mut won: Vec<Vec<(f64, f64)>> = vec![Vec::new(); typing.len()];
    for seg in cuts.windows(2) {
        let (t0, t1) = (seg[0], seg[1]);
        let mut winner: Option<usize> = None;
        for (i, c) in typing.iter().enumerate() {
            if c.t_start <= t0 && t1 <= c.t_end {
                winner = match winner {
                    Some(w) if !beats(c, &typing[w]) => Some(w),
                    _ => Some(i),
                };
            }
        }
        if let Some(w) = winner {
            match won[w].last_mut() {
                Some(last) if last.1 == t0 => last.1 = t1,
                _ => won[w].push((t0, t1)),
            }
        }
    }
    for (c, pieces) in typing.into_iter().zip(won) {
        for (t0, t1) in pieces {
            out.push(Cluster {
                t_start: t0,
                t_end: t1,
                ..c.clone()
            });
        }
    }
    out.sort_by(by_doc_order);
    out
}

/// `base_url?t=<floor seconds>`.
pub fn make_link(base_url: &str, t_start: f64) -> String {
    format!("{base_url}?t={}", t_start.max(0.0).floor() as u64)
}

/// Seconds encoded by [`make_link`].
pub fn parse_link(link: &str) -> Option<u64> {
    link.rsplit_once("?t=")?.1.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    /// Seconds.
    pub duration: f64,
    pub base_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapParameters {
    pub gap_seconds: f64,
    pub min_duration_seconds: f64,
    pub probability_threshold: f64,
    pub resolve_simultaneous: bool,
}

impl Default for MapParameters {
    fn default() -> Self {
        Self {
            gap_seconds: 3.0,
            min_duration_seconds: 0.0,
            probability_threshold: 0.5,
            resolve_simultaneous: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    Tp,
    Fp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub kind: ActivityKind,
    pub person: String,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Aligned with the clusters array.
    pub marks: Vec<Mark>,
    pub false_negatives: Vec<Interval>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityMapDoc {
    pub schema: String,
    pub session: SessionInfo,
    pub parameters: MapParameters,
    pub clusters: Vec<Cluster>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Evaluation>,
}

/// Positive intervals of `kind` in one session, in seconds.
pub fn ground_truth(
    records: &[ActivityLabelRecord],
    session: &str,
    kind: ActivityKind,
    fps: f64,
) -> Vec<Interval> {
    records
        .iter()
        .filter(|r| {
            r.session_id == session
                && !r.excluded
                && r.activity.kind() == kind
                && r.activity.label() == 1
        })
        .map(|r| Interval {
            kind,
            person: r.person.clone(),
            t_start: r.f0 as f64 / fps,
            t_end: r.f1 as f64 / fps,
        })
        .collect()
}

/// A cluster is a true positive when it overlaps a same-person interval
/// of its kind; intervals no cluster overlaps are false negatives.
pub fn evaluate(clusters: &[Cluster], truth: &[Interval]) -> Evaluation {
    let hit = |c: &Cluster, g: &Interval| {
        c.person == g.person && c.kind == g.kind && c.overlaps(g.t_start, g.t_end)
    };
    let marks: Vec<Mark> = clusters
        .iter()
        .map(|c| {
            if truth.iter().any(|g| hit(c, g)) {
                Mark::Tp
            } else {
                Mark::Fp
            }
        })
        .collect();
    let false_negatives: Vec<Interval> = truth
        .iter()
        .filter(|g| !clusters.iter().any(|c| hit(c, g)))
        .cloned()
        .collect();
    let tp = marks.iter().filter(|m| **m == Mark::Tp).count();
    Evaluation {
        fp: marks.len() - tp,
        tp,
        fn_: false_negatives.len(),
        marks,
        false_negatives,
    }
}

impl ActivityMapDoc {
    /// Sorts the clusters and fills their links.
    pub fn new(
        session: SessionInfo,
        parameters: MapParameters,
        mut clusters: Vec<Cluster>,
    ) -> Self {
        clusters.sort_by(by_doc_order);
        for c in clusters.iter_mut() {
            c.link = make_link(&session.base_url, c.t_start);
        }
        Self {
            schema: SCHEMA.to_string(),
            session,
            parameters,
            clusters,
            evaluation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Record(format!("actmap: {m}")));
        if self.schema != SCHEMA {
            return bad(format!("schema `{}`, expected `{SCHEMA}`", self.schema));
        }
        if self.session.base_url.is_empty() {
            return bad("empty base_url".into());
        }
        // Times are compared at the emitted precision.
        let eps = 5e-4;
        for (i, c) in self.clusters.iter().enumerate() {
            if !(c.t_end > c.t_start) || c.t_start < -eps || c.t_end > self.session.duration + eps {
                return bad(format!(
                    "cluster {i} span [{}, {}) outside session",
                    c.t_start, c.t_end
                ));
            }
        }
        if let Some(i) = self
            .clusters
            .windows(2)
            .position(|p| by_doc_order(&p[0], &p[1]).is_gt())
        {
            return bad(format!("clusters {i} and {} out of order", i + 1));
        }
        if let Some(e) = &self.evaluation {
            if e.marks.len() != self.clusters.len() {
                return bad(format!(
                    "{} marks for {} clusters",
                    e.marks.len(),
                    self.clusters.len()
                ));
            }
        }
        Ok(())
    }

    /// Canonical text: sorted keys, two-space indent, floats with three
    /// decimals.
    pub fn to_canonical(&self) -> String {
        let v = serde_json::to_value(self).expect("document serializes");
        let mut s = String::new();
        write_value(&v, 0, &mut s);
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| Error::Record(format!("actmap: {e}")))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn emit(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let path = path.as_ref();
        std::fs::write(path, self.to_canonical()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Clusters per person, e.g. for lane counts.
    pub fn lanes(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for c in &self.clusters {
            *m.entry(c.person.as_str()).or_default() += 1;
        }
        m
    }
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_u64() {
                write!(out, "{i}").unwrap();
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                let f = n.as_f64().expect("finite number");
                let s = format!("{f:.3}");
                // No negative zero in canonical form.
                out.push_str(if s == "-0.000" { "0.000" } else { &s });
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(x, indent + 1, out);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_value(&m[k.as_str()], indent + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(person: &str, t0: f64, t1: f64, p: f64) -> ActivityInstance {
        ActivityInstance {
            kind: ActivityKind::Typing,
            person: person.into(),
            t_start: t0,
            t_end: t1,
            probability: p,
        }
    }

    #[test]
    fn gap_rule_is_strict() {
        let c = cluster_instances(&[inst("a", 0.0, 3.0, 0.8), inst("a", 4.0, 7.0, 0.6)], 3.0);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].t_start, c[0].t_end, c[0].n), (0.0, 7.0, 2));
        assert!((c[0].p_mean - 0.7).abs() < 1e-12);
        let c = cluster_instances(&[inst("a", 0.0, 3.0, 0.8), inst("a", 6.0, 9.0, 0.6)], 3.0);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn min_duration() {
        let c = cluster_instances(&[inst("a", 0.0, 2.0, 0.8)], 3.0);
        assert_eq!(filter_min_duration(c.clone(), 0.0), c);
        assert!(filter_min_duration(c, 3.0).is_empty());
    }

    #[test]
    fn overlap_goes_to_higher_mean() {
        let c = cluster_instances(&[inst("a", 0.0, 9.0, 0.9), inst("b", 3.0, 6.0, 0.6)], 3.0);
        let r = resolve_simultaneous_typing(c.clone());
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].person, "a");
        let c = cluster_instances(&[inst("a", 0.0, 9.0, 0.6), inst("b", 3.0, 6.0, 0.9)], 3.0);
        let r = resolve_simultaneous_typing(c);
        let spans: Vec<_> = r
            .iter()
            .map(|c| (c.person.as_str(), c.t_start, c.t_end))
            .collect();
        assert_eq!(spans, [("a", 0.0, 3.0), ("a", 6.0, 9.0), ("b", 3.0, 6.0)]);
    }

    #[test]
    fn links() {
        assert_eq!(make_link("https://host/v/1", 83.7), "https://host/v/1?t=83");
        assert_eq!(make_link("https://host/v/1", 0.0), "https://host/v/1?t=0");
        assert_eq!(parse_link("https://host/v/1?t=83"), Some(83));
    }

    #[test]
    fn canonical_round_trip() {
        let session = SessionInfo {
            id: "s".into(),
            duration: 120.0,
            base_url: "https://host/v/s".into(),
        };
        let empty = ActivityMapDoc::new(session.clone(), MapParameters::default(), vec![]);
        let text = empty.to_canonical();
        assert!(text.contains("\"clusters\": []"));
        assert_eq!(ActivityMapDoc::parse(&text).unwrap().to_canonical(), text);

        let c = cluster_instances(
            &[inst("b", 1.25, 4.0, 0.7), inst("a", 10.0, 13.0, 0.61234)],
            3.0,
        );
        let doc = ActivityMapDoc::new(session, MapParameters::default(), c);
        let text = doc.to_canonical();
        assert!(text.contains("\"p_mean\": 0.612"));
        assert!(text.contains("\"t_start\": 1.250"));
        assert_eq!(ActivityMapDoc::parse(&text).unwrap().to_canonical(), text);
        assert!(ActivityMapDoc::parse(&text.replace("actmap/1", "actmap/2")).is_err());
    }
}
