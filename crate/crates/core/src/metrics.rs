//! Detection metrics and score files.
//!
//! Scores follow the convention *higher = more bonafide*. A threshold `t`
//! accepts a trial as bonafide when `score >= t`, so
//! `FRR(t) = P(bonafide < t)` (miss) and `FAR(t) = P(spoof >= t)` (false
//! acceptance). Candidate thresholds sit at midpoints between adjacent
//! distinct scores (ties collapse onto one operating point), plus
//! accept-everything / reject-everything boundary points.
//!
//! - [`compute_eer`]: rate at the FAR/FRR crossing, linearly interpolated
//!   between the two adjacent operating points where `FAR - FRR` changes
//!   sign; both the rate and the crossing threshold are returned.
//! - [`compute_min_tdcf`]: minimum over thresholds of
//!   `C1*Pmiss(t) + C2*Pfa(t)`, normalized by `min(C1, C2)` so a dummy
//!   accept-all or reject-all system scores exactly 1.
//! - [`fuse_scores`]: per-utterance arithmetic mean across systems.
//!
//! Score files are UTF-8 text, `utt_id<SPACE>score`, one record per line,
//! scores printed with 17 significant digits so they round-trip exactly.
//! Protocol files are `utt_id<SPACE>label[<SPACE>attack_tag]` with label
//! `bonafide` or `spoof` and `-` as the attack tag for bonafide trials.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util::atomic_write;

/// Trial class. The numeric value doubles as the classifier target index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Spoof,
    Bonafide,
}

impl Label {
    /// Index of this class at the softmax output.
    pub fn class_index(&self) -> usize {
        match self {
            Label::Spoof => 0,
            Label::Bonafide => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Label::Spoof => "spoof",
            Label::Bonafide => "bonafide",
        }
    }

    pub fn from_name(name: &str) -> Result<Label> {
        match name {
            "spoof" => Ok(Label::Spoof),
            "bonafide" => Ok(Label::Bonafide),
            other => Err(Error::data(format!(
                "unknown label {other:?} (want bonafide or spoof)"
            ))),
        }
    }
}

/// One scored trial; `label` is absent for blind score files.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub utt_id: String,
    pub label: Option<Label>,
    pub score: f64,
}

/// One protocol line: ground truth for a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolEntry {
    pub utt_id: String,
    pub label: Label,
    /// Spoofing system tag; `-` for bonafide trials.
    pub attack: String,
}

/// Coefficients of the normalized two-term detection cost:
/// `c_miss` weights misses (bonafide rejected), `c_fa` weights false
/// acceptances (spoof accepted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdcfCosts {
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for TdcfCosts {
    fn default() -> Self {
        TdcfCosts {
            c_miss: 1.0,
            c_fa: 10.0,
        }
    }
}

impl TdcfCosts {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_miss > 0.0 && self.c_miss.is_finite())
            || !(self.c_fa > 0.0 && self.c_fa.is_finite())
        {
            return Err(Error::config(format!(
                "detection costs must be positive and finite, got c_miss={} c_fa={}",
                self.c_miss, self.c_fa
            )));
        }
        Ok(())
    }
}

/// Split labeled records into (bonafide, spoof) score vectors.
fn partition(records: &[ScoreRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut bonafide = Vec::new();
    let mut spoof = Vec::new();
    for r in records {
        if !r.score.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite score for {}: {}",
                r.utt_id, r.score
            )));
        }
        match r.label {
            Some(Label::Bonafide) => bonafide.push(r.score),
            Some(Label::Spoof) => spoof.push(r.score),
            None => {
                return Err(Error::data(format!(
                    "record {} has no label; metrics need labeled trials",
                    r.utt_id
                )))
            }
        }
    }
    Ok((bonafide, spoof))
}

fn check_two_classes(bonafide: &[f64], spoof: &[f64]) -> Result<()> {
    if bonafide.is_empty() || spoof.is_empty() {
        return Err(Error::data(format!(
            "metrics need both classes: {} bonafide, {} spoof",
            bonafide.len(),
            spoof.len()
        )));
    }
    if bonafide.iter().chain(spoof).any(|s| !s.is_finite()) {
        return Err(Error::numeric("non-finite score"));
    }
    Ok(())
}

/// Midpoints between adjacent distinct pooled scores. Boundary points are
/// the callers' concern ([`operating_points`] adds them).
fn midpoint_thresholds(bonafide: &[f64], spoof: &[f64]) -> Vec<f64> {
    let mut pooled: Vec<f64> = bonafide.iter().chain(spoof).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pooled.dedup();
    pooled.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// `(threshold, far, frr)` at every candidate operating point, threshold
/// ascending. Includes an accept-everything point below all scores
/// (far 1, frr 0) and a reject-everything point above (far 0, frr 1).
fn operating_points(bonafide: &[f64], spoof: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut bona = bonafide.to_vec();
    let mut spf = spoof.to_vec();
    bona.sort_by(|a, b| a.partial_cmp(b).unwrap());
    spf.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nb = bona.len() as f64;
    let ns = spf.len() as f64;
    let point = |t: f64| {
        // FRR: bonafide strictly below t; FAR: spoof at or above t.
        let below_b = bona.partition_point(|&s| s < t) as f64;
        let below_s = spf.partition_point(|&s| s < t) as f64;
        (t, (ns - below_s) / ns, below_b / nb)
    };
    let mut points = vec![(f64::NEG_INFINITY, 1.0, 0.0)];
    points.extend(midpoint_thresholds(&bona, &spf).into_iter().map(point));
    points.push((f64::INFINITY, 0.0, 1.0));
    points
}

/// Equal error rate over labeled records; returns `(eer, threshold)`.
pub fn compute_eer(records: &[ScoreRecord]) -> Result<(f64, f64)> {
    let (bonafide, spoof) = partition(records)?;
    eer_from_scores(&bonafide, &spoof)
}

/// [`compute_eer`] on pre-partitioned score sets.
pub fn eer_from_scores(bonafide: &[f64], spoof: &[f64]) -> Result<(f64, f64)> {
    check_two_classes(bonafide, spoof)?;
    let points = operating_points(bonafide, spoof);
    // far - frr runs from +1 down to -1; find the sign change.
    for w in points.windows(2) {
        let (t1, far1, frr1) = w[0];
        let (t2, far2, frr2) = w[1];
        let d1 = far1 - frr1;
        let d2 = far2 - frr2;
        if d1 == 0.0 {
            return Ok((far1, t1));
        }
        if d1 > 0.0 && d2 < 0.0 {
            // Interpolate the crossing between the two operating points.
            let frac = d1 / (d1 - d2);
            let eer = far1 + frac * (far2 - far1);
            // Boundary points sit at +-infinity; fall back to the finite
            // endpoint when interpolating against one (degenerate sets).
            let threshold = if t1.is_finite() && t2.is_finite() {
                t1 + frac * (t2 - t1)
            } else if t1.is_finite() {
                t1
            } else {
                t2
            };
            return Ok((eer, threshold));
        }
    }
    let (t_last, far_last, _) = *points.last().unwrap();
    Ok((far_last, t_last)) // unreachable given the boundary points
}

/// Normalized minimum detection cost over labeled records.
pub fn compute_min_tdcf(records: &[ScoreRecord], costs: &TdcfCosts) -> Result<f64> {
    let (bonafide, spoof) = partition(records)?;
    min_tdcf_from_scores(&bonafide, &spoof, costs)
}

/// [`compute_min_tdcf`] on pre-partitioned score sets.
pub fn min_tdcf_from_scores(bonafide: &[f64], spoof: &[f64], costs: &TdcfCosts) -> Result<f64> {
    costs.validate()?;
    check_two_classes(bonafide, spoof)?;
    let floor = costs.c_miss.min(costs.c_fa);
    let min_cost = operating_points(bonafide, spoof)
        .into_iter()
        .map(|(_, far, frr)| costs.c_miss * frr + costs.c_fa * far)
        .fold(f64::INFINITY, f64::min);
    Ok(min_cost / floor)
}

/// Per-utterance arithmetic mean of several systems' scores. All inputs
/// must cover exactly the same utterance set; output keeps the first
/// system's ordering and carries no labels.
pub fn fuse_scores(systems: &[Vec<ScoreRecord>]) -> Result<Vec<ScoreRecord>> {
    let first = systems
        .first()
        .ok_or_else(|| Error::config("fuse: need at least one score set"))?;
    let reference: BTreeSet<&str> = first.iter().map(|r| r.utt_id.as_str()).collect();
    let mut totals: HashMap<&str, f64> = first.iter().map(|r| (r.utt_id.as_str(), r.score)).collect();
    for (i, system) in systems.iter().enumerate().skip(1) {
        let ids: BTreeSet<&str> = system.iter().map(|r| r.utt_id.as_str()).collect();
        if ids != reference {
            let missing: Vec<&&str> = reference.difference(&ids).collect();
            let extra: Vec<&&str> = ids.difference(&reference).collect();
            return Err(Error::data(format!(
                "fuse: score set {} does not match the first: missing {missing:?}, unexpected {extra:?}",
                i + 1
            )));
        }
        for r in system {
            *totals.get_mut(r.utt_id.as_str()).unwrap() += r.score;
        }
    }
    let n = systems.len() as f64;
    Ok(first
        .iter()
        .map(|r| ScoreRecord {
            utt_id: r.utt_id.clone(),
            label: None,
            score: totals[r.utt_id.as_str()] / n,
        })
        .collect())
}

/// Render one score line: id, space, score at 17 significant digits.
pub fn format_score_line(utt_id: &str, score: f64) -> String {
    format!("{utt_id} {score:.16e}")
}

/// Write a score file ([`format_score_line`] per record).
pub fn write_score_file(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&format_score_line(&r.utt_id, r.score));
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

/// Parse a score file; ids must be unique, scores finite.
pub fn read_score_file(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (id, score_text) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(score), None) => (id, score),
            _ => {
                return Err(Error::data(format!(
                    "{}:{}: expected `utt_id score`, got {line:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        let score: f64 = score_text.parse().map_err(|_| {
            Error::data(format!(
                "{}:{}: bad score {score_text:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        if !score.is_finite() {
            return Err(Error::data(format!(
                "{}:{}: non-finite score for {id}",
                path.display(),
                lineno + 1
            )));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::data(format!(
                "{}: duplicate utt_id {id}",
                path.display()
            )));
        }
        records.push(ScoreRecord {
            utt_id: id.to_string(),
            label: None,
            score,
        });
    }
    if records.is_empty() {
        return Err(Error::data(format!(
            "{}: empty score file",
            path.display()
        )));
    }
    Ok(records)
}

/// Parse a protocol file (`utt_id label [attack_tag]`); ids unique.
pub fn read_protocol_file(path: &Path) -> Result<Vec<ProtocolEntry>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::data(format!(
                "{}:{}: expected `utt_id label [attack]`, got {line:?}",
                path.display(),
                lineno + 1
            )));
        }
        let label = Label::from_name(fields[1]).map_err(|e| {
            Error::data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::data(format!(
                "{}: duplicate utt_id {}",
                path.display(),
                fields[0]
            )));
        }
        entries.push(ProtocolEntry {
            utt_id: fields[0].to_string(),
            label,
            attack: fields.get(2).unwrap_or(&"-").to_string(),
        });
    }
    if entries.is_empty() {
        return Err(Error::data(format!(
            "{}: empty protocol file",
            path.display()
        )));
    }
    Ok(entries)
}

/// Attach protocol labels to blind score records. Every score id must
/// appear in the protocol; the symmetric difference is reported otherwise.
pub fn label_scores(
    scores: &[ScoreRecord],
    protocol: &[ProtocolEntry],
) -> Result<Vec<ScoreRecord>> {
    let by_id: HashMap<&str, &ProtocolEntry> =
        protocol.iter().map(|e| (e.utt_id.as_str(), e)).collect();
    let unknown: Vec<&str> = scores
        .iter()
        .map(|r| r.utt_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::data(format!(
            "scores contain ids missing from the protocol: {unknown:?}"
        )));
    }
    Ok(scores
        .iter()
        .map(|r| ScoreRecord {
            utt_id: r.utt_id.clone(),
            label: Some(by_id[r.utt_id.as_str()].label),
            score: r.score,
        })
        .collect())
}
