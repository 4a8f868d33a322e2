//! Dataset manifests: which utterances exist, where their audio lives,
//! and (when known) their labels and attack tags.
//!
//! Two line formats are accepted and auto-detected per file:
//!
//! - native: `utt_id wav_path [label [attack]]`, 2–4 whitespace-separated
//!   fields, `wav_path` relative to the manifest root;
//! - protocol layout used by the spoofing challenge corpora:
//!   `speaker utt_id field3 attack key` (5 fields, key in
//!   {bonafide, spoof}); audio resolves to `<utt_id>.wav` under the root.
//!
//! Blank lines and `#` comments are skipped. Utterance ids must be unique
//! and every referenced audio file must exist at load time.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use res2spoof::error::{Error, Result};
use res2spoof::metrics::Label;

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub utt_id: String,
    /// Audio path relative to the manifest root.
    pub rel_path: String,
    pub label: Option<Label>,
    /// Attack tag; `-` when unknown or bonafide.
    pub attack: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum LineFormat {
    Native,
    ChallengeProtocol,
}

fn detect_format(fields: &[&str]) -> Option<LineFormat> {
    match fields.len() {
        2..=4 => Some(LineFormat::Native),
        5 if matches!(fields[4], "bonafide" | "spoof") => Some(LineFormat::ChallengeProtocol),
        _ => None,
    }
}

/// Ids become cache file names and score-file tokens, so they must be
/// plain identifiers: no whitespace (already split away), no separators.
fn check_utt_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && id != "."
        && id != "..";
    if ok {
        Ok(())
    } else {
        Err(Error::data(format!(
            "utt_id {id:?} contains unsupported characters (use [A-Za-z0-9._-])"
        )))
    }
}

fn parse_entry(
    format: LineFormat,
    fields: &[&str],
    path: &Path,
    lineno: usize,
) -> Result<ManifestEntry> {
    let bad = |msg: String| Error::data(format!("{}:{}: {msg}", path.display(), lineno));
    match format {
        LineFormat::Native => {
            if !(2..=4).contains(&fields.len()) {
                return Err(bad(format!(
                    "expected `utt_id wav_path [label [attack]]`, got {} fields",
                    fields.len()
                )));
            }
            check_utt_id(fields[0]).map_err(|e| bad(format!("{e}")))?;
            let label = match fields.get(2) {
                Some(text) => Some(
                    Label::from_name(text)
                        .map_err(|e| bad(format!("{e}")))?,
                ),
                None => None,
            };
            Ok(ManifestEntry {
                utt_id: fields[0].to_string(),
                rel_path: fields[1].to_string(),
                label,
                attack: fields.get(3).unwrap_or(&"-").to_string(),
            })
        }
        LineFormat::ChallengeProtocol => {
            if fields.len() != 5 {
                return Err(bad(format!(
                    "expected `speaker utt_id field3 attack key`, got {} fields",
                    fields.len()
                )));
            }
            check_utt_id(fields[1]).map_err(|e| bad(format!("{e}")))?;
            let label = Label::from_name(fields[4]).map_err(|e| bad(format!("{e}")))?;
            Ok(ManifestEntry {
                utt_id: fields[1].to_string(),
                rel_path: format!("{}.wav", fields[1]),
                label: Some(label),
                attack: fields[3].to_string(),
            })
        }
    }
}

impl Manifest {
    /// Parse `path`; audio paths resolve against `root` (default: the
    /// manifest's own directory). Fails on duplicate ids, mixed formats,
    /// or any referenced audio file that does not exist.
    pub fn load(path: &Path, root: Option<&Path>) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let root = match root {
            Some(r) => r.to_path_buf(),
            None => path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };

        let mut format: Option<LineFormat> = None;
        let mut seen = BTreeSet::new();
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let this = detect_format(&fields).ok_or_else(|| {
                Error::data(format!(
                    "{}:{}: unrecognized manifest line ({} fields)",
                    path.display(),
                    lineno,
                    fields.len()
                ))
            })?;
            let format = *format.get_or_insert(this);
            if this != format {
                return Err(Error::data(format!(
                    "{}:{}: line format changes mid-file",
                    path.display(),
                    lineno
                )));
            }
            let entry = parse_entry(format, &fields, path, lineno)?;
            if !seen.insert(entry.utt_id.clone()) {
                return Err(Error::data(format!(
                    "{}: duplicate utt_id {}",
                    path.display(),
                    entry.utt_id
                )));
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::data(format!(
                "{}: no utterances listed",
                path.display()
            )));
        }

        let manifest = Manifest { root, entries };
        manifest.check_audio_exists(path)?;
        Ok(manifest)
    }

    fn check_audio_exists(&self, manifest_path: &Path) -> Result<()> {
        let missing: Vec<&str> = self
            .entries
            .iter()
            .filter(|e| !self.wav_path(e).is_file())
            .map(|e| e.utt_id.as_str())
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        Err(Error::data(format!(
            "{}: {} audio file(s) missing under {}: {}",
            manifest_path.display(),
            missing.len(),
            self.root.display(),
            preview(&missing)
        )))
    }

    pub fn wav_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.rel_path)
    }

    /// Serialize in the native format. Labeled entries always carry all
    /// four columns so the attack tag survives a round-trip.
    pub fn render_native(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            match e.label {
                Some(label) => {
                    out.push_str(&format!(
                        "{} {} {} {}\n",
                        e.utt_id,
                        e.rel_path,
                        label.name(),
                        e.attack
                    ));
                }
                None => out.push_str(&format!("{} {}\n", e.utt_id, e.rel_path)),
            }
        }
        out
    }

    /// Ground-truth protocol lines (`utt_id label attack`) for evaluation.
    pub fn render_protocol(&self) -> Result<String> {
        let labeled = self.require_labels()?;
        let mut out = String::new();
        for (e, label) in labeled {
            out.push_str(&format!("{} {} {}\n", e.utt_id, label.name(), e.attack));
        }
        Ok(out)
    }

    /// All entries with their labels; errors listing ids when any entry is
    /// unlabeled (training and evaluation need ground truth).
    pub fn require_labels(&self) -> Result<Vec<(&ManifestEntry, Label)>> {
        let unlabeled: Vec<&str> = self
            .entries
            .iter()
            .filter(|e| e.label.is_none())
            .map(|e| e.utt_id.as_str())
            .collect();
        if !unlabeled.is_empty() {
            return Err(Error::data(format!(
                "{} utterance(s) have no label: {}",
                unlabeled.len(),
                preview(&unlabeled)
            )));
        }
        Ok(self
            .entries
            .iter()
            .map(|e| (e, e.label.expect("checked above")))
            .collect())
    }
}

/// Partitions must not share utterances.
pub fn check_disjoint(a: &Manifest, a_name: &str, b: &Manifest, b_name: &str) -> Result<()> {
    let ids: BTreeSet<&str> = a.entries.iter().map(|e| e.utt_id.as_str()).collect();
    let shared: Vec<&str> = b
        .entries
        .iter()
        .map(|e| e.utt_id.as_str())
        .filter(|id| ids.contains(id))
        .collect();
    if shared.is_empty() {
        return Ok(());
    }
    Err(Error::data(format!(
        "{} utterance(s) appear in both {a_name} and {b_name} partitions: {}",
        shared.len(),
        preview(&shared)
    )))
}

/// First few ids, with an ellipsis when the list is long.
pub(crate) fn preview(ids: &[&str]) -> String {
    const SHOW: usize = 5;
    let head = ids.iter().take(SHOW).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOW {
        format!("{head}, ...")
    } else {
        head
    }
}
