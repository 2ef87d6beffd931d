//! Human confirmation of proposed occurrences.
//!
//! Verdicts live in a review file keyed by occurrence id, so a decision
//! survives re-running detection as long as the pattern and the role → rule
//! assignment stay the same.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{Report, ReportOccurrence, ReportResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Rejected,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewEntry {
    pub occurrence_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("cannot access review file {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("malformed review file {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("review session failed: {0}")]
    Session(#[from] io::Error),
}

/// What the reviewer decided for one occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Verdict(Verdict, Option<String>),
    /// Stop the session; remaining occurrences stay undecided.
    Quit,
}

pub trait Reviewer {
    fn decide(
        &mut self,
        result: &ReportResult,
        occ: &ReportOccurrence,
        position: usize,
        total: usize,
    ) -> io::Result<Decision>;
}

pub struct AcceptAll;

impl Reviewer for AcceptAll {
    fn decide(&mut self, _: &ReportResult, _: &ReportOccurrence, _: usize, _: usize) -> io::Result<Decision> {
        Ok(Decision::Verdict(Verdict::Accepted, None))
    }
}

/// Replays canned decisions in order, then quits. Records what it was shown.
#[derive(Debug, Default)]
pub struct Scripted {
    pub decisions: std::collections::VecDeque<Decision>,
    pub shown: Vec<String>,
}

impl Reviewer for Scripted {
    fn decide(&mut self, _: &ReportResult, occ: &ReportOccurrence, _: usize, _: usize) -> io::Result<Decision> {
        self.shown.push(occ.id.clone());
        Ok(self.decisions.pop_front().unwrap_or(Decision::Quit))
    }
}

/// Line-oriented terminal session: one screen per occurrence.
pub struct Terminal<R, W> {
    pub input: R,
    pub output: W,
}

pub fn screen(result: &ReportResult, occ: &ReportOccurrence, position: usize, total: usize) -> String {
    let mut s = format!(
        "--- occurrence {position}/{total} [{}] ---\npattern: {}  transformation: {}\nform: {}  total distance: {}\n",
        occ.id, result.pattern, result.transformation, occ.form, occ.total_distance
    );
    for m in &occ.assignment {
        s += &format!("  {} = {} (distance {})\n      {}\n      {}\n", m.role, m.rule, m.distance, m.encoding, m.excerpt);
    }
    for r in &occ.missing {
        s += &format!("  {r} = (none)\n");
    }
    for v in &occ.violations {
        s += &format!("  violated: {v}\n");
    }
    for h in &occ.hints {
        s += &format!("  hint: {h}\n");
    }
    s
}

impl<R: BufRead, W: Write> Reviewer for Terminal<R, W> {
    fn decide(
        &mut self,
        result: &ReportResult,
        occ: &ReportOccurrence,
        position: usize,
        total: usize,
    ) -> io::Result<Decision> {
        write!(self.output, "{}", screen(result, occ, position, total))?;
        loop {
            write!(self.output, "[a]ccept, [r]eject, [s]kip or [q]uit (text after the letter is kept as a note): ")?;
            self.output.flush()?;
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                return Ok(Decision::Quit);
            }
            let line = line.trim();
            let (cmd, note) = match line.split_once(char::is_whitespace) {
                Some((c, n)) => (c, Some(n.trim().to_string()).filter(|n| !n.is_empty())),
                None => (line, None),
            };
            let v = match cmd {
                "a" | "accept" => Verdict::Accepted,
                "r" | "reject" => Verdict::Rejected,
                "s" | "skip" => Verdict::Undecided,
                "q" | "quit" => return Ok(Decision::Quit),
                _ => {
                    writeln!(self.output, "unrecognised answer `{line}`")?;
                    continue;
                }
            };
            return Ok(Decision::Verdict(v, note));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewOutcome {
    /// One entry per occurrence of the report, in report order.
    pub entries: Vec<ReviewEntry>,
    /// How many occurrences were put in front of the reviewer.
    pub prompted: usize,
}

/// Walk the report in order. Occurrences with a prior accepted or rejected
/// verdict keep it without being shown again; priors for ids no longer in the
/// report are dropped.
pub fn review(report: &Report, prior: &[ReviewEntry], reviewer: &mut dyn Reviewer) -> io::Result<ReviewOutcome> {
    let prior: HashMap<&str, &ReviewEntry> = prior.iter().map(|e| (e.occurrence_id.as_str(), e)).collect();
    let all: Vec<_> = report.occurrences().collect();
    let pending = all
        .iter()
        .filter(|(_, o)| !prior.get(o.id.as_str()).is_some_and(|e| e.verdict != Verdict::Undecided))
        .count();
    let mut entries = Vec::with_capacity(all.len());
    let mut prompted = 0;
    let mut quit = false;
    for (r, o) in all {
        if let Some(e) = prior.get(o.id.as_str()) {
            if e.verdict != Verdict::Undecided {
                entries.push((*e).clone());
                continue;
            }
        }
        let keep_note = prior.get(o.id.as_str()).and_then(|e| e.annotation.clone());
        let (verdict, annotation) = if quit {
            (Verdict::Undecided, keep_note)
        } else {
            prompted += 1;
            match reviewer.decide(r, o, prompted, pending)? {
                Decision::Verdict(v, note) => (v, note.or(keep_note)),
                Decision::Quit => {
                    quit = true;
                    (Verdict::Undecided, keep_note)
                }
            }
        };
        entries.push(ReviewEntry {
            occurrence_id: o.id.clone(),
            verdict,
            annotation,
        });
    }
    Ok(ReviewOutcome { entries, prompted })
}

/// Read a review file; a missing file is an empty review.
pub fn load_review_file(path: &Path) -> Result<Vec<ReviewEntry>, ReviewError> {
    let doc = match std::fs::read_to_string(path) {
        Ok(d) => d,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(vec![]),
        Err(source) => {
            return Err(ReviewError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    if doc.trim().is_empty() {
        return Ok(vec![]);
    }
    serde_json::from_str(&doc).map_err(|source| ReviewError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_review_file(path: &Path, entries: &[ReviewEntry]) -> Result<(), ReviewError> {
    let doc = serde_json::to_string_pretty(entries).expect("entries are serializable");
    std::fs::write(path, doc + "\n").map_err(|source| ReviewError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembler::Form;

    fn occ(id: &str) -> ReportOccurrence {
        ReportOccurrence {
            id: id.into(),
            form: Form::Complete,
            assignment: vec![],
            missing: vec![],
            total_distance: 0,
            bindings: Default::default(),
            violations: vec![],
            hints: vec![],
        }
    }

    fn report(ids: &[&str]) -> Report {
        Report::new(
            "0",
            "t",
            vec![ReportResult {
                transformation: "t".into(),
                pattern: "p".into(),
                occurrences: ids.iter().map(|i| occ(i)).collect(),
                truncated: false,
            }],
        )
    }

    #[test]
    fn accept_all_from_empty() {
        let out = review(&report(&["a", "b"]), &[], &mut AcceptAll).unwrap();
        assert!(out.entries.iter().all(|e| e.verdict == Verdict::Accepted));
        assert_eq!(out.prompted, 2);
    }

    #[test]
    fn prior_rejection_is_kept_without_prompting() {
        let prior = vec![ReviewEntry {
            occurrence_id: "a".into(),
            verdict: Verdict::Rejected,
            annotation: Some("not a visitor".into()),
        }];
        let mut s = Scripted {
            decisions: [Decision::Verdict(Verdict::Accepted, None)].into(),
            ..Default::default()
        };
        let out = review(&report(&["a", "b"]), &prior, &mut s).unwrap();
        assert_eq!(s.shown, vec!["b".to_string()]);
        assert_eq!(out.entries[0], prior[0]);
        assert_eq!(out.entries[1].verdict, Verdict::Accepted);
    }

    #[test]
    fn changed_occurrence_drops_prior_and_is_shown() {
        let prior = vec![ReviewEntry {
            occurrence_id: "old".into(),
            verdict: Verdict::Rejected,
            annotation: None,
        }];
        let mut s = Scripted::default();
        let out = review(&report(&["new"]), &prior, &mut s).unwrap();
        assert_eq!(s.shown, vec!["new".to_string()]);
        assert_eq!(out.entries.len(), 1);
        assert_eq!(out.entries[0].occurrence_id, "new");
        assert_eq!(out.entries[0].verdict, Verdict::Undecided);
    }

    #[test]
    fn terminal_session_parses_answers() {
        let input = b"x\nr wrong roles\na\n" as &[u8];
        let mut t = Terminal { input, output: Vec::new() };
        let out = review(&report(&["a", "b", "c"]), &[], &mut t).unwrap();
        let v: Vec<_> = out.entries.iter().map(|e| (e.verdict, e.annotation.clone())).collect();
        assert_eq!(
            v,
            vec![
                (Verdict::Rejected, Some("wrong roles".into())),
                (Verdict::Accepted, None),
                (Verdict::Undecided, None),
            ]
        );
        let shown = String::from_utf8(t.output).unwrap();
        assert!(shown.contains("unrecognised answer `x`"));
        assert!(shown.contains("occurrence 1/3"));
    }

    #[test]
    fn review_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("mtpd-review-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.json");
        assert!(load_review_file(&path).unwrap().is_empty());
        let entries = review(&report(&["a"]), &[], &mut AcceptAll).unwrap().entries;
        save_review_file(&path, &entries).unwrap();
        assert_eq!(load_review_file(&path).unwrap(), entries);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
