//! The end-to-end detection pipeline.

use rayon::prelude::*;
use thiserror::Error;

use crate::assembler::{assemble, candidates, consolidate, MatchOptions, Occurrence, DEFAULT_BUDGET};
use crate::catalog::PatternSpec;
use crate::encoder::{encode_rule, EncodeError, EncodedString};
use crate::model::{normalize_control, ControlFlags, Transformation};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("cannot encode {0}")]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectOptions {
    pub matching: MatchOptions,
    pub budget: usize,
    /// Drop occurrences that reuse a rule claimed by a better one.
    pub consolidate: bool,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            matching: MatchOptions::default(),
            budget: DEFAULT_BUDGET,
            consolidate: true,
        }
    }
}

/// A transformation prepared for matching.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub transformation: &'a Transformation,
    pub control: Vec<ControlFlags>,
    pub encodings: Vec<EncodedString>,
}

pub fn prepare(t: &Transformation) -> Result<Prepared<'_>, EncodeError> {
    let control = normalize_control(t);
    let encodings = t
        .rules
        .iter()
        .zip(&control)
        .map(|(r, f)| encode_rule(r, f))
        .collect::<Result<_, _>>()?;
    Ok(Prepared {
        transformation: t,
        control,
        encodings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternResult {
    pub pattern: String,
    pub occurrences: Vec<Occurrence>,
    /// Assembly ran out of budget or some alignment hit the permutation cap.
    pub truncated: bool,
}

/// Run every pattern against one prepared transformation. Results keep the
/// order of `patterns`.
pub fn detect_prepared(
    prep: &Prepared<'_>,
    patterns: &[PatternSpec],
    opts: &DetectOptions,
) -> Result<Vec<PatternResult>, DetectError> {
    patterns
        .par_iter()
        .map(|p| {
            let cs = candidates(p, &prep.encodings, &opts.matching)?;
            let asm = assemble(&cs, p, &prep.control, opts.budget);
            let occurrences = if opts.consolidate {
                consolidate(asm.occurrences)
            } else {
                asm.occurrences
            };
            Ok(PatternResult {
                pattern: p.name.clone(),
                occurrences,
                truncated: asm.truncated || cs.truncated,
            })
        })
        .collect()
}

pub fn detect(
    t: &Transformation,
    patterns: &[PatternSpec],
    opts: &DetectOptions,
) -> Result<Vec<PatternResult>, DetectError> {
    detect_prepared(&prepare(t)?, patterns, opts)
}
