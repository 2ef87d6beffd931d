use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use mtpd::assembler::{MatchOptions, DEFAULT_BUDGET};
use mtpd::atl::{parse_atl_subset, SourceUnit};
use mtpd::catalog::{resolve_pattern, PatternSpec};
use mtpd::corpus::{generate, FormCounts, PlanFile, PlantingPlan};
use mtpd::detect::{detect_prepared, prepare, DetectOptions};
use mtpd::encoder::{encode_participant, EncodedString, DEFAULT_PERM_CAP};
use mtpd::matcher::{bv_edit_distance, bv_search, MatchMode};
use mtpd::model::{parse_transformation, to_mtj, Transformation};
use mtpd::report::{render, results_for, Format, Report, ReportResult};
use mtpd::review::{self, load_review_file, save_review_file, AcceptAll, Reviewer, Terminal, Verdict};

#[derive(Parser)]
#[command(name = "mtpd", version, about = "Find design pattern occurrences in model transformations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Global,
    SemiGlobal,
}

impl From<ModeArg> for MatchMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Global => MatchMode::Global,
            ModeArg::SemiGlobal => MatchMode::SemiGlobal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Markdown,
}

#[derive(Subcommand)]
enum Command {
    /// Detect pattern occurrences and write a JSON report
    Detect(DetectArgs),
    /// Print the encoded string of every rule (and participant)
    Encode {
        /// Transformation file (`.mtj` or `.atl`)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Also encode the participants of these patterns
        #[arg(long = "pattern")]
        patterns: Vec<String>,
        /// Also print which type each token stands for
        #[arg(long)]
        dump_token_map: bool,
    },
    /// Approximate string search on raw strings
    Match {
        #[arg(long)]
        pattern_string: String,
        #[arg(long)]
        text_string: String,
        /// Maximum edit distance of a hit
        #[arg(long, default_value_t = 0)]
        k: usize,
        #[arg(long, value_enum, default_value = "semi-global")]
        mode: ModeArg,
    },
    /// Accept or reject the occurrences of a report
    Review {
        #[arg(long)]
        report: PathBuf,
        /// Verdict file; created if missing, earlier verdicts are kept
        #[arg(long)]
        review: PathBuf,
        /// Accept every undecided occurrence without prompting
        #[arg(long)]
        accept_all: bool,
    },
    /// Generate a synthetic transformation with planted instances
    GenCorpus {
        /// Overrides the seed in the plan file
        #[arg(long)]
        seed: Option<u64>,
        /// JSON plan; defaults to one exact instance of every bundled pattern
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Where to write the `.mtj`; ground truth goes next to it as `.truth.json`
        #[arg(long)]
        output: PathBuf,
    },
    /// Render a stored report
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
}

#[derive(clap::Args)]
struct DetectArgs {
    /// Transformation files (`.mtj` or `.atl`)
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Pattern names or `.mtp` paths
    #[arg(long = "pattern", required = true, num_args = 1..)]
    patterns: Vec<String>,
    /// Use this edit threshold for every pattern instead of its own `k_approx`
    #[arg(long)]
    k_override: Option<u32>,
    /// Most token renamings tried per participant/rule pair
    #[arg(long, default_value_t = DEFAULT_PERM_CAP)]
    perm_cap: usize,
    /// Search nodes the assembler may expand per pattern
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long, value_enum, default_value = "semi-global")]
    mode: ModeArg,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    report: Option<PathBuf>,
    /// Start a review session afterwards, persisting verdicts to this file
    #[arg(long)]
    review: Option<PathBuf>,
    /// Report unreadable inputs and carry on with the rest
    #[arg(long)]
    keep_going: bool,
    /// Keep overlapping occurrences instead of the best disjoint set
    #[arg(long)]
    all_occurrences: bool,
}

struct DetectConfig {
    inputs: Vec<PathBuf>,
    patterns: Vec<PatternSpec>,
    options: DetectOptions,
    keep_going: bool,
}

fn load_transformation(path: &Path) -> Result<Transformation> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("mtj") => parse_transformation(&text).with_context(|| format!("{}", path.display())),
        Some("atl") => {
            let unit = SourceUnit::new(path, text)?;
            Ok(parse_atl_subset(&unit)?)
        }
        _ => bail!("{}: unknown input format (expected .mtj or .atl)", path.display()),
    }
}

fn load_patterns(names: &[String]) -> Result<Vec<PatternSpec>> {
    names
        .iter()
        .map(|n| resolve_pattern(n).with_context(|| format!("cannot load pattern `{n}`")))
        .collect()
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Returns the report and the number of inputs that failed.
fn cmd_detect(cfg: &DetectConfig) -> Result<(Report, usize)> {
    let per_input: Vec<Result<Vec<ReportResult>>> = cfg
        .inputs
        .par_iter()
        .map(|path| {
            let t = load_transformation(path)?;
            let prep = prepare(&t).with_context(|| format!("{}", path.display()))?;
            let found = detect_prepared(&prep, &cfg.patterns, &cfg.options)?;
            Ok(results_for(&prep, &cfg.patterns, &found))
        })
        .collect();
    let mut results = Vec::new();
    let mut failed = 0;
    for (path, r) in cfg.inputs.iter().zip(per_input) {
        match r {
            Ok(rs) => results.extend(rs),
            Err(e) if cfg.keep_going => {
                failed += 1;
                eprintln!("error: {}: {e:#}", path.display());
            }
            Err(e) => return Err(e),
        }
    }
    Ok((Report::new(env!("CARGO_PKG_VERSION"), &now(), results), failed))
}

fn run_review(report: &Report, path: &Path, reviewer: &mut dyn Reviewer) -> Result<()> {
    let prior = load_review_file(path)?;
    let out = review::review(report, &prior, reviewer)?;
    save_review_file(path, &out.entries)?;
    let count = |v| out.entries.iter().filter(|e| e.verdict == v).count();
    eprintln!(
        "{} accepted, {} rejected, {} undecided; saved to {}",
        count(Verdict::Accepted),
        count(Verdict::Rejected),
        count(Verdict::Undecided),
        path.display()
    );
    Ok(())
}

fn terminal_review(report: &Report, path: &Path) -> Result<()> {
    let stdin = io::stdin();
    let mut t = Terminal {
        input: stdin.lock(),
        output: io::stderr(),
    };
    run_review(report, path, &mut t)
}

fn print_encoding(out: &mut impl Write, label: &str, e: &EncodedString, dump: bool) -> io::Result<()> {
    writeln!(out, "{label}\t{}", e.as_str())?;
    if dump {
        for (name, tok) in e.token_map.entries() {
            writeln!(out, "\t{} = {name}", *tok as char)?;
        }
    }
    Ok(())
}

fn default_plan() -> PlantingPlan {
    PlantingPlan {
        seed: 0,
        patterns: mtpd::catalog::builtin_catalog()
            .into_iter()
            .map(|p| (p, FormCounts { exact: 1, ..Default::default() }))
            .collect(),
        noise_rules: 5,
        mutation_edits: 1,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Detect(a) => {
            let cfg = DetectConfig {
                patterns: load_patterns(&a.patterns)?,
                inputs: a.inputs,
                options: DetectOptions {
                    matching: MatchOptions {
                        mode: a.mode.into(),
                        perm_cap: a.perm_cap,
                        k_override: a.k_override,
                    },
                    budget: a.budget,
                    consolidate: !a.all_occurrences,
                },
                keep_going: a.keep_going,
            };
            let (report, failed) = cmd_detect(&cfg)?;
            match &a.report {
                Some(path) => {
                    std::fs::write(path, report.to_json() + "\n")
                        .with_context(|| format!("cannot write {}", path.display()))?;
                    write!(out, "{}", render(&report, Format::Text))?;
                }
                None => writeln!(out, "{}", report.to_json())?,
            }
            if let Some(path) = &a.review {
                terminal_review(&report, path)?;
            }
            if failed > 0 {
                eprintln!("{failed} of {} inputs could not be processed", cfg.inputs.len());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Encode {
            input,
            patterns,
            dump_token_map,
        } => {
            if input.is_none() && patterns.is_empty() {
                bail!("nothing to encode: give --input and/or --pattern");
            }
            if let Some(path) = input {
                let t = load_transformation(&path)?;
                let prep = prepare(&t)?;
                for (r, e) in t.rules.iter().zip(&prep.encodings) {
                    print_encoding(&mut out, &r.name, e, dump_token_map)?;
                }
            }
            for p in load_patterns(&patterns)? {
                for part in &p.participants {
                    let e = encode_participant(part)?;
                    print_encoding(&mut out, &format!("{}/{}", p.name, part.role), &e, dump_token_map)?;
                }
            }
        }
        Command::Match {
            pattern_string,
            text_string,
            k,
            mode,
        } => {
            let (p, t) = (pattern_string.as_bytes(), text_string.as_bytes());
            match mode {
                ModeArg::Global => writeln!(out, "{}", bv_edit_distance(p, t))?,
                ModeArg::SemiGlobal => {
                    for hit in bv_search(p, t, k) {
                        writeln!(out, "{hit}")?;
                    }
                }
            }
        }
        Command::Review {
            report,
            review,
            accept_all,
        } => {
            let doc = std::fs::read_to_string(&report).with_context(|| format!("cannot read {}", report.display()))?;
            let report = Report::from_json(&doc).with_context(|| format!("{}", report.display()))?;
            if accept_all {
                run_review(&report, &review, &mut AcceptAll)?;
            } else {
                terminal_review(&report, &review)?;
            }
        }
        Command::GenCorpus { seed, plan, output } => {
            let mut plan = match plan {
                Some(path) => {
                    let doc = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
                    let file: PlanFile =
                        serde_json::from_str(&doc).with_context(|| format!("malformed plan {}", path.display()))?;
                    file.resolve()?
                }
                None => default_plan(),
            };
            if let Some(s) = seed {
                plan.seed = s;
            }
            let (t, truth) = generate(&plan)?;
            let truth_path = output.with_extension("truth.json");
            std::fs::write(&output, to_mtj(&t) + "\n").with_context(|| format!("cannot write {}", output.display()))?;
            std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)? + "\n")
                .with_context(|| format!("cannot write {}", truth_path.display()))?;
            writeln!(
                out,
                "wrote {} rules to {} and {} planted instances to {}",
                t.rules.len(),
                output.display(),
                truth.instances.len(),
                truth_path.display()
            )?;
        }
        Command::Report { report, format } => {
            let doc = std::fs::read_to_string(&report).with_context(|| format!("cannot read {}", report.display()))?;
            let report = Report::from_json(&doc).with_context(|| format!("{}", report.display()))?;
            let format = match format {
                FormatArg::Text => Format::Text,
                FormatArg::Markdown => Format::Markdown,
            };
            write!(out, "{}", render(&report, format))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
