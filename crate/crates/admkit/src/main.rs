//! Command-line front end: run scenarios, audit and extend version stores,
//! and dump arithmetic / algebra diagnostics.
//!
//! Every command prints a human-readable summary to stdout; the flags that
//! take file paths additionally write canonical JSON (or CSV for the posit
//! table), byte-stable across runs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use adm_core::arith::{PositFormat, PositValue};
use adm_core::clifford::{CayleyTable, GradeMask, RawMultivector, Signature};
use adm_core::rotation::{canonical_bytes, Signing};

use admkit::contrast::{contrast_experiment, ContrastConfig, ContrastReport, PipelineTrace};
use admkit::runner::{run_scenario, RunReport};
use admkit::scenario::{spread_seed, Scenario, SigningSpec};
use admkit::store;

#[derive(Parser)]
#[command(
    name = "admkit",
    version,
    about = "grade-typed model serving: scenario runs, version audits, diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a scenario end to end and summarize the run.
    Run(RunArgs),
    /// Certify a candidate weight file and append it to a store's chain.
    Rotate(RotateArgs),
    /// Re-verify a store: chain links, signatures, certificates, weights.
    Verify(VerifyArgs),
    /// Product-cube sparsity of a grade-typed algebra.
    Sparsity(SparsityArgs),
    /// Off-grade leak contrast for a scenario's grade-2 weight.
    Contrast(ContrastArgs),
    /// Exhaustive bits -> exact value table for a posit format.
    PositTable(PositTableArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Write the full store (manifest, records, weights, report) here.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Write the run report alone as canonical JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Suppress the human summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RotateArgs {
    /// Store directory produced by `run --store`.
    #[arg(long)]
    store: PathBuf,
    /// Candidate weights: JSON array of raw multivectors.
    #[arg(long)]
    candidate: PathBuf,
    /// Sign with this seed instead of the scenario's (ed25519 stores only).
    #[arg(long)]
    signing_seed: Option<u64>,
    /// Record timestamp in milliseconds; default is head timestamp + 1.
    #[arg(long)]
    now_ms: Option<u64>,
    /// Evidence source to cite in the record (repeatable).
    #[arg(long = "evidence")]
    evidence: Vec<String>,
    /// User feedback to cite in the record (repeatable).
    #[arg(long = "feedback")]
    feedback: Vec<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Store directory to audit.
    #[arg(long)]
    store: PathBuf,
    /// File holding the hex public key every record must be signed with.
    #[arg(long)]
    pubkey: Option<PathBuf>,
}

#[derive(Args)]
struct SparsityArgs {
    /// Algebra signature as `p,q,r`.
    #[arg(long)]
    signature: String,
    /// Grades stored by the left operand (comma separated; default all).
    #[arg(long)]
    left: Option<String>,
    /// Grades stored by the right operand (comma separated; default all).
    #[arg(long)]
    right: Option<String>,
    /// Write the report as canonical JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ContrastArgs {
    /// Scenario file declaring the grade-2 weight.
    scenario: PathBuf,
    #[arg(long, default_value_t = ContrastConfig::default().steps)]
    steps: usize,
    /// Fraction bits kept after every multiply and add in the chopped runs.
    #[arg(long, default_value_t = ContrastConfig::default().frac_bits)]
    frac_bits: u32,
    #[arg(long, default_value_t = ContrastConfig::default().eta)]
    eta: f64,
    /// Write the report as canonical JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PositTableArgs {
    #[arg(long)]
    nbits: u32,
    #[arg(long)]
    es: u32,
    #[arg(long = "rmax", default_value_t = 6)]
    r_max: u32,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Rotate(a) => cmd_rotate(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Sparsity(a) => cmd_sparsity(a),
        Cmd::Contrast(a) => cmd_contrast(a),
        Cmd::PositTable(a) => cmd_posit_table(a),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    Ok(Scenario::from_toml(&text)?)
}

fn write_canonical<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, canonical_bytes(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let scn = load_scenario(&a.scenario)?;
    let outcome = run_scenario(&scn)?;
    if let Some(dir) = &a.store {
        store::write_store(dir, &scn, &outcome)?;
    }
    if let Some(path) = &a.report {
        write_canonical(path, &outcome.report)?;
    }
    if !a.quiet {
        print_run_summary(&outcome.report);
        if let Some(dir) = &a.store {
            println!("record chain: {}", dir.join("records").display());
        }
        if let Some(path) = &a.report {
            println!("report: {}", path.display());
        }
    }
    Ok(())
}

fn print_run_summary(r: &RunReport) {
    println!("seed {}  format {}  algebra {}  table {}", r.seed, r.format, r.algebra, r.cayley_fingerprint);
    println!(
        "steps {}  served {}  rotations {}  refusals {}  buffered peak {}",
        r.steps, r.served, r.rotations, r.refusals, r.buffered_peak
    );
    println!("detector epsilon {:.6}", r.epsilon);
    if let Some(peak) = r
        .kl_trajectory
        .iter()
        .max_by(|a, b| a.kl.total_cmp(&b.kl))
    {
        println!(
            "kl trajectory: {} points, peak {:.6} at step {}",
            r.kl_trajectory.len(),
            peak.kl,
            peak.step
        );
    }
    for ev in &r.rotation_events {
        match ev.kl_at_trigger {
            Some(kl) => println!("rotated at step {} -> {} (kl at trigger {:.6})", ev.step, ev.version_id, kl),
            None => println!("rotated at step {} -> {}", ev.step, ev.version_id),
        }
    }
    for ev in &r.refusal_events {
        println!("refused at step {}: {}", ev.step, ev.reason);
    }
    println!("chain: {}", r.chain_versions.join(" -> "));
    println!("responses by version:");
    for (version, n) in &r.responses_by_version {
        println!("  {version}: {n}");
    }
    if let Some(loss) = r.final_loss_mean {
        println!("mean loss under {}: {:.6}", r.final_version, loss);
    }
    println!("memory (live multivectors, training vs inference):");
    println!("  {:<10} {:>6} {:>10} {:>9} {:>10}", "pipeline", "params", "inference", "training", "auxiliary");
    for row in &r.memory {
        println!(
            "  {:<10} {:>6} {:>10} {:>9} {:>10}",
            row.label, row.params, row.inference_peak, row.training_peak, row.auxiliary_overhead
        );
    }
    println!(
        "sparsity fingerprints {} training:",
        if r.sparsity.stable { "stable across" } else { "CHANGED by" }
    );
    for (before, after) in r.sparsity.before.iter().zip(&r.sparsity.after) {
        println!(
            "  param {}: grades {:?} blades {:?} -> blades {:?}",
            before.index, before.grades, before.stored_blades, after.stored_blades
        );
    }
}

fn cmd_rotate(a: RotateArgs) -> Result<()> {
    let manifest = store::load_manifest(&a.store)?;
    let signing = match (&manifest.scenario.rotation.signing, a.signing_seed) {
        (SigningSpec::Null, None) => Signing::Null,
        (SigningSpec::Null, Some(_)) => bail!("store is unsigned; --signing-seed has no effect"),
        (SigningSpec::Ed25519, seed) => Signing::ed25519_from_seed(spread_seed(
            seed.unwrap_or(manifest.scenario.rotation.signing_seed),
        )),
    };
    let text = fs::read_to_string(&a.candidate)
        .with_context(|| format!("reading candidate {}", a.candidate.display()))?;
    let weights: Vec<RawMultivector> =
        serde_json::from_str(&text).context("candidate must be a JSON array of raw multivectors")?;
    let record = store::manual_rotate(&a.store, weights, &signing, a.now_ms, a.evidence, a.feedback)?;
    println!(
        "rotated: seq {} version {} (weights {})",
        record.seq, record.version_id, record.weights_hash
    );
    if record.cert_diff.is_empty() {
        println!("certificate unchanged from previous version");
    } else {
        for line in &record.cert_diff {
            println!("certificate change: {line}");
        }
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let pinned = match &a.pubkey {
        Some(path) => Some(
            fs::read_to_string(path)
                .with_context(|| format!("reading public key {}", path.display()))?
                .trim()
                .to_string(),
        ),
        None => None,
    };
    let v = store::verify_store(&a.store, pinned.as_deref())?;
    println!(
        "store ok: {} records, {} weight sets, scheme {}{}",
        v.records,
        v.weight_sets,
        v.scheme,
        if pinned.is_some() { ", public key pinned" } else { "" }
    );
    Ok(())
}

fn parse_grades(text: &str) -> Result<Vec<u32>> {
    text.split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|e| anyhow::anyhow!("bad grade {t:?}: {e}")))
        .collect()
}

fn cmd_sparsity(a: SparsityArgs) -> Result<()> {
    let parts = parse_grades(&a.signature).context("--signature must be p,q,r")?;
    let [p, q, r] = parts.as_slice() else {
        bail!("--signature must have exactly three components, got {}", parts.len());
    };
    let sig = Signature::new(*p, *q, *r)?;
    let mask_from = |text: &Option<String>| -> Result<GradeMask> {
        Ok(match text {
            Some(t) => GradeMask::from_grades(&parse_grades(t)?),
            None => GradeMask::all(sig.dims()),
        })
    };
    let table = CayleyTable::new(sig);
    let report = table.sparsity_report(mask_from(&a.left)?, mask_from(&a.right)?);
    println!(
        "{}: {} of {} product triples inactive (sparsity {:.6})",
        report.signature,
        report.cube - report.active_triples,
        report.cube,
        report.sparsity
    );
    println!("active triples by grade pair (left grade, right grade):");
    for slice in &report.by_grade_pair {
        println!("  ({}, {}): {}", slice.left_grade, slice.right_grade, slice.active);
    }
    if let Some(path) = &a.out {
        write_canonical(path, &report)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn cmd_contrast(a: ContrastArgs) -> Result<()> {
    let scn = load_scenario(&a.scenario)?;
    let cfg = ContrastConfig { steps: a.steps, frac_bits: a.frac_bits, eta: a.eta };
    let report = contrast_experiment(&scn, &cfg)?;
    print_contrast_summary(&report);
    if let Some(path) = &a.out {
        write_canonical(path, &report)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn describe_trace(t: &PipelineTrace) -> String {
    let onset = match t.first_nonzero_step {
        Some(s) => format!("leaks from step {s}"),
        None => "never leaks".to_string(),
    };
    let ma = if t.moving_average_nondecreasing {
        "nondecreasing".to_string()
    } else {
        format!("violated at window {}", t.first_ma_violation.unwrap_or(0))
    };
    format!("{onset}; final {:.3e}, max {:.3e}; 10-step moving average {ma}", t.final_energy, t.max_energy)
}

fn print_contrast_summary(r: &ContrastReport) {
    println!(
        "{} | {} steps | {} fraction bits | eta {} | weight blades {:?}",
        r.algebra, r.steps, r.frac_bits, r.eta, r.weight_blades
    );
    println!(
        "grade-typed   : off-grade energy {:.1} every step (stored blades {:?}, stable: {})",
        r.typed.max_off_grade_energy, r.typed.stored_blades, r.typed.stored_set_stable
    );
    println!("dense chopped : {}", describe_trace(&r.dense_chopped));
    println!("dense float64 : {}", describe_trace(&r.dense_plain));
    println!("dense exact   : {}", describe_trace(&r.dense_exact));
}

fn cmd_posit_table(a: PositTableArgs) -> Result<()> {
    if a.nbits > 10 {
        bail!("table has 2^nbits rows; capped at nbits <= 10");
    }
    let fmt = PositFormat::new(a.nbits, a.es, a.r_max)?;
    let width = ((a.nbits + 3) / 4) as usize;
    let mut csv = String::from("bits_hex,value_decimal_exact\n");
    for bits in 0u64..(1u64 << a.nbits) {
        let value = PositValue::from_bits(bits, fmt).decode_decimal();
        csv.push_str(&format!("{bits:0width$x},{value}\n"));
    }
    match &a.out {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
            println!("{}: {} rows -> {}", fmt.descriptor(), 1u64 << a.nbits, path.display());
        }
        None => {
            std::io::stdout().write_all(csv.as_bytes())?;
        }
    }
    Ok(())
}
