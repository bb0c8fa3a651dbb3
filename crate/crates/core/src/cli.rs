//! Command-line front end: `validate`, `run`, `envelope`, `batch`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{velocity_envelope, ExtendedClassK, PositionConstraint};
use crate::constraints::{contact_barriers, joint_barriers};
use crate::dynamics::grasp_map;
use crate::error::{Error, Result};
use crate::geometry::{audit_orthogonality, Chart};
use crate::sim::{self, grasp_initializer, truth_system, Scenario, Summary};

#[derive(Debug, Parser)]
#[command(name = "barriergrasp", version, about = "Barrier-filtered grasp simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario and audit the model assumptions at the initial grasp.
    Validate(ScenarioArgs),
    /// Simulate a scenario and write trace.csv and summary.json.
    Run(RunArgs),
    /// Write the admissible velocity envelope of a position interval.
    Envelope(EnvelopeArgs),
    /// Run every scenario listed in a batch manifest.
    Batch(BatchArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file, or the name of a built-in scenario.
    #[arg(long)]
    pub scenario: String,
    /// `KEY=VALUE` override of a scenario field (dotted path), repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print machine-readable JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EnvelopeKind {
    Linear,
    Cubic,
    Arctan,
}

impl EnvelopeKind {
    pub fn class_k(self) -> ExtendedClassK {
        match self {
            EnvelopeKind::Linear => ExtendedClassK::Linear { gain: 1.0 },
            EnvelopeKind::Cubic => ExtendedClassK::Cubic { gain: 0.15 },
            EnvelopeKind::Arctan => ExtendedClassK::Arctan { gain: 2.0 },
        }
    }
}

#[derive(Debug, Args)]
pub struct EnvelopeArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lower: f64,
    #[arg(long, default_value_t = 4.0)]
    pub upper: f64,
    #[arg(long, default_value_t = 400)]
    pub points: usize,
    /// Class-K functions to tabulate; all three by default.
    #[arg(long, value_enum)]
    pub kind: Vec<EnvelopeKind>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Manifest: `{"scenarios": [...], "parallel": n}`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Root directory; each run gets `NNN_name/` and the aggregate `batch.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum concurrent runs; overrides the manifest.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Override applied to every scenario, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Loads a scenario from a path, falling back to the built-in names.
pub fn load_scenario(spec: &str, overrides: &[String]) -> Result<Scenario> {
    let path = Path::new(spec);
    let base = if path.exists() { Scenario::load(path)? } else { Scenario::builtin(spec)? };
    base.with_overrides(overrides)
}

/// One assumption check of `validate`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub scenario: String,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Audits a scenario: actuation count, chart orthogonality, grasp-map rank
/// at the initial grasp, chart domains and initial barrier values.
pub fn validate_scenario(scenario: &Scenario) -> Result<ValidationReport> {
    scenario.validate()?;
    let system = truth_system(scenario)?;
    let (m, n) = (system.hand.dof(), system.hand.finger_count());
    let mut checks = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| checks.push(Check { name: name.into(), passed, detail });

    check("actuation", m >= 3 * n, format!("{m} joints for {n} contacts"));

    let mut worst = 0.0f64;
    for i in 0..n {
        let (dev, _) = audit_orthogonality(&system.hand.fingers[i].fingertip, 50);
        worst = worst.max(dev);
        let (dev, _) = audit_orthogonality(&system.object_patch(i), 50);
        worst = worst.max(dev);
    }
    check("chart_orthogonality", worst < 1e-9, format!("max |c_a . c_b| / (|c_a| |c_b|) = {worst:.3e} on a 50x50 grid"));

    let init = grasp_initializer(&system, &scenario.initial)?;
    check("initial_contact", init.residual < 1e-8, format!("residual {:.3e} after {} iterations", init.residual, init.iterations));
    let state = &init.state;
    let xi_f = state.xi_f();
    let points = system.hand.contact_points(&state.q, &xi_f);
    let g = grasp_map(&points, &state.p_o);
    let sv = g.svd(false, false).singular_values;
    let rank = sv.iter().filter(|s| **s > 1e-9 * sv.max()).count();
    check("grasp_map_rank", rank == 6, format!("rank {rank}, smallest singular value {:.3e}", sv.min()));

    let inside = state.contacts.iter().enumerate().all(|(i, c)| {
        system.hand.fingers[i].fingertip.domain().contains(&c.xi_f) && system.object_patch(i).domain().contains(&c.xi_o)
    });
    check("chart_domains", inside, "contact coordinates inside their charts".into());

    let alpha1 = &scenario.barrier.alpha1;
    let joint = joint_barriers(&state.q, &state.qd, &system.hand.q_min(), &system.hand.q_max(), &scenario.margins, alpha1);
    let rolling: Vec<_> = xi_f
        .iter()
        .flat_map(|x| contact_barriers(x, &Vector2::zeros(), &scenario.workspace, &scenario.margins, alpha1))
        .collect();
    let min_b = joint.iter().chain(&rolling).map(|b| b.b_rob.min(b.h_rob)).fold(f64::INFINITY, f64::min);
    check("initial_barriers", min_b >= 0.0, format!("min robust barrier {min_b:.6}"));

    Ok(ValidationReport {
        scenario: scenario.name.clone(),
        checks,
    })
}

/// Writes trace.csv and summary.json of a run into `out`.
pub fn run_to_dir(scenario: &Scenario, out: &Path) -> Result<Summary> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let start = Instant::now();
    let result = sim::run(scenario)?;
    log::info!("{}: {} samples in {:.2?}", scenario.name, result.trace.len(), start.elapsed());
    result.trace.save_csv(&out.join("trace.csv"))?;
    result.summary.save_json(&out.join("summary.json"))?;
    Ok(result.summary)
}

/// Tabulates the envelope of `[lower, upper]` for each kind as CSV rows
/// `kind,q,v_lo,v_hi`.
pub fn envelope_csv(lower: f64, upper: f64, points: usize, kinds: &[EnvelopeKind]) -> Result<String> {
    if points < 2 || !(lower < upper) {
        return Err(Error::InvalidArgument("need at least two points on a nonempty interval".into()));
    }
    let c_min = PositionConstraint::lower_bound(1, 0, lower, 0.0, 0.0)?;
    let c_max = PositionConstraint::upper_bound(1, 0, upper, 0.0, 0.0)?;
    let grid: Vec<f64> = (0..points).map(|k| lower + (upper - lower) * k as f64 / (points - 1) as f64).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "q", "v_lo", "v_hi"])?;
    for kind in kinds {
        let label = format!("{kind:?}").to_lowercase();
        for p in velocity_envelope(&c_min, &c_max, &kind.class_k(), &grid)? {
            // Adding zero folds -0 into 0.
            w.write_record([label.clone(), p.q.to_string(), (p.v_lo + 0.0).to_string(), (p.v_hi + 0.0).to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io("envelope", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchManifest {
    pub scenarios: Vec<String>,
    #[serde(default)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchEntry {
    pub scenario: String,
    pub directory: String,
    pub summary: Option<Summary>,
    pub error: Option<String>,
}

/// Runs every manifest entry with at most `parallel` concurrent runs. A
/// failing entry is recorded and does not stop the others.
pub fn run_batch(manifest_path: &Path, out: &Path, parallel: Option<usize>, overrides: &[String]) -> Result<Vec<BatchEntry>> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: BatchManifest = serde_json::from_str(&text).map_err(|e| Error::json(manifest_path.display().to_string(), e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let threads = parallel.or(manifest.parallel).unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let entries = pool.install(|| {
        manifest
            .scenarios
            .par_iter()
            .enumerate()
            .map(|(k, spec)| {
                let path = base.join(spec);
                let spec_str = if path.exists() { path.display().to_string() } else { spec.clone() };
                let outcome = load_scenario(&spec_str, overrides).and_then(|s| {
                    let dir = out.join(format!("{k:03}_{}", s.name));
                    run_to_dir(&s, &dir).map(|summary| (dir, summary))
                });
                match outcome {
                    Ok((dir, summary)) => BatchEntry {
                        scenario: spec.clone(),
                        directory: dir.display().to_string(),
                        summary: Some(summary),
                        error: None,
                    },
                    Err(e) => BatchEntry {
                        scenario: spec.clone(),
                        directory: String::new(),
                        summary: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect::<Vec<_>>()
    });
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let agg = out.join("batch.json");
    let json = serde_json::to_string_pretty(&entries).map_err(|e| Error::json("batch", e))?;
    std::fs::write(&agg, json + "\n").map_err(|e| Error::io(agg.display().to_string(), e))?;
    Ok(entries)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| Error::json("stdout", e))?);
    Ok(())
}

/// Executes a parsed command; returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Validate(args) => {
            let scenario = load_scenario(&args.scenario, &args.overrides)?;
            let report = validate_scenario(&scenario)?;
            if args.json {
                print_json(&report)?;
            } else {
                for c in &report.checks {
                    println!("{:<20} {}  {}", c.name, if c.passed { "ok  " } else { "FAIL" }, c.detail);
                }
            }
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Run(args) => {
            let scenario = load_scenario(&args.scenario.scenario, &args.scenario.overrides)?;
            let summary = run_to_dir(&scenario, &args.out)?;
            if args.scenario.json {
                print_json(&summary)?;
            } else {
                println!(
                    "{}: {} samples, outcome {}, any violation {}, min robust barrier {}",
                    summary.scenario,
                    summary.samples,
                    serde_json::to_string(&summary.outcome).unwrap_or_default(),
                    summary.any_violation,
                    summary.min_h_robust.map_or("n/a".into(), |v| format!("{v:.6}")),
                );
            }
            Ok(0)
        }
        Command::Envelope(args) => {
            let kinds = if args.kind.is_empty() {
                vec![EnvelopeKind::Linear, EnvelopeKind::Cubic, EnvelopeKind::Arctan]
            } else {
                args.kind
            };
            let text = envelope_csv(args.lower, args.upper, args.points, &kinds)?;
            match args.out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Batch(args) => {
            let entries = run_batch(&args.manifest, &args.out, args.parallel, &args.overrides)?;
            let failed = entries.iter().filter(|e| e.error.is_some()).count();
            for e in &entries {
                match (&e.summary, &e.error) {
                    (Some(s), _) => println!("{:<40} violation {}  -> {}", e.scenario, s.any_violation, e.directory),
                    (_, Some(err)) => println!("{:<40} error: {err}", e.scenario),
                    _ => {}
                }
            }
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_endpoints() {
        let text = envelope_csv(1.0, 4.0, 3, &[EnvelopeKind::Linear]).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "kind,q,v_lo,v_hi");
        assert_eq!(rows[2], "linear,2.5,-1.5,1.5");
    }

    #[test]
    fn cli_parses_repeatable_overrides() {
        let cli = Cli::try_parse_from([
            "barriergrasp", "run", "--scenario", "cube_twist_filter_on", "--out", "x", "--override", "duration=0.3", "--override", "seed=2",
        ])
        .unwrap();
        match cli.command {
            Command::Run(a) => assert_eq!(a.scenario.overrides.len(), 2),
            _ => panic!("expected run"),
        }
    }
}
