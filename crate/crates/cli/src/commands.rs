use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use moboa_core::acquisition::{AcquisitionContext, GpEnsemble, QehviConfig};
use moboa_core::benchmarks::{generate_candidates, ProblemDef, SamplingScheme};
use moboa_core::campaign::{
    self, candidate_seed, write_aggregate_csv, write_evaluations_csv, write_hv_trace_csv, Arm, CampaignConfig,
    CampaignResult, Problem,
};
use moboa_core::gp::{self, FitConfig};
use moboa_core::hypervolume::hv_points;
use moboa_core::pareto::{extract_front, Dataset, Direction, Evaluation, ReferencePoint};
use moboa_core::seeding::rng_for;
use rand::Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::svg::{line_chart, Series};
use crate::{config, CliError};

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn create(&mut self, name: &str) -> Result<fs::File, CliError> {
        self.files.push(name.to_string());
        fs::File::create(self.dir.join(name)).map_err(|e| CliError::Runtime(format!("{name}: {e}")))
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.files.push(name.to_string());
        fs::write(self.dir.join(name), text).map_err(|e| CliError::Runtime(format!("{name}: {e}")))
    }
}

pub fn config_hash(config: &CampaignConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn run(
    config_path: &Path,
    out: &Path,
    overrides: &[String],
    seeds: Option<&[u64]>,
    default_seed: Option<u64>,
    compare: bool,
) -> Result<(), CliError> {
    let config = config::load(config_path, overrides, seeds, default_seed)?;
    let arms: Vec<Arm> = if compare {
        for needed in [Arm::Sa, Arm::Baseline] {
            if !config.campaign.arms.contains(&needed) {
                return Err(CliError::Usage(format!(
                    "compare needs campaign.arms to declare both 'sa' and 'baseline' (missing '{}')",
                    needed.label()
                )));
            }
        }
        vec![Arm::Sa, Arm::Baseline]
    } else {
        config.campaign.arms.clone()
    };
    // Problems that cannot be built are configuration errors.
    let problem = Problem::from_config(&config.problem).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;

    let start = Instant::now();
    let result = campaign::run(&config, &arms).map_err(|e| CliError::Usage(e.to_string()))?;
    let wall = start.elapsed().as_secs_f64();

    let mut outputs = Outputs { dir: out, files: Vec::new() };
    write_results(&mut outputs, &result, problem.d(), problem.m())?;
    if compare {
        write_comparison(&mut outputs, &result)?;
    }
    let series: Vec<Series> = result
        .arms
        .iter()
        .map(|a| Series {
            label: a.arm.label(),
            points: a.aggregate().iter().map(|p| (p.iteration as f64, p.mean)).collect(),
        })
        .collect();
    let title = format!("{}: mean hypervolume", result.problem);
    outputs.write("convergence.svg", &line_chart(&title, "iteration", "hypervolume", &series))?;
    outputs.write("result.json", &(result.to_json().map_err(runtime)? + "\n"))?;

    let timings = json!({
        "total_s": wall,
        "arms": result.arms.iter().map(|a| json!({
            "arm": a.arm.label(),
            "seeds": a.seeds.iter().map(|s| json!({"seed": s.seed, "phases": s.timings})).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    outputs.write("timings.json", &(serde_json::to_string_pretty(&timings).map_err(runtime)? + "\n"))?;

    let failed: Vec<(Arm, u64)> =
        result.arms.iter().flat_map(|a| a.failed_seeds().into_iter().map(move |s| (a.arm, s))).collect();
    let directions: Vec<Direction> = problem.orientation().directions.clone();
    let mut files = outputs.files.clone();
    files.push("manifest.json".into());
    let manifest = json!({
        "tool": "moboa",
        "version": env!("CARGO_PKG_VERSION"),
        "command": if compare { "compare" } else { "run" },
        "config_hash": config_hash(&config),
        "config": config,
        "problem": result.problem,
        "directions": directions,
        "seeds": config.campaign.seeds.iter().map(|&s| json!({
            "seed": s,
            "candidate_seed": candidate_seed(&config, s),
        })).collect::<Vec<_>>(),
        "arms": result.arms.iter().map(|a| json!({
            "arm": a.arm.label(),
            "description": a.description,
            "final_mean_hypervolume": a.final_mean(),
            "failed_seeds": a.failed_seeds(),
        })).collect::<Vec<_>>(),
        "status": if failed.is_empty() { "ok" } else { "failed" },
        "timings_file": "timings.json",
        "outputs": files,
    });
    outputs.write("manifest.json", &(serde_json::to_string_pretty(&manifest).map_err(runtime)? + "\n"))?;

    for a in &result.arms {
        match a.final_mean() {
            Some(v) => println!("{} final mean hypervolume: {v}", a.arm.label()),
            None => println!("{} final mean hypervolume: n/a", a.arm.label()),
        }
    }
    if compare {
        if let (Some(sa), Some(bl)) = (
            result.arm(Arm::Sa).and_then(|a| a.final_mean()),
            result.arm(Arm::Baseline).and_then(|a| a.final_mean()),
        ) {
            let gap = if bl != 0.0 { (sa - bl) / bl.abs() * 100.0 } else { f64::NAN };
            println!("relative difference (sa vs baseline): {gap:+.2}%");
        }
    }
    if !failed.is_empty() {
        let list: Vec<String> = failed.iter().map(|(a, s)| format!("{}:{s}", a.label())).collect();
        return Err(CliError::Runtime(format!(
            "seeds failed ({}); partial results written to {}",
            list.join(", "),
            out.display()
        )));
    }
    Ok(())
}

fn write_results(out: &mut Outputs, result: &CampaignResult, d: usize, m: usize) -> Result<(), CliError> {
    for a in &result.arms {
        let label = a.arm.label();
        for s in &a.seeds {
            let f = out.create(&format!("{label}_seed{}.csv", s.seed))?;
            write_hv_trace_csv(&s.hv_trace, f).map_err(runtime)?;
        }
        let f = out.create(&format!("{label}_aggregate.csv"))?;
        write_aggregate_csv(&a.aggregate(), f).map_err(runtime)?;
        let f = out.create(&format!("{label}_evaluations.csv"))?;
        write_evaluations_csv(a, d, m, f).map_err(runtime)?;
    }
    Ok(())
}

fn write_comparison(out: &mut Outputs, result: &CampaignResult) -> Result<(), CliError> {
    let sa = result.arm(Arm::Sa).map(|a| a.aggregate()).unwrap_or_default();
    let bl = result.arm(Arm::Baseline).map(|a| a.aggregate()).unwrap_or_default();
    let f = out.create("comparison.csv")?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f);
    let header = ["iteration", "sa_mean", "sa_min", "sa_max", "baseline_mean", "baseline_min", "baseline_max"];
    w.write_record(header).map_err(runtime)?;
    for (a, b) in sa.iter().zip(&bl) {
        w.write_record([
            a.iteration.to_string(),
            a.mean.to_string(),
            a.min.to_string(),
            a.max.to_string(),
            b.mean.to_string(),
            b.min.to_string(),
            b.max.to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(())
}

/// Rounds to 12 significant digits and prints without trailing zeros.
pub fn format_sig12(v: f64) -> String {
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn parse_row(line: &str) -> Option<Vec<f64>> {
    line.split(',').map(|s| s.trim().parse::<f64>().ok()).collect()
}

pub fn hv(front_csv: &Path, reference: &str) -> Result<(), CliError> {
    let reference: Vec<f64> = reference
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("invalid reference '{reference}': {e}")))?;
    let text = fs::read_to_string(front_csv)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", front_csv.display())))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_row(line) {
            Some(row) => {
                if row.len() != reference.len() {
                    return Err(CliError::Usage(format!(
                        "{} line {}: expected {} values, found {}",
                        front_csv.display(),
                        i + 1,
                        reference.len(),
                        row.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(CliError::Usage(format!("{} line {}: non-finite value", front_csv.display(), i + 1)));
                }
                points.push(row);
            }
            // The first line may be a header.
            None if i == 0 => {}
            None => {
                return Err(CliError::Usage(format!(
                    "{} line {}: cannot parse '{line}' as numbers",
                    front_csv.display(),
                    i + 1
                )))
            }
        }
    }
    println!("{}", format_sig12(hv_points(&points, &reference)));
    Ok(())
}

fn time_per_call(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let start = Instant::now();
    for _ in 0..reps {
        f();
    }
    start.elapsed().as_secs_f64() / reps.max(1) as f64
}

pub fn bench(reps: usize) -> Result<(), CliError> {
    let mut rng = rng_for(7, 0);
    for (m, n) in [(2usize, 100usize), (3, 50), (4, 30), (5, 20)] {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.1).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        let reference = vec![0.0; m];
        let t = time_per_call(reps, || {
            std::hint::black_box(hv_points(&pts, &reference));
        });
        println!("hv m={m} n={n}: {:.1} us/call ({:.0} calls/s)", t * 1e6, 1.0 / t);
    }

    let problem = ProblemDef::dtlz2(7).map_err(runtime)?;
    let cands = generate_candidates(&problem, 500, SamplingScheme::LatinHypercube, 3).map_err(runtime)?;
    let evals: Vec<Evaluation> = (0..20)
        .map(|i| {
            let x = cands.rows()[i].clone();
            let y = problem.evaluate_canonical(&x).expect("in-bounds candidate");
            Evaluation { input: x, objectives: y, candidate_index: Some(i) }
        })
        .collect();
    let ds = Dataset::from_evaluations(7, 3, evals).map_err(runtime)?;
    let fit_cfg = FitConfig { input_bounds: Some(problem.bounds.clone()), ..Default::default() };
    let models = (0..3).map(|j| gp::fit(&ds, j, &fit_cfg)).collect::<Result<Vec<_>, _>>().map_err(runtime)?;
    let ensemble = Arc::new(GpEnsemble::new(models).map_err(runtime)?.with_candidate_cache(&cands).map_err(runtime)?);
    let reference = ReferencePoint::new(vec![-2.0; 3]).map_err(runtime)?;
    let front = extract_front(&ds);
    for q in [1usize, 4, 12] {
        let qcfg = QehviConfig::new(QehviConfig::DEFAULT_SAMPLES, q, reference.clone(), 5).map_err(runtime)?;
        let ctx = AcquisitionContext::new(ensemble.clone(), front.clone(), qcfg, Arc::new(cands.clone()))
            .map_err(runtime)?;
        let batch: Vec<usize> = (100..100 + q).collect();
        let t = time_per_call(reps, || {
            std::hint::black_box(ctx.qehvi(&batch).expect("valid batch"));
        });
        println!("qehvi q={q} S=128 m=3 n=20: {:.1} us/call ({:.0} calls/s)", t * 1e6, 1.0 / t);
    }
    Ok(())
}
