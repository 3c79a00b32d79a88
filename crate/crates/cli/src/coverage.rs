//! Objective-space coverage data: per-objective histograms over the combined
//! range of all arms, plus each seed's final nondominated set.

use std::fs;
use std::path::{Path, PathBuf};

use moboa_core::pareto::{Direction, Orientation, ParetoFront};

use crate::CliError;

pub const N_BINS: usize = 30;

struct ArmEvaluations {
    label: String,
    /// (seed, objective vector) in native orientation.
    rows: Vec<(String, Vec<f64>)>,
    m: usize,
}

fn read_evaluations(path: &Path, label: String) -> Result<ArmEvaluations, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let headers = rd.headers().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?.clone();
    let seed_col = headers.iter().position(|h| h == "seed");
    let y_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('y') && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();
    if y_cols.is_empty() {
        return Err(CliError::Usage(format!("{}: no objective columns (y1, y2, ...)", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let y = y_cols
            .iter()
            .map(|&c| rec.get(c).unwrap_or("").trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Usage(format!("{} line {}: {e}", path.display(), i + 2)))?;
        let seed = seed_col.and_then(|c| rec.get(c)).unwrap_or("0").to_string();
        rows.push((seed, y));
    }
    Ok(ArmEvaluations { label, rows, m: y_cols.len() })
}

fn directions(result_dir: &Path, m: usize) -> Orientation {
    let parsed = fs::read_to_string(result_dir.join("manifest.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| serde_json::from_value::<Vec<Direction>>(v.get("directions")?.clone()).ok())
        .filter(|d| d.len() == m);
    Orientation::new(parsed.unwrap_or_else(|| vec![Direction::Maximize; m]))
}

/// Bin counts over `[lo, hi]`; a degenerate range puts everything in bin 0.
pub fn histogram(values: &[f64], lo: f64, hi: f64) -> Vec<(f64, f64, usize)> {
    let width = if hi > lo { (hi - lo) / N_BINS as f64 } else { 1.0 / N_BINS as f64 };
    let mut counts = vec![0usize; N_BINS];
    for &v in values {
        let b = if hi > lo { (((v - lo) / width).floor() as usize).min(N_BINS - 1) } else { 0 };
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let left = lo + width * i as f64;
            let right = if i + 1 == N_BINS && hi > lo { hi } else { lo + width * (i + 1) as f64 };
            (left, right, c)
        })
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    let f = fs::File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f))
}

fn rt<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run(result_dir: &Path, out: &Path) -> Result<(), CliError> {
    let entries = fs::read_dir(result_dir)
        .map_err(|e| CliError::Usage(format!("cannot read result dir {}: {e}", result_dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_evaluations.csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no *_evaluations.csv files in {}", result_dir.display())));
    }
    let arms = files
        .iter()
        .map(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            read_evaluations(p, name.trim_end_matches("_evaluations.csv").to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m = arms[0].m;
    if arms.iter().any(|a| a.m != m) {
        return Err(CliError::Usage("arms disagree on the number of objectives".into()));
    }
    let orientation = directions(result_dir, m);
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;

    for j in 0..m {
        let all = arms.iter().flat_map(|a| a.rows.iter().map(move |r| r.1[j]));
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        for a in &arms {
            let vals: Vec<f64> = a.rows.iter().map(|r| r.1[j]).collect();
            let mut w = writer(&out.join(format!("{}_hist_y{}.csv", a.label, j + 1)))?;
            w.write_record(["bin_left", "bin_right", "count"]).map_err(rt)?;
            if !vals.is_empty() {
                for (l, r, c) in histogram(&vals, lo, hi) {
                    w.write_record([l.to_string(), r.to_string(), c.to_string()]).map_err(rt)?;
                }
            }
            w.flush().map_err(rt)?;
        }
    }

    for a in &arms {
        let mut seeds: Vec<&str> = a.rows.iter().map(|r| r.0.as_str()).collect();
        seeds.dedup();
        let mut w = writer(&out.join(format!("{}_front.csv", a.label)))?;
        let mut header = vec!["seed".to_string()];
        header.extend((1..=m).map(|j| format!("y{j}")));
        w.write_record(&header).map_err(rt)?;
        for seed in seeds {
            let pts: Vec<Vec<f64>> =
                a.rows.iter().filter(|r| r.0 == seed).map(|r| orientation.to_canonical(&r.1)).collect();
            let front = ParetoFront::from_points(m, &pts).map_err(rt)?;
            for p in front.points() {
                let mut row = vec![seed.to_string()];
                row.extend(orientation.to_native(p).iter().map(f64::to_string));
                w.write_record(&row).map_err(rt)?;
            }
        }
        w.flush().map_err(rt)?;
    }
    println!("wrote coverage for {} arm(s), {m} objective(s) to {}", arms.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_conserves_counts() {
        let vals: Vec<f64> = (0..97).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = histogram(&vals, -1.0, 1.0);
        assert_eq!(h.len(), N_BINS);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 97);
        assert_eq!(h[N_BINS - 1].1, 1.0);
    }

    #[test]
    fn degenerate_histogram_has_one_bin() {
        let h = histogram(&[2.5; 8], 2.5, 2.5);
        assert_eq!(h.iter().filter(|b| b.2 > 0).count(), 1);
        assert_eq!(h[0].2, 8);
    }
}
