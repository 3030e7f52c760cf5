//! Tidy long-format CSV emission for plotting tools.
//!
//! `plot-data <dir>` accepts either one run directory (containing
//! `summary.json`) or a directory of run directories; the latter produces
//! merged comparison panels keyed by run name.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::runner::RunSummary;

fn read_summary(dir: &Path) -> anyhow::Result<RunSummary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Emit plot CSVs; returns the paths written.
pub fn emit_plot_data(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if dir.join("summary.json").exists() {
        let summary = read_summary(dir)?;
        emit_single(dir, &[(dir.to_path_buf(), summary)])
    } else {
        let mut runs = Vec::new();
        for entry in std::fs::read_dir(dir)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", dir.display()))?
        {
            let path = entry?.path();
            if path.is_dir() && path.join("summary.json").exists() {
                let summary = read_summary(&path)?;
                runs.push((path, summary));
            }
        }
        if runs.is_empty() {
            anyhow::bail!(
                "{}: no summary.json found here or in any subdirectory",
                dir.display()
            );
        }
        runs.sort_by(|a, b| a.1.name.cmp(&b.1.name));
        emit_single(dir, &runs)
    }
}

fn emit_single(root: &Path, runs: &[(PathBuf, RunSummary)]) -> anyhow::Result<Vec<PathBuf>> {
    let plot = root.join("plot");
    std::fs::create_dir_all(&plot)?;
    let mut written = Vec::new();

    // MH-ratio histogram panels, one row per (run, bin).
    {
        let path = plot.join("panels.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "run,bin_lo,bin_hi,mass")?;
        for (_, s) in runs {
            if let Some(hist) = &s.diagnostics.histogram {
                let nb = hist.len();
                for (k, mass) in hist.iter().enumerate() {
                    writeln!(
                        f,
                        "{},{},{},{}",
                        s.name,
                        k as f64 / nb as f64,
                        (k + 1) as f64 / nb as f64,
                        mass
                    )?;
                }
            }
        }
        written.push(path);
    }

    // First and second moments per worker and dimension.
    {
        let path = plot.join("moments.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "run,worker,dim,mean,variance")?;
        for (_, s) in runs {
            for w in &s.workers {
                for (dim, (m, v)) in w.mean.iter().zip(&w.variance).enumerate() {
                    writeln!(f, "{},{},{dim},{m},{v}", s.name, w.id)?;
                }
            }
        }
        written.push(path);
    }

    // Long-format traces from each run's traces/ directory.
    {
        let path = plot.join("trace_long.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "run,worker,step,dim,value")?;
        for (run_dir, s) in runs {
            let tdir = run_dir.join("traces");
            if !tdir.exists() {
                continue;
            }
            for w in &s.workers {
                let tpath = tdir.join(format!("trace_w{}.csv", w.id));
                let Ok(text) = std::fs::read_to_string(&tpath) else {
                    continue;
                };
                let mut lines = text.lines();
                let Some(header) = lines.next() else { continue };
                let dims: Vec<&str> = header.split(',').skip(1).collect();
                for line in lines {
                    let mut cells = line.split(',');
                    let Some(step) = cells.next() else { continue };
                    for (dim, value) in dims.iter().zip(cells) {
                        let dim = dim.trim_start_matches("dim");
                        writeln!(f, "{},{},{step},{dim},{value}", s.name, w.id)?;
                    }
                }
            }
        }
        written.push(path);
    }

    // GP fit overlay: x, observation, posterior mean, truth.
    for (_, s) in runs {
        if let Some(gp) = &s.model_info.gp {
            let path = plot.join(format!("gp_fit_{}.csv", s.name));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "x,y,posterior_mean,truth")?;
            for i in 0..gp.x.len() {
                writeln!(
                    f,
                    "{},{},{},{}",
                    gp.x[i], gp.y[i], gp.posterior_mean[i], gp.truth[i]
                )?;
            }
            written.push(path);
        }
    }
    Ok(written)
}
