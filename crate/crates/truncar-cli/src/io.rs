//! File formats the commands exchange: dataset/truth/mask CSVs and the run
//! log. Every writer prints floats with the shortest round-trip form, so
//! repeated runs with one seed produce byte-identical files; wall-clock
//! numbers go only into the run log.

use nalgebra::DMatrix;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use truncar::error::{Error, Result};
use truncar::sampler::Dataset;

/// id,y,x1..xp with the response left blank at unobserved regions.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "id,y,{}", data.names().join(","))?;
    for i in 0..data.n() {
        let mut line = i.to_string();
        if data.observed()[i] {
            write!(line, ",{}", data.y()[i]).expect("string write");
        } else {
            line.push(',');
        }
        for j in 0..data.p() {
            write!(line, ",{}", data.x()[(i, j)]).expect("string write");
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a dataset CSV back into its parts. Blank, `NA`, or `NaN` responses
/// mark unobserved regions.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        msg: "empty dataset file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "y" {
        return Err(Error::Parse {
            path: display,
            line: 1,
            msg: format!("expected header id,y,<covariates...>, got `{header}`"),
        });
    }
    let names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let p = names.len();
    let mut y = Vec::new();
    let mut observed = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p + 2 {
            return Err(Error::Parse {
                path: display.clone(),
                line: idx + 1,
                msg: format!("expected {} fields, got {}", p + 2, fields.len()),
            });
        }
        let row = y.len();
        let id: usize = fields[0].trim().parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            msg: format!("id `{}` is not an integer", fields[0]),
        })?;
        if id != row {
            return Err(Error::Parse {
                path: display.clone(),
                line: idx + 1,
                msg: format!("ids must run 0,1,2,... in region order; got {id} at row {row}"),
            });
        }
        let yf = fields[1].trim();
        if yf.is_empty() || yf.eq_ignore_ascii_case("na") || yf.eq_ignore_ascii_case("nan") {
            y.push(f64::NAN);
            observed.push(false);
        } else {
            let v: f64 = yf.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: idx + 1,
                msg: format!("response `{yf}` is not a number"),
            })?;
            y.push(v);
            observed.push(true);
        }
        for (j, f) in fields[2..].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: idx + 1,
                msg: format!("covariate {} `{f}` is not a number", names[j]),
            })?;
            xs.push(v);
        }
    }
    if y.is_empty() {
        return Err(Error::Parse {
            path: display,
            line: 1,
            msg: "dataset has no rows".into(),
        });
    }
    let n = y.len();
    let x = DMatrix::from_row_iterator(n, p, xs);
    Dataset::new(y, x, observed, names)
}

/// id,y over every region (the generating response, mask ignored).
pub fn write_truth_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "id,y")?;
    for (i, v) in data.y().iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv(path: &Path, n: usize) -> Result<Vec<f64>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::with_capacity(n);
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "id,y" {
                return Err(Error::Parse {
                    path: display,
                    line: 1,
                    msg: format!("expected header id,y, got `{line}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id_s, y_s) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            msg: "expected id,y".into(),
        })?;
        let id: usize = id_s.trim().parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            msg: format!("id `{id_s}` is not an integer"),
        })?;
        if id != out.len() {
            return Err(Error::Parse {
                path: display.clone(),
                line: idx + 1,
                msg: format!("ids must run 0,1,2,...; got {id}"),
            });
        }
        let v: f64 = y_s.trim().parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            msg: format!("value `{y_s}` is not a number"),
        })?;
        out.push(v);
    }
    if out.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "truth file has {} rows for {n} regions",
            out.len()
        )));
    }
    Ok(out)
}

/// id,observed with 1 for observed regions.
pub fn write_mask_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "id,observed")?;
    for (i, &o) in data.observed().iter().enumerate() {
        writeln!(w, "{i},{}", o as u8)?;
    }
    w.flush()?;
    Ok(())
}

/// id,truth,point,residual at the predicted regions.
pub fn write_residuals_csv(
    ids: &[usize],
    truth: &[f64],
    point: &[f64],
    residuals: &[f64],
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "id,truth,point,residual")?;
    for k in 0..ids.len() {
        writeln!(w, "{},{},{},{}", ids[k], truth[k], point[k], residuals[k])?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock bookkeeping for one command. Timings and timestamps live only
/// in this file; everything else a command writes is deterministic.
pub struct RunLog {
    command: &'static str,
    started_unix: f64,
    clock: Instant,
    steps: Vec<(String, f64)>,
}

impl RunLog {
    pub fn start(command: &'static str) -> Self {
        RunLog {
            command,
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            clock: Instant::now(),
            steps: Vec::new(),
        }
    }

    pub fn step<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.steps.push((name.to_string(), t0.elapsed().as_secs_f64()));
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let total = self.clock.elapsed().as_secs_f64();
        let steps: serde_json::Map<String, serde_json::Value> = self
            .steps
            .iter()
            .map(|(k, v)| (format!("{k}_seconds"), serde_json::json!(v)))
            .collect();
        let log = serde_json::json!({
            "command": self.command,
            "started_unix": self.started_unix,
            "wall_seconds": total,
            "steps": steps,
        });
        std::fs::write(
            dir.join("run_log.json"),
            serde_json::to_string_pretty(&log)? + "\n",
        )?;
        Ok(())
    }
}
