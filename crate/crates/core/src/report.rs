//! Tabular run output and per-iteration log lines.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::bfgs::IterLog;
use crate::error::{Error, Result};
use crate::optimize::SolveReport;

pub const CSV_HEADER: &str = "level,nodes,np_nodes,total,elastic,penalty,body,iters,seconds";

/// One results row; energies keep full precision.
pub fn csv_row(level: u32, nodes: usize, np_nodes: usize, report: &SolveReport) -> String {
    let b = &report.breakdown;
    format!(
        "{level},{nodes},{np_nodes},{:e},{:e},{:e},{:e},{},{:.3}",
        b.total, b.elastic, b.penalty, b.body, report.iterations, report.wall_time
    )
}

/// Appends `row` to a CSV file, writing `header` first when the file is new or empty.
pub fn append_csv(path: &Path, header: &str, row: &str) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    let mut text = String::new();
    if empty {
        text.push_str(header);
        text.push('\n');
    }
    text.push_str(row);
    text.push('\n');
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn log_line(entry: &IterLog) -> String {
    format!(
        "{{\"iter\": {}, \"f\": {:e}, \"grad_inf\": {:e}, \"step\": {:e}}}",
        entry.iter, entry.f, entry.grad_inf, entry.step
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::EnergyBreakdown;

    fn report() -> SolveReport {
        SolveReport {
            breakdown: EnergyBreakdown::new(9.16e4, 28.0, -2.86e5),
            iterations: 21,
            wall_time: 0.5,
            gradient_norm: 1e-7,
            converged: true,
            message: "ok".into(),
        }
    }

    #[test]
    fn row_matches_header() {
        let row = csv_row(1, 513, 52, &report());
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(&cols[..3], &["1", "513", "52"]);
        let total: f64 = cols[3].parse().unwrap();
        assert_eq!(total, 9.16e4 + 28.0 - 2.86e5);
        assert_eq!(cols[7], "21");
    }

    #[test]
    fn header_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        append_csv(&path, CSV_HEADER, "a").unwrap();
        append_csv(&path, CSV_HEADER, "b").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\na\nb\n"));
    }

    #[test]
    fn unwritable_path() {
        let r = append_csv(Path::new("/nonexistent/dir/r.csv"), CSV_HEADER, "a");
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn log_format() {
        let l = log_line(&IterLog { iter: 3, f: -1.5, grad_inf: 0.25, step: 1.0 });
        assert_eq!(l, "{\"iter\": 3, \"f\": -1.5e0, \"grad_inf\": 2.5e-1, \"step\": 1e0}");
    }
}
