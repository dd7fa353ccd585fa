//! CSV and JSON emission with atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::density::DensityCurve;
use crate::disintegration::BinSummary;
use crate::error::{Error, Result};
use crate::surface::{HausdorffComparison, IbpResidual, SurfaceIntegral};

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// A CSV document built row by row.
#[derive(Debug, Clone)]
pub struct Csv {
    columns: usize,
    body: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut body = header
            .iter()
            .map(|h| field(h))
            .collect::<Vec<_>>()
            .join(",");
        body.push('\n');
        Self {
            columns: header.len(),
            body,
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width differs from header");
        let line: Vec<String> = cells.iter().map(|c| field(c)).collect();
        self.body.push_str(&line.join(","));
        self.body.push('\n');
    }

    pub fn finish(self) -> String {
        self.body
    }
}

pub fn density_csv(curves: &[DensityCurve]) -> String {
    let mut csv = Csv::new(&["r", "estimate", "stderr", "estimator", "excluded_fraction"]);
    for c in curves {
        for i in 0..c.len() {
            csv.row(&[
                fmt_f64(c.r[i]),
                fmt_f64(c.estimate[i]),
                fmt_f64(c.stderr[i]),
                c.estimator.as_str().to_string(),
                fmt_f64(c.excluded_fraction),
            ]);
        }
    }
    csv.finish()
}

pub fn residuals_csv(residuals: &[IbpResidual]) -> String {
    let mut csv = Csv::new(&["phi", "k", "r", "lhs", "rhs", "residual", "band"]);
    for r in residuals {
        csv.row(&[
            r.phi.clone(),
            r.k.to_string(),
            fmt_f64(r.r),
            fmt_f64(r.lhs.value),
            fmt_f64(r.rhs.value),
            fmt_f64(r.residual),
            fmt_f64(r.band),
        ]);
    }
    csv.finish()
}

pub fn integrals_csv(integrals: &[SurfaceIntegral]) -> String {
    let mut csv = Csv::new(&[
        "phi",
        "r",
        "estimate",
        "stderr",
        "unresolved",
        "excluded_fraction",
    ]);
    for s in integrals {
        csv.row(&[
            s.phi.clone(),
            fmt_f64(s.r),
            fmt_f64(s.estimate.value),
            fmt_f64(s.estimate.stderr),
            s.unresolved.to_string(),
            fmt_f64(s.excluded_fraction),
        ]);
    }
    csv.finish()
}

pub fn bins_csv(bins: &[BinSummary], phis: &[String]) -> String {
    let mut header = vec![
        "bin_lo".to_string(),
        "bin_hi".into(),
        "weight".into(),
        "count".into(),
    ];
    header.extend(phis.iter().map(|p| format!("cond_mean[{p}]")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&refs);
    for b in bins {
        let mut row = vec![
            fmt_f64(b.bin_lo),
            fmt_f64(b.bin_hi),
            fmt_f64(b.weight),
            b.count.to_string(),
        ];
        row.extend(
            b.cond_mean
                .iter()
                .map(|m| m.map(fmt_f64).unwrap_or_default()),
        );
        csv.row(&row);
    }
    csv.finish()
}

pub fn hausdorff_csv(rows: &[HausdorffComparison]) -> String {
    let mut csv = Csv::new(&[
        "g",
        "phi",
        "r",
        "geometry",
        "quadrature",
        "surface",
        "stderr",
        "relative_error",
        "within",
    ]);
    for c in rows {
        csv.row(&[
            c.g.clone(),
            c.phi.clone(),
            fmt_f64(c.r),
            c.geometry.to_string(),
            fmt_f64(c.quadrature),
            fmt_f64(c.surface.value),
            fmt_f64(c.surface.stderr),
            fmt_f64(c.relative_error),
            c.within.to_string(),
        ]);
    }
    csv.finish()
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456789.125, -0.0, 2.5e17] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(0.1), "0.1");
    }

    #[test]
    fn csv_quoting() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(&["min(xi(1), 1)".into(), "x\"y".into()]);
        assert_eq!(c.finish(), "a,b\n\"min(xi(1), 1)\",\"x\"\"y\"\n");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
