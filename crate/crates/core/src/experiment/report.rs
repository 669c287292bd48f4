//! Experiment reports, data-file emission and golden comparison.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::config::{ConfigMap, Format};
use crate::error::{config, Error, Result};
use crate::flow::VelocityPair;
use crate::grid::SpatialGrid;
use crate::lagrangian::fmt_num;

pub const MANIFEST: &str = "manifest.txt";
/// Wall-clock timing lives outside the manifest so reruns stay bitwise equal.
pub const TIMING: &str = "timing.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Below,
    Above,
    AtLeast,
    Equal,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Below => "<",
            Relation::Above => ">",
            Relation::AtLeast => ">=",
            Relation::Equal => "==",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, relation: Relation, limit: f64) -> Check {
        let pass = match relation {
            Relation::Below => value < limit,
            Relation::Above => value > limit,
            Relation::AtLeast => value >= limit,
            Relation::Equal => value == limit,
        };
        Check {
            name: name.into(),
            value,
            relation,
            limit,
            pass,
        }
    }

    /// A yes/no outcome, stored as 1 or 0 against 1.
    pub fn flag(name: &str, ok: bool) -> Check {
        Check::new(name, if ok { 1.0 } else { 0.0 }, Relation::Equal, 1.0)
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} = {} {} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            fmt_num(self.value),
            self.relation.symbol(),
            fmt_num(self.limit)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Pass,
    Fail,
    /// A runtime failure (singular density, crossing, ...) ended the scenario.
    Error { kind: String, message: String },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Pass => "PASS",
            RunStatus::Fail => "FAIL",
            RunStatus::Error { .. } => "ERROR",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub description: String,
    pub config: ConfigMap,
    pub status: RunStatus,
    pub metrics: Vec<(String, f64)>,
    pub checks: Vec<Check>,
    pub elapsed_seconds: f64,
    /// Files written to the output directory, in manifest order.
    pub files: Vec<String>,
}

impl ExperimentReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let metrics: Vec<_> = self
            .metrics
            .iter()
            .map(|(n, v)| serde_json::json!({ "name": n, "value": fmt_num(*v) }))
            .collect();
        let checks: Vec<_> = self
            .checks
            .iter()
            .map(|c| {
                serde_json::json!({
                    "name": c.name,
                    "value": fmt_num(c.value),
                    "relation": c.relation,
                    "limit": fmt_num(c.limit),
                    "pass": c.pass,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "experiment": self.experiment,
            "description": self.description,
            "status": self.status,
            "config": self.config,
            "metrics": metrics,
            "checks": checks,
            "files": self.files,
        });
        serde_json::to_string_pretty(&doc).expect("report serialises") + "\n"
    }

    /// Rows `section,name,value,limit,pass`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv_writer();
        w.write_record(["section", "name", "value", "limit", "pass"]).map_err(csv_err)?;
        let status = self.status.label().to_lowercase();
        let detail = match &self.status {
            RunStatus::Error { kind, message } => format!("{kind}: {message}"),
            _ => String::new(),
        };
        w.write_record(["status", status.as_str(), detail.as_str(), "", ""]).map_err(csv_err)?;
        w.write_record(["experiment", self.experiment.as_str(), self.description.as_str(), "", ""]).map_err(csv_err)?;
        for (k, v) in &self.config {
            w.write_record(["config", k, v, "", ""]).map_err(csv_err)?;
        }
        for (n, v) in &self.metrics {
            w.write_record(["metric", n, &fmt_num(*v), "", ""]).map_err(csv_err)?;
        }
        for c in &self.checks {
            let pass = if c.pass { "true" } else { "false" };
            w.write_record(["check", &c.name, &fmt_num(c.value), &fmt_num(c.limit), pass]).map_err(csv_err)?;
        }
        for f in &self.files {
            w.write_record(["file", f, "", "", ""]).map_err(csv_err)?;
        }
        finish(w)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} {}\n", self.experiment, self.status.label());
        if let RunStatus::Error { kind, message } = &self.status {
            s += &format!("  {kind}: {message}\n");
        }
        for c in &self.checks {
            s += &format!("  {}\n", c.line());
        }
        s
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Velocity CSV: `x,v1,v2` in 1D, `x,y,v1x,v1y,v2x,v2y` in 2D; masked
/// entries are `nan`.
pub fn velocity_csv(grid: &SpatialGrid, vel: &VelocityPair) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let d = grid.dim();
    if d == 1 {
        writeln!(out, "x,v1,v2")?;
    } else {
        writeln!(out, "x,y,v1x,v1y,v2x,v2y")?;
    }
    for i in 0..grid.len() {
        let mut cols: Vec<String> = grid.coords(i).iter().map(|c| fmt_num(*c)).collect();
        for a in 0..2 {
            for k in 0..d {
                cols.push(fmt_num(if vel.defined[a][i] { vel.v[a][k][i] } else { f64::NAN }));
            }
        }
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(out)
}

/// Writes the report and data files plus the manifest; timing goes to a
/// separate file.
pub fn write_outputs(dir: &Path, report: &mut ExperimentReport, data: &[(String, Vec<u8>)], format: Format) -> Result<()> {
    fs::create_dir_all(dir)?;
    let report_name = match format {
        Format::Json => "report.json",
        Format::Csv => "report.csv",
    };
    report.files = std::iter::once(report_name.to_string()).chain(data.iter().map(|(n, _)| n.clone())).collect();
    for (name, bytes) in data {
        fs::write(dir.join(name), bytes)?;
    }
    let body = match format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv()?,
    };
    fs::write(dir.join(report_name), body)?;
    fs::write(dir.join(MANIFEST), report.files.join("\n") + "\n")?;
    let timing = serde_json::json!({ "experiment": report.experiment, "elapsed_seconds": report.elapsed_seconds });
    fs::write(dir.join(TIMING), serde_json::to_string_pretty(&timing).expect("timing serialises") + "\n")?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldenOutcome {
    pub pass: bool,
    /// File, row and column of the first difference.
    pub first_diff: Option<String>,
}

impl GoldenOutcome {
    fn fail(msg: String) -> GoldenOutcome {
        GoldenOutcome {
            pass: false,
            first_diff: Some(msg),
        }
    }
}

fn manifest(dir: &Path) -> Result<Vec<String>> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Compares every manifest file of `golden_dir` with its counterpart in
/// `report_dir`. CSV cells that parse as numbers are compared at 12
/// significant digits; everything else byte for byte.
pub fn compare_golden(report_dir: &Path, golden_dir: &Path) -> Result<GoldenOutcome> {
    for d in [report_dir, golden_dir] {
        if !d.is_dir() {
            return config(format!("{} is not a directory", d.display()));
        }
    }
    let want = match manifest(golden_dir) {
        Ok(m) => m,
        Err(_) => return Ok(GoldenOutcome::fail(format!("missing file {}", golden_dir.join(MANIFEST).display()))),
    };
    let have = match manifest(report_dir) {
        Ok(m) => m,
        Err(_) => return Ok(GoldenOutcome::fail(format!("missing file {}", report_dir.join(MANIFEST).display()))),
    };
    if want != have {
        return Ok(GoldenOutcome::fail(format!("manifest lists differ: {want:?} vs {have:?}")));
    }
    for name in &want {
        let (a, b) = (report_dir.join(name), golden_dir.join(name));
        for p in [&a, &b] {
            if !p.is_file() {
                return Ok(GoldenOutcome::fail(format!("missing file {}", p.display())));
            }
        }
        let (x, y) = (fs::read(&a)?, fs::read(&b)?);
        let diff = if name.ends_with(".csv") {
            csv_diff(&x, &y)?
        } else {
            text_diff(&x, &y)
        };
        if let Some(d) = diff {
            return Ok(GoldenOutcome::fail(format!("{name}: {d}")));
        }
    }
    Ok(GoldenOutcome {
        pass: true,
        first_diff: None,
    })
}

fn text_diff(a: &[u8], b: &[u8]) -> Option<String> {
    if a == b {
        return None;
    }
    let (sa, sb) = (String::from_utf8_lossy(a), String::from_utf8_lossy(b));
    let mut la = sa.lines();
    let mut lb = sb.lines();
    let mut row = 1;
    loop {
        match (la.next(), lb.next()) {
            (Some(x), Some(y)) if x == y => row += 1,
            (x, y) => return Some(format!("line {row}: `{}` vs `{}`", x.unwrap_or("<eof>"), y.unwrap_or("<eof>"))),
        }
    }
}

fn same_cell(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => fmt_num(x) == fmt_num(y),
        _ => false,
    }
}

fn csv_diff(a: &[u8], b: &[u8]) -> Result<Option<String>> {
    let read = |bytes: &[u8]| -> Result<Vec<csv::StringRecord>> {
        csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(bytes)
            .records()
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err)
    };
    let (ra, rb) = (read(a)?, read(b)?);
    let header = ra.first().cloned();
    for (row, (x, y)) in ra.iter().zip(&rb).enumerate() {
        for col in 0..x.len().max(y.len()) {
            let (cx, cy) = (x.get(col).unwrap_or("<missing>"), y.get(col).unwrap_or("<missing>"));
            if !same_cell(cx, cy) {
                let name = header.as_ref().and_then(|h| h.get(col)).unwrap_or("?");
                return Ok(Some(format!("row {}, column {} ({name}): `{cx}` vs `{cy}`", row + 1, col + 1)));
            }
        }
    }
    if ra.len() != rb.len() {
        return Ok(Some(format!("row count {} vs {}", ra.len(), rb.len())));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_apply_their_relation() {
        assert!(Check::new("a", 1e-3, Relation::Below, 1e-2).pass);
        assert!(!Check::new("a", 1e-2, Relation::Below, 1e-2).pass);
        assert!(Check::new("a", 2.0, Relation::AtLeast, 2.0).pass);
        assert!(!Check::flag("a", false).pass);
    }

    #[test]
    fn csv_cells_compare_at_twelve_digits() {
        assert!(same_cell("1.00000000000e0", "1.000000000001"));
        assert!(!same_cell("1.00000000000e0", "1.00000000001"));
        assert!(same_cell("phase", "phase"));
        let a = b"x,y\n1.0,2.0\n";
        let b = b"x,y\n1.0,2.5\n";
        let d = csv_diff(a, b).unwrap().unwrap();
        assert!(d.contains("row 2") && d.contains("column 2") && d.contains("(y)"), "{d}");
        assert!(csv_diff(a, a).unwrap().is_none());
    }
}
