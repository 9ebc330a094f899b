//! Plain-text artifacts: density snapshots, VTK, iteration logs, NPUP
//! tables and timing summaries.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back and written again is byte-identical.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;
use crate::metrics::OverhangReport;
use crate::optimizer::{IterationRecord, RunLog};
use crate::process::CostBreakdown;

/// C-style `%.{digits}g`.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let p = digits.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Legacy ASCII VTK structured-points file with one CELL_DATA scalar per
/// field (element values).
pub fn vtk_string(mesh: &StructuredMesh, fields: &[(&str, &[f64])]) -> Result<String> {
    let n = mesh.n_elements();
    for (name, f) in fields {
        if f.len() != n {
            return Err(Error::invalid(format!("field `{name}` has {} values, mesh has {n} elements", f.len())));
        }
    }
    let c = mesh.counts();
    let h = mesh.element_size();
    let (nz, hz) = if mesh.dim() == 3 { (c[2], h[2]) } else { (0, 1.0) };
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\namtopo density\nASCII\nDATASET STRUCTURED_POINTS\n");
    let _ = writeln!(s, "DIMENSIONS {} {} {}", c[0] + 1, c[1] + 1, nz + 1);
    s.push_str("ORIGIN 0 0 0\n");
    let _ = writeln!(s, "SPACING {:?} {:?} {:?}", h[0], h[1], hz);
    let _ = writeln!(s, "CELL_DATA {n}");
    for (name, f) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        // VTK orders cells x fastest, then y, then z
        for k in 0..nz.max(1) {
            for j in 0..c[1] {
                for i in 0..c[0] {
                    let _ = writeln!(s, "{:?}", f[mesh.element_index([i, j, k])]);
                }
            }
        }
    }
    Ok(s)
}

pub fn write_vtk(mesh: &StructuredMesh, fields: &[(&str, &[f64])], path: &Path) -> Result<()> {
    write_file(path, &vtk_string(mesh, fields)?)
}

/// What the rows of a density CSV are indexed by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensityKind {
    Element,
    Node,
}

impl DensityKind {
    fn header(self) -> &'static str {
        match self {
            DensityKind::Element => "element",
            DensityKind::Node => "node",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityFile {
    pub kind: DensityKind,
    pub values: Vec<f64>,
}

pub fn density_csv_string(kind: DensityKind, values: &[f64]) -> String {
    let mut s = format!("{},value\n", kind.header());
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{i},{v:?}");
    }
    s
}

pub fn write_density_csv(path: &Path, kind: DensityKind, values: &[f64]) -> Result<()> {
    write_file(path, &density_csv_string(kind, values))
}

pub fn parse_density_csv(text: &str, path: &Path) -> Result<DensityFile> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let kind = match lines.next().map(str::trim) {
        Some("element,value") => DensityKind::Element,
        Some("node,value") => DensityKind::Node,
        other => {
            return Err(perr(1, format!("expected header `element,value` or `node,value`, got {other:?}")))
        }
    };
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let (i, v) = line
            .split_once(',')
            .ok_or_else(|| perr(lineno, "expected `index,value`".into()))?;
        let i: usize = i.trim().parse().map_err(|e| perr(lineno, format!("bad index: {e}")))?;
        if i != values.len() {
            return Err(perr(lineno, format!("index {i} out of sequence (expected {})", values.len())));
        }
        let v: f64 = v.trim().parse().map_err(|e| perr(lineno, format!("bad value: {e}")))?;
        values.push(v);
    }
    Ok(DensityFile { kind, values })
}

pub fn read_density_csv(path: &Path) -> Result<DensityFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_density_csv(&text, path)
}

/// Nodal field from element values: the mean over the elements sharing
/// each node.
pub fn nodal_from_elements(mesh: &StructuredMesh, elem: &[f64]) -> Vec<f64> {
    let nen = mesh.nodes_per_element();
    let mut sum = vec![0.0; mesh.n_nodes()];
    let mut count = vec![0u32; mesh.n_nodes()];
    for (e, v) in elem.iter().enumerate() {
        for &n in &mesh.element_nodes(e)[..nen] {
            sum[n] += v;
            count[n] += 1;
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

/// Final cost terms, one `quantity,value` row each.
pub fn cost_csv_string(cost: &CostBreakdown, converged: bool, iterations: usize) -> String {
    let mut s = String::from("quantity,value\n");
    let _ = writeln!(s, "J_D,{:?}", cost.j_d);
    let _ = writeln!(s, "total,{:?}", cost.total);
    let _ = writeln!(s, "grayness,{:?}", cost.grayness);
    let _ = writeln!(s, "iterations,{iterations}");
    let _ = writeln!(s, "converged,{converged}");
    for (i, (j, w)) in cost.j_p.iter().zip(&cost.weights).enumerate() {
        let _ = writeln!(s, "J_P{},{j:?}", i + 1);
        let _ = writeln!(s, "w{},{w:?}", i + 1);
    }
    s
}

pub fn write_cost_csv(path: &Path, cost: &CostBreakdown, converged: bool, iterations: usize) -> Result<()> {
    write_file(path, &cost_csv_string(cost, converged, iterations))
}

pub fn sweep_csv_string(reports: &[OverhangReport]) -> String {
    let mut s = String::from("angle_deg,npup\n");
    for r in reports {
        let _ = writeln!(s, "{},{}", format_sig(r.angle_deg, 6), format_sig(r.npup, 6));
    }
    s
}

pub fn export_sweep(reports: &[OverhangReport], path: &Path) -> Result<()> {
    write_file(path, &sweep_csv_string(reports))
}

pub const ITERS_HEADER: &str = "iter,beta,J_D,total,grayness,vol_constraint,step_inf_norm,wall_ms,\
pup_constraint,gray_constraint,main_ms,sub_ms,filter_ms,mma_ms";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

pub fn record_line(r: &IterationRecord) -> String {
    format!(
        "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{:?},{:?},{:?},{:?}",
        r.iteration,
        r.beta,
        r.j_d,
        r.total,
        r.grayness,
        r.vol_constraint,
        r.step_inf_norm,
        r.wall_ms,
        opt(r.pup_constraint),
        opt(r.gray_constraint),
        r.main_ms,
        r.sub_ms,
        r.filter_ms,
        r.mma_ms
    )
}

/// Appends iteration rows to `iters.csv` as they are produced.
pub struct RunLogWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl RunLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        w.line(ITERS_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, r: &IterationRecord) -> Result<()> {
        self.line(&record_line(r))
    }
}

pub fn runlog_csv_string(log: &RunLog) -> String {
    let mut s = format!("{ITERS_HEADER}\n");
    for r in &log.records {
        s.push_str(&record_line(r));
        s.push('\n');
    }
    s
}

pub fn parse_runlog(text: &str, path: &Path) -> Result<RunLog> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").trim().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let required = ["iter", "beta", "J_D", "total", "grayness", "vol_constraint", "step_inf_norm", "wall_ms"];
    let mut idx = Vec::new();
    for name in required {
        idx.push(col(name).ok_or_else(|| perr(1, format!("missing column `{name}`")))?);
    }
    let optional: Vec<Option<usize>> = ["pup_constraint", "gray_constraint", "main_ms", "sub_ms", "filter_ms", "mma_ms"]
        .iter()
        .map(|n| col(n))
        .collect();
    let mut log = RunLog::default();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(perr(lineno, format!("expected {} columns, got {}", header.len(), cells.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i]
                .trim()
                .parse()
                .map_err(|e| perr(lineno, format!("column `{}`: {e}", header[i])))
        };
        let maybe = |i: Option<usize>| -> Result<Option<f64>> {
            match i {
                Some(i) if !cells[i].trim().is_empty() => num(i).map(Some),
                _ => Ok(None),
            }
        };
        let iteration = cells[idx[0]]
            .trim()
            .parse()
            .map_err(|e| perr(lineno, format!("column `iter`: {e}")))?;
        log.records.push(IterationRecord {
            iteration,
            beta: num(idx[1])?,
            j_d: num(idx[2])?,
            total: num(idx[3])?,
            grayness: num(idx[4])?,
            vol_constraint: num(idx[5])?,
            step_inf_norm: num(idx[6])?,
            wall_ms: num(idx[7])?,
            pup_constraint: maybe(optional[0])?,
            gray_constraint: maybe(optional[1])?,
            main_ms: maybe(optional[2])?.unwrap_or(0.0),
            sub_ms: maybe(optional[3])?.unwrap_or(0.0),
            filter_ms: maybe(optional[4])?.unwrap_or(0.0),
            mma_ms: maybe(optional[5])?.unwrap_or(0.0),
        });
    }
    Ok(log)
}

pub fn read_runlog(path: &Path) -> Result<RunLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_runlog(&text, path)
}

/// Average time per iteration by phase, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingReport {
    pub iterations: usize,
    pub wall_ms: f64,
    pub main_ms: f64,
    pub sub_ms: f64,
    pub filter_ms: f64,
    pub mma_ms: f64,
}

pub fn timing_report(log: &RunLog) -> Result<TimingReport> {
    let n = log.records.len();
    if n == 0 {
        return Err(Error::invalid("run log has no iterations"));
    }
    let avg = |f: fn(&IterationRecord) -> f64| log.records.iter().map(f).sum::<f64>() / n as f64;
    Ok(TimingReport {
        iterations: n,
        wall_ms: avg(|r| r.wall_ms),
        main_ms: avg(|r| r.main_ms),
        sub_ms: avg(|r| r.sub_ms),
        filter_ms: avg(|r| r.filter_ms),
        mma_ms: avg(|r| r.mma_ms),
    })
}

/// One row per labelled report; with several reports a last column gives
/// each sub-solve average relative to the first row.
pub fn timing_table(rows: &[(String, TimingReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut s = format!(
        "{:<width$} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "run", "iters", "wall_ms", "main_ms", "sub_ms", "filter_ms", "mma_ms"
    );
    if rows.len() > 1 {
        s.push_str(&format!(" {:>10}", "sub/first"));
    }
    s.push('\n');
    let first_sub = rows.first().map_or(0.0, |(_, r)| r.sub_ms);
    for (label, r) in rows {
        let _ = write!(
            s,
            "{label:<width$} {:>6} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            r.iterations, r.wall_ms, r.main_ms, r.sub_ms, r.filter_ms, r.mma_ms
        );
        if rows.len() > 1 {
            let ratio = if first_sub > 0.0 { r.sub_ms / first_sub } else { f64::NAN };
            let _ = write!(s, " {ratio:>10.3}");
        }
        s.push('\n');
    }
    s
}
