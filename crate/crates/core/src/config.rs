//! Flat key/value run configuration with per-case defaults.
//!
//! A config file is TOML with top-level keys only. Keys that are absent take
//! the default of the selected `case`; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{Formulation, SolverKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Cantilever2d,
    Mbb2d,
    Beam3d,
    /// User geometry with cantilever supports and load.
    Custom,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Cantilever2d => "cantilever2d",
            Case::Mbb2d => "mbb2d",
            Case::Beam3d => "beam3d",
            Case::Custom => "custom",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: Case,
    pub formulation: Formulation,
    pub extents: Vec<f64>,
    pub counts: Vec<usize>,
    /// Index of the build axis (y in 2D, z in 3D by default).
    pub build_axis: usize,

    pub volume_fraction: f64,
    pub filter_radius: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_step: usize,
    pub beta_start: usize,
    pub eta: f64,
    pub tolerance: f64,
    pub max_iterations: usize,

    pub load: f64,
    /// Load band along the band axis; one element wide at the case's load
    /// point when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub load_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub load_hi: Option<f64>,

    pub e0: f64,
    pub e_min: f64,
    pub nu: f64,
    pub simp_penalty: f64,
    pub ramp_penalty: f64,
    pub kappa_min: f64,
    pub gravity: f64,
    pub total_time: f64,
    pub heat_source: Vec<f64>,

    pub layers: usize,
    pub snap_layers: bool,
    pub w0: f64,

    pub pup_angle: f64,
    pub pup_limit: f64,
    pub grayness_limit: f64,
    pub zeta: f64,

    pub mma_move: f64,
    pub mma_asyinit: f64,
    pub mma_asyincr: f64,
    pub mma_asydecr: f64,
    pub mma_asymin: f64,

    pub solver: SolverKind,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Worker threads for the inner parallel regions; 0 uses all cores.
    pub threads: usize,
    pub output_dir: PathBuf,
    /// Optional CSV with an initial design per element.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_density: Option<PathBuf>,
    pub npup_angles: Vec<f64>,
}

impl RunConfig {
    /// Defaults of a case for a formulation.
    pub fn defaults(case: Case, formulation: Formulation) -> Self {
        let (extents, counts, vf, radius, beta_max, beta_step, layers) = match case {
            Case::Cantilever2d | Case::Custom => (vec![12.0, 6.0], vec![240, 120], 0.5, 1.25, 32.0, 100, 40),
            Case::Mbb2d => (vec![160.0, 80.0], vec![320, 160], 0.6, 2.40, 4.0, 100, 160),
            Case::Beam3d => (vec![12.0, 6.0, 6.0], vec![60, 30, 30], 0.5 / 6.0, 0.5, 4.0, 50, 30),
        };
        let w0 = match (case, formulation) {
            (_, Formulation::SelfWeight) => 0.10,
            (Case::Mbb2d, Formulation::Thermal) => 0.99,
            (_, Formulation::Thermal) => 0.25,
            _ => 1.0,
        };
        let (pup_limit, grayness_limit) = match case {
            Case::Beam3d => (2.0, 0.5),
            _ => (0.5, 0.6),
        };
        let baseline = formulation == Formulation::PupBaseline;
        let dim = extents.len();
        Self {
            case,
            formulation,
            extents,
            counts,
            build_axis: dim - 1,
            volume_fraction: vf,
            filter_radius: radius,
            beta_min: 1.0,
            beta_max,
            beta_step: if baseline { 25 } else { beta_step },
            beta_start: if baseline { 50 } else { 1 },
            eta: 0.5,
            tolerance: 1e-2,
            max_iterations: 2000,
            load: 1.0,
            load_lo: None,
            load_hi: None,
            e0: 1.0,
            e_min: 1e-9,
            nu: 0.3,
            simp_penalty: 5.0,
            ramp_penalty: 5.0,
            kappa_min: 1e-9,
            gravity: 9.81,
            total_time: 1.0,
            heat_source: vec![1.0],
            layers,
            snap_layers: false,
            w0,
            pup_angle: 45.0,
            pup_limit,
            grayness_limit,
            zeta: crate::metrics::ZETA,
            mma_move: 0.2,
            mma_asyinit: 0.5,
            mma_asyincr: 1.2,
            mma_asydecr: 0.7,
            mma_asymin: 0.01,
            solver: if dim == 3 { SolverKind::Cg } else { SolverKind::Direct },
            cg_tol: 1e-8,
            cg_max_iter: 20_000,
            threads: 0,
            output_dir: PathBuf::from("out"),
            initial_density: None,
            npup_angles: vec![30.0, 45.0, 60.0],
        }
    }

    /// Resolves a config text: case defaults overridden by the given keys.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, path, &e))?;
        let pick = |key: &str| -> Result<Option<String>> {
            match table.get(key) {
                None => Ok(None),
                Some(toml::Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: key_line(text, key),
                    message: format!("`{key}` must be a string"),
                }),
            }
        };
        let case = match pick("case")? {
            Some(s) => parse_enum::<Case>(&s, "case", text, path)?,
            None => Case::Cantilever2d,
        };
        let formulation = match pick("formulation")? {
            Some(s) => parse_enum::<Formulation>(&s, "formulation", text, path)?,
            None => Formulation::Standard,
        };
        let mut defaults = Self::defaults(case, formulation);
        // geometry overrides change what the default build axis is
        if let Some(toml::Value::Array(ext)) = table.get("extents") {
            defaults.build_axis = ext.len().max(1) - 1;
            if ext.len() == 3 && case == Case::Custom {
                defaults.solver = SolverKind::Cg;
            }
        }
        let default_table = toml::Table::try_from(&defaults).map_err(|e| Error::Config(e.to_string()))?;
        // Appending the missing keys keeps the user's lines (and so the
        // reported error lines) unchanged.
        let mut merged = String::from(text);
        merged.push('\n');
        for (k, v) in default_table {
            if !table.contains_key(&k) {
                merged.push_str(&format!("{k} = {v}\n"));
            }
        }
        let cfg: RunConfig = toml::from_str(&merged).map_err(|e| parse_error(text, path, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical flat TOML with every key; loading it yields the same config.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let table = toml::Table::try_from(self).expect("config serializes to a table");
        for (k, v) in table {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let dim = self.extents.len();
        if !(dim == 2 || dim == 3) || self.counts.len() != dim {
            return bad(format!(
                "extents and counts must both have 2 or 3 entries (got {} and {})",
                dim,
                self.counts.len()
            ));
        }
        if self.extents.iter().any(|&v| !(v > 0.0)) || self.counts.contains(&0) {
            return bad("extents and element counts must be positive".into());
        }
        if self.build_axis >= dim {
            return bad(format!("build_axis {} out of range for a {dim}D mesh", self.build_axis));
        }
        match self.case {
            Case::Custom => {}
            Case::Beam3d if dim != 3 => return bad("beam3d needs a 3D geometry".into()),
            Case::Cantilever2d | Case::Mbb2d if dim != 2 => {
                return bad(format!("{} needs a 2D geometry", self.case))
            }
            _ => {}
        }
        if self.case == Case::Mbb2d && self.build_axis != 1 {
            return bad("mbb2d builds along y".into());
        }
        if self.formulation.has_layers() {
            let rows = self.counts[self.build_axis];
            if self.layers == 0 || self.layers > rows {
                return bad(format!("layers = {} must lie in 1..={rows}", self.layers));
            }
            if !self.snap_layers && rows % self.layers != 0 {
                return bad(format!(
                    "layers = {} does not divide the {rows} element rows along the build axis \
                     (set snap_layers = true to snap layer tops to rows)",
                    self.layers
                ));
            }
            if self.formulation == Formulation::Thermal
                && !(self.heat_source.len() == 1 || self.heat_source.len() == self.layers)
            {
                return bad(format!("heat_source needs 1 or {} entries", self.layers));
            }
        }
        if !(self.w0 > 0.0 && self.w0 <= 1.0) {
            return bad(format!("w0 = {} outside (0, 1]", self.w0));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return bad(format!("volume_fraction = {} outside (0, 1]", self.volume_fraction));
        }
        if !(self.filter_radius > 0.0) {
            return bad("filter_radius must be positive".into());
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max) || self.beta_step == 0 || self.beta_start == 0 {
            return bad("need 0 < beta_min <= beta_max, beta_step >= 1 and beta_start >= 1".into());
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta = {} outside (0, 1)", self.eta));
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive".into());
        }
        if !(self.mma_move > 0.0 && self.mma_move <= 1.0) {
            return bad(format!("mma_move = {} outside (0, 1]", self.mma_move));
        }
        if !(self.pup_angle > 0.0 && self.pup_angle <= 90.0) || self.npup_angles.iter().any(|&a| !(a > 0.0 && a <= 90.0)) {
            return bad("overhang angles must lie in (0, 90]".into());
        }
        if let (Some(lo), Some(hi)) = (self.load_lo, self.load_hi) {
            if !(lo < hi) {
                return bad(format!("load band [{lo}, {hi}] is empty"));
            }
        }
        if self.load_lo.is_some() != self.load_hi.is_some() {
            return bad("load_lo and load_hi must be given together".into());
        }
        Ok(())
    }
}

/// Reads and resolves a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_toml_str(&text, path)
}

fn parse_enum<T: for<'de> Deserialize<'de>>(value: &str, key: &str, text: &str, path: &Path) -> Result<T> {
    T::deserialize(toml::Value::String(value.to_string())).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: key_line(text, key),
        message: format!("bad `{key}`: {e}"),
    })
}

fn parse_error(text: &str, path: &Path, e: &toml::de::Error) -> Error {
    let line = match e.span() {
        Some(span) if span.start <= text.len() => text[..span.start].matches('\n').count() + 1,
        // the error sits in the appended defaults
        _ => 0,
    };
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.message().to_string(),
    }
}

fn key_line(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| l.trim_start().starts_with(key))
        .map_or(0, |i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml_str(text, Path::new("test.toml"))
    }

    #[test]
    fn cantilever_defaults() {
        let c = load("case = \"cantilever2d\"").unwrap();
        assert_eq!(c.filter_radius, 1.25);
        assert_eq!(c.volume_fraction, 0.5);
        assert_eq!(c.counts, vec![240, 120]);
        assert_eq!((c.beta_min, c.beta_max, c.beta_step), (1.0, 32.0, 100));
        assert_eq!(load("").unwrap(), c);
    }

    #[test]
    fn mbb_defaults() {
        let c = load("case = \"mbb2d\"").unwrap();
        assert_eq!(c.extents, vec![160.0, 80.0]);
        assert_eq!(c.counts, vec![320, 160]);
        assert_eq!(c.volume_fraction, 0.6);
        assert_eq!(c.filter_radius, 2.40);
        assert_eq!((c.beta_min, c.beta_max), (1.0, 4.0));
    }

    #[test]
    fn unknown_key_is_named() {
        let e = load("filtre_radius = 1.0").unwrap_err().to_string();
        assert!(e.contains("filtre_radius"), "{e}");
        match load("\n\nfiltre_radius = 1.0").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn syntax_errors_carry_lines() {
        match load("w0 = 0.5\nlayers = = 3\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn layer_divisibility() {
        let e = load("formulation = \"thermal\"\nlayers = 80").unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
        assert!(load("formulation = \"thermal\"\nlayers = 80\nsnap_layers = true").is_ok());
        let c = load("formulation = \"self_weight\"").unwrap();
        assert_eq!((c.layers, c.w0), (40, 0.10));
        let c = load("case = \"mbb2d\"\nformulation = \"thermal\"").unwrap();
        assert_eq!((c.layers, c.w0), (160, 0.99));
    }

    #[test]
    fn echo_round_trips() {
        for text in [
            "",
            "case = \"beam3d\"\nformulation = \"thermal\"",
            "formulation = \"pup_baseline\"\nload_lo = 2.0\nload_hi = 4.0\nfilter_radius = 0.5",
            "case = \"custom\"\nextents = [4.0, 2.0]\ncounts = [8, 4]\ninitial_density = \"seed.csv\"",
        ] {
            let c = load(text).unwrap();
            assert_eq!(load(&c.echo()).unwrap(), c);
        }
    }
}
