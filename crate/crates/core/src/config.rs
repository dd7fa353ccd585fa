//! Run configuration: a TOML document describing the model, named
//! functionals and a list of jobs.
//!
//! ```toml
//! output_dir = "out"
//! formats = ["csv", "json"]
//!
//! [model]
//! kind = "iid_gaussian"   # or "kl_brownian" (dim) or "spectrum" (eigenvalues)
//! dim = 3
//!
//! [functionals]
//! G = "norm2()"                            # expression
//! E = { builtin = "coordinate", k = 1 }    # builtin
//!
//! [[jobs]]
//! kind = "density"
//! g = "G"
//! phi = "exp(-norm2())"
//! r_grid = { from = 0.5, to = 8.0, points = 16 }
//! n = 100000
//! seed = 7
//! ```
//!
//! A functional reference is either a name from `[functionals]` or an
//! inline expression. Parsing collects every error instead of stopping at
//! the first one.

use std::collections::{BTreeMap, HashMap};

use toml::{Table, Value};

use crate::density::{DivergenceForm, EstimatorKind};
use crate::disintegration::Binning;
use crate::error::{Error, Result};
use crate::expr::ExprFunctional;
use crate::functional::{
    bm_endpoint, Clipped, Constant, Coordinate, FunctionalOracle, GaussianCutoff, Linear, Norm2,
};
use crate::gauss_model::{build_model, GaussianModel, ModelDescriptor};
use crate::surface::HAUSDORFF_MAX_DIM;

pub const DEFAULT_N: usize = 100_000;
pub const DEFAULT_BINS: usize = 100;
pub const SELFTEST_CRITERIA: u32 = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalSpec {
    Expr(String),
    Coordinate { k: usize },
    Linear { weights: Vec<f64> },
    Norm2,
    BmEndpoint,
    Constant { value: f64 },
    Clipped { base: String, cap: f64 },
    Cutoff { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobKind {
    Density,
    Surface,
    Ibp,
    Disintegrate,
    Hausdorff,
    Selftest,
}

impl JobKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "density" => Self::Density,
            "surface" => Self::Surface,
            "ibp" => Self::Ibp,
            "disintegrate" => Self::Disintegrate,
            "hausdorff" => Self::Hausdorff,
            "selftest" => Self::Selftest,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Density => "density",
            Self::Surface => "surface",
            Self::Ibp => "ibp",
            Self::Disintegrate => "disintegrate",
            Self::Hausdorff => "hausdorff",
            Self::Selftest => "selftest",
        }
    }

    fn allowed_keys(&self) -> &'static [&'static str] {
        match self {
            Self::Density => &[
                "name",
                "kind",
                "g",
                "phi",
                "r_grid",
                "n",
                "seed",
                "epsilon",
                "estimator",
                "form",
            ],
            Self::Surface => &[
                "name",
                "kind",
                "g",
                "phis",
                "r_grid",
                "n",
                "seed",
                "epsilon",
                "estimator",
                "form",
                "k",
                "traces",
            ],
            Self::Ibp => &[
                "name",
                "kind",
                "g",
                "phis",
                "r_grid",
                "n",
                "seed",
                "epsilon",
                "estimator",
                "form",
                "k",
            ],
            Self::Disintegrate => &[
                "name",
                "kind",
                "g",
                "phis",
                "r_grid",
                "n",
                "seed",
                "epsilon",
                "estimator",
                "form",
                "bins",
                "binning",
            ],
            Self::Hausdorff => &[
                "name",
                "kind",
                "g",
                "phis",
                "r_grid",
                "n",
                "seed",
                "epsilon",
                "estimator",
                "form",
            ],
            Self::Selftest => &["name", "kind", "criteria"],
        }
    }

    fn default_estimator(&self) -> EstimatorKind {
        match self {
            Self::Density => EstimatorKind::Both,
            _ => EstimatorKind::Divergence,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RGrid {
    Points(Vec<f64>),
    Linspace { from: f64, to: f64, points: usize },
}

impl RGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::Points(v) => v.clone(),
            Self::Linspace { from, to, points } => match points {
                0 => vec![],
                1 => vec![*from],
                p => (0..*p)
                    .map(|i| from + (to - from) * i as f64 / (*p - 1) as f64)
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub name: String,
    pub kind: JobKind,
    pub g: Option<String>,
    /// Test functions; a density job has exactly one.
    pub phis: Vec<String>,
    pub r_grid: Option<RGrid>,
    pub n: usize,
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub estimator: EstimatorKind,
    pub form: DivergenceForm,
    pub k: Vec<usize>,
    pub traces: bool,
    pub bins: usize,
    pub binning: Binning,
    pub criteria: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Self {
            csv: true,
            json: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelDescriptor,
    pub functionals: BTreeMap<String, FunctionalSpec>,
    pub jobs: Vec<JobSpec>,
    pub output_dir: String,
    pub formats: Formats,
}

/// Error accumulator with a key-path prefix.
struct Errors(Vec<String>);

impl Errors {
    fn push(&mut self, path: &str, msg: impl std::fmt::Display) {
        self.0.push(format!("{path}: {msg}"));
    }
}

fn check_keys(table: &Table, allowed: &[&str], path: &str, errs: &mut Errors) {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            errs.push(&format!("{path}.{key}"), "unknown key");
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn get_f64(table: &Table, key: &str, path: &str, errs: &mut Errors) -> Option<f64> {
    let v = table.get(key)?;
    let f = as_f64(v);
    if f.is_none() {
        errs.push(&format!("{path}.{key}"), "expected a number");
    }
    f
}

fn get_uint(table: &Table, key: &str, path: &str, errs: &mut Errors) -> Option<u64> {
    match table.get(key)? {
        Value::Integer(i) if *i >= 0 => Some(*i as u64),
        _ => {
            errs.push(&format!("{path}.{key}"), "expected a nonnegative integer");
            None
        }
    }
}

fn get_str<'a>(table: &'a Table, key: &str, path: &str, errs: &mut Errors) -> Option<&'a str> {
    match table.get(key)? {
        Value::String(s) => Some(s),
        _ => {
            errs.push(&format!("{path}.{key}"), "expected a string");
            None
        }
    }
}

fn get_bool(table: &Table, key: &str, path: &str, errs: &mut Errors) -> Option<bool> {
    match table.get(key)? {
        Value::Boolean(b) => Some(*b),
        _ => {
            errs.push(&format!("{path}.{key}"), "expected true or false");
            None
        }
    }
}

fn get_f64_list(table: &Table, key: &str, path: &str, errs: &mut Errors) -> Option<Vec<f64>> {
    match table.get(key)? {
        Value::Array(a) => {
            let v: Option<Vec<f64>> = a.iter().map(as_f64).collect();
            if v.is_none() {
                errs.push(&format!("{path}.{key}"), "expected a list of numbers");
            }
            v
        }
        _ => {
            errs.push(&format!("{path}.{key}"), "expected a list of numbers");
            None
        }
    }
}

fn get_uint_list(table: &Table, key: &str, path: &str, errs: &mut Errors) -> Option<Vec<u64>> {
    match table.get(key)? {
        Value::Array(a) => {
            let v: Option<Vec<u64>> = a
                .iter()
                .map(|x| match x {
                    Value::Integer(i) if *i >= 0 => Some(*i as u64),
                    _ => None,
                })
                .collect();
            if v.is_none() {
                errs.push(
                    &format!("{path}.{key}"),
                    "expected a list of nonnegative integers",
                );
            }
            v
        }
        _ => {
            errs.push(
                &format!("{path}.{key}"),
                "expected a list of nonnegative integers",
            );
            None
        }
    }
}

fn get_str_list(table: &Table, key: &str, path: &str, errs: &mut Errors) -> Option<Vec<String>> {
    match table.get(key)? {
        Value::Array(a) => {
            let v: Option<Vec<String>> = a.iter().map(|x| x.as_str().map(str::to_string)).collect();
            if v.is_none() {
                errs.push(&format!("{path}.{key}"), "expected a list of strings");
            }
            v
        }
        _ => {
            errs.push(&format!("{path}.{key}"), "expected a list of strings");
            None
        }
    }
}

fn parse_model(v: Option<&Value>, errs: &mut Errors) -> Option<ModelDescriptor> {
    let Some(v) = v else {
        errs.push("model", "missing");
        return None;
    };
    let Some(t) = v.as_table() else {
        errs.push("model", "expected a table");
        return None;
    };
    let kind = get_str(t, "kind", "model", errs);
    let desc = match kind {
        Some("iid_gaussian") | Some("kl_brownian") => {
            check_keys(t, &["kind", "dim"], "model", errs);
            match get_uint(t, "dim", "model", errs) {
                Some(0) => {
                    errs.push("model.dim", "must be positive");
                    None
                }
                Some(d) if kind == Some("iid_gaussian") => {
                    Some(ModelDescriptor::IidGaussian { dim: d as usize })
                }
                Some(d) => Some(ModelDescriptor::KlBrownian { dim: d as usize }),
                None => {
                    if !t.contains_key("dim") {
                        errs.push("model.dim", "missing");
                    }
                    None
                }
            }
        }
        Some("spectrum") => {
            check_keys(t, &["kind", "eigenvalues"], "model", errs);
            match get_f64_list(t, "eigenvalues", "model", errs) {
                Some(e) => Some(ModelDescriptor::Spectrum { eigenvalues: e }),
                None => {
                    if !t.contains_key("eigenvalues") {
                        errs.push("model.eigenvalues", "missing");
                    }
                    None
                }
            }
        }
        Some(other) => {
            errs.push("model.kind", format!("unknown model kind `{other}`"));
            None
        }
        None => {
            if !t.contains_key("kind") {
                errs.push("model.kind", "missing");
            }
            None
        }
    };
    if let Some(d) = &desc {
        if let Err(e) = build_model(d) {
            errs.push("model", e);
            return None;
        }
    }
    desc
}

fn parse_functional(name: &str, v: &Value, errs: &mut Errors) -> Option<FunctionalSpec> {
    let path = format!("functionals.{name}");
    if let Some(s) = v.as_str() {
        return Some(FunctionalSpec::Expr(s.to_string()));
    }
    let Some(t) = v.as_table() else {
        errs.push(&path, "expected an expression string or a builtin table");
        return None;
    };
    let builtin = get_str(t, "builtin", &path, errs)?;
    let need_f = |key: &str, errs: &mut Errors| {
        let v = get_f64(t, key, &path, errs);
        if v.is_none() && !t.contains_key(key) {
            errs.push(&format!("{path}.{key}"), "missing");
        }
        v
    };
    let spec = match builtin {
        "coordinate" => {
            check_keys(t, &["builtin", "k"], &path, errs);
            match get_uint(t, "k", &path, errs) {
                Some(k) if k >= 1 => Some(FunctionalSpec::Coordinate { k: k as usize }),
                Some(_) => {
                    errs.push(&format!("{path}.k"), "coordinates are 1-based");
                    None
                }
                None => {
                    if !t.contains_key("k") {
                        errs.push(&format!("{path}.k"), "missing");
                    }
                    None
                }
            }
        }
        "linear" => {
            check_keys(t, &["builtin", "weights"], &path, errs);
            match get_f64_list(t, "weights", &path, errs) {
                Some(w) => Some(FunctionalSpec::Linear { weights: w }),
                None => {
                    if !t.contains_key("weights") {
                        errs.push(&format!("{path}.weights"), "missing");
                    }
                    None
                }
            }
        }
        "norm2" => {
            check_keys(t, &["builtin"], &path, errs);
            Some(FunctionalSpec::Norm2)
        }
        "bm_endpoint" => {
            check_keys(t, &["builtin"], &path, errs);
            Some(FunctionalSpec::BmEndpoint)
        }
        "constant" => {
            check_keys(t, &["builtin", "value"], &path, errs);
            need_f("value", errs).map(|value| FunctionalSpec::Constant { value })
        }
        "clipped" => {
            check_keys(t, &["builtin", "base", "cap"], &path, errs);
            let base = get_str(t, "base", &path, errs).map(str::to_string);
            if base.is_none() && !t.contains_key("base") {
                errs.push(&format!("{path}.base"), "missing");
            }
            let cap = need_f("cap", errs);
            Some(FunctionalSpec::Clipped {
                base: base?,
                cap: cap?,
            })
        }
        "cutoff" => {
            check_keys(t, &["builtin", "scale"], &path, errs);
            match need_f("scale", errs) {
                Some(s) if s > 0.0 => Some(FunctionalSpec::Cutoff { scale: s }),
                Some(_) => {
                    errs.push(&format!("{path}.scale"), "must be positive");
                    None
                }
                None => None,
            }
        }
        other => {
            errs.push(
                &format!("{path}.builtin"),
                format!("unknown builtin `{other}`"),
            );
            None
        }
    };
    spec
}

fn parse_rgrid(v: &Value, path: &str, errs: &mut Errors) -> Option<RGrid> {
    match v {
        Value::Array(a) => {
            let v: Option<Vec<f64>> = a.iter().map(as_f64).collect();
            if v.is_none() {
                errs.push(path, "expected a list of numbers");
            }
            v.map(RGrid::Points)
        }
        Value::Table(t) => {
            check_keys(t, &["from", "to", "points"], path, errs);
            let from = get_f64(t, "from", path, errs);
            let to = get_f64(t, "to", path, errs);
            let points = get_uint(t, "points", path, errs);
            for key in ["from", "to", "points"] {
                if !t.contains_key(key) {
                    errs.push(&format!("{path}.{key}"), "missing");
                }
            }
            Some(RGrid::Linspace {
                from: from?,
                to: to?,
                points: points? as usize,
            })
        }
        _ => {
            errs.push(path, "expected a list of numbers or {from, to, points}");
            None
        }
    }
}

fn parse_job(index: usize, v: &Value, dim: Option<usize>, errs: &mut Errors) -> Option<JobSpec> {
    let path = format!("jobs[{index}]");
    let Some(t) = v.as_table() else {
        errs.push(&path, "expected a table");
        return None;
    };
    let kind_name = get_str(t, "kind", &path, errs);
    let kind = match kind_name {
        Some(k) => match JobKind::parse(k) {
            Some(k) => k,
            None => {
                errs.push(&format!("{path}.kind"), format!("unknown job kind `{k}`"));
                return None;
            }
        },
        None => {
            if !t.contains_key("kind") {
                errs.push(&format!("{path}.kind"), "missing");
            }
            return None;
        }
    };
    check_keys(t, kind.allowed_keys(), &path, errs);
    let name = get_str(t, "name", &path, errs)
        .map(str::to_string)
        .unwrap_or_else(|| format!("{}_{index}", kind.as_str()));
    let mut job = JobSpec {
        name,
        kind,
        g: None,
        phis: vec!["1".into()],
        r_grid: None,
        n: DEFAULT_N,
        seed: 0,
        epsilon: None,
        estimator: kind.default_estimator(),
        form: DivergenceForm::Balanced,
        k: vec![1],
        traces: false,
        bins: DEFAULT_BINS,
        binning: Binning::Quantile,
        criteria: (1..=SELFTEST_CRITERIA).collect(),
    };
    if kind == JobKind::Selftest {
        if let Some(c) = get_uint_list(t, "criteria", &path, errs) {
            for &id in &c {
                if !(1..=SELFTEST_CRITERIA as u64).contains(&id) {
                    errs.push(&format!("{path}.criteria"), format!("no criterion {id}"));
                }
            }
            job.criteria = c.into_iter().map(|c| c as u32).collect();
        }
        return Some(job);
    }

    job.g = get_str(t, "g", &path, errs).map(str::to_string);
    if !t.contains_key("g") {
        errs.push(&format!("{path}.g"), "missing");
    }
    if kind == JobKind::Density {
        if let Some(p) = get_str(t, "phi", &path, errs) {
            job.phis = vec![p.to_string()];
        }
    } else if let Some(p) = get_str_list(t, "phis", &path, errs) {
        if p.is_empty() {
            errs.push(&format!("{path}.phis"), "must not be empty");
        }
        job.phis = p;
    }
    if let Some(v) = t.get("r_grid") {
        job.r_grid = parse_rgrid(v, &format!("{path}.r_grid"), errs);
    } else if kind != JobKind::Disintegrate {
        errs.push(&format!("{path}.r_grid"), "missing");
    }
    if let Some(grid) = &job.r_grid {
        let values = grid.values();
        if values.is_empty() {
            errs.push(&format!("{path}.r_grid"), "must not be empty");
        } else if values.iter().any(|r| !r.is_finite()) {
            errs.push(&format!("{path}.r_grid"), "values must be finite");
        } else if values.windows(2).any(|w| !(w[0] < w[1])) {
            errs.push(&format!("{path}.r_grid"), "must be strictly increasing");
        }
    }
    if let Some(n) = get_uint(t, "n", &path, errs) {
        if n == 0 {
            errs.push(&format!("{path}.n"), "must be at least 1");
        }
        job.n = n as usize;
    }
    if let Some(s) = get_uint(t, "seed", &path, errs) {
        job.seed = s;
    }
    if let Some(e) = get_f64(t, "epsilon", &path, errs) {
        if !(e > 0.0 && e.is_finite()) {
            errs.push(&format!("{path}.epsilon"), "must be positive");
        }
        job.epsilon = Some(e);
    }
    if let Some(e) = get_str(t, "estimator", &path, errs) {
        match EstimatorKind::parse(e) {
            Some(EstimatorKind::Both) if kind != JobKind::Density => errs.push(
                &format!("{path}.estimator"),
                "`both` is only available for density jobs",
            ),
            Some(k) => job.estimator = k,
            None => errs.push(
                &format!("{path}.estimator"),
                format!("unknown estimator `{e}`"),
            ),
        }
    }
    if let Some(f) = get_str(t, "form", &path, errs) {
        match f {
            "balanced" => job.form = DivergenceForm::Balanced,
            "lower" => job.form = DivergenceForm::Lower,
            other => errs.push(&format!("{path}.form"), format!("unknown form `{other}`")),
        }
    }
    if let Some(k) = get_uint_list(t, "k", &path, errs) {
        if k.is_empty() {
            errs.push(&format!("{path}.k"), "must not be empty");
        }
        for &i in &k {
            let bad = i == 0 || dim.is_some_and(|d| i as usize > d);
            if bad {
                errs.push(
                    &format!("{path}.k"),
                    format!("index {i} out of range 1..={}", dim.unwrap_or(0)),
                );
            }
        }
        job.k = k.into_iter().map(|k| k as usize).collect();
    }
    if let Some(b) = get_bool(t, "traces", &path, errs) {
        job.traces = b;
    }
    if let Some(b) = get_uint(t, "bins", &path, errs) {
        job.bins = b as usize;
    }
    if let Some(b) = get_str(t, "binning", &path, errs) {
        match Binning::parse(b) {
            Some(b) => job.binning = b,
            None => errs.push(&format!("{path}.binning"), format!("unknown binning `{b}`")),
        }
    }
    if kind == JobKind::Disintegrate {
        if job.bins < 2 {
            errs.push(&format!("{path}.bins"), "must be at least 2");
        }
        if job.n < job.bins {
            errs.push(&format!("{path}.n"), "must be at least bins");
        }
    }
    Some(job)
}

/// Parse and validate a configuration, reporting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let root: Table = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
    let mut errs = Errors(Vec::new());
    check_keys(
        &root,
        &["model", "functionals", "jobs", "output_dir", "formats"],
        "config",
        &mut errs,
    );

    let model = parse_model(root.get("model"), &mut errs);
    let built = model.as_ref().and_then(|m| build_model(m).ok());
    let dim = built.as_ref().map(|m| m.dim());

    let mut functionals = BTreeMap::new();
    match root.get("functionals") {
        Some(Value::Table(t)) => {
            for (name, v) in t {
                if !is_identifier(name) {
                    errs.push(&format!("functionals.{name}"), "names must be identifiers");
                }
                if let Some(spec) = parse_functional(name, v, &mut errs) {
                    functionals.insert(name.clone(), spec);
                }
            }
        }
        Some(_) => errs.push("functionals", "expected a table"),
        None => {}
    }

    let mut jobs = Vec::new();
    match root.get("jobs") {
        Some(Value::Array(a)) => {
            for (i, v) in a.iter().enumerate() {
                if let Some(j) = parse_job(i, v, dim, &mut errs) {
                    jobs.push(j);
                }
            }
        }
        Some(_) => errs.push("jobs", "expected an array of tables"),
        None => errs.push("jobs", "missing"),
    }
    let mut seen = HashMap::new();
    for (i, j) in jobs.iter().enumerate() {
        if let Some(prev) = seen.insert(j.name.clone(), i) {
            errs.push(
                &format!("jobs[{i}].name"),
                format!("duplicates jobs[{prev}]"),
            );
        }
    }

    let output_dir = match root.get("output_dir") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            errs.push("output_dir", "expected a string");
            String::new()
        }
        None => "glset-out".to_string(),
    };
    let mut formats = Formats::default();
    if let Some(list) = get_str_list(&root, "formats", "config", &mut errs) {
        formats = Formats {
            csv: false,
            json: false,
        };
        for f in list {
            match f.as_str() {
                "csv" => formats.csv = true,
                "json" => formats.json = true,
                other => errs.push("formats", format!("unknown format `{other}`")),
            }
        }
    }

    let config = RunConfig {
        model: model
            .clone()
            .unwrap_or(ModelDescriptor::IidGaussian { dim: 1 }),
        functionals,
        jobs,
        output_dir,
        formats,
    };
    if let Some(m) = &built {
        let resolver = Resolver::new(m, &config.functionals);
        for name in config.functionals.keys() {
            if let Err(e) = resolver.resolve(name) {
                errs.push(&format!("functionals.{name}"), e);
            }
        }
        for (i, j) in config.jobs.iter().enumerate() {
            check_job_functionals(i, j, m, &resolver, &mut errs);
        }
    }
    if errs.0.is_empty() && model.is_some() {
        Ok(config)
    } else {
        Err(Error::Config(errs.0))
    }
}

fn check_job_functionals(
    i: usize,
    job: &JobSpec,
    model: &GaussianModel,
    resolver: &Resolver,
    errs: &mut Errors,
) {
    let path = format!("jobs[{i}]");
    if let Some(g) = &job.g {
        match resolver.resolve(g) {
            Ok(oracle) => {
                if job.kind == JobKind::Hausdorff {
                    if oracle.level_geometry().is_none() {
                        errs.push(
                            &format!("{path}.g"),
                            "hausdorff jobs need a coordinate, linear or norm2 functional",
                        );
                    }
                    if model.dim() > HAUSDORFF_MAX_DIM {
                        errs.push(
                            &format!("{path}.g"),
                            format!("hausdorff jobs need d ≤ {HAUSDORFF_MAX_DIM}"),
                        );
                    }
                }
            }
            Err(e) => errs.push(&format!("{path}.g"), e),
        }
    }
    if job.kind == JobKind::Selftest {
        return;
    }
    let key = if job.kind == JobKind::Density {
        "phi"
    } else {
        "phis"
    };
    for p in &job.phis {
        if let Err(e) = resolver.resolve(p) {
            errs.push(&format!("{path}.{key}"), e);
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Turns functional references into oracles for one model.
pub struct Resolver<'a> {
    model: &'a GaussianModel,
    specs: &'a BTreeMap<String, FunctionalSpec>,
}

const MAX_DEPTH: usize = 32;

impl<'a> Resolver<'a> {
    pub fn new(model: &'a GaussianModel, specs: &'a BTreeMap<String, FunctionalSpec>) -> Self {
        Self { model, specs }
    }

    /// Resolve a name from the table or an inline expression.
    pub fn resolve(&self, reference: &str) -> std::result::Result<FunctionalOracle, String> {
        self.resolve_depth(reference, 0)
    }

    fn resolve_depth(
        &self,
        reference: &str,
        depth: usize,
    ) -> std::result::Result<FunctionalOracle, String> {
        if depth > MAX_DEPTH {
            return Err(format!(
                "functional `{reference}` is defined in terms of itself"
            ));
        }
        let reference = reference.trim();
        if is_identifier(reference) {
            return match self.specs.get(reference) {
                Some(spec) => self.build(spec, depth),
                None => Err(format!("unresolved functional name `{reference}`")),
            };
        }
        self.expression(reference)
    }

    fn expression(&self, src: &str) -> std::result::Result<FunctionalOracle, String> {
        ExprFunctional::parse(src, self.model.dim())
            .map(FunctionalOracle::new)
            .map_err(|e| format!("in `{src}`: {e}"))
    }

    fn build(
        &self,
        spec: &FunctionalSpec,
        depth: usize,
    ) -> std::result::Result<FunctionalOracle, String> {
        let d = self.model.dim();
        let oracle = match spec {
            FunctionalSpec::Expr(src) => return self.expression(src),
            FunctionalSpec::Coordinate { k } => {
                if *k == 0 || *k > d {
                    return Err(format!("coordinate index {k} out of range 1..={d}"));
                }
                FunctionalOracle::new(Coordinate::new(*k))
            }
            FunctionalSpec::Linear { weights } => {
                if weights.len() > d {
                    return Err(format!("{} weights for dimension {d}", weights.len()));
                }
                FunctionalOracle::new(Linear::new(weights.clone()))
            }
            FunctionalSpec::Norm2 => FunctionalOracle::new(Norm2),
            FunctionalSpec::BmEndpoint => {
                FunctionalOracle::new(bm_endpoint(self.model).map_err(|e| e.to_string())?)
            }
            FunctionalSpec::Constant { value } => FunctionalOracle::new(Constant(*value)),
            FunctionalSpec::Clipped { base, cap } => {
                let base = self.resolve_depth(base, depth + 1)?;
                FunctionalOracle::new(Clipped::new(base, *cap))
            }
            FunctionalSpec::Cutoff { scale } => {
                FunctionalOracle::new(GaussianCutoff { scale: *scale })
            }
        };
        Ok(oracle)
    }
}

fn float(v: f64) -> Value {
    Value::Float(v)
}

fn rgrid_value(g: &RGrid) -> Value {
    match g {
        RGrid::Points(v) => Value::Array(v.iter().copied().map(float).collect()),
        RGrid::Linspace { from, to, points } => {
            let mut t = Table::new();
            t.insert("from".into(), float(*from));
            t.insert("to".into(), float(*to));
            t.insert("points".into(), Value::Integer(*points as i64));
            Value::Table(t)
        }
    }
}

fn functional_value(spec: &FunctionalSpec) -> Value {
    let mut t = Table::new();
    let mut builtin = |name: &str| {
        t.insert("builtin".into(), Value::String(name.into()));
    };
    match spec {
        FunctionalSpec::Expr(s) => return Value::String(s.clone()),
        FunctionalSpec::Coordinate { k } => {
            builtin("coordinate");
            t.insert("k".into(), Value::Integer(*k as i64));
        }
        FunctionalSpec::Linear { weights } => {
            builtin("linear");
            t.insert(
                "weights".into(),
                Value::Array(weights.iter().copied().map(float).collect()),
            );
        }
        FunctionalSpec::Norm2 => builtin("norm2"),
        FunctionalSpec::BmEndpoint => builtin("bm_endpoint"),
        FunctionalSpec::Constant { value } => {
            builtin("constant");
            t.insert("value".into(), float(*value));
        }
        FunctionalSpec::Clipped { base, cap } => {
            builtin("clipped");
            t.insert("base".into(), Value::String(base.clone()));
            t.insert("cap".into(), float(*cap));
        }
        FunctionalSpec::Cutoff { scale } => {
            builtin("cutoff");
            t.insert("scale".into(), float(*scale));
        }
    }
    Value::Table(t)
}

fn job_value(job: &JobSpec) -> Value {
    let mut t = Table::new();
    t.insert("name".into(), Value::String(job.name.clone()));
    t.insert("kind".into(), Value::String(job.kind.as_str().into()));
    if job.kind == JobKind::Selftest {
        t.insert(
            "criteria".into(),
            Value::Array(
                job.criteria
                    .iter()
                    .map(|&c| Value::Integer(c as i64))
                    .collect(),
            ),
        );
        return Value::Table(t);
    }
    if let Some(g) = &job.g {
        t.insert("g".into(), Value::String(g.clone()));
    }
    if job.kind == JobKind::Density {
        t.insert("phi".into(), Value::String(job.phis[0].clone()));
    } else {
        t.insert(
            "phis".into(),
            Value::Array(job.phis.iter().map(|p| Value::String(p.clone())).collect()),
        );
    }
    if let Some(g) = &job.r_grid {
        t.insert("r_grid".into(), rgrid_value(g));
    }
    t.insert("n".into(), Value::Integer(job.n as i64));
    t.insert("seed".into(), Value::Integer(job.seed as i64));
    if let Some(e) = job.epsilon {
        t.insert("epsilon".into(), float(e));
    }
    t.insert(
        "estimator".into(),
        Value::String(job.estimator.as_str().into()),
    );
    let form = match job.form {
        DivergenceForm::Balanced => "balanced",
        DivergenceForm::Lower => "lower",
    };
    t.insert("form".into(), Value::String(form.into()));
    if matches!(job.kind, JobKind::Surface | JobKind::Ibp) {
        t.insert(
            "k".into(),
            Value::Array(job.k.iter().map(|&k| Value::Integer(k as i64)).collect()),
        );
    }
    if job.kind == JobKind::Surface {
        t.insert("traces".into(), Value::Boolean(job.traces));
    }
    if job.kind == JobKind::Disintegrate {
        t.insert("bins".into(), Value::Integer(job.bins as i64));
        t.insert("binning".into(), Value::String(job.binning.as_str().into()));
    }
    Value::Table(t)
}

/// Render a configuration back to TOML; [`parse_config`] inverts it.
pub fn serialize_config(config: &RunConfig) -> Result<String> {
    let mut root = Table::new();
    root.insert(
        "output_dir".into(),
        Value::String(config.output_dir.clone()),
    );
    let mut formats = Vec::new();
    if config.formats.csv {
        formats.push(Value::String("csv".into()));
    }
    if config.formats.json {
        formats.push(Value::String("json".into()));
    }
    root.insert("formats".into(), Value::Array(formats));
    let mut model = Table::new();
    match &config.model {
        ModelDescriptor::IidGaussian { dim } => {
            model.insert("kind".into(), Value::String("iid_gaussian".into()));
            model.insert("dim".into(), Value::Integer(*dim as i64));
        }
        ModelDescriptor::KlBrownian { dim } => {
            model.insert("kind".into(), Value::String("kl_brownian".into()));
            model.insert("dim".into(), Value::Integer(*dim as i64));
        }
        ModelDescriptor::Spectrum { eigenvalues } => {
            model.insert("kind".into(), Value::String("spectrum".into()));
            model.insert(
                "eigenvalues".into(),
                Value::Array(eigenvalues.iter().copied().map(float).collect()),
            );
        }
    }
    root.insert("model".into(), Value::Table(model));
    let functionals: Table = config
        .functionals
        .iter()
        .map(|(k, v)| (k.clone(), functional_value(v)))
        .collect();
    root.insert("functionals".into(), Value::Table(functionals));
    root.insert(
        "jobs".into(),
        Value::Array(config.jobs.iter().map(job_value).collect()),
    );
    toml::to_string(&root).map_err(|e| Error::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
kind = "iid_gaussian"
dim = 3

[[jobs]]
kind = "density"
g = "xi(1)"
r_grid = [-1.0, 0.0, 1.0]
"#;

    fn errors(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.model, ModelDescriptor::IidGaussian { dim: 3 });
        assert_eq!(c.jobs.len(), 1);
        let j = &c.jobs[0];
        assert_eq!(j.name, "density_0");
        assert_eq!(j.phis, vec!["1".to_string()]);
        assert_eq!(j.estimator, EstimatorKind::Both);
        assert_eq!(j.n, DEFAULT_N);
    }

    #[test]
    fn index_error_has_position() {
        let text = MINIMAL.replace("xi(1)", "xi(5)");
        let e = errors(&text);
        assert_eq!(e.len(), 1);
        assert!(
            e[0].contains("jobs[0].g") && e[0].contains("position 3"),
            "{e:?}"
        );
    }

    #[test]
    fn all_errors_are_collected() {
        let text = r#"
colour = "blue"
[model]
kind = "iid_gaussian"
dim = 2
[functionals]
A = { builtin = "coordinate", k = 4 }
[[jobs]]
kind = "density"
g = "B"
r_grid = []
epsilon = -1.0
[[jobs]]
kind = "ibp"
g = "A"
k = [3]
r_grid = [1.0, 0.5]
"#;
        let e = errors(text);
        let joined = e.join("\n");
        for needle in [
            "config.colour: unknown key",
            "functionals.A: coordinate index 4",
            "jobs[0].g: unresolved functional name `B`",
            "jobs[0].r_grid: must not be empty",
            "jobs[0].epsilon",
            "jobs[1].k",
            "jobs[1].r_grid: must be strictly increasing",
            "jobs[1].g: coordinate index 4",
        ] {
            assert!(joined.contains(needle), "missing `{needle}` in\n{joined}");
        }
    }

    #[test]
    fn round_trip() {
        let text = r#"
output_dir = "results"
formats = ["json"]
[model]
kind = "kl_brownian"
dim = 8
[functionals]
E = { builtin = "bm_endpoint" }
C = { builtin = "clipped", base = "norm2()", cap = 6 }
W = { builtin = "linear", weights = [0.5, 0.25] }
f = "exp(-norm2())"
[[jobs]]
kind = "density"
g = "E"
phi = "f"
r_grid = { from = -1, to = 1, points = 5 }
epsilon = 0.02
seed = 3
[[jobs]]
kind = "surface"
g = "C"
phis = ["1", "xi(2)"]
r_grid = [1.0]
k = [1, 2]
traces = true
[[jobs]]
kind = "disintegrate"
g = "W"
bins = 20
binning = "fixed_width"
[[jobs]]
kind = "selftest"
criteria = [1, 10]
"#;
        let c = parse_config(text).unwrap();
        let s = serialize_config(&c).unwrap();
        let back = parse_config(&s).unwrap();
        assert_eq!(c, back);
        assert_eq!(s, serialize_config(&back).unwrap());
    }

    #[test]
    fn hausdorff_needs_geometry() {
        let text = MINIMAL
            .replace("\"density\"", "\"hausdorff\"")
            .replace("g = \"xi(1)\"", "g = \"xi(1)*xi(2)\"");
        let e = errors(&text);
        assert!(e[0].contains("hausdorff"), "{e:?}");
    }

    #[test]
    fn self_reference_is_rejected() {
        let text = format!(
            "{MINIMAL}\n[functionals]\nA = {{ builtin = \"clipped\", base = \"A\", cap = 1 }}\n"
        );
        let e = errors(&text);
        assert!(e.iter().any(|m| m.contains("in terms of itself")), "{e:?}");
    }

    #[test]
    fn bad_toml_is_a_config_error() {
        assert!(matches!(parse_config("[model"), Err(Error::Config(_))));
    }
}
