use std::collections::BTreeMap;
use std::fmt::Debug;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{AblationTable, PipelineError};
use crate::evalkit::{BenchOptions, Precision, DEFAULT_RESOLUTION};
use crate::hash::derive_seed;
use crate::hyperfem::{Materials, SolveOptions};
use crate::loadcase::LoadSpec;
use crate::meshgen::PhantomSpec;
use crate::meshgraph::GraphConfig;
use crate::sagenet::{LayerKind, ModelConfig, TrainConfig};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n_cases: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub precision: Precision,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n_cases: 20, repeats: 5, warmup: 1, precision: Precision::Single }
    }
}

/// Everything one pipeline run depends on.
///
/// Text form: one `section.key = value` per line, `#` comments, vectors as comma-separated triples.
/// Per-stage random seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub materials: Materials,
    pub loads: LoadSpec,
    pub solver: SolveOptions,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval_resolution: f64,
    pub bench: BenchConfig,
    pub ablate_tables: Vec<AblationTable>,
    pub workdir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            phantom: PhantomSpec::default(),
            materials: Materials::default(),
            loads: LoadSpec::default(),
            solver: SolveOptions::default(),
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval_resolution: DEFAULT_RESOLUTION,
            bench: BenchConfig::default(),
            ablate_tables: AblationTable::ALL.to_vec(),
            workdir: PathBuf::from("work"),
        };
        c.set_seed(0);
        c
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: Debug,
{
    value.parse().map_err(|e| PipelineError::Config(format!("{key}: cannot parse `{value}`: {e:?}")))
}

fn parse_flag(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(PipelineError::Config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

fn parse_vec3(key: &str, value: &str) -> Result<Vec3, PipelineError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(PipelineError::Config(format!("{key}: expected three comma-separated numbers, got `{value}`")));
    }
    Ok(Vec3::new(parse(key, parts[0])?, parse(key, parts[1])?, parse(key, parts[2])?))
}

impl RunConfig {
    /// Sets the master seed and every seed derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.phantom.rng_seed = derive_seed(seed, "phantom");
        self.loads.rng_seed = derive_seed(seed, "loads");
        self.model.rng_seed = derive_seed(seed, "model");
        self.train.rng_seed = derive_seed(seed, "train");
    }

    pub fn bench_seed(&self) -> u64 {
        derive_seed(self.seed, "bench")
    }

    pub fn bench_options(&self) -> BenchOptions {
        BenchOptions {
            n_cases: self.bench.n_cases,
            repeats: self.bench.repeats,
            warmup: self.bench.warmup,
            precision: self.bench.precision,
            loads: self.loads.clone(),
            solver: self.solver.clone(),
            rng_seed: self.bench_seed(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::parse(&text)?;
        if c.workdir.is_relative() {
            if let Some(dir) = path.parent() {
                c.workdir = dir.join(&c.workdir);
            }
        }
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut c = Self::default();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), n + 1).is_some() {
                return Err(PipelineError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), PipelineError> {
        match key {
            "seed" => self.set_seed(parse(key, v)?),
            "workdir" => self.workdir = PathBuf::from(v),
            "phantom.breast_radius" => self.phantom.breast_radius = parse(key, v)?,
            "phantom.tumor_center" => self.phantom.tumor_center = parse_vec3(key, v)?,
            "phantom.tumor_radius" => self.phantom.tumor_radius = parse(key, v)?,
            "phantom.edge_length" => self.phantom.target_edge_length = parse(key, v)?,
            "material.normal.c10" => self.materials.normal.c10 = parse(key, v)?,
            "material.normal.c01" => self.materials.normal.c01 = parse(key, v)?,
            "material.normal.kappa" => self.materials.normal.bulk_kappa = parse(key, v)?,
            "material.cancer.c10" => self.materials.cancer.c10 = parse(key, v)?,
            "material.cancer.c01" => self.materials.cancer.c01 = parse(key, v)?,
            "material.cancer.kappa" => self.materials.cancer.bulk_kappa = parse(key, v)?,
            "loads.n_locations" => self.loads.n_locations = parse(key, v)?,
            "loads.n_cases" => self.loads.n_cases = parse(key, v)?,
            "loads.radius_min" => self.loads.radius_range[0] = parse(key, v)?,
            "loads.radius_max" => self.loads.radius_range[1] = parse(key, v)?,
            "loads.magnitude_min" => self.loads.magnitude_range[0] = parse(key, v)?,
            "loads.magnitude_max" => self.loads.magnitude_range[1] = parse(key, v)?,
            "loads.max_attempts" => self.loads.max_attempts = parse(key, v)?,
            "solver.increments" => self.solver.n_load_increments = parse(key, v)?,
            "solver.max_iterations" => self.solver.max_iterations = parse(key, v)?,
            "solver.tol_abs" => self.solver.residual_tol_abs = parse(key, v)?,
            "solver.tol_rel" => self.solver.residual_tol_rel = parse(key, v)?,
            "solver.max_backtracks" => self.solver.max_backtracks = parse(key, v)?,
            "solver.max_cutbacks" => self.solver.max_cutbacks = parse(key, v)?,
            "graph.threshold" => self.graph.threshold = parse(key, v)?,
            "graph.n_structured" => self.graph.n_structured = parse(key, v)?,
            "graph.max_edges" => self.graph.max_edges = parse(key, v)?,
            "model.hidden_dim" => self.model.hidden_dim = parse(key, v)?,
            "model.n_layers" => self.model.n_layers = parse(key, v)?,
            "model.jumping_knowledge" => self.model.use_jumping_knowledge = parse_flag(key, v)?,
            "model.layer_kind" => self.model.layer_kind = v.parse::<LayerKind>().map_err(|e| PipelineError::Config(e.to_string()))?,
            "model.standardize" => self.model.standardize = parse_flag(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.eps" => self.train.eps = parse(key, v)?,
            "eval.resolution" => self.eval_resolution = parse(key, v)?,
            "bench.n_cases" => self.bench.n_cases = parse(key, v)?,
            "bench.repeats" => self.bench.repeats = parse(key, v)?,
            "bench.warmup" => self.bench.warmup = parse(key, v)?,
            "bench.precision" => self.bench.precision = v.parse().map_err(PipelineError::Config)?,
            "ablate.tables" => {
                self.ablate_tables = v
                    .split(',')
                    .map(|t| t.trim().parse::<AblationTable>())
                    .collect::<Result<_, _>>()
                    .map_err(PipelineError::Config)?
            }
            other => return Err(PipelineError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.phantom.validate().map_err(|e| cfg(&e))?;
        self.materials.normal.validate().map_err(|e| cfg(&e))?;
        self.materials.cancer.validate().map_err(|e| cfg(&e))?;
        self.loads.validate().map_err(|e| cfg(&e))?;
        self.solver.validate().map_err(|e| cfg(&e))?;
        self.model.validate().map_err(|e| cfg(&e))?;
        self.train.validate().map_err(|e| cfg(&e))?;
        if !(self.graph.threshold > 0.0) {
            return Err(PipelineError::Config("graph.threshold must be positive".into()));
        }
        if !(self.eval_resolution > 0.0) {
            return Err(PipelineError::Config("eval.resolution must be positive".into()));
        }
        if self.bench.n_cases == 0 || self.bench.repeats == 0 {
            return Err(PipelineError::Config("bench.n_cases and bench.repeats must be positive".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` lines, sorted by key; `parse` of the joined lines reproduces `self`.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = |x: f64| format!("{x:?}");
        let c = &self.phantom.tumor_center;
        let mut e = vec![
            ("seed", self.seed.to_string()),
            ("workdir", self.workdir.display().to_string()),
            ("phantom.breast_radius", f(self.phantom.breast_radius)),
            ("phantom.tumor_center", format!("{}, {}, {}", f(c.x), f(c.y), f(c.z))),
            ("phantom.tumor_radius", f(self.phantom.tumor_radius)),
            ("phantom.edge_length", f(self.phantom.target_edge_length)),
            ("material.normal.c10", f(self.materials.normal.c10)),
            ("material.normal.c01", f(self.materials.normal.c01)),
            ("material.normal.kappa", f(self.materials.normal.bulk_kappa)),
            ("material.cancer.c10", f(self.materials.cancer.c10)),
            ("material.cancer.c01", f(self.materials.cancer.c01)),
            ("material.cancer.kappa", f(self.materials.cancer.bulk_kappa)),
            ("loads.n_locations", self.loads.n_locations.to_string()),
            ("loads.n_cases", self.loads.n_cases.to_string()),
            ("loads.radius_min", f(self.loads.radius_range[0])),
            ("loads.radius_max", f(self.loads.radius_range[1])),
            ("loads.magnitude_min", f(self.loads.magnitude_range[0])),
            ("loads.magnitude_max", f(self.loads.magnitude_range[1])),
            ("loads.max_attempts", self.loads.max_attempts.to_string()),
            ("solver.increments", self.solver.n_load_increments.to_string()),
            ("solver.max_iterations", self.solver.max_iterations.to_string()),
            ("solver.tol_abs", f(self.solver.residual_tol_abs)),
            ("solver.tol_rel", f(self.solver.residual_tol_rel)),
            ("solver.max_backtracks", self.solver.max_backtracks.to_string()),
            ("solver.max_cutbacks", self.solver.max_cutbacks.to_string()),
            ("graph.threshold", f(self.graph.threshold)),
            ("graph.n_structured", self.graph.n_structured.to_string()),
            ("graph.max_edges", self.graph.max_edges.to_string()),
            ("model.hidden_dim", self.model.hidden_dim.to_string()),
            ("model.n_layers", self.model.n_layers.to_string()),
            ("model.jumping_knowledge", self.model.use_jumping_knowledge.to_string()),
            ("model.layer_kind", self.model.layer_kind.to_string()),
            ("model.standardize", self.model.standardize.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.learning_rate", f(self.train.learning_rate)),
            ("train.weight_decay", f(self.train.weight_decay)),
            ("train.beta1", f(self.train.beta1)),
            ("train.beta2", f(self.train.beta2)),
            ("train.eps", f(self.train.eps)),
            ("eval.resolution", f(self.eval_resolution)),
            ("bench.n_cases", self.bench.n_cases.to_string()),
            ("bench.repeats", self.bench.repeats.to_string()),
            ("bench.warmup", self.bench.warmup.to_string()),
            ("bench.precision", self.bench.precision.to_string()),
            ("ablate.tables", self.ablate_tables.iter().map(|t| t.name()).collect::<Vec<_>>().join(",")),
        ];
        e.sort();
        e
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Canonical lines whose key starts with one of `prefixes`; the input to stage hashes.
    pub fn section_text(&self, prefixes: &[&str]) -> String {
        self.entries()
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
