use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::hash::derive_seed;
use crate::hyperfem::{Constraints, FemProblem, Materials, SolveOptions};
use crate::loadcase::{mask_surface, LoadCase, LoadError, LoadSampler, LoadSpec};
use crate::meshgen::Mesh;
use crate::meshgraph::DeformationGraph;
use crate::sagenet::{tensor::Float, Checkpoint, InferenceModel, ModelError};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::Single),
            "f64" => Ok(Precision::Double),
            other => Err(format!("unknown precision `{other}` (f32, f64)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub n_cases: usize,
    pub repeats: usize,
    /// Untimed FE solves and forward passes run before measuring.
    pub warmup: usize,
    pub precision: Precision,
    pub loads: LoadSpec,
    pub solver: SolveOptions,
    pub rng_seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            n_cases: 20,
            repeats: 5,
            warmup: 1,
            precision: Precision::Single,
            loads: LoadSpec::default(),
            solver: SolveOptions::default(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseTiming {
    pub case: usize,
    pub magnitude: f64,
    pub newton_iterations: usize,
    /// Averaged over repeats.
    pub fe_seconds: f64,
    pub gnn_seconds: f64,
}

impl CaseTiming {
    pub fn speedup(&self) -> f64 {
        self.fe_seconds / self.gnn_seconds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub precision: Precision,
    pub fe_threads: usize,
    pub repeats: usize,
    /// Load draws rejected because the FE solve failed.
    pub redrawn: usize,
    pub cases: Vec<CaseTiming>,
    /// Mean seconds per sample in each repeat.
    pub repeat_fe_seconds: Vec<f64>,
    pub repeat_gnn_seconds: Vec<f64>,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

fn relative_spread(xs: &[f64]) -> f64 {
    let m = mean(xs.iter().copied());
    let var = mean(xs.iter().map(|x| (x - m) * (x - m)));
    var.sqrt() / m
}

impl TimingReport {
    pub fn fe_seconds_per_sample(&self) -> f64 {
        mean(self.repeat_fe_seconds.iter().copied())
    }

    pub fn gnn_seconds_per_sample(&self) -> f64 {
        mean(self.repeat_gnn_seconds.iter().copied())
    }

    pub fn speedup(&self) -> f64 {
        self.fe_seconds_per_sample() / self.gnn_seconds_per_sample()
    }

    pub fn repeat_speedups(&self) -> Vec<f64> {
        self.repeat_fe_seconds.iter().zip(&self.repeat_gnn_seconds).map(|(f, g)| f / g).collect()
    }

    /// Coefficient of variation of the per-repeat speedups.
    pub fn speedup_variation(&self) -> f64 {
        relative_spread(&self.repeat_speedups())
    }

    pub fn fe_variation(&self) -> f64 {
        relative_spread(&self.repeat_fe_seconds)
    }

    pub fn gnn_variation(&self) -> f64 {
        relative_spread(&self.repeat_gnn_seconds)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| Case | FE simulation time (s) | GNN inference time (s) | Speed-up |");
        let _ = writeln!(out, "|---|---|---|---|");
        for c in &self.cases {
            let _ = writeln!(out, "| {} | {:.4} | {:.6} | {:.0}x |", c.case, c.fe_seconds, c.gnn_seconds, c.speedup());
        }
        let _ = writeln!(
            out,
            "| Mean | {:.4} | {:.6} | {:.0}x |",
            self.fe_seconds_per_sample(),
            self.gnn_seconds_per_sample(),
            self.speedup()
        );
        out
    }

    pub fn records(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let _ = writeln!(
                out,
                "case={} magnitude_n={:.6} newton_iterations={} fe_seconds={:.6} gnn_seconds={:.8} speedup={:.2}",
                c.case,
                c.magnitude,
                c.newton_iterations,
                c.fe_seconds,
                c.gnn_seconds,
                c.speedup()
            );
        }
        for (r, (f, g)) in self.repeat_fe_seconds.iter().zip(&self.repeat_gnn_seconds).enumerate() {
            let _ = writeln!(out, "repeat={r} fe_seconds={f:.6} gnn_seconds={g:.8} speedup={:.2}", f / g);
        }
        let _ = writeln!(
            out,
            "summary cases={} repeats={} precision={} fe_threads={} redrawn={} fe_seconds={:.6} gnn_seconds={:.8} speedup={:.2} speedup_cv={:.4}",
            self.cases.len(),
            self.repeats,
            self.precision,
            self.fe_threads,
            self.redrawn,
            self.fe_seconds_per_sample(),
            self.gnn_seconds_per_sample(),
            self.speedup(),
            self.speedup_variation()
        );
        out
    }
}

enum Surrogate {
    Single(InferenceModel<f32>),
    Double(InferenceModel<f64>),
}

impl Surrogate {
    fn predict(&mut self, graph: &DeformationGraph) -> Result<Vec<Vec3>, ModelError> {
        match self {
            Surrogate::Single(m) => m.predict(graph),
            Surrogate::Double(m) => m.predict(graph),
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn warm<T: Float>(model: &mut InferenceModel<T>, graph: &DeformationGraph, n: usize) -> Result<(), ModelError> {
    for _ in 0..n {
        model.predict(graph)?;
    }
    Ok(())
}

/// Wall-clock FE solve versus surrogate forward pass on freshly drawn load cases.
///
/// The surrogate sees the masked surface of each FE solution; only its forward pass is timed.
pub fn benchmark(
    mesh: &Mesh,
    materials: &Materials,
    checkpoint: &Checkpoint,
    graph: &DeformationGraph,
    opts: &BenchOptions,
) -> Result<TimingReport, EvalError> {
    if opts.n_cases == 0 || opts.repeats == 0 {
        return Err(EvalError::InvalidBenchmark);
    }
    if graph.n_nodes != mesh.n_nodes() {
        return Err(EvalError::Shape(format!("graph has {} nodes, mesh {}", graph.n_nodes, mesh.n_nodes())));
    }
    let sampler = LoadSampler::new(mesh, &opts.loads)?;
    let problem = FemProblem::new(mesh, materials, Constraints::bottom_fixed(mesh))?;
    let mut surrogate = match opts.precision {
        Precision::Single => Surrogate::Single(InferenceModel::new(checkpoint)),
        Precision::Double => Surrogate::Double(InferenceModel::new(checkpoint)),
    };

    let mut cases: Vec<(LoadCase, Vec<Vec3>, usize)> = Vec::with_capacity(opts.n_cases);
    let mut redrawn = 0;
    for i in 0..opts.n_cases {
        let mut attempt = 0;
        loop {
            if attempt >= opts.loads.max_attempts {
                return Err(LoadError::CaseExhausted {
                    case: i,
                    attempts: attempt,
                    last_error: "benchmark load draws failed".into(),
                }
                .into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.rng_seed, &format!("bench/{i}/{attempt}")));
            let case = sampler.sample_at(&mut rng, i % sampler.anchors().len())?;
            attempt += 1;
            match problem.solve(&case.nodal_forces, &opts.solver) {
                Ok((u, stats)) => {
                    cases.push((case, mask_surface(&u, mesh), stats.total_iterations()));
                    break;
                }
                Err(e) if e.is_recoverable() => redrawn += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }

    let mut g = graph.clone();
    g.set_features(&cases[0].1).map_err(|e| EvalError::Shape(e.to_string()))?;
    for _ in 0..opts.warmup {
        problem.solve(&cases[0].0.nodal_forces, &opts.solver)?;
    }
    match &mut surrogate {
        Surrogate::Single(m) => warm(m, &g, opts.warmup)?,
        Surrogate::Double(m) => warm(m, &g, opts.warmup)?,
    }

    let n = cases.len();
    let mut fe = vec![0.0; n];
    let mut gnn = vec![0.0; n];
    let mut repeat_fe_seconds = Vec::with_capacity(opts.repeats);
    let mut repeat_gnn_seconds = Vec::with_capacity(opts.repeats);
    for _ in 0..opts.repeats {
        let (mut fe_sum, mut gnn_sum) = (0.0, 0.0);
        for (i, (case, surface, _)) in cases.iter().enumerate() {
            let (solved, fe_t) = timed(|| problem.solve(&case.nodal_forces, &opts.solver));
            solved?;
            g.set_features(surface).map_err(|e| EvalError::Shape(e.to_string()))?;
            let (pred, gnn_t) = timed(|| surrogate.predict(&g));
            pred?;
            fe[i] += fe_t;
            gnn[i] += gnn_t;
            fe_sum += fe_t;
            gnn_sum += gnn_t;
        }
        repeat_fe_seconds.push(fe_sum / n as f64);
        repeat_gnn_seconds.push(gnn_sum / n as f64);
    }
    let r = opts.repeats as f64;
    let cases = cases
        .iter()
        .enumerate()
        .map(|(i, (c, _, iters))| CaseTiming {
            case: i,
            magnitude: c.magnitude,
            newton_iterations: *iters,
            fe_seconds: fe[i] / r,
            gnn_seconds: gnn[i] / r,
        })
        .collect();
    Ok(TimingReport {
        precision: opts.precision,
        fe_threads: rayon::current_num_threads(),
        repeats: opts.repeats,
        redrawn,
        cases,
        repeat_fe_seconds,
        repeat_gnn_seconds,
    })
}
