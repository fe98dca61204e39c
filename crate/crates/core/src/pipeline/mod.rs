//! Staged workflow: mesh, dataset, graph, train, eval, bench and ablation, with
//! content-addressed artifacts under one workdir.

mod ablate;
mod config;
mod store;

pub use ablate::{ablation_grid, AblationReport, AblationRow, AblationTable, RowMetrics};
pub use config::{BenchConfig, RunConfig};
pub use store::{Manifest, WorkdirLock};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::evalkit::{benchmark, evaluate, EvalError, MetricsReport, TimingReport};
use crate::hyperfem::FemError;
use crate::loadcase::{build_dataset, dataset_from_bytes, dataset_to_bytes, Dataset, LoadError, Split};
use crate::meshgen::{build_phantom, mesh_to_text, parse_mesh, Mesh, MeshError, Region};
use crate::meshgraph::{build_graph, write_edge_list, DeformationGraph, GraphError, GraphStats};
use crate::sagenet::{train, Checkpoint, History, ModelError};
use crate::ContentHash;
use store::{check, commit, stage_dir, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Mesh,
    Dataset,
    Graph,
    Train,
    Eval,
    Bench,
    Ablate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [Stage::Mesh, Stage::Dataset, Stage::Graph, Stage::Train, Stage::Eval, Stage::Bench, Stage::Ablate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Mesh => "mesh",
            Stage::Dataset => "dataset",
            Stage::Graph => "graph",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Bench => "bench",
            Stage::Ablate => "ablate",
        }
    }

    pub fn directory(self) -> &'static str {
        match self {
            Stage::Mesh => "mesh",
            Stage::Dataset => "dataset",
            Stage::Graph => "graph",
            Stage::Train => "checkpoints",
            Stage::Eval | Stage::Bench | Stage::Ablate => "reports",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("workdir is locked by another run ({0}); delete the file if that run is gone")]
    Locked(PathBuf),
    #[error("no {stage} artifact for this config; run `deforma {stage}` first")]
    Missing { stage: Stage },
    #[error("{stage} artifact failed its integrity check ({detail}); rerun `deforma {stage}`")]
    Integrity { stage: Stage, detail: String },
    #[error("checkpoint was trained on mesh {checkpoint} but the dataset belongs to mesh {dataset}; rerun `deforma train`")]
    MeshMismatch { checkpoint: ContentHash, dataset: ContentHash },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub key: ContentHash,
    pub dir: PathBuf,
    pub up_to_date: bool,
    pub summary: String,
}

impl fmt::Display for StageOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let state = if self.up_to_date { "up to date" } else { "done" };
        writeln!(f, "{}: {state} [{}] {}", self.stage, self.key.short(), self.dir.display())?;
        for line in self.summary.lines() {
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

type Files = Vec<(&'static str, Vec<u8>)>;

const SUMMARY: &str = "summary.txt";

/// One configuration bound to its (locked) workdir.
#[derive(Debug)]
pub struct Pipeline {
    config: RunConfig,
    /// Nonzero while building prerequisites of the requested stage.
    depth: usize,
    _lock: WorkdirLock,
}

impl Pipeline {
    pub fn open(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let lock = WorkdirLock::acquire(&config.workdir)?;
        Ok(Self { config, depth: 0, _lock: lock })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn workdir(&self) -> &Path {
        &self.config.workdir
    }

    /// Same workdir and lock, different configuration (used for ablation variants).
    pub(crate) fn with_config<T>(&mut self, config: RunConfig, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = std::mem::replace(&mut self.config, config);
        let out = f(self);
        self.config = saved;
        out
    }

    /// Runs a prerequisite stage; corrupt prerequisites are reported instead of rebuilt.
    fn prerequisite(&mut self, run: impl FnOnce(&mut Self) -> Result<StageOutcome, PipelineError>) -> Result<StageOutcome, PipelineError> {
        self.depth += 1;
        let out = run(self);
        self.depth -= 1;
        out
    }

    fn upstream(stage: Stage) -> &'static [Stage] {
        match stage {
            Stage::Mesh => &[],
            Stage::Dataset | Stage::Graph => &[Stage::Mesh],
            Stage::Train => &[Stage::Dataset, Stage::Graph],
            Stage::Eval => &[Stage::Train],
            Stage::Bench => &[Stage::Train, Stage::Dataset],
            Stage::Ablate => &[Stage::Dataset],
        }
    }

    fn sections(stage: Stage) -> &'static [&'static str] {
        match stage {
            Stage::Mesh => &["phantom.", "seed"],
            Stage::Dataset => &["material.", "loads.", "solver.", "seed"],
            Stage::Graph => &["graph."],
            Stage::Train => &["model.", "train.", "seed"],
            Stage::Eval => &["eval."],
            Stage::Bench => &["bench.", "seed"],
            Stage::Ablate => &["ablate.", "graph.", "model.", "train.", "eval.", "seed"],
        }
    }

    /// Content key of a stage: its config section chained with the keys of its inputs.
    pub fn key(&self, stage: Stage) -> ContentHash {
        let config = self.config.section_text(Self::sections(stage));
        let upstream: Vec<(String, ContentHash)> =
            Self::upstream(stage).iter().map(|&s| (s.name().to_string(), self.key(s))).collect();
        let mut parts: Vec<(&str, &[u8])> = vec![("stage", stage.name().as_bytes()), ("config", config.as_bytes())];
        for (name, h) in &upstream {
            parts.push((name, &h.0));
        }
        ContentHash::of_parts(parts)
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        stage_dir(self.workdir(), stage, &self.key(stage))
    }

    fn run_stage(&mut self, stage: Stage, build: impl FnOnce(&mut Self) -> Result<(Files, String), PipelineError>) -> Result<StageOutcome, PipelineError> {
        let key = self.key(stage);
        let dir = self.dir(stage);
        match check(&dir, stage, &key) {
            Status::Complete => {
                let summary = std::fs::read_to_string(dir.join(SUMMARY)).unwrap_or_default();
                log::info!("{stage}: up to date [{}]", key.short());
                return Ok(StageOutcome { stage, key, dir, up_to_date: true, summary });
            }
            Status::Corrupt(detail) if self.depth > 0 => return Err(PipelineError::Integrity { stage, detail }),
            Status::Corrupt(detail) => log::warn!("{stage}: existing artifacts rejected ({detail}); rebuilding"),
            Status::Missing => {}
        }
        log::info!("{stage}: building [{}]", key.short());
        let (mut files, summary) = build(self)?;
        files.push((SUMMARY, summary.clone().into_bytes()));
        let manifest = Manifest {
            stage,
            key,
            upstream: Self::upstream(stage).iter().map(|&s| (s, self.key(s))).collect(),
            artifacts: Vec::new(),
            config: self.config.section_text(Self::sections(stage)),
        };
        commit(&dir, manifest, &files)?;
        Ok(StageOutcome { stage, key, dir, up_to_date: false, summary })
    }

    /// Verified bytes of one artifact of a completed stage.
    fn artifact(&self, stage: Stage, name: &str) -> Result<Vec<u8>, PipelineError> {
        let dir = self.dir(stage);
        match check(&dir, stage, &self.key(stage)) {
            Status::Missing => Err(PipelineError::Missing { stage }),
            Status::Corrupt(detail) => Err(PipelineError::Integrity { stage, detail }),
            Status::Complete => std::fs::read(dir.join(name)).map_err(|e| PipelineError::io(&dir.join(name), e)),
        }
    }

    pub fn run_mesh(&mut self) -> Result<StageOutcome, PipelineError> {
        self.run_stage(Stage::Mesh, |p| {
            let mesh = build_phantom(&p.config.phantom)?;
            let summary = format!(
                "nodes {}\nelements {} ({} cancer)\ncancer nodes {}\nvolume {:.4e} m^3\nmesh hash {}\n",
                mesh.n_nodes(),
                mesh.n_elements(),
                mesh.region_element_count(Region::Cancer),
                mesh.region_nodes(Region::Cancer).len(),
                mesh.total_volume(),
                mesh.content_hash()
            );
            Ok((vec![("mesh.txt", mesh_to_text(&mesh).into_bytes())], summary))
        })
    }

    pub fn load_mesh(&self) -> Result<Mesh, PipelineError> {
        let bytes = self.artifact(Stage::Mesh, "mesh.txt")?;
        let text = String::from_utf8(bytes).map_err(|e| PipelineError::Integrity { stage: Stage::Mesh, detail: e.to_string() })?;
        Ok(parse_mesh(&text)?)
    }

    pub fn run_dataset(&mut self) -> Result<StageOutcome, PipelineError> {
        self.prerequisite(Self::run_mesh)?;
        self.run_stage(Stage::Dataset, |p| {
            let mesh = p.load_mesh()?;
            let c = &p.config;
            let (ds, stats) = build_dataset(&mesh, &c.materials, &c.loads, &c.solver)?;
            let (train, val, test) = ds.split_counts();
            let summary = format!(
                "cases {} (train {train}, val {val}, test {test})\nattempts {} ({} failed)\nnewton iterations {}\ncutbacks {}\nworst residual/tolerance {:.3e}\nsolve time {:.1} s\n",
                ds.samples.len(),
                stats.attempts,
                stats.failures,
                stats.newton_iterations,
                stats.cutbacks,
                stats.worst_residual_ratio,
                stats.solve_seconds
            );
            Ok((vec![("dataset.bin", dataset_to_bytes(&ds))], summary))
        })
    }

    pub fn load_dataset(&self) -> Result<Dataset, PipelineError> {
        Ok(dataset_from_bytes(&self.artifact(Stage::Dataset, "dataset.bin")?)?)
    }

    pub fn run_graph(&mut self) -> Result<StageOutcome, PipelineError> {
        self.prerequisite(Self::run_mesh)?;
        self.run_stage(Stage::Graph, |p| {
            let mesh = p.load_mesh()?;
            let graph = build_graph(&mesh, &p.config.graph)?;
            let mut edges = Vec::new();
            write_edge_list(&graph, &mesh, &mut edges)?;
            Ok((vec![("edges.txt", edges)], GraphStats::of(&graph, &mesh).to_string()))
        })
    }

    /// Rebuilds the graph topology and checks it against the stored edge list.
    pub fn load_graph(&self, mesh: &Mesh) -> Result<DeformationGraph, PipelineError> {
        let stored = self.artifact(Stage::Graph, "edges.txt")?;
        let graph = build_graph(mesh, &self.config.graph)?;
        let mut edges = Vec::new();
        write_edge_list(&graph, mesh, &mut edges)?;
        if edges != stored {
            return Err(PipelineError::Integrity { stage: Stage::Graph, detail: "rebuilt edges differ from the stored list".into() });
        }
        Ok(graph)
    }

    pub fn run_train(&mut self) -> Result<StageOutcome, PipelineError> {
        self.prerequisite(Self::run_dataset)?;
        self.prerequisite(Self::run_graph)?;
        self.run_stage(Stage::Train, |p| {
            let mesh = p.load_mesh()?;
            let dataset = p.load_dataset()?;
            let graph = p.load_graph(&mesh)?;
            let (mut ckpt, history) = train(&dataset, &graph, &p.config.model, &p.config.train)?;
            ckpt.dataset_hash = p.key(Stage::Dataset);
            ckpt.graph_hash = p.key(Stage::Graph);
            let best = history.best().expect("at least one epoch");
            let summary = format!(
                "parameters {}\nepochs {}\nbest epoch {} (val {:.4e} m^2, train {:.4e} m^2)\nfinal train loss {:.4e} m^2\ntraining time {:.1} s\n",
                ckpt.n_parameters(),
                history.epochs.len(),
                best.epoch,
                best.val_loss,
                best.train_loss,
                history.last().map_or(f64::NAN, |r| r.train_loss),
                history.seconds
            );
            Ok((vec![("model.ckpt", ckpt.to_bytes()), ("history.txt", history_text(&history).into_bytes())], summary))
        })
    }

    pub fn load_checkpoint(&self) -> Result<Checkpoint, PipelineError> {
        Ok(Checkpoint::from_bytes(&self.artifact(Stage::Train, "model.ckpt")?)?)
    }

    pub fn run_eval(&mut self) -> Result<StageOutcome, PipelineError> {
        self.prerequisite(Self::run_train)?;
        self.run_stage(Stage::Eval, |p| {
            let report = p.evaluate_checkpoint()?;
            let summary = format!(
                "test samples {}\nglobal RMSE {:.4} mm\ncancer RMSE {:.4} mm\nDSC {:.4}\nmean cancer displacement {:.4} mm\n",
                report.samples.len(),
                report.global_rmse_mm(),
                report.cancer_rmse_mm(),
                report.dsc(),
                report.cancer_displacement_mm()
            );
            Ok((vec![("eval.txt", report.records().into_bytes()), ("eval.md", report.table().into_bytes())], summary))
        })
    }

    /// Test-split metrics of the stored checkpoint (no caching).
    pub fn evaluate_checkpoint(&self) -> Result<MetricsReport, PipelineError> {
        let mesh = self.load_mesh()?;
        let dataset = self.load_dataset()?;
        let graph = self.load_graph(&mesh)?;
        let ckpt = self.load_checkpoint()?;
        if ckpt.mesh_hash != dataset.mesh_hash {
            return Err(PipelineError::MeshMismatch { checkpoint: ckpt.mesh_hash, dataset: dataset.mesh_hash });
        }
        Ok(evaluate(&ckpt, &dataset, Split::Test, &mesh, &graph, self.config.eval_resolution)?)
    }

    pub fn run_bench(&mut self) -> Result<(StageOutcome, Option<TimingReport>), PipelineError> {
        self.prerequisite(Self::run_train)?;
        let mut fresh = None;
        let outcome = self.run_stage(Stage::Bench, |p| {
            let mesh = p.load_mesh()?;
            let graph = p.load_graph(&mesh)?;
            let ckpt = p.load_checkpoint()?;
            let report = benchmark(&mesh, &p.config.materials, &ckpt, &graph, &p.config.bench_options())?;
            let summary = format!(
                "cases {} x {} repeats ({} redrawn), {} inference, {} FE threads\nFE {:.4} s/sample\nGNN {:.6} s/sample\nspeed-up {:.1}x (repeat CV {:.3})\n",
                report.cases.len(),
                report.repeats,
                report.redrawn,
                report.precision,
                report.fe_threads,
                report.fe_seconds_per_sample(),
                report.gnn_seconds_per_sample(),
                report.speedup(),
                report.speedup_variation()
            );
            let files = vec![("bench.txt", report.records().into_bytes()), ("bench.md", report.table().into_bytes())];
            fresh = Some(report);
            Ok((files, summary))
        })?;
        Ok((outcome, fresh))
    }

    /// Every stage except the ablation grid, in order.
    pub fn run_all(&mut self) -> Result<Vec<StageOutcome>, PipelineError> {
        let mut out = vec![self.run_mesh()?, self.run_dataset()?, self.run_graph()?, self.run_train()?, self.run_eval()?];
        out.push(self.run_bench()?.0);
        Ok(out)
    }
}

fn history_text(h: &History) -> String {
    let mut out = String::from("epoch train_loss val_loss\n");
    for r in &h.epochs {
        out += &format!("{} {:.9e} {:.9e}\n", r.epoch, r.train_loss, r.val_loss);
    }
    out
}
