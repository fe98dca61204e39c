//! Acceptance criteria 1 to 10, one PASS/FAIL line each.
//!
//! Desk-scale artifacts are cached under the cargo target directory and reused when their
//! content keys match, so only the first run pays for FE data generation and training.
//! Pass criterion numbers as arguments to run a subset: `cargo test --test acceptance -- 4 5`.
//! Failures are reported but only fail the process when `DEFORMA_ACCEPTANCE_STRICT=1`.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use deforma::evalkit::{benchmark, dsc, rmse, voxelize_region, MetricsReport, VoxelRegion};
use deforma::hyperfem::{solve_newton, Constraints, FemProblem, MaterialModel, Materials, SolveOptions};
use deforma::meshgen::{boundary_faces, build_phantom, ElementSet, Mesh, NodeTags, PhantomSpec, Region, SurfaceTriangulation};
use deforma::meshgraph::{augment_structured_edges, build_distance_edges, DeformationGraph};
use deforma::pipeline::{Pipeline, RunConfig, Stage};
use deforma::sagenet::{forward, loss_and_gradients, ActivationPattern, Checkpoint, FeatureScales, LayerKind, ModelConfig, Params, TrainConfig};
use deforma::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and limits.
const TANGENT_REL_TOL: f64 = 1e-4;
const TANGENT_SECONDS: f64 = 30.0;
const UNIAXIAL_REL_TOL: f64 = 0.02;
const UNIAXIAL_SECONDS: f64 = 10.0;
const GRADIENT_REL_TOL: f64 = 1e-4;
const GRADIENT_SECONDS: f64 = 60.0;
const SPHERE_VOLUME_TOL: f64 = 0.05;
const CANCER_RMSE_FRACTION: f64 = 0.10;
const MIN_DSC: f64 = 0.90;
const SURROGATE_SECONDS: f64 = 30.0 * 60.0;
const MIN_SPEEDUP: f64 = 100.0;
const MIN_BENCH_CASES: usize = 20;
const MAX_SPEEDUP_VARIATION: f64 = 0.20;
const PROPERTY_TRIALS: usize = 100;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> RunConfig {
    let mut c = RunConfig::load(workspace().join("configs/desk.cfg")).expect("configs/desk.cfg");
    c.workdir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk");
    c
}

fn line_value(text: &str, prefix: &str) -> Option<f64> {
    text.lines().find_map(|l| l.strip_prefix(prefix)?.split_whitespace().next()?.parse().ok())
}

/// Cube of `cells` cube-split cells with edge `h`, jittered interior-free corners and random regions.
fn jittered_block(cells: [usize; 3], h: f64, rng: &mut ChaCha8Rng) -> Mesh {
    let [nx, ny, nz] = cells;
    let idx = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
    let mut nodes = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                let jitter = Vec3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
                nodes.push((Vec3::new(i as f64, j as f64, k as f64) + jitter) * h);
            }
        }
    }
    let mut elements = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let c = |d: usize| idx(i + (d & 1), j + ((d >> 1) & 1), k + ((d >> 2) & 1));
                for path in [[1, 3], [1, 5], [2, 3], [2, 6], [4, 5], [4, 6]] {
                    let mut tet = [c(0), c(path[0]), c(path[1]), c(7)];
                    let x = tet.map(|t| nodes[t]);
                    if (x[1] - x[0]).cross(&(x[2] - x[0])).dot(&(x[3] - x[0])) < 0.0 {
                        tet.swap(1, 2);
                    }
                    elements.push(tet);
                }
            }
        }
    }
    let element_region = elements.iter().map(|_| if rng.random_bool(0.3) { Region::Cancer } else { Region::Normal }).collect();
    Mesh { node_tags: vec![NodeTags::empty(); nodes.len()], nodes, elements, element_region }
}

fn fe_tangent_consistency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shapes = [[1, 1, 1], [2, 1, 1], [1, 2, 1], [1, 1, 3], [3, 1, 1], [1, 3, 1]];
    let h = 0.01;
    let mut worst: f64 = 0.0;
    for cells in shapes {
        let mesh = jittered_block(cells, h, &mut rng);
        assert!(mesh.n_elements() <= 20);
        let mut fixed = vec![[false; 3]; mesh.n_nodes()];
        fixed[0] = [true; 3];
        let bc = Constraints::from_fixed_dofs(fixed);
        let problem = FemProblem::new(&mesh, &Materials::default(), bc.clone()).unwrap();
        let zero = vec![Vec3::zeros(); mesh.n_nodes()];
        let mut u: Vec<Vec3> =
            (0..mesh.n_nodes()).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.05 * h).collect();
        bc.apply(&mut u);
        let sys = problem.assemble(&u, &zero).expect("admissible displacement");
        let k = sys.tangent_dense();
        let n = sys.dim();
        let step = 1e-8;
        let mut fd = nalgebra::DMatrix::zeros(n, n);
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            let (mut up, mut um) = (u.clone(), u.clone());
            problem.add_free(&mut up, &e, step);
            problem.add_free(&mut um, &e, -step);
            let fp = problem.assemble(&up, &zero).unwrap().internal_force;
            let fm = problem.assemble(&um, &zero).unwrap().internal_force;
            for row in 0..n {
                fd[(row, col)] = (fp[row] - fm[row]) / (2.0 * step);
            }
        }
        worst = worst.max((&fd - &k).norm() / k.norm());
    }
    Verdict::new(worst < TANGENT_REL_TOL, format!("{} meshes, worst relative Frobenius error {worst:.2e}", shapes.len()))
}

fn unit_cube(n: usize) -> Mesh {
    let mut m = jittered_block([n, n, n], 1.0 / n as f64, &mut ChaCha8Rng::seed_from_u64(0));
    for (i, p) in m.nodes.iter_mut().enumerate() {
        let (a, b, c) = (i / ((n + 1) * (n + 1)), (i / (n + 1)) % (n + 1), i % (n + 1));
        *p = Vec3::new(a as f64, b as f64, c as f64) / n as f64;
    }
    m.element_region.fill(Region::Normal);
    m
}

fn hyperelastic_uniaxial() -> Verdict {
    let (c10, c01) = (2000.0, 1333.0);
    let nominal = |l: f64| 2.0 * (l - l.powi(-2)) * (c10 + c01 / l);
    let mesh = unit_cube(2);
    let traction = nominal(1.1);
    let fixed = mesh.nodes.iter().map(|p| [p.x == 0.0, p.y == 0.0, p.z == 0.0]).collect();
    let mut load = vec![Vec3::zeros(); mesh.n_nodes()];
    for f in boundary_faces(&mesh.elements, &mesh.element_region, ElementSet::All) {
        if f.iter().all(|&v| mesh.nodes[v].x == 1.0) {
            let p = f.map(|v| mesh.nodes[v]);
            let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
            for v in f {
                load[v].x += traction * area / 3.0;
            }
        }
    }
    let materials = Materials::uniform(MaterialModel::new(c10, c01, 1e6).unwrap());
    let (u, _) = solve_newton(&mesh, &materials, &load, &Constraints::from_fixed_dofs(fixed), &SolveOptions::default()).unwrap();
    let corner = mesh.nodes.iter().position(|p| *p == Vec3::new(1.0, 1.0, 1.0)).unwrap();
    let stretch = 1.0 + u[corner].x;
    let rel = (nominal(stretch) - traction).abs() / traction;
    Verdict::new(rel < UNIAXIAL_REL_TOL && (stretch - 1.1).abs() < 0.01, format!("stretch {stretch:.5}, nominal stress error {:.3}%", rel * 100.0))
}

fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> DeformationGraph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    let mut g = DeformationGraph::from_edges(n, &edges, &[]);
    let features: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect();
    g.set_features(&features).unwrap();
    g
}

fn gradient_exactness() -> Verdict {
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    let variants = [(LayerKind::SageMax, false), (LayerKind::SageMax, true), (LayerKind::GcnMean, true), (LayerKind::GraphConv, false)];
    for (i, (kind, jk)) in variants.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let g = random_graph(30, 0.12, &mut rng);
        let cfg = ModelConfig { hidden_dim: 6, n_layers: 3, layer_kind: kind, use_jumping_knowledge: jk, rng_seed: i as u64, ..Default::default() };
        let p = Params::init(&cfg).unwrap();
        let s = FeatureScales::default();
        let target: Vec<Vec3> = (0..30).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let (_, grads) = loss_and_gradients(&cfg, &p, &s, &g, &target).unwrap();
        let base = ActivationPattern::of(&cfg, &p, &s, &g).unwrap();
        let eps = 1e-5;
        for k in 0..p.len() {
            let (mut plus, mut minus) = (p.clone(), p.clone());
            plus.data[k] += eps;
            minus.data[k] -= eps;
            // Central differences are meaningless across a ReLU kink or a max switch.
            if ActivationPattern::of(&cfg, &plus, &s, &g).unwrap() != base || ActivationPattern::of(&cfg, &minus, &s, &g).unwrap() != base {
                skipped += 1;
                continue;
            }
            let fd = (loss_and_gradients(&cfg, &plus, &s, &g, &target).unwrap().0 - loss_and_gradients(&cfg, &minus, &s, &g, &target).unwrap().0) / (2.0 * eps);
            let an = grads.data[k];
            let err = (fd - an).abs() / (fd.abs().max(an.abs()) + 1e-6);
            worst = worst.max(err);
            checked += 1;
        }
    }
    let pass = worst < GRADIENT_REL_TOL && skipped * 100 < checked + skipped;
    Verdict::new(pass, format!("{checked} parameters over 4 layer variants, worst relative error {worst:.2e}, {skipped} at activation kinks skipped"))
}

fn icosphere(center: Vec3, r: f64, levels: usize) -> SurfaceTriangulation {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid = std::collections::HashMap::new();
        let mut next = Vec::new();
        for tri in &f {
            let m: Vec<usize> = (0..3)
                .map(|e| {
                    let (a, b) = (tri[e].min(tri[(e + 1) % 3]), tri[e].max(tri[(e + 1) % 3]));
                    *mid.entry((a, b)).or_insert_with(|| {
                        v.push(((v[a] + v[b]) / 2.0).normalize());
                        v.len() - 1
                    })
                })
                .collect();
            next.extend([[tri[0], m[0], m[2]], [tri[1], m[1], m[0]], [tri[2], m[2], m[1]], [m[0], m[1], m[2]]]);
        }
        f = next;
    }
    let n = v.len();
    SurfaceTriangulation { vertices: v.into_iter().map(|p| center + p * r).collect(), triangles: f, source_nodes: (0..n).collect() }
}

fn naive_dsc(a: &VoxelRegion, b: &VoxelRegion) -> f64 {
    let a: Vec<[i64; 3]> = a.occupancy.iter().copied().collect();
    let b: Vec<[i64; 3]> = b.occupancy.iter().copied().collect();
    let mut common = 0usize;
    for x in &a {
        for y in &b {
            if x == y {
                common += 1;
            }
        }
    }
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

fn naive_rmse_mm(pred: &[Vec3], target: &[Vec3], nodes: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &i in nodes {
        let (dx, dy, dz) = (pred[i].x - target[i].x, pred[i].y - target[i].y, pred[i].z - target[i].z);
        sum += dx * dx + dy * dy + dz * dz;
    }
    (sum / nodes.len() as f64).sqrt() * 1000.0
}

fn metric_oracles() -> Verdict {
    let mesh = build_phantom(&PhantomSpec { target_edge_length: 0.012, ..Default::default() }).unwrap();
    let cancer = mesh.region_nodes(Region::Cancer);
    let all: Vec<usize> = (0..mesh.n_nodes()).collect();
    let surface = deforma::meshgen::extract_region_surface(&mesh, ElementSet::Region(Region::Cancer)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = Vec::new();
    for s in 0..3 {
        let target: Vec<Vec3> = mesh.nodes.iter().map(|p| Vec3::new(p.y, -p.x, 0.5 * p.z) * 0.05 * rng.random::<f64>()).collect();
        let pred: Vec<Vec3> = target.iter().map(|t| t + Vec3::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3))).collect();
        if rmse(&pred, &target, None).unwrap() != naive_rmse_mm(&pred, &target, &all) {
            mismatches.push(format!("sample {s}: global RMSE"));
        }
        if rmse(&pred, &target, Some(&cancer)).unwrap() != naive_rmse_mm(&pred, &target, &cancer) {
            mismatches.push(format!("sample {s}: cancer RMSE"));
        }
        let a = voxelize_region(&surface.deformed(&target), 0.001).unwrap();
        let b = voxelize_region(&surface.deformed(&pred), 0.001).unwrap();
        if dsc(&a, &b).unwrap() != naive_dsc(&a, &b) {
            mismatches.push(format!("sample {s}: DSC"));
        }
    }
    let r = 0.01;
    let sphere = voxelize_region(&icosphere(Vec3::new(0.0203, -0.0111, 0.0052), r, 4), 0.001).unwrap();
    let analytic = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
    let vol_err = (sphere.volume() - analytic).abs() / analytic;
    let pass = mismatches.is_empty() && vol_err < SPHERE_VOLUME_TOL;
    let detail = if mismatches.is_empty() { "RMSE and DSC identical to naive loops on 3 samples".to_string() } else { mismatches.join(", ") };
    Verdict::new(pass, format!("{detail}; 1 cm sphere at 1 mm: {} voxels, volume error {:.2}%", sphere.len(), vol_err * 100.0))
}

fn graph_construction_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let nodes: Vec<Vec3> = (0..500).map(|_| Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(0.0..0.05), rng.random_range(-0.05..0.05))).collect();
    let points = Mesh { node_tags: vec![NodeTags::empty(); 500], nodes, elements: vec![], element_region: vec![] };
    let threshold = 0.009;
    let hashed = build_distance_edges(&points, threshold, usize::MAX).unwrap();
    let mut brute = Vec::new();
    for a in 0..500 {
        for b in a + 1..500 {
            if (points.nodes[a] - points.nodes[b]).norm() < threshold {
                brute.push((a, b));
            }
        }
    }

    let mut spanning = 0;
    let mut total = 0;
    for edge_length in [0.012, 0.0066] {
        let mesh = build_phantom(&PhantomSpec { target_edge_length: edge_length, ..Default::default() }).unwrap();
        let edges = augment_structured_edges(&mesh, 100).unwrap();
        total += edges.len();
        let distinct: BTreeSet<_> = edges.iter().collect();
        spanning += edges
            .iter()
            .filter(|(a, b)| {
                let fwd = mesh.has_tag(*a, NodeTags::TOP_SURFACE) && mesh.has_tag(*b, NodeTags::CANCER_SURFACE);
                let back = mesh.has_tag(*b, NodeTags::TOP_SURFACE) && mesh.has_tag(*a, NodeTags::CANCER_SURFACE);
                fwd || back
            })
            .count()
            .min(distinct.len());
    }
    let pass = hashed == brute && !brute.is_empty() && spanning == total && total == 200;
    Verdict::new(pass, format!("{} distance edges on 500 nodes ({} brute force); {spanning}/{total} structured edges span top and cancer surfaces", hashed.len(), brute.len()))
}

fn desk_metrics(p: &Pipeline) -> MetricsReport {
    p.evaluate_checkpoint().expect("desk evaluation")
}

fn surrogate_quality() -> Verdict {
    let mut p = Pipeline::open(desk_config()).unwrap();
    let dataset = p.run_dataset().unwrap();
    let eval = p.run_eval().unwrap();
    let train = fs::read_to_string(p.dir(Stage::Train).join("summary.txt")).unwrap();
    let seconds = line_value(&dataset.summary, "solve time ").unwrap_or(f64::NAN) + line_value(&train, "training time ").unwrap_or(f64::NAN);
    let r = desk_metrics(&p);
    let ds = p.load_dataset().unwrap();
    let (n_train, _, n_test) = ds.split_counts();
    let fraction = r.cancer_rmse_mm() / r.cancer_displacement_mm();
    let pass = fraction < CANCER_RMSE_FRACTION && r.dsc() > MIN_DSC && seconds < SURROGATE_SECONDS;
    Verdict::new(
        pass,
        format!(
            "{} nodes, {n_train} training cases, {n_test} test: cancer RMSE {:.3} mm = {:.1}% of mean displacement {:.3} mm, DSC {:.4}, global RMSE {:.3} mm; data+training {:.0} s{}",
            ds.n_nodes,
            r.cancer_rmse_mm(),
            fraction * 100.0,
            r.cancer_displacement_mm(),
            r.dsc(),
            r.global_rmse_mm(),
            seconds,
            if eval.up_to_date { " (cached)" } else { "" }
        ),
    )
}

fn augmentation_direction() -> Verdict {
    let mut with = Pipeline::open(desk_config()).unwrap();
    with.run_eval().unwrap();
    let k100 = desk_metrics(&with);
    let k = with.config().graph.n_structured;
    drop(with);
    let mut c = desk_config();
    c.graph.n_structured = 0;
    let mut without = Pipeline::open(c).unwrap();
    without.run_eval().unwrap();
    let k0 = desk_metrics(&without);
    Verdict::new(
        k == 100 && k100.cancer_rmse_mm() <= k0.cancer_rmse_mm(),
        format!("cancer RMSE {:.4} mm with {k} structured edges, {:.4} mm without (DSC {:.4} vs {:.4})", k100.cancer_rmse_mm(), k0.cancer_rmse_mm(), k100.dsc(), k0.dsc()),
    )
}

fn speedup() -> Verdict {
    let mut p = Pipeline::open(desk_config()).unwrap();
    p.run_train().unwrap();
    let mesh = p.load_mesh().unwrap();
    let graph = p.load_graph(&mesh).unwrap();
    let ckpt = p.load_checkpoint().unwrap();
    let report = benchmark(&mesh, &p.config().materials, &ckpt, &graph, &p.config().bench_options()).unwrap();
    let pass = report.cases.len() >= MIN_BENCH_CASES
        && report.repeats >= 5
        && report.speedup() >= MIN_SPEEDUP
        && report.speedup_variation() < MAX_SPEEDUP_VARIATION;
    Verdict::new(
        pass,
        format!(
            "{} cases x {} repeats: FE {:.1} ms, GNN ({}) {:.2} ms per sample, speed-up {:.1}x, repeat-to-repeat variation {:.1}%",
            report.cases.len(),
            report.repeats,
            report.fe_seconds_per_sample() * 1e3,
            report.precision,
            report.gnn_seconds_per_sample() * 1e3,
            report.speedup(),
            report.speedup_variation() * 100.0
        ),
    )
}

fn max_relative_gap(a: &[Vec3], b: &[Vec3]) -> f64 {
    let scale = a.iter().map(|v| v.amax()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max) / scale
}

/// Exact for max aggregation; the sum-based ablation layers only up to summation order.
fn gnn_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut equivariant, mut local) = (0, 0);
    let mut sum_gap: f64 = 0.0;
    for trial in 0..PROPERTY_TRIALS {
        let n_layers = rng.random_range(1..4);
        let cfg = ModelConfig { hidden_dim: 8, n_layers, use_jumping_knowledge: rng.random_bool(0.5), rng_seed: trial as u64, ..Default::default() };
        let g = random_graph(20, 0.12, &mut rng);
        let mut perm: Vec<usize> = (0..20).collect();
        for i in (1..20).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let w = rng.random_range(0..20);
        let hops = g.hop_distances(&[w]);
        let mut changed = g.clone();
        changed.node_features[w] += Vec3::new(0.7, -1.3, 0.4);

        for kind in [LayerKind::SageMax, LayerKind::GcnMean, LayerKind::GraphConv] {
            let ckpt = Checkpoint::fresh(ModelConfig { layer_kind: kind, ..cfg.clone() }, TrainConfig::default()).unwrap();
            let out = forward(&g, &ckpt).unwrap();
            let out_perm = forward(&g.permuted(&perm), &ckpt).unwrap();
            let unpermuted: Vec<Vec3> = (0..20).map(|v| out_perm[perm[v]]).collect();
            let out_changed = forward(&changed, &ckpt).unwrap();
            let confined = (0..20).filter(|&v| hops[v] > n_layers).all(|v| out[v] == out_changed[v]);
            if kind == LayerKind::SageMax {
                equivariant += usize::from(out == unpermuted);
                local += usize::from(confined);
            } else {
                sum_gap = sum_gap.max(max_relative_gap(&out, &unpermuted));
                if !confined {
                    sum_gap = f64::INFINITY;
                }
            }
        }
    }
    Verdict::new(
        equivariant == PROPERTY_TRIALS && local == PROPERTY_TRIALS && sum_gap < 1e-12,
        format!(
            "GraphSAGE: {equivariant}/{PROPERTY_TRIALS} random relabellings exactly equivariant, {local}/{PROPERTY_TRIALS} perturbations confined to the receptive field; GCN/GraphConv relabelling gap {sum_gap:.1e} (summation order)"
        ),
    )
}

fn end_to_end_determinism() -> Verdict {
    let reports = ["eval.txt", "eval.md", "summary.txt"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::load(workspace().join("configs/smoke.cfg")).expect("configs/smoke.cfg");
        c.workdir = dir.path().to_path_buf();
        let mut p = Pipeline::open(c).unwrap();
        p.run_all().unwrap();
        let (ablate, _) = p.run_ablate(&p.config().ablate_tables.clone()).unwrap();
        let mut bytes = Vec::new();
        for name in reports {
            bytes.push(fs::read(p.dir(Stage::Eval).join(name)).unwrap());
        }
        for name in ["ablation.txt", "ablation.md"] {
            bytes.push(fs::read(ablate.dir.join(name)).unwrap());
        }
        for (stage, name) in [(Stage::Dataset, "dataset.bin"), (Stage::Train, "model.ckpt"), (Stage::Graph, "edges.txt")] {
            bytes.push(fs::read(p.dir(stage).join(name)).unwrap());
        }
        runs.push(bytes);
    }
    let identical = runs[0] == runs[1];
    Verdict::new(identical, format!("two fresh runs of configs/smoke.cfg: evaluation and ablation reports, dataset, checkpoint and graph {}", if identical { "byte-identical" } else { "differ" }))
}

type Criterion = (u32, &'static str, fn() -> Verdict, Option<f64>);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "FE tangent consistency", fe_tangent_consistency, Some(TANGENT_SECONDS)),
        (2, "hyperelastic uniaxial stretch", hyperelastic_uniaxial, Some(UNIAXIAL_SECONDS)),
        (3, "gradient exactness", gradient_exactness, Some(GRADIENT_SECONDS)),
        (4, "metric oracles", metric_oracles, None),
        (5, "graph construction oracle", graph_construction_oracle, None),
        (6, "surrogate quality (desk scale)", surrogate_quality, None),
        (7, "structured-edge ablation direction", augmentation_direction, None),
        (8, "inference speed-up", speedup, None),
        (9, "GNN equivariance and locality", gnn_properties, None),
        (10, "end-to-end determinism", end_to_end_determinism, None),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check, limit) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let in_time = limit.is_none_or(|l| secs < l);
        let pass = verdict.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit_note = limit.map(|l| format!(", limit {l:.0} s")).unwrap_or_default();
        println!("criterion {id:>2} {} {name}: {} [{secs:.1} s{limit_note}]", if pass { "PASS" } else { "FAIL" }, verdict.detail);
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 && std::env::var("DEFORMA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

