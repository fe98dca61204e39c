use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::SparseColMatRef;
use faer::{MatMut, Side};

use super::assembly::{FemProblem, SparseSystem};
use super::{Constraints, DisplacementField, FemError, Materials, SolveOptions};
use crate::meshgen::Mesh;
use crate::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    /// Residual evaluations per load increment (a converged state counts as one).
    pub iterations_per_increment: Vec<usize>,
    /// Residual at the start of each increment, in newtons.
    pub initial_residuals: Vec<f64>,
    pub final_residual: f64,
    pub tolerance: f64,
    /// Step halvings forced by element inversion.
    pub backtracks: usize,
    /// Load-increment halvings after a failed increment.
    pub cutbacks: usize,
}

impl SolveStats {
    pub fn total_iterations(&self) -> usize {
        self.iterations_per_increment.iter().sum()
    }
}

impl FemProblem {
    fn newton_step(&self, sys: &SparseSystem) -> Result<Vec<f64>, FemError> {
        let pattern = self.pattern();
        let mat = SparseColMatRef::new(pattern.symbolic(), &sys.tangent_values);
        let llt = Llt::try_new_with_symbolic(self.symbolic().clone(), mat, Side::Lower)
            .map_err(|e| FemError::FactorizationFailed(format!("{e:?}")))?;
        let mut rhs = sys.residual();
        let n = rhs.len();
        llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut rhs, n, 1));
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(FemError::FactorizationFailed("non-finite Newton update".into()));
        }
        Ok(rhs)
    }

    /// Load-ramped Newton–Raphson solve for the nodal force field `external`.
    pub fn solve(&self, external: &[Vec3], opts: &SolveOptions) -> Result<(DisplacementField, SolveStats), FemError> {
        opts.validate()?;
        if external.len() != self.n_nodes() {
            return Err(FemError::InvalidInput(format!(
                "load has {} nodes, mesh has {}",
                external.len(),
                self.n_nodes()
            )));
        }
        let bc = self.constraints();
        for (node, f) in external.iter().enumerate() {
            if !f.iter().all(|v| v.is_finite()) {
                return Err(FemError::InvalidInput(format!("non-finite load at node {node}")));
            }
            if (0..3).any(|k| bc.is_fixed(node, k) && f[k] != 0.0) {
                return Err(FemError::InvalidInput(format!("load applied to constrained node {node}")));
            }
        }

        let load_norm = self.restrict(external).iter().map(|v| v * v).sum::<f64>().sqrt();
        let tol = opts.tolerance_for(load_norm);
        let mut stats = SolveStats { tolerance: tol, ..Default::default() };
        let mut u = vec![Vec3::zeros(); self.n_nodes()];

        let mut done = 0.0;
        let mut step = 1.0 / opts.n_load_increments as f64;
        let mut cutbacks = 0;
        while done < 1.0 {
            let target = if 1.0 - (done + step) < 1e-12 { 1.0 } else { done + step };
            let increment = stats.iterations_per_increment.len() + 1;
            match self.equilibrate(&u, external, target, increment, tol, opts) {
                Ok((next, iterations, initial, last, halvings)) => {
                    u = next;
                    done = target;
                    stats.iterations_per_increment.push(iterations);
                    stats.initial_residuals.push(initial);
                    stats.final_residual = last;
                    stats.backtracks += halvings;
                }
                Err(e) if cutbacks < opts.max_cutbacks && e.is_recoverable() => {
                    log::debug!("cutting load increment at factor {done:.4}: {e}");
                    step *= 0.5;
                    cutbacks += 1;
                }
                Err(e) => return Err(e),
            }
        }
        stats.cutbacks = cutbacks;
        Ok((u, stats))
    }

    /// Newton iterations at a fixed load factor, starting from `u`.
    fn equilibrate(
        &self,
        u: &[Vec3],
        external: &[Vec3],
        factor: f64,
        increment: usize,
        tol: f64,
        opts: &SolveOptions,
    ) -> Result<(DisplacementField, usize, f64, f64, usize), FemError> {
        let load: Vec<Vec3> = external.iter().map(|f| f * factor).collect();
        let mut u = u.to_vec();
        let mut sys = self.assemble(&u, &load)?;
        let mut residual = sys.residual_norm();
        let initial = residual;
        let mut iterations = 1;
        let mut backtracks = 0;
        while residual >= tol {
            if iterations > opts.max_iterations {
                return Err(FemError::NotConverged { increment, residual });
            }
            let delta = self.newton_step(&sys)?;
            let mut step = 1.0;
            let mut halvings = 0;
            loop {
                let mut trial = u.clone();
                self.add_free(&mut trial, &delta, step);
                match self.assemble(&trial, &load) {
                    Ok(next) => {
                        u = trial;
                        sys = next;
                        break;
                    }
                    Err(FemError::SingularConfiguration { .. }) if halvings < opts.max_backtracks => {
                        step *= 0.5;
                        halvings += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            backtracks += halvings;
            residual = sys.residual_norm();
            iterations += 1;
            if !residual.is_finite() {
                return Err(FemError::NotConverged { increment, residual });
            }
            log::trace!("increment {increment} iteration {iterations}: residual {residual:e}");
        }
        Ok((u, iterations, initial, residual, backtracks))
    }
}

/// Builds the problem for `mesh` and solves it once.
pub fn solve_newton(
    mesh: &Mesh,
    materials: &Materials,
    external: &[Vec3],
    bc: &Constraints,
    opts: &SolveOptions,
) -> Result<(DisplacementField, SolveStats), FemError> {
    FemProblem::new(mesh, materials, bc.clone())?.solve(external, opts)
}
