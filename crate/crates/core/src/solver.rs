//! Fine-scale reference solves, the multiscale Galerkin method and the
//! spectral solution for constant coefficients.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::assembly::{assemble_stiffness_raw, assemble_trace_load, ElementIntegrals, EnergyNorm, LOAD_DEGREE};
use crate::coefficient::CoefficientField;
use crate::corrector::{CorrectorBasis, CorrectorDiagnostics, CorrectorEngine};
use crate::error::{domain, Error, Result};
use crate::interpolation::{BoundaryMode, ConstraintSet};
use crate::mesh::{CylinderMesh, MeshHierarchy, Point};
use crate::quadrature::{gauss_jacobi, unweighted_bary_rule};
use crate::sparse::{conjugate_gradient, CsrMatrix, SparseVector};
use crate::special::FractionalOrder;

/// Relative residual of the fine conjugate-gradient solves.
pub const FINE_TOLERANCE: f64 = 1e-10;
/// Column density above which the multiscale matrix is formed densely.
const DENSE_BASIS_THRESHOLD: f64 = 0.2;

/// Source term on `Omega`.
pub type Source<'f> = &'f (dyn Fn(&Point) -> f64 + Sync);

/// Weighted stiffness, load and norm on one mesh.
pub struct FineProblem {
    pub integrals: ElementIntegrals,
    /// Stiffness over all nodes without boundary conditions.
    pub stiffness: CsrMatrix,
    /// Load with Dirichlet entries zeroed.
    pub load: Vec<f64>,
    pub norm: EnergyNorm,
    dirichlet: Vec<bool>,
}

impl FineProblem {
    pub fn new(mesh: &CylinderMesh, field: &CoefficientField, order: &FractionalOrder, f: Source<'_>) -> Result<Self> {
        let integrals = ElementIntegrals::new(mesh, order.a)?;
        let stiffness = assemble_stiffness_raw(mesh, &field.element_values(mesh)?, &integrals);
        let dirichlet = mesh.classify_nodes().dirichlet_mask();
        let mut load = assemble_trace_load(mesh, f, order)?;
        for (l, &fixed) in load.iter_mut().zip(&dirichlet) {
            if fixed {
                *l = 0.0;
            }
        }
        let norm = EnergyNorm::from_integrals(mesh, &integrals);
        Ok(Self { integrals, stiffness, load, norm, dirichlet })
    }

    /// Galerkin solution on the whole mesh by preconditioned CG.
    pub fn solve(&self) -> Result<FineSolution> {
        let k = self.stiffness.with_identity_rows(&self.dirichlet);
        let max_iter = 20 * k.nrows() + 100;
        let out = conjugate_gradient(&k, &self.load, FINE_TOLERANCE, max_iter)?;
        Ok(FineSolution { values: out.solution, iterations: out.iterations, relative_residual: out.relative_residual })
    }
}

#[derive(Debug, Clone)]
pub struct FineSolution {
    /// Nodal values over all fine nodes (Dirichlet entries zero).
    pub values: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Fine Galerkin solution `u_h` of the truncated extension problem.
pub fn solve_fine(mesh: &CylinderMesh, field: &CoefficientField, order: &FractionalOrder, f: Source<'_>) -> Result<FineSolution> {
    FineProblem::new(mesh, field, order, f)?.solve()
}

/// Basis `{P lambda_w - Q(lambda_w)}` of a coarse-dimensional subspace of the fine space.
#[derive(Debug, Clone)]
pub struct MultiscaleSpace {
    pub coarse_dofs: Vec<usize>,
    pub columns: Vec<SparseVector>,
    n_fine: usize,
}

impl MultiscaleSpace {
    /// Corrected basis functions.
    pub fn from_correctors(hier: &MeshHierarchy, basis: &CorrectorBasis) -> Self {
        let mut space = Self::plain(hier);
        for (col, q) in space.columns.iter_mut().zip(&basis.correctors) {
            let mut pairs: Vec<(u32, f64)> = col.indices.iter().copied().zip(col.values.iter().copied()).collect();
            pairs.extend(q.indices.iter().zip(&q.values).map(|(&i, &v)| (i, -v)));
            *col = SparseVector::from_pairs(pairs);
        }
        space
    }

    /// Uncorrected coarse P1 basis on the fine mesh.
    pub fn plain(hier: &MeshHierarchy) -> Self {
        let coarse_dofs = hier.coarse.classify_nodes().dof_nodes;
        let pt = hier.prolongation.transpose();
        let columns = coarse_dofs
            .iter()
            .map(|&w| {
                let (idx, val) = pt.row(w);
                SparseVector { indices: idx.iter().map(|&i| i as u32).collect(), values: val.to_vec() }
            })
            .collect();
        Self { coarse_dofs, columns, n_fine: hier.fine.num_vertices() }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    fn density(&self) -> f64 {
        let nnz: usize = self.columns.iter().map(|c| c.nnz()).sum();
        nnz as f64 / (self.n_fine as f64 * self.dim().max(1) as f64)
    }

    /// `Phi^T K Phi`.
    pub fn galerkin_matrix(&self, k: &CsrMatrix) -> DMatrix<f64> {
        let m = self.dim();
        if self.density() > DENSE_BASIS_THRESHOLD {
            let mut phi = DMatrix::zeros(self.n_fine, m);
            for (j, c) in self.columns.iter().enumerate() {
                for (&i, &v) in c.indices.iter().zip(&c.values) {
                    phi[(i as usize, j)] = v;
                }
            }
            let mut kphi = DMatrix::zeros(self.n_fine, m);
            for j in 0..m {
                let col = k.mul_vec(phi.column(j).as_slice());
                kphi.column_mut(j).copy_from_slice(&col);
            }
            let a = phi.transpose() * kphi;
            return (&a + a.transpose()) * 0.5;
        }
        // sparse path: A[:, j] = sum_n (K phi_j)[n] Phi[n, :]
        let mut trips = Vec::new();
        for (j, c) in self.columns.iter().enumerate() {
            for (&i, &v) in c.indices.iter().zip(&c.values) {
                trips.push((i as usize, j, v));
            }
        }
        let phi_rows = CsrMatrix::from_triplets(self.n_fine, m, trips);
        let mut a = DMatrix::zeros(m, m);
        let mut y = vec![0.0; self.n_fine];
        let mut touched = Vec::new();
        for (j, c) in self.columns.iter().enumerate() {
            for (&n, &v) in c.indices.iter().zip(&c.values) {
                let (cols, vals) = k.row(n as usize);
                for (&q, &kv) in cols.iter().zip(vals) {
                    if y[q] == 0.0 {
                        touched.push(q);
                    }
                    y[q] += kv * v;
                }
            }
            for &q in &touched {
                let (cols, vals) = phi_rows.row(q);
                for (&i, &pv) in cols.iter().zip(vals) {
                    a[(i, j)] += pv * y[q];
                }
                y[q] = 0.0;
            }
            touched.clear();
        }
        (&a + a.transpose()) * 0.5
    }

    pub fn project_load(&self, load: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|c| c.dot_dense(load)).collect()
    }

    /// Fine nodal values of `sum_j c_j phi_j`.
    pub fn reconstruct(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.n_fine];
        for (c, col) in coefficients.iter().zip(&self.columns) {
            col.add_to(&mut u, *c);
        }
        u
    }

    /// Galerkin solution in this space.
    pub fn solve(&self, k: &CsrMatrix, load: &[f64]) -> Result<MultiscaleSolution> {
        let a = self.galerkin_matrix(k);
        let rhs = DVector::from_vec(self.project_load(load));
        let chol = Cholesky::new(a).ok_or_else(|| Error::Singular("multiscale Galerkin matrix is not positive definite".into()))?;
        let c = chol.solve(&rhs);
        let coefficients: Vec<f64> = c.iter().copied().collect();
        let fine = self.reconstruct(&coefficients);
        Ok(MultiscaleSolution { coarse_dofs: self.coarse_dofs.clone(), coefficients, fine, diagnostics: None })
    }
}

#[derive(Debug, Clone)]
pub struct MultiscaleSolution {
    pub coarse_dofs: Vec<usize>,
    /// Coefficients of the basis functions, in the order of `coarse_dofs`.
    pub coefficients: Vec<f64>,
    /// Fine-grid reconstruction.
    pub fine: Vec<f64>,
    pub diagnostics: Option<CorrectorDiagnostics>,
}

/// Everything needed to compute multiscale solutions on one hierarchy.
pub struct MultiscaleSetup<'a> {
    pub hier: &'a MeshHierarchy,
    pub problem: &'a FineProblem,
    pub constraints: ConstraintSet,
    pub order: FractionalOrder,
    field: &'a CoefficientField,
}

impl<'a> MultiscaleSetup<'a> {
    /// `problem` must be assembled on `hier.fine` with the same field and order.
    pub fn new(
        hier: &'a MeshHierarchy,
        field: &'a CoefficientField,
        order: &FractionalOrder,
        problem: &'a FineProblem,
        mode: BoundaryMode,
    ) -> Result<Self> {
        if problem.load.len() != hier.fine.num_vertices() {
            return Err(Error::Structural("fine problem does not match the fine mesh".into()));
        }
        let constraints = ConstraintSet::from_integrals(hier, &problem.integrals, mode)?;
        Ok(Self { hier, problem, constraints, order: *order, field })
    }

    pub fn engine(&self) -> Result<CorrectorEngine<'_>> {
        CorrectorEngine::new(self.hier, self.field, self.order.a, &self.problem.integrals, &self.constraints)
    }

    /// Multiscale space with correctors on `k`-layer patches
    /// (`None` for full-domain correctors).
    pub fn space(&self, k: Option<usize>) -> Result<(MultiscaleSpace, CorrectorDiagnostics)> {
        let engine = self.engine()?;
        let layers = k.unwrap_or_else(|| engine.full_layers());
        let basis = engine.corrector_basis(layers)?;
        Ok((MultiscaleSpace::from_correctors(self.hier, &basis), basis.diagnostics))
    }

    pub fn solve(&self, k: Option<usize>) -> Result<MultiscaleSolution> {
        let (space, diag) = self.space(k)?;
        let mut sol = space.solve(&self.problem.stiffness, &self.problem.load)?;
        sol.diagnostics = Some(diag);
        Ok(sol)
    }

    /// Standard coarse P1 Galerkin solution, represented on the fine mesh.
    pub fn solve_coarse_galerkin(&self) -> Result<MultiscaleSolution> {
        MultiscaleSpace::plain(self.hier).solve(&self.problem.stiffness, &self.problem.load)
    }
}

/// Multiscale solution `u_{H,k}^{ms}` on `k`-layer patches (`None`: full domain).
pub fn solve_multiscale(
    hier: &MeshHierarchy,
    k: Option<usize>,
    field: &CoefficientField,
    order: &FractionalOrder,
    f: Source<'_>,
    mode: BoundaryMode,
) -> Result<MultiscaleSolution> {
    let problem = FineProblem::new(&hier.fine, field, order, f)?;
    MultiscaleSetup::new(hier, field, order, &problem, mode)?.solve(k)
}

/// `||grad(u1 - u2)||_{L2(C_T, y^a)}` on `mesh`.
pub fn energy_error(mesh: &CylinderMesh, u1: &[f64], u2: &[f64], a: f64) -> Result<f64> {
    if u1.len() != mesh.num_vertices() || u2.len() != mesh.num_vertices() {
        return Err(Error::Structural(format!(
            "functions with {} and {} values on a mesh with {} nodes",
            u1.len(),
            u2.len(),
            mesh.num_vertices()
        )));
    }
    EnergyNorm::new(mesh, a)?.distance(u1, u2)
}

/// One Dirichlet eigenmode of the Laplacian on the unit interval or square.
#[derive(Debug, Clone, Copy)]
pub struct Mode {
    pub indices: [usize; 2],
    pub eigenvalue: f64,
    /// `(f, phi)_Omega`.
    pub load: f64,
}

/// Spectral solution of the fractional problem for `A = 1`.
#[derive(Debug, Clone)]
pub struct SpectralReference {
    pub order: FractionalOrder,
    pub dim: usize,
    /// Modes sorted by eigenvalue.
    pub modes: Vec<Mode>,
}

fn eigenfunction(d: usize, idx: [usize; 2], x: &[f64]) -> f64 {
    let pi = std::f64::consts::PI;
    let mut v = 1.0;
    for k in 0..d {
        v *= std::f64::consts::SQRT_2 * (idx[k] as f64 * pi * x[k]).sin();
    }
    v
}

/// Expands `f` in the first `n_modes` Dirichlet eigenfunctions per axis.
pub fn solve_spectral_reference(order: &FractionalOrder, d: usize, f: Source<'_>, n_modes: usize) -> Result<SpectralReference> {
    if n_modes < 1 {
        return domain("the spectral expansion needs at least one mode");
    }
    if !(d == 1 || d == 2) {
        return domain(format!("spatial dimension must be 1 or 2, got {d}"));
    }
    let pi = std::f64::consts::PI;
    // composite Gauss-Legendre on 4 n_modes panels resolves every mode
    let panels = 4 * n_modes;
    let gl = gauss_jacobi(4, 0.0, 0.0)?;
    let mut nodes = Vec::with_capacity(panels * 4);
    let mut weights = Vec::with_capacity(panels * 4);
    for p in 0..panels {
        for (&t, &w) in gl.nodes.iter().zip(&gl.weights) {
            nodes.push((p as f64 + t) / panels as f64);
            weights.push(w / panels as f64);
        }
    }
    let m = nodes.len();
    // sine tables: s[k][i] = sqrt(2) sin(k pi x_i)
    let table: Vec<Vec<f64>> = (1..=n_modes)
        .map(|k| nodes.iter().map(|&x| std::f64::consts::SQRT_2 * (k as f64 * pi * x).sin()).collect())
        .collect();
    let mut modes = Vec::new();
    if d == 1 {
        let fx: Vec<f64> = nodes.iter().map(|&x| f(&[x, 0.0, 0.0])).collect();
        for k in 1..=n_modes {
            let load = (0..m).map(|i| weights[i] * fx[i] * table[k - 1][i]).sum();
            modes.push(Mode { indices: [k, 0], eigenvalue: (k as f64 * pi).powi(2), load });
        }
    } else {
        let mut fx = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                fx[i * m + j] = f(&[nodes[i], nodes[j], 0.0]);
            }
        }
        for k1 in 1..=n_modes {
            // partial sums over the first axis
            let partial: Vec<f64> = (0..m)
                .map(|j| (0..m).map(|i| weights[i] * table[k1 - 1][i] * fx[i * m + j]).sum())
                .collect();
            for k2 in 1..=n_modes {
                let load = (0..m).map(|j| weights[j] * table[k2 - 1][j] * partial[j]).sum();
                let eigenvalue = pi * pi * ((k1 * k1 + k2 * k2) as f64);
                modes.push(Mode { indices: [k1, k2], eigenvalue, load });
            }
        }
    }
    modes.sort_by(|a, b| a.eigenvalue.total_cmp(&b.eigenvalue).then(a.indices.cmp(&b.indices)));
    Ok(SpectralReference { order: *order, dim: d, modes })
}

impl SpectralReference {
    /// Extension profile `psi_k(y)` of a mode.
    pub fn profile(&self, mode: &Mode, y: f64) -> f64 {
        self.order.profile(mode.eigenvalue.sqrt() * y)
    }

    /// Fractional solution `u(x) = sum mu^{-s} f_k phi_k(x)`.
    pub fn trace(&self, x: &[f64]) -> f64 {
        self.extension(x, 0.0)
    }

    /// Extended solution `U(x, y)`.
    pub fn extension(&self, x: &[f64], y: f64) -> f64 {
        self.modes
            .iter()
            .filter(|m| m.load != 0.0)
            .map(|m| m.eigenvalue.powf(-self.order.s) * m.load * eigenfunction(self.dim, m.indices, x) * self.profile(m, y))
            .sum()
    }
}

/// `||tr(u_h) - u||_{L2(Omega)}` and `||u||_{L2(Omega)}` for a nodal
/// function on `mesh` and a reference function on `Omega`.
pub fn trace_l2_error(mesh: &CylinderMesh, u_h: &[f64], exact: impl Fn(&[f64]) -> f64) -> Result<(f64, f64)> {
    let d = mesh.dim();
    let rule = unweighted_bary_rule(d, LOAD_DEGREE + 2, 1.0)?;
    let mut err = 0.0;
    let mut norm = 0.0;
    for face in mesh.trace_faces() {
        let vs = &face.vertices[..d + 1];
        for (b, &w) in rule.bary.iter().zip(&rule.weights) {
            let mut x = [0.0; 3];
            let mut uh = 0.0;
            for (k, &v) in vs.iter().enumerate() {
                let p = mesh.vertex(v);
                for c in 0..d {
                    x[c] += b[k] * p[c];
                }
                uh += b[k] * u_h[v];
            }
            let ue = exact(&x[..d]);
            err += w * face.measure * (uh - ue).powi(2);
            norm += w * face.measure * ue * ue;
        }
    }
    Ok((err.sqrt(), norm.sqrt()))
}

/// `||tr(u1) - tr(u2)||_{L2(Omega)}` for nodal functions on two meshes that
/// share their trace layer (same `Omega` resolution, node ids at `y = 0` agree).
pub fn trace_distance(mesh: &CylinderMesh, u1: &[f64], u2: &[f64]) -> Result<f64> {
    let d = mesh.dim();
    let n_trace = (mesh.n_x() + 1).pow(d as u32);
    if u1.len() < n_trace || u2.len() < n_trace {
        return Err(Error::Structural("functions do not cover the trace layer".into()));
    }
    let mut diff = vec![0.0; mesh.num_vertices()];
    for i in 0..n_trace {
        diff[i] = u1[i] - u2[i];
    }
    Ok(trace_l2_error(mesh, &diff, |_| 0.0)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{constant_field, log_uniform_random_field};
    use crate::mesh::build_cylinder_mesh;
    use crate::special::bessel_k;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine_source(s: f64) -> impl Fn(&Point) -> f64 + Sync {
        move |p: &Point| std::f64::consts::PI.powf(2.0 * s) * (std::f64::consts::PI * p[0]).sin()
    }

    fn hierarchy(n: usize, factor: usize, t: f64) -> MeshHierarchy {
        let ny = (t * n as f64).round() as usize;
        MeshHierarchy::new(build_cylinder_mesh(1, n, t, ny).unwrap(), factor).unwrap()
    }

    #[test]
    fn fine_solution_linear_in_data() {
        let mesh = build_cylinder_mesh(1, 8, 1.0, 8).unwrap();
        let field = constant_field(1.0, vec![1]).unwrap();
        let order = FractionalOrder::new(0.3).unwrap();
        let zero = solve_fine(&mesh, &field, &order, &|_| 0.0).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let f = sine_source(0.3);
        let u1 = solve_fine(&mesh, &field, &order, &f).unwrap();
        let f2 = |p: &Point| 2.0 * f(p);
        let u2 = solve_fine(&mesh, &field, &order, &f2).unwrap();
        assert!(u1.relative_residual <= FINE_TOLERANCE);
        for (a, b) in u1.values.iter().zip(&u2.values) {
            assert!((2.0 * a - b).abs() <= 1e-8 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn fine_trace_approaches_sine() {
        let order = FractionalOrder::new(0.5).unwrap();
        let field = constant_field(1.0, vec![1]).unwrap();
        let f = |p: &Point| std::f64::consts::PI * (std::f64::consts::PI * p[0]).sin();
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let mesh = build_cylinder_mesh(1, n, 3.0, 3 * n).unwrap();
            let u = solve_fine(&mesh, &field, &order, &f).unwrap();
            let (e, norm) = trace_l2_error(&mesh, &u.values, |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
            errs.push(e / norm);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn spectral_single_mode() {
        for s in [0.2, 0.5, 0.8] {
            let order = FractionalOrder::new(s).unwrap();
            let f = sine_source(s);
            let spec = solve_spectral_reference(&order, 1, &f, 8).unwrap();
            for x in [0.1, 0.37, 0.5, 0.9] {
                assert_relative_eq!(spec.trace(&[x]), (std::f64::consts::PI * x).sin(), epsilon = 1e-12);
            }
            assert!(spec.modes.windows(2).all(|w| w[0].eigenvalue < w[1].eigenvalue));
            let m = &spec.modes[0];
            assert!((spec.profile(m, 1e-6) - 1.0).abs() < 1e-2);
            assert!(spec.profile(m, 0.5) > spec.profile(m, 1.0));
        }
        let order = FractionalOrder::new(0.5).unwrap();
        assert!(solve_spectral_reference(&order, 1, &|_| 1.0, 0).is_err());
    }

    #[test]
    fn spectral_square_extension_closed_form() {
        let pi = std::f64::consts::PI;
        for s in [0.2, 0.8] {
            let order = FractionalOrder::new(s).unwrap();
            let f = move |p: &Point| (2.0 * pi * pi).powf(s) * (pi * p[0]).sin() * (pi * p[1]).sin();
            let spec = solve_spectral_reference(&order, 2, &f, 4).unwrap();
            let gamma_s = crate::special::gamma(s).unwrap();
            for &(x1, x2, y) in &[(0.3f64, 0.6f64, 0.2f64), (0.5, 0.5, 1.0), (0.8, 0.1, 0.05)] {
                let closed = 2f64.powf(1.0 - s) / gamma_s
                    * (2.0 * pi * pi).powf(s / 2.0)
                    * (pi * x1).sin()
                    * (pi * x2).sin()
                    * y.powf(s)
                    * bessel_k(s, 2f64.sqrt() * pi * y).unwrap();
                assert_relative_eq!(spec.extension(&[x1, x2], y), closed, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn coarse_mesh_equals_fine_gives_coarse_galerkin() {
        let hier = hierarchy(4, 1, 1.0);
        let field = log_uniform_random_field(100.0, vec![4], 2).unwrap();
        let order = FractionalOrder::new(0.4).unwrap();
        let f = sine_source(0.4);
        let problem = FineProblem::new(&hier.fine, &field, &order, &f).unwrap();
        let setup = MultiscaleSetup::new(&hier, &field, &order, &problem, BoundaryMode::Local).unwrap();
        let ms = setup.solve(Some(2)).unwrap();
        let cg = setup.solve_coarse_galerkin().unwrap();
        let fine = setup.problem.solve().unwrap();
        for ((a, b), c) in ms.fine.iter().zip(&cg.fine).zip(&fine.values) {
            assert!((a - b).abs() < 1e-10 && (a - c).abs() < 1e-8);
        }
        let zero = solve_multiscale(&hier, Some(1), &field, &order, &|_| 0.0, BoundaryMode::Local).unwrap();
        assert!(zero.fine.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn galerkin_orthogonality_and_optimality() {
        let hier = hierarchy(4, 4, 1.0);
        let field = log_uniform_random_field(1e3, vec![16], 7).unwrap();
        let order = FractionalOrder::new(0.6).unwrap();
        let f = sine_source(0.6);
        let problem = FineProblem::new(&hier.fine, &field, &order, &f).unwrap();
        let setup = MultiscaleSetup::new(&hier, &field, &order, &problem, BoundaryMode::Global).unwrap();
        let fine = setup.problem.solve().unwrap();
        let k = &setup.problem.stiffness;
        for layers in [Some(1), None] {
            let (space, _) = setup.space(layers).unwrap();
            let ms = space.solve(k, &setup.problem.load).unwrap();
            let diff: Vec<f64> = fine.values.iter().zip(&ms.fine).map(|(a, b)| a - b).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..20 {
                let j = rng.gen_range(0..space.dim());
                let phi = space.columns[j].to_dense(hier.fine.num_vertices());
                let b = k.bilinear_form(&diff, &phi);
                let scale = k.quadratic_form(&fine.values).sqrt() * k.quadratic_form(&phi).sqrt();
                assert!(b.abs() <= 1e-8 * scale, "{b} vs {scale}");
            }
        }
        let full = setup.solve(None).unwrap();
        let coarse = setup.solve_coarse_galerkin().unwrap();
        let e_ms = energy_error(&hier.fine, &fine.values, &full.fine, order.a).unwrap();
        let e_cg = energy_error(&hier.fine, &fine.values, &coarse.fine, order.a).unwrap();
        assert!(e_ms < e_cg, "{e_ms} vs {e_cg}");
    }

    #[test]
    fn sparse_and_dense_galerkin_agree() {
        let hier = hierarchy(4, 2, 1.0);
        let field = log_uniform_random_field(10.0, vec![8], 1).unwrap();
        let order = FractionalOrder::new(0.5).unwrap();
        let problem = FineProblem::new(&hier.fine, &field, &order, &|_| 1.0).unwrap();
        let setup = MultiscaleSetup::new(&hier, &field, &order, &problem, BoundaryMode::Local).unwrap();
        let (space, _) = setup.space(Some(1)).unwrap();
        let k = &setup.problem.stiffness;
        let sparse = space.galerkin_matrix(k);
        let n = hier.fine.num_vertices();
        let dense = DMatrix::from_fn(space.dim(), space.dim(), |i, j| {
            k.bilinear_form(&space.columns[i].to_dense(n), &space.columns[j].to_dense(n))
        });
        assert!((sparse - dense).abs().max() < 1e-12);
    }

    #[test]
    fn energy_error_properties() {
        let mesh = build_cylinder_mesh(1, 4, 1.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = mesh.num_vertices();
        let a = 0.3;
        for _ in 0..10 {
            let u: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let e01 = energy_error(&mesh, &u[0], &u[1], a).unwrap();
            let e12 = energy_error(&mesh, &u[1], &u[2], a).unwrap();
            let e02 = energy_error(&mesh, &u[0], &u[2], a).unwrap();
            assert!(e02 <= e01 + e12 + 1e-14);
            assert_eq!(energy_error(&mesh, &u[0], &u[0], a).unwrap(), 0.0);
            let zero = vec![0.0; n];
            let two: Vec<f64> = u[0].iter().map(|x| 2.0 * x).collect();
            assert_relative_eq!(
                energy_error(&mesh, &two, &zero, a).unwrap(),
                2.0 * energy_error(&mesh, &u[0], &zero, a).unwrap(),
                max_relative = 1e-13
            );
        }
        assert!(matches!(energy_error(&mesh, &[0.0], &[0.0], a), Err(Error::Structural(_))));
    }
}
