//! Element matrices, sparse assembly, loads and linear solvers for
//! plane-strain / 3D elasticity and steady heat conduction on structured
//! grids.
//!
//! Two layers live here. The general one (`SparseMatrix`, `LinearSystem`,
//! `solve_direct`, `solve_cg`) works on explicit full matrices. The fast one
//! (`ReducedAssembler`, `CholeskySolver`) keeps only the lower triangle of the
//! system over the free degrees of freedom, with element-to-slot maps built
//! once, so that repeated assembly is a scatter into a value array.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};

use crate::error::{Error, Result};
use crate::mesh::{Face, StructuredMesh};

/// Row-major dense square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// xᵀ A x
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            let ri: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            s += x[i] * ri;
        }
        s
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

const GAUSS2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

fn bit(a: usize, k: usize) -> f64 {
    if (a >> k) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Physical shape-function gradients of the Q1 element at reference point `xi`.
fn shape_gradients(size: &[f64], xi: &[f64]) -> Vec<[f64; 3]> {
    let dim = size.len();
    (0..1usize << dim)
        .map(|a| {
            let mut g = [0.0; 3];
            for k in 0..dim {
                let mut v = bit(a, k) / 2.0 * (2.0 / size[k]);
                for j in 0..dim {
                    if j != k {
                        v *= (1.0 + bit(a, j) * xi[j]) / 2.0;
                    }
                }
                g[k] = v;
            }
            g
        })
        .collect()
}

fn gauss_points(dim: usize) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    for p in 0..1usize << dim {
        let mut xi = [0.0; 3];
        for (k, x) in xi.iter_mut().enumerate().take(dim) {
            *x = GAUSS2[(p >> k) & 1];
        }
        pts.push(xi);
    }
    pts
}

/// Isotropic constitutive matrix in Voigt form (plane strain in 2D).
pub fn constitutive_matrix(e: f64, nu: f64, dim: usize) -> Result<DenseMatrix> {
    if !(nu > -1.0 && nu < 0.5) {
        return Err(Error::invalid(format!(
            "Poisson ratio {nu} outside (-1, 0.5)"
        )));
    }
    if !(e > 0.0) {
        return Err(Error::invalid(format!("Young's modulus {e} must be positive")));
    }
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    let ns = if dim == 2 { 3 } else { 6 };
    let mut d = DenseMatrix::zeros(ns);
    for i in 0..dim {
        for j in 0..dim {
            d.data[i * ns + j] = lambda + if i == j { 2.0 * mu } else { 0.0 };
        }
    }
    for i in dim..ns {
        d.data[i * ns + i] = mu;
    }
    Ok(d)
}

/// Strain-displacement rows for one node with physical gradient `g`.
fn b_block(g: &[f64; 3], dim: usize) -> Vec<Vec<f64>> {
    if dim == 2 {
        vec![vec![g[0], 0.0], vec![0.0, g[1]], vec![g[1], g[0]]]
    } else {
        vec![
            vec![g[0], 0.0, 0.0],
            vec![0.0, g[1], 0.0],
            vec![0.0, 0.0, g[2]],
            vec![0.0, g[2], g[1]],
            vec![g[2], 0.0, g[0]],
            vec![g[1], g[0], 0.0],
        ]
    }
}

/// Q1 elasticity stiffness (8×8 in 2D, 24×24 in 3D) with 2-point Gauss
/// quadrature per axis. Dofs are node-major: `dof = node * dim + component`.
pub fn element_stiffness_elasticity(e: f64, nu: f64, size: &[f64]) -> Result<DenseMatrix> {
    let dim = size.len();
    let d = constitutive_matrix(e, nu, dim)?;
    let nen = 1 << dim;
    let nd = nen * dim;
    let ns = d.n;
    let det = size.iter().map(|h| h / 2.0).product::<f64>();
    let mut k = DenseMatrix::zeros(nd);
    for xi in gauss_points(dim) {
        let grads = shape_gradients(size, &xi[..dim]);
        // B is ns × nd
        let mut b = vec![0.0; ns * nd];
        for (a, g) in grads.iter().enumerate() {
            for (r, row) in b_block(g, dim).into_iter().enumerate() {
                for (c, v) in row.into_iter().enumerate() {
                    b[r * nd + a * dim + c] = v;
                }
            }
        }
        // DB
        let mut db = vec![0.0; ns * nd];
        for r in 0..ns {
            for c in 0..nd {
                db[r * nd + c] = (0..ns).map(|s| d.get(r, s) * b[s * nd + c]).sum();
            }
        }
        for i in 0..nd {
            for j in 0..nd {
                let v: f64 = (0..ns).map(|r| b[r * nd + i] * db[r * nd + j]).sum();
                k.data[i * nd + j] += v * det;
            }
        }
    }
    Ok(k)
}

/// Q1 conduction stiffness ∫ κ ∇N_a·∇N_b.
pub fn element_stiffness_conduction(kappa: f64, size: &[f64]) -> Result<DenseMatrix> {
    if !(kappa > 0.0) {
        return Err(Error::invalid(format!("conductivity {kappa} must be positive")));
    }
    let dim = size.len();
    let nen = 1 << dim;
    let det = size.iter().map(|h| h / 2.0).product::<f64>();
    let mut k = DenseMatrix::zeros(nen);
    for xi in gauss_points(dim) {
        let grads = shape_gradients(size, &xi[..dim]);
        for a in 0..nen {
            for b in 0..nen {
                let v: f64 = (0..dim).map(|c| grads[a][c] * grads[b][c]).sum();
                k.data[a * nen + b] += kappa * v * det;
            }
        }
    }
    Ok(k)
}

/// Consistent mass matrix ∫ N_a N_b of a Q1 element (exact tensor form).
pub fn element_mass(size: &[f64]) -> DenseMatrix {
    let dim = size.len();
    let nen = 1 << dim;
    let mut m = DenseMatrix::zeros(nen);
    for a in 0..nen {
        for b in 0..nen {
            let mut v = 1.0;
            for (k, h) in size.iter().enumerate() {
                v *= h * if (a >> k) & 1 == (b >> k) & 1 { 1.0 / 3.0 } else { 1.0 / 6.0 };
            }
            m.data[a * nen + b] = v;
        }
    }
    m
}

/// Consistent mass matrix of a face normal to `axis`, indexed by the face's
/// local nodes in the order of `StructuredMesh::face_local_nodes`.
pub fn face_mass(size: &[f64], axis: usize) -> DenseMatrix {
    let dim = size.len();
    let local: Vec<usize> = (0..1usize << dim).filter(|a| (a >> axis) & 1 == 0).collect();
    let nf = local.len();
    let mut m = DenseMatrix::zeros(nf);
    for (i, &a) in local.iter().enumerate() {
        for (j, &b) in local.iter().enumerate() {
            let mut v = 1.0;
            for (k, h) in size.iter().enumerate() {
                if k == axis {
                    continue;
                }
                v *= h * if (a >> k) & 1 == (b >> k) & 1 { 1.0 / 3.0 } else { 1.0 / 6.0 };
            }
            m.data[i * nf + j] = v;
        }
    }
    m
}

/// Unit-parameter reference matrices for one mesh; every element is congruent.
#[derive(Clone, Debug)]
pub struct ElementMatrixCache {
    pub dim: usize,
    pub size: Vec<f64>,
    pub nu: f64,
    /// Elasticity stiffness for E = 1.
    pub elastic: DenseMatrix,
    /// Conduction stiffness for κ = 1.
    pub conduction: DenseMatrix,
    pub mass: DenseMatrix,
}

impl ElementMatrixCache {
    pub fn new(mesh: &StructuredMesh, nu: f64) -> Result<Self> {
        let size = mesh.element_size();
        Ok(Self {
            dim: mesh.dim(),
            elastic: element_stiffness_elasticity(1.0, nu, &size)?,
            conduction: element_stiffness_conduction(1.0, &size)?,
            mass: element_mass(&size),
            size,
            nu,
        })
    }

    pub fn matrix(&self, physics: Physics) -> &DenseMatrix {
        match physics {
            Physics::Elasticity => &self.elastic,
            Physics::Conduction => &self.conduction,
            Physics::Mass => &self.mass,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Physics {
    Elasticity,
    Conduction,
    Mass,
}

impl Physics {
    pub fn components(self, dim: usize) -> usize {
        match self {
            Physics::Elasticity => dim,
            _ => 1,
        }
    }
}

/// Global dof indices of an element, node-major.
pub fn element_dofs(mesh: &StructuredMesh, e: usize, ncomp: usize, out: &mut Vec<usize>) {
    out.clear();
    let nodes = mesh.element_nodes(e);
    for &n in &nodes[..mesh.nodes_per_element()] {
        for c in 0..ncomp {
            out.push(n * ncomp + c);
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub symmetric: bool,
}

impl SparseMatrix {
    /// Sums duplicate entries; column indices end up sorted within each row.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)], symmetric: bool) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
            symmetric,
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t, true)
    }

    pub fn from_dense(a: &DenseMatrix) -> Self {
        let mut t = Vec::new();
        for i in 0..a.n {
            for j in 0..a.n {
                let v = a.get(i, j);
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        let s = Self::from_triplets(a.n, &t, false);
        let sym = s.is_symmetric(1e-12);
        Self { symmetric: sym, ..s }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d.data[i * self.n + self.col_idx[k]] += self.values[k];
            }
        }
        d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| self.values[k] * x[self.col_idx[k]])
                    .sum()
            })
            .collect()
    }

    /// Max-norm of the entries.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Entrywise symmetry within `rel_tol` relative to the largest entry.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.n).all(|i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .all(|k| (self.values[k] - self.get(self.col_idx[k], i)).abs() <= rel_tol * scale)
        })
    }

    /// Lower triangle (including the diagonal) in 32-bit CSR form.
    fn lower_u32(&self) -> Result<(Vec<u32>, Vec<u32>, Vec<f64>)> {
        if self.n >= u32::MAX as usize || self.nnz() >= u32::MAX as usize {
            return Err(Error::invalid("matrix too large for 32-bit indices"));
        }
        let mut rp = vec![0u32];
        let mut ci = Vec::new();
        let mut vals = Vec::new();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if j <= i {
                    ci.push(j as u32);
                    vals.push(self.values[k]);
                }
            }
            rp.push(ci.len() as u32);
        }
        Ok((rp, ci, vals))
    }
}

/// Assembles Σ_e coeff[e] · K_e over the whole mesh (no boundary conditions).
pub fn assemble(
    mesh: &StructuredMesh,
    coeff: &[f64],
    physics: Physics,
    cache: &ElementMatrixCache,
) -> Result<SparseMatrix> {
    if coeff.len() != mesh.n_elements() {
        return Err(Error::invalid(format!(
            "{} coefficients for {} elements",
            coeff.len(),
            mesh.n_elements()
        )));
    }
    let ncomp = physics.components(mesh.dim());
    let ke = cache.matrix(physics);
    let n = mesh.n_nodes() * ncomp;
    let mut triplets = Vec::with_capacity(mesh.n_elements() * ke.n * ke.n);
    let mut dofs = Vec::new();
    for (e, &c) in coeff.iter().enumerate() {
        element_dofs(mesh, e, ncomp, &mut dofs);
        for (i, &di) in dofs.iter().enumerate() {
            for (j, &dj) in dofs.iter().enumerate() {
                triplets.push((di, dj, c * ke.get(i, j)));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(n, &triplets, true))
}

/// Consistent nodal load of a uniform traction `t` acting on boundary faces.
/// Returns a vector over all `n_nodes * dim` dofs.
pub fn traction_load(mesh: &StructuredMesh, faces: &[Face], t: &[f64]) -> Result<Vec<f64>> {
    let dim = mesh.dim();
    if t.len() != dim {
        return Err(Error::invalid(format!("traction has {} components", t.len())));
    }
    let mut f = vec![0.0; mesh.n_nodes() * dim];
    let share = 1.0 / (1usize << (dim - 1)) as f64;
    for face in faces {
        if !mesh.is_boundary_face(face) {
            return Err(Error::invalid(format!("{face:?} is not on the boundary")));
        }
        let w = mesh.face_measure(face.axis) * share;
        for n in mesh.face_nodes(face) {
            for c in 0..dim {
                f[n * dim + c] += t[c] * w;
            }
        }
    }
    Ok(f)
}

/// Nodal self-weight load f = −g_p ρ̄ b with elementwise constant ρ̄.
pub fn body_load(mesh: &StructuredMesh, rho_bar: &[f64], g_p: f64) -> Result<Vec<f64>> {
    if rho_bar.len() < mesh.n_elements() {
        return Err(Error::invalid("density field shorter than the element count"));
    }
    let dim = mesh.dim();
    let b = mesh.build_axis().index();
    let nen = mesh.nodes_per_element();
    let w = g_p * mesh.element_volume() / nen as f64;
    let mut f = vec![0.0; mesh.n_nodes() * dim];
    for (e, &rho) in rho_bar.iter().enumerate().take(mesh.n_elements()) {
        let nodes = mesh.element_nodes(e);
        for &n in &nodes[..nen] {
            f[n * dim + b] -= w * rho;
        }
    }
    Ok(f)
}

/// Heat load ∫_Γ ρ̄ q η ds with ρ̄ interpolated from nodal values on the faces.
/// `rho_nodal` is indexed by the mesh's node numbering (a parent-sized field
/// works for a sub-mesh since numbering is shared).
pub fn surface_flux_load(
    mesh: &StructuredMesh,
    faces: &[Face],
    rho_nodal: &[f64],
    q: f64,
) -> Result<Vec<f64>> {
    if rho_nodal.len() < mesh.n_nodes() {
        return Err(Error::invalid("nodal density shorter than the node count"));
    }
    let size = mesh.element_size();
    let mut f = vec![0.0; mesh.n_nodes()];
    for face in faces {
        let mf = face_mass(&size, face.axis);
        let nodes = mesh.face_nodes(face);
        let rho: Vec<f64> = nodes.iter().map(|&n| rho_nodal[n]).collect();
        let load = mf.mul_vec(&rho);
        for (n, l) in nodes.iter().zip(load) {
            f[*n] += q * l;
        }
    }
    Ok(f)
}

/// A linear system with prescribed values on some dofs.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub constraints: Vec<(usize, f64)>,
}

struct Reduced {
    free: Vec<usize>,
    matrix: SparseMatrix,
    rhs: Vec<f64>,
    full: Vec<f64>,
}

impl LinearSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Self {
        Self {
            matrix,
            rhs,
            constraints: Vec::new(),
        }
    }

    pub fn with_constraints(mut self, constraints: Vec<(usize, f64)>) -> Self {
        self.constraints = constraints;
        self
    }

    /// Symmetric elimination of prescribed dofs: rows and columns are removed
    /// and the known values moved to the right-hand side.
    fn reduce(&self) -> Result<Reduced> {
        let n = self.matrix.n;
        if self.rhs.len() != n {
            return Err(Error::invalid("rhs length does not match the matrix"));
        }
        let mut fixed: Vec<Option<f64>> = vec![None; n];
        for &(d, v) in &self.constraints {
            if d >= n {
                return Err(Error::invalid(format!("constrained dof {d} out of range")));
            }
            fixed[d] = Some(v);
        }
        let mut map = vec![usize::MAX; n];
        let mut free = Vec::new();
        for (d, f) in fixed.iter().enumerate() {
            if f.is_none() {
                map[d] = free.len();
                free.push(d);
            }
        }
        let mut full = vec![0.0; n];
        for (d, f) in fixed.iter().enumerate() {
            if let Some(v) = f {
                full[d] = *v;
            }
        }
        let mut triplets = Vec::new();
        let mut rhs: Vec<f64> = free.iter().map(|&d| self.rhs[d]).collect();
        for (ri, &i) in free.iter().enumerate() {
            for k in self.matrix.row_ptr[i]..self.matrix.row_ptr[i + 1] {
                let j = self.matrix.col_idx[k];
                let v = self.matrix.values[k];
                match fixed[j] {
                    Some(u) => rhs[ri] -= v * u,
                    None => triplets.push((ri, map[j], v)),
                }
            }
        }
        Ok(Reduced {
            matrix: SparseMatrix::from_triplets(free.len(), &triplets, self.matrix.symmetric),
            free,
            rhs,
            full,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sparse Cholesky solve after constraint elimination. The returned vector
/// covers every dof, constrained ones carrying their prescribed values.
pub fn solve_direct(sys: &LinearSystem) -> Result<Vec<f64>> {
    let red = sys.reduce()?;
    let mut full = red.full;
    if red.free.is_empty() {
        return Ok(full);
    }
    let (rp, ci, vals) = red.matrix.lower_u32()?;
    let solver = CholeskySolver::analyze(red.matrix.n, &rp, &ci)?;
    let factor = solver.factor(&rp, &ci, &vals)?;
    let mut x = red.rhs.clone();
    factor.solve_in_place(&mut x);
    check_residual(&red.matrix, &x, &red.rhs)?;
    for (ri, &d) in red.free.iter().enumerate() {
        full[d] = x[ri];
    }
    Ok(full)
}

fn check_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> Result<()> {
    let bn = norm(b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }
    if bn == 0.0 {
        return Ok(());
    }
    let r: Vec<f64> = a.mul_vec(x).iter().zip(b).map(|(ax, bi)| ax - bi).collect();
    let rel = norm(&r) / bn;
    if rel > 1e-8 {
        return Err(Error::SingularSystem(format!(
            "relative residual {rel:e} after factorization"
        )));
    }
    Ok(())
}

/// Outcome of a conjugate-gradient solve.
#[derive(Clone, Debug)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients after constraint elimination.
pub fn solve_cg(sys: &LinearSystem, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::invalid("CG tolerance must be positive"));
    }
    let red = sys.reduce()?;
    let mut full = red.full;
    let (rp, ci, vals) = red.matrix.lower_u32()?;
    let a = SymmetricLowerRef {
        n: red.matrix.n,
        row_ptr: &rp,
        col_idx: &ci,
        values: &vals,
    };
    let mut x = vec![0.0; a.n];
    pcg(&a, &red.rhs, &mut x, tol, max_iter)?;
    for (ri, &d) in red.free.iter().enumerate() {
        full[d] = x[ri];
    }
    Ok(full)
}

/// Borrowed symmetric matrix stored as its lower triangle in CSR form.
#[derive(Clone, Copy, Debug)]
pub struct SymmetricLowerRef<'a> {
    pub n: usize,
    pub row_ptr: &'a [u32],
    pub col_idx: &'a [u32],
    pub values: &'a [f64],
}

impl SymmetricLowerRef<'_> {
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let mut acc = 0.0;
            let xi = x[i];
            for k in self.row_ptr[i] as usize..self.row_ptr[i + 1] as usize {
                let j = self.col_idx[k] as usize;
                let v = self.values[k];
                acc += v * x[j];
                if j != i {
                    y[j] += v * xi;
                }
            }
            y[i] += acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let last = self.row_ptr[i + 1] as usize - 1;
                if self.col_idx[last] as usize == i {
                    self.values[last]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Jacobi PCG on a lower-stored symmetric matrix; `x` is the initial guess.
pub fn pcg(
    a: &SymmetricLowerRef<'_>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let n = a.n;
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            residual: 0.0,
        });
    }
    let dinv: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut ax = vec![0.0; n];
    a.mul_into(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let mut res = norm(&r) / bn;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(CgReport {
                iterations: it,
                residual: res,
            });
        }
        a.mul_into(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::SingularSystem(
                "matrix is not positive definite (CG breakdown)".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r) / bn;
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= tol {
        return Ok(CgReport {
            iterations: max_iter,
            residual: res,
        });
    }
    Err(Error::IterativeFailure {
        iterations: max_iter,
        residual: res,
    })
}

/// Symbolic sparse Cholesky analysis of a lower-stored symmetric pattern.
/// The numeric factorization is redone per matrix; the ordering and
/// elimination structure are reused.
#[derive(Clone, Debug)]
pub struct CholeskySolver {
    n: usize,
    symbolic: SymbolicLlt<u32>,
}

/// Numeric Cholesky factor of one matrix.
#[derive(Debug)]
pub struct CholeskyFactor {
    llt: Llt<u32, f64>,
}

fn upper_csc<'a>(
    n: usize,
    row_ptr: &'a [u32],
    col_idx: &'a [u32],
) -> Result<SymbolicSparseColMatRef<'a, u32>> {
    if row_ptr.len() != n + 1 || row_ptr[n] as usize != col_idx.len() {
        return Err(Error::invalid("inconsistent sparse pattern"));
    }
    // Lower CSR read as CSC is the upper triangle of the same matrix.
    Ok(SymbolicSparseColMatRef::new_checked(n, n, row_ptr, None, col_idx))
}

impl CholeskySolver {
    pub fn analyze(n: usize, row_ptr: &[u32], col_idx: &[u32]) -> Result<Self> {
        let pattern = upper_csc(n, row_ptr, col_idx)?;
        let symbolic = SymbolicLlt::try_new(pattern, Side::Upper)
            .map_err(|e| Error::State(format!("symbolic factorization failed: {e:?}")))?;
        Ok(Self { n, symbolic })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn factor(&self, row_ptr: &[u32], col_idx: &[u32], values: &[f64]) -> Result<CholeskyFactor> {
        let pattern = upper_csc(self.n, row_ptr, col_idx)?;
        if values.len() != col_idx.len() {
            return Err(Error::invalid("value array does not match the pattern"));
        }
        let mat = SparseColMatRef::new(pattern, values);
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), mat, Side::Upper)
            .map_err(|e| Error::SingularSystem(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(CholeskyFactor { llt })
    }
}

impl CholeskyFactor {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let m = MatMut::from_column_major_slice_mut(rhs, n, 1);
        self.llt.solve_in_place(m);
    }
}

const NONE: u32 = u32::MAX;

/// Lower-triangular pattern over the free dofs of one physics on one mesh,
/// plus the element → value-slot maps used for fast repeated assembly.
#[derive(Clone, Debug)]
pub struct ReducedAssembler {
    ncomp: usize,
    n_full: usize,
    dof_map: Vec<u32>,
    free_dofs: Vec<u32>,
    row_ptr: Vec<u32>,
    col_idx: Vec<u32>,
    nde: usize,
    slots: Vec<u32>,
}

impl ReducedAssembler {
    /// `constrained[d]` marks dofs removed from the system (homogeneous
    /// Dirichlet conditions).
    pub fn new(mesh: &StructuredMesh, physics: Physics, constrained: &[bool]) -> Result<Self> {
        let ncomp = physics.components(mesh.dim());
        let n_full = mesh.n_nodes() * ncomp;
        if constrained.len() != n_full {
            return Err(Error::invalid("constraint mask length does not match the dof count"));
        }
        if n_full >= NONE as usize {
            return Err(Error::invalid("too many dofs for 32-bit indices"));
        }
        let mut dof_map = vec![NONE; n_full];
        let mut free_dofs = Vec::new();
        for d in 0..n_full {
            if !constrained[d] {
                dof_map[d] = free_dofs.len() as u32;
                free_dofs.push(d as u32);
            }
        }
        let n = free_dofs.len();
        let nde = mesh.nodes_per_element() * ncomp;

        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut dofs = Vec::with_capacity(nde);
        for e in 0..mesh.n_elements() {
            element_dofs(mesh, e, ncomp, &mut dofs);
            for &di in &dofs {
                let ri = dof_map[di];
                if ri == NONE {
                    continue;
                }
                for &dj in &dofs {
                    let rj = dof_map[dj];
                    if rj != NONE && rj <= ri {
                        rows[ri as usize].push(rj);
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0u32);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            if col_idx.len() >= NONE as usize {
                return Err(Error::invalid("too many nonzeros for 32-bit indices"));
            }
            row_ptr.push(col_idx.len() as u32);
        }
        drop(rows);

        let mut slots = vec![NONE; mesh.n_elements() * nde * nde];
        for e in 0..mesh.n_elements() {
            element_dofs(mesh, e, ncomp, &mut dofs);
            let base = e * nde * nde;
            for (i, &di) in dofs.iter().enumerate() {
                let ri = dof_map[di];
                if ri == NONE {
                    continue;
                }
                let lo = row_ptr[ri as usize] as usize;
                let hi = row_ptr[ri as usize + 1] as usize;
                for (j, &dj) in dofs.iter().enumerate() {
                    let rj = dof_map[dj];
                    if rj == NONE || rj > ri {
                        continue;
                    }
                    let k = col_idx[lo..hi]
                        .binary_search(&rj)
                        .expect("pattern contains every element pair");
                    slots[base + i * nde + j] = (lo + k) as u32;
                }
            }
        }

        Ok(Self {
            ncomp,
            n_full,
            dof_map,
            free_dofs,
            row_ptr,
            col_idx,
            nde,
            slots,
        })
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn n_full(&self) -> usize {
        self.n_full
    }

    pub fn components(&self) -> usize {
        self.ncomp
    }

    /// Reduced index of a full dof, if free.
    pub fn reduced_index(&self, dof: usize) -> Option<usize> {
        let r = self.dof_map[dof];
        (r != NONE).then_some(r as usize)
    }

    pub fn free_dofs(&self) -> impl Iterator<Item = usize> + '_ {
        self.free_dofs.iter().map(|&d| d as usize)
    }

    /// Nonzeros of the leading `n` × `n` block.
    pub fn nnz_prefix(&self, n: usize) -> usize {
        self.row_ptr[n] as usize
    }

    /// Pattern of the leading `n` × `n` principal block. With lower storage a
    /// principal block is a prefix of the row arrays.
    pub fn prefix_pattern(&self, n: usize) -> (&[u32], &[u32]) {
        let nnz = self.row_ptr[n] as usize;
        (&self.row_ptr[..=n], &self.col_idx[..nnz])
    }

    /// Adds Σ coeff[e] K_ref over `elements` into `values`, which must
    /// cover every slot those elements touch.
    pub fn scatter(
        &self,
        elements: std::ops::Range<usize>,
        coeff: &[f64],
        kref: &DenseMatrix,
        values: &mut [f64],
    ) {
        debug_assert_eq!(kref.n, self.nde);
        let nn = self.nde * self.nde;
        for e in elements {
            let c = coeff[e];
            let slots = &self.slots[e * nn..(e + 1) * nn];
            for (s, kv) in slots.iter().zip(&kref.data) {
                if *s != NONE {
                    values[*s as usize] += c * kv;
                }
            }
        }
    }

    /// Full-length vector → reduced (free dof) vector.
    pub fn restrict(&self, full: &[f64], n: usize) -> Vec<f64> {
        self.free_dofs[..n].iter().map(|&d| full[d as usize]).collect()
    }

    /// Reduced vector → full-length vector with zeros on constrained dofs.
    pub fn expand(&self, reduced: &[f64], n_full: usize) -> Vec<f64> {
        let mut full = vec![0.0; n_full];
        for (r, &d) in reduced.iter().zip(&self.free_dofs) {
            full[d as usize] = *r;
        }
        full
    }

    pub fn matrix_ref<'a>(&'a self, n: usize, values: &'a [f64]) -> SymmetricLowerRef<'a> {
        let (row_ptr, col_idx) = self.prefix_pattern(n);
        SymmetricLowerRef {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }
}
