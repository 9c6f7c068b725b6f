//! Uniform rectangular cell-centered finite-volume meshes.
//!
//! Cells are ordered row-major from the lower-left corner, so cell `(i, j)`
//! has index `j * nx + i`. Fluxes across interior edges use the two-point
//! approximation `(u_L - u_K) / d_KL`; Dirichlet boundaries are realized
//! with a ghost value at half a cell distance, Neumann boundaries contribute
//! nothing. Row sums of the resulting diffusion operator vanish for pure
//! Neumann conditions, which is what makes the discretization conservative.

use crate::linalg::{conjugate_gradient, BandCholesky, BandMatrix, LinalgError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cell counts must be at least 1 (got {nx} x {ny})")]
    EmptyMesh { nx: usize, ny: usize },
    #[error("domain extents must be positive (got {lx} x {ly})")]
    NonPositiveExtent { lx: f64, ly: f64 },
    #[error("cells {0} and {1} are not neighbors")]
    NotNeighbors(usize, usize),
    #[error("field has {got} values but the mesh has {expected} cells")]
    LengthMismatch { got: usize, expected: usize },
    #[error("diffusion coefficient is negative in cell {cell} ({value})")]
    NegativeCoefficient { cell: usize, value: f64 },
    #[error("field contains a non-finite value in cell {cell}")]
    NonFiniteValue { cell: usize },
    #[error(transparent)]
    Linear(#[from] LinalgError),
}

/// Boundary condition on one side of the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCondition {
    HomogeneousNeumann,
    Dirichlet(f64),
}

/// Boundary conditions for a field, one per side of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldBc {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
    pub bottom: BoundaryCondition,
    pub top: BoundaryCondition,
}

impl FieldBc {
    pub fn all_neumann() -> Self {
        Self {
            left: BoundaryCondition::HomogeneousNeumann,
            right: BoundaryCondition::HomogeneousNeumann,
            bottom: BoundaryCondition::HomogeneousNeumann,
            top: BoundaryCondition::HomogeneousNeumann,
        }
    }

    pub fn is_pure_neumann(&self) -> bool {
        [self.left, self.right, self.bottom, self.top]
            .iter()
            .all(|bc| matches!(bc, BoundaryCondition::HomogeneousNeumann))
    }
}

/// Uniform rectangular cell-centered mesh over an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    hx: f64,
    hy: f64,
}

impl Mesh {
    /// Builds an `nx` by `ny` mesh over `(0, lx) x (0, ly)`.
    pub fn new(nx: usize, ny: usize, extents: (f64, f64)) -> Result<Self, MeshError> {
        let (lx, ly) = extents;
        if nx == 0 || ny == 0 {
            return Err(MeshError::EmptyMesh { nx, ny });
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(MeshError::NonPositiveExtent { lx, ly });
        }
        Ok(Self { nx, ny, lx, ly, hx: lx / nx as f64, hy: ly / ny as f64 })
    }

    /// Unit square `(0,1)^2`.
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self, MeshError> {
        Self::new(nx, ny, (1.0, 1.0))
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.hx, self.hy)
    }

    pub fn extents(&self) -> (f64, f64) {
        (self.lx, self.ly)
    }

    /// Cell measure `|K|` (identical for all cells).
    pub fn cell_measure(&self) -> f64 {
        self.hx * self.hy
    }

    /// Total measure `|Omega|`, defined as `n_cells * |K|` so that summing
    /// the cell measures reproduces it exactly.
    pub fn total_measure(&self) -> f64 {
        self.n_cells() as f64 * self.cell_measure()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn cell_center(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.coords(k);
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    /// Indices of the neighboring cells of `k` (2 to 4 on interior meshes).
    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.coords(k);
        let mut out = [None; 4];
        if i > 0 {
            out[0] = Some(k - 1);
        }
        if i + 1 < self.nx {
            out[1] = Some(k + 1);
        }
        if j > 0 {
            out[2] = Some(k - self.nx);
        }
        if j + 1 < self.ny {
            out[3] = Some(k + self.nx);
        }
        out.into_iter().flatten()
    }

    pub fn are_neighbors(&self, k: usize, l: usize) -> bool {
        self.neighbors(k).any(|m| m == l)
    }

    /// Distance `d_KL` between the centers of two neighboring cells.
    pub fn center_distance(&self, k: usize, l: usize) -> Result<f64, MeshError> {
        if !self.are_neighbors(k, l) {
            return Err(MeshError::NotNeighbors(k, l));
        }
        Ok(if k.abs_diff(l) == 1 { self.hx } else { self.hy })
    }

    /// Measure `|sigma_KL|` of the edge shared by two neighboring cells.
    pub fn edge_measure(&self, k: usize, l: usize) -> Result<f64, MeshError> {
        if !self.are_neighbors(k, l) {
            return Err(MeshError::NotNeighbors(k, l));
        }
        Ok(if k.abs_diff(l) == 1 { self.hy } else { self.hx })
    }
}

/// Cell-indexed scalar state with its boundary conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
    bc: FieldBc,
}

impl Field {
    pub fn new(mesh: &Mesh, values: Vec<f64>, bc: FieldBc) -> Result<Self, MeshError> {
        if values.len() != mesh.n_cells() {
            return Err(MeshError::LengthMismatch { got: values.len(), expected: mesh.n_cells() });
        }
        if let Some(cell) = values.iter().position(|v| !v.is_finite()) {
            return Err(MeshError::NonFiniteValue { cell });
        }
        Ok(Self { values, bc })
    }

    pub fn constant(mesh: &Mesh, value: f64, bc: FieldBc) -> Self {
        Self { values: vec![value; mesh.n_cells()], bc }
    }

    /// Fills a field from a function of the cell-center coordinates.
    pub fn from_fn(mesh: &Mesh, bc: FieldBc, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..mesh.n_cells())
            .map(|k| {
                let (x, y) = mesh.cell_center(k);
                f(x, y)
            })
            .collect();
        Self { values, bc }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn bc(&self) -> &FieldBc {
        &self.bc
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self { values, bc: self.bc }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl std::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.values[k]
    }
}

/// Two-point flux `(u_L - u_K) / d_KL` across the edge between neighbors.
pub fn two_point_flux(mesh: &Mesh, field: &Field, k: usize, l: usize) -> Result<f64, MeshError> {
    let d = mesh.center_distance(k, l)?;
    Ok((field[l] - field[k]) / d)
}

/// Discrete `L^2` norm `sqrt(sum_K |K| u_K^2)`.
pub fn l2_norm(mesh: &Mesh, values: &[f64]) -> f64 {
    let sum: f64 = values.iter().map(|v| v * v).sum();
    (mesh.cell_measure() * sum).sqrt()
}

/// Diffusion coefficient: a constant or one value per cell.
#[derive(Debug, Clone, Copy)]
pub enum Coefficient<'a> {
    Constant(f64),
    PerCell(&'a [f64]),
}

impl<'a> Coefficient<'a> {
    fn get(&self, k: usize) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::PerCell(v) => v[k],
        }
    }
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s == 0.0 {
        0.0
    } else {
        2.0 * a * b / s
    }
}

/// Assembled two-point flux diffusion operator.
///
/// Applying the operator yields
/// `(A u)_K = (1/|K|) sum_L |sigma_KL| kappa_KL (u_L - u_K)/d_KL + b_K`,
/// where `kappa_KL` is the harmonic mean of the adjacent cell coefficients
/// and `b_K` collects the Dirichlet ghost-value contributions. Neumann
/// edges are simply absent, so for pure Neumann conditions each row of the
/// linear part sums to zero.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    nx: usize,
    ny: usize,
    /// Transmissibility between cells `k` and `k + 1`, already divided by `|K|`.
    trans_x: Vec<f64>,
    /// Transmissibility between cells `k` and `k + nx`, already divided by `|K|`.
    trans_y: Vec<f64>,
    /// Diagonal of the linear part (nonpositive).
    diag: Vec<f64>,
    /// Affine Dirichlet contribution per cell.
    bc_rhs: Vec<f64>,
}

/// Assembles the diffusion operator for the given edge coefficient and
/// boundary conditions. Coefficients must be nonnegative; a zero coefficient
/// simply disables the edge.
pub fn assemble_diffusion(
    mesh: &Mesh,
    coefficient: Coefficient,
    bc: &FieldBc,
) -> Result<DiffusionOperator, MeshError> {
    if let Coefficient::PerCell(values) = coefficient {
        if values.len() != mesh.n_cells() {
            return Err(MeshError::LengthMismatch { got: values.len(), expected: mesh.n_cells() });
        }
    }
    let n = mesh.n_cells();
    for k in 0..n {
        let v = coefficient.get(k);
        if v < 0.0 {
            return Err(MeshError::NegativeCoefficient { cell: k, value: v });
        }
    }
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let (hx, hy) = mesh.spacing();
    let measure = mesh.cell_measure();
    let mut op = DiffusionOperator {
        nx,
        ny,
        trans_x: vec![0.0; n],
        trans_y: vec![0.0; n],
        diag: vec![0.0; n],
        bc_rhs: vec![0.0; n],
    };

    // Interior edges.
    for j in 0..ny {
        for i in 0..nx {
            let k = mesh.index(i, j);
            if i + 1 < nx {
                let kappa = harmonic_mean(coefficient.get(k), coefficient.get(k + 1));
                let t = hy * kappa / (hx * measure);
                op.trans_x[k] = t;
                op.diag[k] -= t;
                op.diag[k + 1] -= t;
            }
            if j + 1 < ny {
                let kappa = harmonic_mean(coefficient.get(k), coefficient.get(k + nx));
                let t = hx * kappa / (hy * measure);
                op.trans_y[k] = t;
                op.diag[k] -= t;
                op.diag[k + nx] -= t;
            }
        }
    }

    // Boundary edges: ghost value at distance d/2 for Dirichlet sides.
    let mut boundary = |k: usize, side: BoundaryCondition, edge: f64, dist: f64| {
        if let BoundaryCondition::Dirichlet(g) = side {
            let t = edge * coefficient.get(k) / (0.5 * dist * measure);
            op.diag[k] -= t;
            op.bc_rhs[k] += t * g;
        }
    };
    for j in 0..ny {
        boundary(mesh.index(0, j), bc.left, hy, hx);
        boundary(mesh.index(nx - 1, j), bc.right, hy, hx);
    }
    for i in 0..nx {
        boundary(mesh.index(i, 0), bc.bottom, hx, hy);
        boundary(mesh.index(i, ny - 1), bc.top, hx, hy);
    }
    Ok(op)
}

impl DiffusionOperator {
    pub fn n_cells(&self) -> usize {
        self.diag.len()
    }

    pub fn bc_rhs(&self) -> &[f64] {
        &self.bc_rhs
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Applies only the linear part (no Dirichlet contribution).
    pub fn apply_linear(&self, u: &[f64], out: &mut [f64]) {
        let (nx, n) = (self.nx, self.diag.len());
        for k in 0..n {
            out[k] = self.diag[k] * u[k];
        }
        for k in 0..n {
            if (k + 1) % nx != 0 {
                let t = self.trans_x[k];
                out[k] += t * u[k + 1];
                out[k + 1] += t * u[k];
            }
            if k + nx < n {
                let t = self.trans_y[k];
                out[k] += t * u[k + nx];
                out[k + nx] += t * u[k];
            }
        }
    }

    /// Applies the full affine operator including Dirichlet data.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        self.apply_linear(u, out);
        for (o, b) in out.iter_mut().zip(&self.bc_rhs) {
            *o += *b;
        }
    }

    fn bandwidth(&self) -> usize {
        if self.ny > 1 {
            self.nx
        } else {
            1
        }
    }

    /// Assembles the SPD system matrix `diag(alpha) - scale * A_linear`
    /// into banded storage.
    pub fn system_band(&self, alpha: &SystemDiagonal, scale: f64) -> BandMatrix {
        let n = self.diag.len();
        let nx = self.nx;
        let mut band = BandMatrix::zeros(n, self.bandwidth());
        for k in 0..n {
            band.set(k, k, alpha.get(k) - scale * self.diag[k]);
            if (k + 1) % nx != 0 {
                band.set(k + 1, k, -scale * self.trans_x[k]);
            }
            if k + nx < n {
                band.set(k + nx, k, -scale * self.trans_y[k]);
            }
        }
        band
    }

    fn system_diag(&self, alpha: &SystemDiagonal, scale: f64) -> Vec<f64> {
        (0..self.diag.len()).map(|k| alpha.get(k) - scale * self.diag[k]).collect()
    }
}

/// Diagonal term of an implicit system, scalar or per cell.
pub enum SystemDiagonal {
    Scalar(f64),
    PerCell(Vec<f64>),
}

impl SystemDiagonal {
    fn get(&self, k: usize) -> f64 {
        match self {
            SystemDiagonal::Scalar(v) => *v,
            SystemDiagonal::PerCell(v) => v[k],
        }
    }
}

/// Number of band-storage entries above which the direct factorization is
/// abandoned in favor of conjugate gradients.
const DIRECT_STORAGE_LIMIT: usize = 20_000_000;

/// Solver for systems `(diag(alpha) - scale * A) x = b`.
///
/// Uses a banded Cholesky factorization (computed once and reused) on
/// meshes of moderate size and a Jacobi-preconditioned conjugate gradient
/// beyond [`DIRECT_STORAGE_LIMIT`] band entries.
pub enum SpdSolver {
    Direct(BandCholesky),
    Iterative { op: DiffusionOperator, alpha: SystemDiagonal, scale: f64, diag: Vec<f64>, rel_tol: f64 },
}

impl SpdSolver {
    pub fn new(
        op: &DiffusionOperator,
        alpha: SystemDiagonal,
        scale: f64,
        rel_tol: f64,
    ) -> Result<Self, MeshError> {
        let n = op.n_cells();
        if n * (op.bandwidth() + 1) <= DIRECT_STORAGE_LIMIT {
            let band = op.system_band(&alpha, scale);
            Ok(SpdSolver::Direct(band.cholesky()?))
        } else {
            let diag = op.system_diag(&alpha, scale);
            Ok(SpdSolver::Iterative { op: op.clone(), alpha, scale, diag, rel_tol })
        }
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<(), MeshError> {
        match self {
            SpdSolver::Direct(chol) => {
                chol.solve_in_place(x);
                Ok(())
            }
            SpdSolver::Iterative { op, alpha, scale, diag, rel_tol } => {
                let b = x.to_vec();
                let apply = |u: &[f64], out: &mut [f64]| {
                    op.apply_linear(u, out);
                    for k in 0..u.len() {
                        out[k] = alpha.get(k) * u[k] - *scale * out[k];
                    }
                };
                x.fill(0.0);
                conjugate_gradient(apply, diag, &b, x, *rel_tol, 20 * b.len())?;
                Ok(())
            }
        }
    }
}
