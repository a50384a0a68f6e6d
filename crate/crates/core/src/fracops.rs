//! Grids, region masks and the discrete fractional operator.
//!
//! Nodes sit at cell centres of a uniform lattice covering the box `Ω` plus a
//! collar of exterior nodes. The operator is the `s`-th spectral power of the
//! standard second-order Dirichlet Laplacian on the whole truncated box,
//! scaled by the uniform mass weight `m = h^dim`:
//!
//! ```text
//! A = Q Δ Qᵀ,   L = m · Q Δ^s Qᵀ
//! ```
//!
//! The eigenpairs of `A` are known in closed form (sine modes), so assembly
//! never calls a dense eigensolver.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Potential;
use crate::linalg::submatrix;
use crate::scalar::Scalar;

const GRID_SNAP: f64 = 1e-6;

/// Uniform grid covering `Ω` (an axis-aligned box) and a truncated exterior collar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub omega_lo: Vec<f64>,
    pub omega_hi: Vec<f64>,
    pub collar_width: f64,
    pub h: f64,
}

impl GridSpec {
    /// `Ω = (0, 1)` with `n_interior` nodes and `collar_nodes` exterior nodes on each side.
    pub fn interval(n_interior: usize, collar_nodes: usize) -> Self {
        let h = 1.0 / n_interior as f64;
        Self {
            dim: 1,
            omega_lo: vec![0.0],
            omega_hi: vec![1.0],
            collar_width: collar_nodes as f64 * h,
            h,
        }
    }

    /// `Ω = (0, 1)²` with `n_per_axis²` interior nodes.
    pub fn square(n_per_axis: usize, collar_nodes: usize) -> Self {
        let h = 1.0 / n_per_axis as f64;
        Self {
            dim: 2,
            omega_lo: vec![0.0, 0.0],
            omega_hi: vec![1.0, 1.0],
            collar_width: collar_nodes as f64 * h,
            h,
        }
    }

    pub fn layout(&self) -> Result<GridLayout> {
        GridLayout::new(self)
    }

    /// Uniform mass weight `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }
}

fn snap_count(len: f64, h: f64, what: &str) -> Result<usize> {
    let raw = len / h;
    let n = raw.round();
    if !(raw.is_finite()) || (raw - n).abs() > GRID_SNAP * raw.abs().max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "{what} = {len} is not an integer multiple of h = {h}"
        )));
    }
    Ok(n as usize)
}

/// Derived node bookkeeping for a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub dim: usize,
    pub h: f64,
    /// Nodes per axis over the whole truncated box.
    pub axis_len: Vec<usize>,
    /// Interior nodes per axis.
    pub interior_len: Vec<usize>,
    pub collar_nodes: usize,
    /// Coordinate of the first node along each axis.
    pub origin: Vec<f64>,
    /// Global indices of interior nodes, ascending.
    pub interior: Vec<usize>,
    /// Global indices of exterior nodes, ascending.
    pub exterior: Vec<usize>,
    pub omega_lo: Vec<f64>,
    pub omega_hi: Vec<f64>,
}

impl GridLayout {
    fn new(grid: &GridSpec) -> Result<Self> {
        if grid.dim != 1 && grid.dim != 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {}", grid.dim)));
        }
        if grid.omega_lo.len() != grid.dim || grid.omega_hi.len() != grid.dim {
            return Err(Error::InvalidGrid("omega box has wrong dimension".into()));
        }
        if !(grid.h > 0.0) || !grid.h.is_finite() {
            return Err(Error::InvalidGrid(format!("h must be positive, got {}", grid.h)));
        }
        if grid.collar_width < 2.0 * grid.h * (1.0 - GRID_SNAP) {
            return Err(Error::InvalidGrid(format!(
                "collar width {} is smaller than 2h = {}",
                grid.collar_width,
                2.0 * grid.h
            )));
        }
        let collar = snap_count(grid.collar_width, grid.h, "collar width")?;
        let mut interior_len = Vec::with_capacity(grid.dim);
        for ax in 0..grid.dim {
            let len = grid.omega_hi[ax] - grid.omega_lo[ax];
            if !(len > 0.0) {
                return Err(Error::InvalidGrid("omega box has non-positive extent".into()));
            }
            interior_len.push(snap_count(len, grid.h, "omega extent")?);
        }
        let axis_len: Vec<usize> = interior_len.iter().map(|n| n + 2 * collar).collect();
        let origin: Vec<f64> = (0..grid.dim)
            .map(|ax| grid.omega_lo[ax] - (collar as f64 - 0.5) * grid.h)
            .collect();

        let total: usize = axis_len.iter().product();
        let mut interior = Vec::new();
        let mut exterior = Vec::new();
        for k in 0..total {
            let idx = multi_index(k, &axis_len);
            let inside = (0..grid.dim).all(|ax| idx[ax] >= collar && idx[ax] < collar + interior_len[ax]);
            if inside {
                interior.push(k);
            } else {
                exterior.push(k);
            }
        }
        if interior.is_empty() || exterior.is_empty() {
            return Err(Error::GridTooSmall {
                n_interior: interior.len(),
                n_exterior: exterior.len(),
            });
        }
        Ok(Self {
            dim: grid.dim,
            h: grid.h,
            axis_len,
            interior_len,
            collar_nodes: collar,
            origin,
            interior,
            exterior,
            omega_lo: grid.omega_lo.clone(),
            omega_hi: grid.omega_hi.clone(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.axis_len.iter().product()
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_exterior(&self) -> usize {
        self.exterior.len()
    }

    /// Physical coordinates of global node `k`.
    pub fn coords(&self, k: usize) -> Vec<f64> {
        multi_index(k, &self.axis_len)
            .iter()
            .enumerate()
            .map(|(ax, &i)| self.origin[ax] + i as f64 * self.h)
            .collect()
    }

    pub fn interior_coords(&self) -> Vec<Vec<f64>> {
        self.interior.iter().map(|&k| self.coords(k)).collect()
    }

    pub fn exterior_coords(&self) -> Vec<Vec<f64>> {
        self.exterior.iter().map(|&k| self.coords(k)).collect()
    }

    /// Euclidean distance from a point to the box `Ω`.
    pub fn distance_to_omega(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(ax, &xi)| {
                let d = (self.omega_lo[ax] - xi).max(xi - self.omega_hi[ax]).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Row-major multi-index (first axis slowest).
fn multi_index(mut k: usize, axis_len: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; axis_len.len()];
    for ax in (0..axis_len.len()).rev() {
        idx[ax] = k % axis_len[ax];
        k /= axis_len[ax];
    }
    idx
}

/// Discretization recipe tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Scheme {
    /// Spectral power of the discrete Dirichlet Laplacian on the truncated box.
    #[default]
    #[serde(rename = "spectral-power")]
    SpectralPower,
}

/// Geometric region in physical coordinates. Membership is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        // absorbs round-off in node coordinates sitting exactly on a boundary
        const EPS: f64 = 1e-12;
        match self {
            Region::Box { lo, hi } => x
                .iter()
                .enumerate()
                .all(|(ax, &xi)| xi >= lo[ax] - EPS && xi <= hi[ax] + EPS),
            Region::Ball { center, radius } => {
                let d2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() <= radius + EPS
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Region::Box { lo, .. } => lo.len(),
            Region::Ball { center, .. } => center.len(),
        }
    }
}

/// Subset of interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub flags: Vec<bool>,
    /// Mass weight of a single node.
    pub cell_volume: f64,
}

impl RegionMask {
    pub fn full(n_interior: usize, cell_volume: f64) -> Self {
        Self {
            flags: vec![true; n_interior],
            cell_volume,
        }
    }

    pub fn empty(n_interior: usize, cell_volume: f64) -> Self {
        Self {
            flags: vec![false; n_interior],
            cell_volume,
        }
    }

    pub fn from_indices(n_interior: usize, cell_volume: f64, idx: &[usize]) -> Self {
        let mut mask = Self::empty(n_interior, cell_volume);
        for &i in idx {
            mask.flags[i] = true;
        }
        mask
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn measure(&self) -> f64 {
        self.cell_volume * self.count() as f64
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&i| self.flags[i]).collect()
    }

    pub fn complement(&self) -> Self {
        Self {
            flags: self.flags.iter().map(|f| !f).collect(),
            cell_volume: self.cell_volume,
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            flags: self.flags.iter().zip(&other.flags).map(|(a, b)| *a || *b).collect(),
            cell_volume: self.cell_volume,
        }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        Self {
            flags: self.flags.iter().zip(&other.flags).map(|(a, b)| *a && *b).collect(),
            cell_volume: self.cell_volume,
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.flags.iter().zip(&other.flags).all(|(a, b)| !*a || *b)
    }

    /// `|A ∩ B| / |A ∪ B|`, defined as 1 for two empty masks.
    pub fn jaccard(&self, other: &Self) -> f64 {
        let inter = self.intersection(other).count();
        let uni = self.union(other).count();
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// 0/1 indicator over interior nodes.
    pub fn indicator<T: Scalar>(&self) -> DVector<T> {
        DVector::from_iterator(
            self.flags.len(),
            self.flags.iter().map(|&f| if f { T::one() } else { T::zero() }),
        )
    }
}

/// Flags the interior nodes lying in `region`.
pub fn mask_from_region(grid: &GridSpec, region: &Region) -> Result<RegionMask> {
    let layout = grid.layout()?;
    if region.dim() != grid.dim {
        return Err(Error::DimensionMismatch {
            what: "region dimension",
            expected: grid.dim,
            got: region.dim(),
        });
    }
    let flags: Vec<bool> = layout
        .interior
        .iter()
        .map(|&k| region.contains(&layout.coords(k)))
        .collect();
    let mask = RegionMask {
        flags,
        cell_volume: grid.cell_volume(),
    };
    if mask.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(mask)
}

/// Partition of `Ω` into a tensor grid of equal boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Cells per axis.
    pub shape: Vec<usize>,
    /// Cell index of every interior node.
    pub cell_of: Vec<usize>,
    pub cell_volume: f64,
    pub cell_width: Vec<f64>,
    pub omega_lo: Vec<f64>,
}

impl Partition {
    pub fn uniform(grid: &GridSpec, shape: &[usize]) -> Result<Self> {
        let layout = grid.layout()?;
        if shape.len() != grid.dim {
            return Err(Error::DimensionMismatch {
                what: "partition shape",
                expected: grid.dim,
                got: shape.len(),
            });
        }
        if shape.iter().any(|&k| k == 0) {
            return Err(Error::EmptyPartition);
        }
        let cell_width: Vec<f64> = (0..grid.dim)
            .map(|ax| (grid.omega_hi[ax] - grid.omega_lo[ax]) / shape[ax] as f64)
            .collect();
        let cell_of = layout
            .interior
            .iter()
            .map(|&k| {
                let x = layout.coords(k);
                let mut flat = 0;
                for ax in 0..grid.dim {
                    let c = ((x[ax] - grid.omega_lo[ax]) / cell_width[ax]).floor() as isize;
                    let c = c.clamp(0, shape[ax] as isize - 1) as usize;
                    flat = flat * shape[ax] + c;
                }
                flat
            })
            .collect();
        let part = Self {
            shape: shape.to_vec(),
            cell_of,
            cell_volume: grid.cell_volume(),
            cell_width,
            omega_lo: grid.omega_lo.clone(),
        };
        if (0..part.n_cells()).any(|c| part.cell_mask(c).is_empty()) {
            return Err(Error::InvalidParameter(
                "partition is finer than the grid: some cells hold no node".into(),
            ));
        }
        Ok(part)
    }

    pub fn n_cells(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn n_interior(&self) -> usize {
        self.cell_of.len()
    }

    pub fn cell_mask(&self, cell: usize) -> RegionMask {
        RegionMask {
            flags: self.cell_of.iter().map(|&c| c == cell).collect(),
            cell_volume: self.cell_volume,
        }
    }

    pub fn cell_masks(&self) -> Vec<RegionMask> {
        (0..self.n_cells()).map(|c| self.cell_mask(c)).collect()
    }

    /// Union of the given cells.
    pub fn union_mask(&self, cells: &[usize]) -> RegionMask {
        RegionMask {
            flags: self.cell_of.iter().map(|c| cells.contains(c)).collect(),
            cell_volume: self.cell_volume,
        }
    }

    fn cell_multi_index(&self, cell: usize) -> Vec<usize> {
        multi_index(cell, &self.shape)
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        self.cell_multi_index(cell)
            .iter()
            .enumerate()
            .map(|(ax, &i)| self.omega_lo[ax] + (i as f64 + 0.5) * self.cell_width[ax])
            .collect()
    }

    /// Cells within Chebyshev distance one of `cell` (including itself).
    pub fn neighbors(&self, cell: usize) -> Vec<usize> {
        let me = self.cell_multi_index(cell);
        (0..self.n_cells())
            .filter(|&other| {
                self.cell_multi_index(other)
                    .iter()
                    .zip(&me)
                    .all(|(a, b)| a.abs_diff(*b) <= 1)
            })
            .collect()
    }

    /// Union of the one-cell neighbourhoods of `cells`.
    pub fn dilate(&self, cells: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = cells.iter().flat_map(|&c| self.neighbors(c)).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Partition-constant potential with `values[c]` on cell `c`.
    pub fn potential<T: Scalar>(&self, values: &[T]) -> Result<Potential<T>> {
        if values.len() != self.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "cell values",
                expected: self.n_cells(),
                got: values.len(),
            });
        }
        let v = DVector::from_iterator(self.cell_of.len(), self.cell_of.iter().map(|&c| values[c]));
        Potential::new(v).map(|p| p.with_partition_id(format!("partition{:?}", self.shape)))
    }
}

/// Discrete fractional operator with its interior/exterior block structure.
#[derive(Debug, Clone)]
pub struct NonlocalOperator<T: Scalar> {
    pub s: T,
    pub scheme: Scheme,
    pub grid: GridSpec,
    pub layout: GridLayout,
    /// Uniform mass weight `h^dim`.
    pub mass: T,
    /// Full symmetric PSD operator over all nodes.
    pub matrix: DMatrix<T>,
    pub l_ii: DMatrix<T>,
    pub l_ie: DMatrix<T>,
    pub l_ee: DMatrix<T>,
}

impl<T: Scalar> NonlocalOperator<T> {
    pub fn n_interior(&self) -> usize {
        self.layout.n_interior()
    }

    pub fn n_exterior(&self) -> usize {
        self.layout.n_exterior()
    }

    pub fn n_nodes(&self) -> usize {
        self.layout.n_nodes()
    }

    pub fn interior(&self) -> &[usize] {
        &self.layout.interior
    }

    pub fn exterior(&self) -> &[usize] {
        &self.layout.exterior
    }

    /// Assembles a full node vector from interior and exterior parts.
    pub fn join(&self, interior: &DVector<T>, exterior: &DVector<T>) -> Result<DVector<T>> {
        check_len("interior vector", self.n_interior(), interior.len())?;
        check_len("exterior vector", self.n_exterior(), exterior.len())?;
        let mut u = DVector::zeros(self.n_nodes());
        for (i, &k) in self.layout.interior.iter().enumerate() {
            u[k] = interior[i];
        }
        for (i, &k) in self.layout.exterior.iter().enumerate() {
            u[k] = exterior[i];
        }
        Ok(u)
    }

    pub fn interior_part(&self, u: &DVector<T>) -> DVector<T> {
        crate::linalg::gather(u, &self.layout.interior)
    }

    pub fn exterior_part(&self, u: &DVector<T>) -> DVector<T> {
        crate::linalg::gather(u, &self.layout.exterior)
    }

    pub fn full_mask(&self) -> RegionMask {
        RegionMask::full(self.n_interior(), self.grid.cell_volume())
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// Closed-form Dirichlet eigenpairs of the 1D three-point Laplacian with `n` nodes.
fn dirichlet_modes_1d(n: usize, h: f64) -> (Vec<f64>, DMatrix<f64>) {
    let np1 = (n + 1) as f64;
    let values = (1..=n)
        .map(|k| 4.0 / (h * h) * (k as f64 * PI / (2.0 * np1)).sin().powi(2))
        .collect();
    let norm = (2.0 / np1).sqrt();
    let vectors = DMatrix::from_fn(n, n, |j, k| {
        norm * (((j + 1) * (k + 1)) as f64 * PI / np1).sin()
    });
    (values, vectors)
}

/// Standard `(2·dim+1)`-point negative Laplacian on the truncated box with
/// homogeneous Dirichlet condition beyond it, scaled by `1/h²`.
pub fn dirichlet_laplacian<T: Scalar>(grid: &GridSpec) -> Result<DMatrix<T>> {
    let layout = grid.layout()?;
    let n = layout.n_nodes();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let idx = multi_index(k, &layout.axis_len);
        a[(k, k)] = T::lit(2.0 * grid.dim as f64 * inv_h2);
        let mut stride = 1;
        for ax in (0..grid.dim).rev() {
            if idx[ax] + 1 < layout.axis_len[ax] {
                a[(k, k + stride)] = T::lit(-inv_h2);
                a[(k + stride, k)] = T::lit(-inv_h2);
            }
            stride *= layout.axis_len[ax];
        }
    }
    Ok(a)
}

/// Builds the discrete fractional operator `L = m · A^s`.
pub fn assemble_operator<T: Scalar>(
    grid: &GridSpec,
    s: f64,
    scheme: Scheme,
) -> Result<NonlocalOperator<T>> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidOrder(s));
    }
    let layout = grid.layout()?;
    let n = layout.n_nodes();
    let (values, vectors) = match scheme {
        Scheme::SpectralPower => tensor_modes(&layout),
    };
    let mass = grid.cell_volume();

    let mut scaled = DMatrix::<T>::zeros(n, n);
    let mut q = DMatrix::<T>::zeros(n, n);
    for k in 0..n {
        let w = mass * values[k].powf(s);
        for i in 0..n {
            q[(i, k)] = T::lit(vectors[(i, k)]);
            scaled[(i, k)] = T::lit(vectors[(i, k)] * w);
        }
    }
    let l = scaled * q.transpose();
    let matrix = crate::linalg::symmetrize(&l);
    let l_ii = submatrix(&matrix, &layout.interior, &layout.interior);
    let l_ie = submatrix(&matrix, &layout.interior, &layout.exterior);
    let l_ee = submatrix(&matrix, &layout.exterior, &layout.exterior);
    Ok(NonlocalOperator {
        s: T::lit(s),
        scheme,
        grid: grid.clone(),
        layout,
        mass: T::lit(mass),
        matrix,
        l_ii,
        l_ie,
        l_ee,
    })
}

/// Eigenpairs of the Kronecker-sum Laplacian, in `f64`.
fn tensor_modes(layout: &GridLayout) -> (Vec<f64>, DMatrix<f64>) {
    let modes: Vec<_> = layout
        .axis_len
        .iter()
        .map(|&n| dirichlet_modes_1d(n, layout.h))
        .collect();
    let n: usize = layout.n_nodes();
    let mut values = vec![0.0; n];
    let mut vectors = DMatrix::zeros(n, n);
    // mode index and node index share the row-major multi-index layout
    for mode in 0..n {
        let kidx = multi_index(mode, &layout.axis_len);
        values[mode] = kidx.iter().enumerate().map(|(ax, &k)| modes[ax].0[k]).sum();
        for node in 0..n {
            let jidx = multi_index(node, &layout.axis_len);
            vectors[(node, mode)] = jidx
                .iter()
                .zip(&kidx)
                .enumerate()
                .map(|(ax, (&j, &k))| modes[ax].1[(j, k)])
                .product();
        }
    }
    (values, vectors)
}

/// `uᵀ L w + Σ_{i∈I} m q_i u_i w_i` for full node vectors.
pub fn bilinear_form<T: Scalar>(
    op: &NonlocalOperator<T>,
    q: &Potential<T>,
    u: &DVector<T>,
    w: &DVector<T>,
) -> Result<T> {
    check_len("u", op.n_nodes(), u.len())?;
    check_len("w", op.n_nodes(), w.len())?;
    check_len("potential", op.n_interior(), q.len())?;
    let mut value = u.dot(&(&op.matrix * w));
    for (i, &k) in op.layout.interior.iter().enumerate() {
        value += op.mass * q.values[i] * u[k] * w[k];
    }
    Ok(value)
}
