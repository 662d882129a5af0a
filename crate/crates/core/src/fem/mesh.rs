use crate::error::{Error, Result};
use crate::fem::quadrature::Kink;
use crate::geometry::ReferenceCell;

/// Structured quadrilateral mesh with an active-element mask and (possibly
/// mapped) vertex coordinates.
///
/// Vertex `(i, j)` has index `j (nx+1) + i`; element `(i, j)` has index
/// `j nx + i` and vertices counter-clockwise from its lower-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadMesh {
    pub origin: [f64; 2],
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    active: Vec<bool>,
    vertices: Vec<[f64; 2]>,
    cell_period: Option<usize>,
}

impl QuadMesh {
    pub fn structured(origin: [f64; 2], h: f64, nx: usize, ny: usize) -> Self {
        let vertices = (0..(nx + 1) * (ny + 1))
            .map(|v| {
                let (i, j) = (v % (nx + 1), v / (nx + 1));
                [origin[0] + i as f64 * h, origin[1] + j as f64 * h]
            })
            .collect();
        QuadMesh {
            origin,
            h,
            nx,
            ny,
            active: vec![true; nx * ny],
            vertices,
            cell_period: None,
        }
    }

    /// `n × n` mesh of the unit square.
    pub fn unit_square(n: usize) -> Self {
        Self::structured([0.0, 0.0], 1.0 / n as f64, n, n)
    }

    /// Declares that the mesh tiles periodicity cells of `n × n` elements, which
    /// enables kink-aware quadrature on the cell diagonals.
    pub fn with_cell_period(mut self, n: usize) -> Self {
        self.cell_period = Some(n);
        self
    }

    pub fn cell_period(&self) -> Option<usize> {
        self.cell_period
    }

    pub fn with_mask(mut self, active: Vec<bool>) -> Result<Self> {
        if active.len() != self.n_elements() {
            return Err(Error::ResolutionMismatch(format!(
                "mask has {} entries for {} elements",
                active.len(),
                self.n_elements()
            )));
        }
        self.active = active;
        Ok(self)
    }

    /// Removes the elements inside the hole of every periodicity cell of `n × n`
    /// elements; also sets the cell period.
    pub fn perforate(self, cell: &ReferenceCell, n: usize) -> Result<Self> {
        cell.check_alignment(n)?;
        if self.nx % n != 0 || self.ny % n != 0 {
            return Err(Error::Tiling(format!(
                "mesh {}×{} is not a multiple of the cell resolution {n}",
                self.nx, self.ny
            )));
        }
        let nx = self.nx;
        let mask = (0..self.n_elements())
            .map(|e| !cell.element_in_hole(n, (e % nx) % n, (e / nx) % n))
            .collect();
        Ok(self.with_mask(mask)?.with_cell_period(n))
    }

    /// Replaces every vertex `v` by `f(v)`.
    pub fn map_vertices(mut self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        for v in &mut self.vertices {
            *v = f(*v);
        }
        self
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_vertices(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    #[inline]
    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn vertex_ij(&self, v: usize) -> [usize; 2] {
        [v % (self.nx + 1), v / (self.nx + 1)]
    }

    #[inline]
    pub fn element_ij(&self, e: usize) -> [usize; 2] {
        [e % self.nx, e / self.nx]
    }

    #[inline]
    pub fn element_vertices(&self, e: usize) -> [usize; 4] {
        let [i, j] = self.element_ij(e);
        [
            self.vertex_index(i, j),
            self.vertex_index(i + 1, j),
            self.vertex_index(i + 1, j + 1),
            self.vertex_index(i, j + 1),
        ]
    }

    #[inline]
    pub fn is_active(&self, e: usize) -> bool {
        self.active[e]
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Unmapped (structured) position of vertex `v`.
    #[inline]
    pub fn reference_vertex(&self, v: usize) -> [f64; 2] {
        let [i, j] = self.vertex_ij(v);
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
        ]
    }

    /// Unmapped position of local coordinate `ξ ∈ [0,1]²` in element `e`.
    #[inline]
    pub fn reference_point(&self, e: usize, xi: [f64; 2]) -> [f64; 2] {
        let [i, j] = self.element_ij(e);
        [
            self.origin[0] + (i as f64 + xi[0]) * self.h,
            self.origin[1] + (j as f64 + xi[1]) * self.h,
        ]
    }

    /// Diagonals of the periodicity cell crossing element `e`.
    pub fn kink(&self, e: usize) -> Kink {
        let Some(n) = self.cell_period else {
            return Kink::None;
        };
        let [i, j] = self.element_ij(e);
        let (a, b) = (i % n, j % n);
        match (a == b, a + b + 1 == n) {
            (false, false) => Kink::None,
            (true, false) => Kink::Main,
            (false, true) => Kink::Anti,
            (true, true) => Kink::Both,
        }
    }

    /// Whether any vertex has been moved from its structured position.
    pub fn is_mapped(&self) -> bool {
        (0..self.n_vertices()).any(|v| self.vertices[v] != self.reference_vertex(v))
    }

    /// Total area of active elements in mapped coordinates (exact for bilinear quads).
    pub fn active_area(&self) -> f64 {
        (0..self.n_elements())
            .filter(|e| self.active[*e])
            .map(|e| {
                let v = self.element_vertices(e).map(|k| self.vertices[k]);
                let mut a = 0.0;
                for k in 0..4 {
                    let (p, q) = (v[k], v[(k + 1) % 4]);
                    a += p[0] * q[1] - q[0] * p[1];
                }
                0.5 * a
            })
            .sum()
    }
}
