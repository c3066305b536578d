//! Structured tensor meshes: intervals in 1D, axis-aligned rectangles in 2D.
//!
//! Elements are stored x-fastest; faces are enumerated deterministically
//! (all x-normal faces, then all y-normal faces), so every loop over the mesh
//! is reproducible bit-for-bit. Faces carry two distinct size numbers: the
//! geometric extent used for integration and the stabilization measure
//! `|e_k|` used in penalty weights (in 1D the minimum of the two adjacent
//! element sizes, so the weight stays robust on graded meshes).

use crate::error::{Error, Result};

/// Rectangular domain and cell counts. For 1D set `dim = 1`; the y entries
/// are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub dim: usize,
    /// `bounds[axis] = [lo, hi]`.
    pub bounds: [[f64; 2]; 2],
    pub cells: [usize; 2],
}

impl DomainSpec {
    pub fn interval(lo: f64, hi: f64, cells: usize) -> Self {
        DomainSpec {
            dim: 1,
            bounds: [[lo, hi], [0.0, 0.0]],
            cells: [cells, 1],
        }
    }

    pub fn rectangle(x: [f64; 2], y: [f64; 2], cells: [usize; 2]) -> Self {
        DomainSpec {
            dim: 2,
            bounds: [x, y],
            cells,
        }
    }
}

/// Polynomial degree assignment.
#[derive(Debug, Clone)]
pub enum DegreeSpec {
    Uniform(usize),
    PerElement(Vec<usize>),
}

/// Axis-aligned element, stored by its corner coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Element {
    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn center(&self, axis: usize) -> f64 {
        0.5 * (self.lo[axis] + self.hi[axis])
    }

    /// Map master-cell coordinates in [-1,1]^dim to physical coordinates.
    pub fn to_physical(&self, local: [f64; 2], dim: usize) -> [f64; 2] {
        let mut x = [0.0; 2];
        for a in 0..dim {
            x[a] = self.center(a) + 0.5 * self.extent(a) * local[a];
        }
        x
    }

    /// Inverse of [`Element::to_physical`].
    pub fn to_local(&self, x: [f64; 2], dim: usize) -> [f64; 2] {
        let mut l = [0.0; 2];
        for a in 0..dim {
            l[a] = (x[a] - self.center(a)) / (0.5 * self.extent(a));
        }
        l
    }
}

/// A mesh face: a point in 1D, an axis-aligned segment in 2D.
///
/// The face normal points along `axis`. `lo_elem` is the adjacent element on
/// the lower side of the face, `hi_elem` on the upper side; boundary faces
/// have exactly one of them. The exterior normal of `lo_elem` on this face is
/// `+1` along `axis`, that of `hi_elem` is `-1` — interior faces therefore
/// reference exactly two elements with opposite unit normals by construction.
#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub axis: usize,
    pub lo_elem: Option<usize>,
    pub hi_elem: Option<usize>,
    /// Coordinate of the face along `axis`.
    pub position: f64,
    /// Extent along the tangential axis (2D only).
    pub tspan: [f64; 2],
    /// Stabilization measure `|e_k|`.
    pub stab_measure: f64,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.lo_elem.is_none() || self.hi_elem.is_none()
    }

    /// Geometric length used as the integration weight (1 for point faces).
    pub fn length(&self, dim: usize) -> f64 {
        if dim == 1 {
            1.0
        } else {
            self.tspan[1] - self.tspan[0]
        }
    }

    /// The element whose trace is taken on a boundary face.
    pub fn interior_elem(&self) -> usize {
        self.lo_elem.or(self.hi_elem).expect("face with no element")
    }

    /// Outward normal sign along `axis` for the given adjacent element.
    pub fn outward_sign(&self, elem: usize) -> f64 {
        if self.lo_elem == Some(elem) {
            1.0
        } else {
            -1.0
        }
    }
}

/// Structured DG mesh with per-element polynomial degrees.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    cells: [usize; 2],
    bounds: [[f64; 2]; 2],
    elements: Vec<Element>,
    faces: Vec<Face>,
    degrees: Vec<usize>,
    dof_offsets: Vec<usize>,
}

/// Grid line `k` of `n` cells spanning `[lo, hi]`; endpoints are returned
/// exactly so refinement reproduces the outer boundary bit-for-bit.
fn grid_coord(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if k == 0 {
        lo
    } else if k == n {
        hi
    } else {
        lo + (k as f64) * (hi - lo) / (n as f64)
    }
}

impl Mesh {
    pub fn build(spec: &DomainSpec, degrees: &DegreeSpec) -> Result<Mesh> {
        if spec.dim != 1 && spec.dim != 2 {
            return Err(Error::MeshBuild(format!("dim must be 1 or 2, got {}", spec.dim)));
        }
        let cells = if spec.dim == 1 {
            [spec.cells[0], 1]
        } else {
            spec.cells
        };
        for a in 0..spec.dim {
            if cells[a] == 0 {
                return Err(Error::MeshBuild(format!("zero cells along axis {a}")));
            }
            let [lo, hi] = spec.bounds[a];
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::MeshBuild(format!(
                    "invalid bounds [{lo}, {hi}] along axis {a}"
                )));
            }
        }

        let (nx, ny) = (cells[0], if spec.dim == 2 { cells[1] } else { 1 });
        let n_elems = nx * ny;

        let deg = match degrees {
            DegreeSpec::Uniform(p) => vec![*p; n_elems],
            DegreeSpec::PerElement(v) => {
                if v.len() != n_elems {
                    return Err(Error::MeshBuild(format!(
                        "degree list has {} entries for {} elements",
                        v.len(),
                        n_elems
                    )));
                }
                v.clone()
            }
        };

        let [xlo, xhi] = spec.bounds[0];
        let [ylo, yhi] = spec.bounds[1];
        let xs: Vec<f64> = (0..=nx).map(|k| grid_coord(xlo, xhi, nx, k)).collect();
        let ys: Vec<f64> = if spec.dim == 2 {
            (0..=ny).map(|k| grid_coord(ylo, yhi, ny, k)).collect()
        } else {
            vec![0.0, 0.0]
        };

        let mut elements = Vec::with_capacity(n_elems);
        for j in 0..ny {
            for i in 0..nx {
                elements.push(Element {
                    lo: [xs[i], ys[j]],
                    hi: [xs[i + 1], ys[j + 1]],
                });
            }
        }

        let elem_at = |i: isize, j: isize| -> Option<usize> {
            if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                None
            } else {
                Some(j as usize * nx + i as usize)
            }
        };

        let mut faces = Vec::new();
        // x-normal faces.
        for j in 0..ny {
            for line in 0..=nx {
                let lo_elem = elem_at(line as isize - 1, j as isize);
                let hi_elem = elem_at(line as isize, j as isize);
                let stab = if spec.dim == 1 {
                    let lo_h = lo_elem.map(|e| elements[e].extent(0));
                    let hi_h = hi_elem.map(|e| elements[e].extent(0));
                    match (lo_h, hi_h) {
                        (Some(a), Some(b)) => a.min(b),
                        (Some(a), None) => a,
                        (None, Some(b)) => b,
                        (None, None) => unreachable!(),
                    }
                } else {
                    ys[j + 1] - ys[j]
                };
                faces.push(Face {
                    axis: 0,
                    lo_elem,
                    hi_elem,
                    position: xs[line],
                    tspan: [ys[j], ys[j + 1]],
                    stab_measure: stab,
                });
            }
        }
        // y-normal faces.
        if spec.dim == 2 {
            for line in 0..=ny {
                for i in 0..nx {
                    let lo_elem = elem_at(i as isize, line as isize - 1);
                    let hi_elem = elem_at(i as isize, line as isize);
                    faces.push(Face {
                        axis: 1,
                        lo_elem,
                        hi_elem,
                        position: ys[line],
                        tspan: [xs[i], xs[i + 1]],
                        stab_measure: xs[i + 1] - xs[i],
                    });
                }
            }
        }

        let mut dof_offsets = Vec::with_capacity(n_elems + 1);
        let mut acc = 0;
        for &p in &deg {
            dof_offsets.push(acc);
            acc += (p + 1).pow(spec.dim as u32);
        }
        dof_offsets.push(acc);

        Ok(Mesh {
            dim: spec.dim,
            cells,
            bounds: spec.bounds,
            elements,
            faces,
            degrees: deg,
            dof_offsets,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_dofs(&self) -> usize {
        *self.dof_offsets.last().unwrap()
    }

    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn bounds(&self) -> [[f64; 2]; 2] {
        self.bounds
    }

    pub fn element(&self, i: usize) -> Result<&Element> {
        self.elements.get(i).ok_or(Error::ElementIndex {
            index: i,
            len: self.elements.len(),
        })
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn degree(&self, elem: usize) -> usize {
        self.degrees[elem]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Number of local basis functions on an element.
    pub fn local_dofs(&self, elem: usize) -> usize {
        (self.degrees[elem] + 1).pow(self.dim as u32)
    }

    /// Global index of the first coefficient of an element.
    pub fn dof_offset(&self, elem: usize) -> usize {
        self.dof_offsets[elem]
    }

    /// Element diameter.
    pub fn element_size(&self, elem: usize) -> f64 {
        let e = &self.elements[elem];
        if self.dim == 1 {
            e.extent(0)
        } else {
            e.extent(0).hypot(e.extent(1))
        }
    }

    /// Element volume (length in 1D, area in 2D).
    pub fn element_measure(&self, elem: usize) -> f64 {
        let e = &self.elements[elem];
        (0..self.dim).map(|a| e.extent(a)).product()
    }

    pub fn domain_measure(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.bounds[a][1] - self.bounds[a][0])
            .product()
    }

    /// Largest element diameter; the `h` reported in study tables.
    pub fn h_max(&self) -> f64 {
        (0..self.n_elements())
            .map(|i| self.element_size(i))
            .fold(0.0, f64::max)
    }

    /// Stable structural fingerprint (dimension, cells, bounds, degrees).
    /// Used to reject kernels and layouts built on a different mesh.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(64 + self.degrees.len());
        bytes.extend_from_slice(&(self.dim as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.cells[0] as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.cells[1] as u64).to_le_bytes());
        for a in 0..2 {
            for s in 0..2 {
                bytes.extend_from_slice(&self.bounds[a][s].to_bits().to_le_bytes());
            }
        }
        for &p in &self.degrees {
            bytes.extend_from_slice(&(p as u32).to_le_bytes());
        }
        crate::util::fnv1a64(&bytes)
    }

    /// Face degree `p_k`: maximum degree of the adjacent elements.
    pub fn face_degree(&self, face: &Face) -> usize {
        let lo = face.lo_elem.map(|e| self.degrees[e]).unwrap_or(0);
        let hi = face.hi_elem.map(|e| self.degrees[e]).unwrap_or(0);
        lo.max(hi)
    }

    /// Locate the element containing `x` (boundary points resolve to the
    /// adjacent upper element except at the domain's upper edge).
    pub fn locate(&self, x: [f64; 2]) -> Option<usize> {
        let mut idx = [0usize; 2];
        for a in 0..self.dim {
            let [lo, hi] = self.bounds[a];
            if x[a] < lo || x[a] > hi {
                return None;
            }
            let n = self.cells[a];
            let t = ((x[a] - lo) / (hi - lo) * n as f64).floor() as isize;
            idx[a] = t.clamp(0, n as isize - 1) as usize;
        }
        Some(idx[1] * self.cells[0] + idx[0])
    }

    /// Uniformly refine: every cell count doubles, degrees are inherited by
    /// the children, and the outer boundary is reproduced bit-for-bit.
    pub fn refine_uniform(&self) -> Mesh {
        let new_cells = [
            self.cells[0] * 2,
            if self.dim == 2 { self.cells[1] * 2 } else { 1 },
        ];
        let spec = DomainSpec {
            dim: self.dim,
            bounds: self.bounds,
            cells: new_cells,
        };
        let mut deg = vec![0usize; new_cells[0] * new_cells[1].max(1)];
        let nx2 = new_cells[0];
        for j in 0..self.cells[1] {
            for i in 0..self.cells[0] {
                let parent = self.degrees[j * self.cells[0] + i];
                for dj in 0..if self.dim == 2 { 2 } else { 1 } {
                    for di in 0..2 {
                        deg[(2 * j + dj) * nx2 + 2 * i + di] = parent;
                    }
                }
            }
        }
        Mesh::build(&spec, &DegreeSpec::PerElement(deg)).expect("refinement of a valid mesh")
    }
}
