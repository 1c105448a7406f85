//! Areal adjacency structure: symmetric 0/1 neighbor matrices over regions,
//! regular grids, file formats for edges and coordinates, and the directed
//! nearest-neighbor sets used by the sparse directed-process family.

use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::{extreme_eigenvalues, SparseMatrix};

/// Undirected region adjacency. `w` is symmetric with zero diagonal and
/// entries in {0,1}; every region has at least one neighbor.
#[derive(Clone, Debug)]
pub struct AdjacencyGraph {
    n: usize,
    w: SparseMatrix,
    degrees: Vec<f64>,
    coords: Option<Vec<(f64, f64)>>,
    warnings: Vec<String>,
}

impl AdjacencyGraph {
    /// Builds from an undirected edge list over regions `0..n`. Duplicate
    /// edges (in either orientation) collapse to a single neighbor relation.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least 2 regions, got {n}"
            )));
        }
        let mut trips = Vec::with_capacity(edges.len() * 2);
        for &(i, j) in edges {
            if i == j {
                return Err(Error::InvalidEdge(format!("self loop at region {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::InvalidEdge(format!(
                    "edge ({i}, {j}) outside 0..{n}"
                )));
            }
            trips.push((i, j, 1.0));
            trips.push((j, i, 1.0));
        }
        let mut w = SparseMatrix::from_triplets(n, n, trips)?;
        // duplicate edges summed above; clamp back to 0/1
        w = SparseMatrix::from_triplets(n, n, w.triplets().map(|(i, j, _)| (i, j, 1.0)))?;
        let degrees: Vec<f64> = (0..n).map(|i| w.row(i).1.iter().sum()).collect();
        if let Some(i) = degrees.iter().position(|&d| d == 0.0) {
            return Err(Error::IsolatedRegion(i));
        }
        let mut warnings = Vec::new();
        let components = count_components(n, &w);
        if components > 1 {
            warnings.push(format!(
                "graph is disconnected ({components} components); \
                 results are per-component"
            ));
        }
        Ok(AdjacencyGraph {
            n,
            w,
            degrees,
            coords: None,
            warnings,
        })
    }

    /// Regular rows x cols grid with rook (4-neighbor) adjacency, regions
    /// indexed row-major, coordinates evenly spaced on [0,1] x [0,1].
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidDimension(format!(
                "grid must be at least 2x2, got {rows}x{cols}"
            )));
        }
        let mut edges = Vec::with_capacity(2 * rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                }
            }
        }
        Self::lattice(rows, cols, edges)
    }

    /// Regular rows x cols grid with queen (8-neighbor) adjacency: rook
    /// neighbors plus the diagonals. Same indexing and coordinates as
    /// [`AdjacencyGraph::grid`].
    pub fn grid_queen(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidDimension(format!(
                "grid must be at least 2x2, got {rows}x{cols}"
            )));
        }
        let mut edges = Vec::with_capacity(4 * rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                    if c + 1 < cols {
                        edges.push((id, id + cols + 1));
                    }
                    if c > 0 {
                        edges.push((id, id + cols - 1));
                    }
                }
            }
        }
        Self::lattice(rows, cols, edges)
    }

    fn lattice(rows: usize, cols: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut g = Self::from_edges(rows * cols, &edges)?;
        let coords = (0..rows * cols)
            .map(|id| {
                let (r, c) = (id / cols, id % cols);
                (c as f64 / (cols - 1) as f64, r as f64 / (rows - 1) as f64)
            })
            .collect();
        g.coords = Some(coords);
        Ok(g)
    }

    /// Reads a whitespace-separated `i j` edge list (0-based region ids, `#`
    /// comments and blank lines allowed); n is inferred as max id + 1.
    pub fn from_edge_list_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut edges = Vec::new();
        let display = path.display().to_string();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut it = body.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.ok_or_else(|| Error::Parse {
                    path: display.clone(),
                    line: lineno + 1,
                    msg: "expected two region ids".into(),
                })?
                .parse()
                .map_err(|e| Error::Parse {
                    path: display.clone(),
                    line: lineno + 1,
                    msg: format!("{e}"),
                })
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Parse {
                    path: display,
                    line: lineno + 1,
                    msg: "expected exactly two region ids".into(),
                });
            }
            edges.push((i, j));
        }
        if edges.is_empty() {
            return Err(Error::Parse {
                path: display,
                line: 0,
                msg: "no edges".into(),
            });
        }
        let n = edges.iter().map(|&(i, j)| i.max(j)).max().unwrap() + 1;
        Self::from_edges(n, &edges)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# undirected edges, one `i j` pair per line, 0-based")?;
        for (i, j, _) in self.w.triplets() {
            if i < j {
                writeln!(out, "{i} {j}")?;
            }
        }
        Ok(())
    }

    /// Attaches planar coordinates (one per region, in region order).
    pub fn with_coords(mut self, coords: Vec<(f64, f64)>) -> Result<Self> {
        if coords.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates for {} regions",
                coords.len(),
                self.n
            )));
        }
        if coords.iter().any(|c| !c.0.is_finite() || !c.1.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> &SparseMatrix {
        &self.w
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn edge_count(&self) -> usize {
        self.w.nnz() / 2
    }

    pub fn coords(&self) -> Option<&[(f64, f64)]> {
        self.coords.as_deref()
    }

    /// Non-fatal construction diagnostics (currently: disconnectedness).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.w.row(i).0
    }

    /// Row-normalized adjacency A = D^{-1} W (each row sums to one).
    pub fn neighbor_average(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.n,
            self.n,
            self.w.triplets().map(|(i, j, v)| (i, j, v / self.degrees[i])),
        )
        .expect("valid pattern")
    }

    /// Symmetric normalization D^{-1/2} W D^{-1/2}; shares its spectrum with
    /// the row-normalized adjacency.
    pub fn normalized_adjacency(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.n,
            self.n,
            self.w.triplets().map(|(i, j, v)| {
                (i, j, v / (self.degrees[i] * self.degrees[j]).sqrt())
            }),
        )
        .expect("valid pattern")
    }

    /// Open interval of valid conditional-autoregression coefficients:
    /// (1/lambda_min, 1/lambda_max) over the normalized adjacency spectrum.
    /// The upper endpoint is 1 whenever every component has an edge.
    pub fn car_rho_range(&self) -> Result<(f64, f64)> {
        let (lo, hi) = extreme_eigenvalues(&self.normalized_adjacency())?;
        if !(lo < 0.0 && hi > 0.0) {
            return Err(Error::NumericalFailure(format!(
                "adjacency spectrum [{lo}, {hi}] does not straddle zero"
            )));
        }
        Ok((1.0 / lo, 1.0 / hi))
    }
}

fn count_components(n: usize, w: &SparseMatrix) -> usize {
    let mut seen = vec![false; n];
    let mut stack = Vec::new();
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for &j in w.row(i).0 {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    components
}

/// Reads a `id,x,y` coordinates CSV (header required, ids must be exactly
/// 0..n-1 in any order).
pub fn read_coords_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for rec in rdr.deserialize() {
        let (id, x, y): (usize, f64, f64) = rec?;
        rows.push((id, x, y));
    }
    let n = rows.len();
    let mut coords = vec![None; n];
    for (id, x, y) in rows {
        if id >= n || coords[id].is_some() {
            return Err(Error::InvalidInput(format!(
                "coordinate ids must cover 0..{n} exactly once (bad id {id})"
            )));
        }
        coords[id] = Some((x, y));
    }
    Ok(coords.into_iter().map(|c| c.unwrap()).collect())
}

pub fn write_coords_csv(coords: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "id,x,y")?;
    for (id, (x, y)) in coords.iter().enumerate() {
        writeln!(out, "{id},{x},{y}")?;
    }
    Ok(())
}

/// Directed nearest-neighbor conditioning sets: each location conditions on
/// up to `m` of its nearest predecessors in a fixed ordering.
#[derive(Clone, Debug)]
pub struct DirectedNeighborSets {
    /// order[r] = location index holding rank r
    order: Vec<usize>,
    /// rank[i] = position of location i in the ordering
    rank: Vec<usize>,
    /// sets[i] = conditioning set of location i (indices with earlier rank)
    sets: Vec<Vec<usize>>,
    m: usize,
}

impl DirectedNeighborSets {
    pub fn n(&self) -> usize {
        self.order.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rank(&self, i: usize) -> usize {
        self.rank[i]
    }

    pub fn set(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    /// Test/diagnostic constructor from explicit sets; validates the
    /// earlier-rank property.
    pub fn from_parts(order: Vec<usize>, sets: Vec<Vec<usize>>, m: usize) -> Result<Self> {
        let n = order.len();
        if sets.len() != n {
            return Err(Error::ShapeMismatch("one set per location".into()));
        }
        let mut rank = vec![usize::MAX; n];
        for (r, &i) in order.iter().enumerate() {
            if i >= n || rank[i] != usize::MAX {
                return Err(Error::InvalidInput("order must be a permutation".into()));
            }
            rank[i] = r;
        }
        let s = DirectedNeighborSets {
            order,
            rank,
            sets,
            m,
        };
        for i in 0..n {
            if s.sets[i].len() > m || s.sets[i].iter().any(|&j| s.rank[j] >= s.rank[i]) {
                return Err(Error::InvalidInput(format!(
                    "set of location {i} violates the earlier-rank property"
                )));
            }
        }
        Ok(s)
    }
}

/// Builds directed neighbor sets for planar locations, ordered by first
/// coordinate (ties by second, then index). Each location keeps its
/// min(rank, m) nearest earlier-ordered locations in Euclidean distance;
/// distance ties go to the lowest location index. Duplicate coordinates are
/// allowed here and only fail later, when a correlation matrix over a
/// conditioning set turns singular.
pub fn build_neighbor_sets(coords: &[(f64, f64)], m: usize) -> Result<DirectedNeighborSets> {
    let n = coords.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        coords[a]
            .0
            .partial_cmp(&coords[b].0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                coords[a]
                    .1
                    .partial_cmp(&coords[b].1)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    build_neighbor_sets_with_order(coords, m, order)
}

/// Same as [`build_neighbor_sets`] but with a caller-supplied visiting order
/// (a permutation of 0..n).
pub fn build_neighbor_sets_with_order(
    coords: &[(f64, f64)],
    m: usize,
    order: Vec<usize>,
) -> Result<DirectedNeighborSets> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 locations, got {n}"
        )));
    }
    if m == 0 {
        return Err(Error::ParameterRange("neighbor cap m must be >= 1".into()));
    }
    if coords.iter().any(|c| !c.0.is_finite() || !c.1.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinate".into()));
    }
    if order.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "ordering of length {} for {} locations",
            order.len(),
            n
        )));
    }
    let mut rank = vec![usize::MAX; n];
    for (r, &i) in order.iter().enumerate() {
        if i >= n || rank[i] != usize::MAX {
            return Err(Error::InvalidInput("order must be a permutation".into()));
        }
        rank[i] = r;
    }

    let dist2 = |a: usize, b: usize| {
        let dx = coords[a].0 - coords[b].0;
        let dy = coords[a].1 - coords[b].1;
        dx * dx + dy * dy
    };
    let mut sets = vec![Vec::new(); n];
    for r in 1..n {
        let i = order[r];
        let mut cand: Vec<(f64, usize)> = (0..r)
            .map(|s| {
                let j = order[s];
                (dist2(i, j), j)
            })
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        cand.truncate(m.min(r));
        let mut set: Vec<usize> = cand.into_iter().map(|c| c.1).collect();
        set.sort_unstable();
        sets[i] = set;
    }

    Ok(DirectedNeighborSets {
        order,
        rank,
        sets,
        m,
    })
}
