//! Labeled polytope workspaces and their uniform grid abstraction.

use std::path::Path as FsPath;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpOutcome, Relation};

pub const TOL_GEO: f64 = 1e-9;
pub const MAX_CELLS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proposition {
    Target,
    Obstacle,
    Free,
}

impl std::fmt::Display for Proposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Proposition::Target => "target",
            Proposition::Obstacle => "obstacle",
            Proposition::Free => "free",
        })
    }
}

/// `{p : C p <= b}` in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub c: Vec<[f64; 2]>,
    pub b: Vec<f64>,
}

impl Polytope {
    /// Builds and checks non-emptiness and boundedness.
    pub fn new(c: Vec<[f64; 2]>, b: Vec<f64>) -> Result<Self> {
        if c.len() != b.len() {
            return Err(Error::Domain(format!("{} rows in C but {} in b", c.len(), b.len())));
        }
        if c.len() < 3 {
            return Err(Error::Domain("a bounded planar polytope needs at least 3 rows".into()));
        }
        if !c.iter().flatten().chain(&b).all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite polytope coefficient".into()));
        }
        let p = Polytope { c, b };
        p.bounds()?;
        Ok(p)
    }

    pub fn from_box(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Self {
        assert!(xmin < xmax && ymin < ymax, "degenerate box");
        Polytope {
            c: vec![[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]],
            b: vec![-xmin, xmax, -ymin, ymax],
        }
    }

    pub fn rows(&self) -> usize {
        self.c.len()
    }

    pub fn contains(&self, p: Vector2<f64>, tol: f64) -> bool {
        self.c.iter().zip(&self.b).all(|(row, b)| row[0] * p.x + row[1] * p.y <= b + tol)
    }

    /// `[xmin, xmax, ymin, ymax]` if this is exactly the canonical box form.
    pub fn as_box(&self) -> Option<[f64; 4]> {
        if self.c.len() != 4 {
            return None;
        }
        // rows may come in any order and any positive scale
        let mut out = [f64::NAN; 4];
        for (row, b) in self.c.iter().zip(&self.b) {
            let (slot, v) = match (row[0], row[1]) {
                (a, 0.0) if a < 0.0 => (0, b / a),
                (a, 0.0) if a > 0.0 => (1, b / a),
                (0.0, a) if a < 0.0 => (2, b / a),
                (0.0, a) if a > 0.0 => (3, b / a),
                _ => return None,
            };
            if !out[slot].is_nan() {
                return None;
            }
            out[slot] = v;
        }
        Some(out)
    }

    /// Axis-aligned bounding box, computed by four LPs unless already a box.
    pub fn bounds(&self) -> Result<[f64; 4]> {
        if let Some(bx) = self.as_box() {
            if bx[0] > bx[1] || bx[2] > bx[3] {
                return Err(Error::Domain("empty polytope".into()));
            }
            return Ok(bx);
        }
        let mut out = [0.0; 4];
        for (k, dir) in [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]].iter().enumerate() {
            // free point split as p = p⁺ - p⁻
            let mut lp = LinearProgram::maximize(vec![dir[0], dir[1], -dir[0], -dir[1]]);
            for (row, b) in self.c.iter().zip(&self.b) {
                lp.add(vec![row[0], row[1], -row[0], -row[1]], Relation::Le, *b);
            }
            match solve_lp(&lp)? {
                LpOutcome::Optimal { value, .. } => out[k] = if k % 2 == 0 { -value } else { value },
                LpOutcome::Unbounded => return Err(Error::Domain("polytope is unbounded".into())),
                LpOutcome::Infeasible => return Err(Error::Domain("empty polytope".into())),
            }
        }
        Ok(out)
    }

    /// Largest `t` such that a point lies at depth `t` inside both polytopes
    /// (`None` when they do not even touch).
    fn common_depth(&self, other: &Polytope) -> Result<Option<f64>> {
        if let (Some(a), Some(b)) = (self.as_box(), other.as_box()) {
            let dx = a[1].min(b[1]) - a[0].max(b[0]);
            let dy = a[3].min(b[3]) - a[2].max(b[2]);
            let d = dx.min(dy) / 2.0;
            return Ok((d >= -TOL_GEO).then_some(d));
        }
        // variables: p⁺ (2), p⁻ (2), t⁺, t⁻
        let mut lp = LinearProgram::maximize(vec![0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        for poly in [self, other] {
            for (row, b) in poly.c.iter().zip(&poly.b) {
                let norm = (row[0] * row[0] + row[1] * row[1]).sqrt();
                lp.add(vec![row[0], row[1], -row[0], -row[1], norm, -norm], Relation::Le, *b);
            }
        }
        lp.add(vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0], Relation::Le, 1e6);
        match solve_lp(&lp)? {
            LpOutcome::Optimal { value, .. } => Ok((value >= -TOL_GEO).then_some(value)),
            _ => Ok(None),
        }
    }

    /// Interiors intersect with positive area.
    pub fn interiors_overlap(&self, other: &Polytope) -> Result<bool> {
        Ok(matches!(self.common_depth(other)?, Some(d) if d > TOL_GEO))
    }

    /// Closed sets intersect.
    pub fn touches(&self, other: &Polytope) -> Result<bool> {
        Ok(self.common_depth(other)?.is_some())
    }

    /// Every corner of `rect` satisfies this polytope's rows.
    fn contains_rect(&self, rect: [f64; 4], tol: f64) -> bool {
        [(rect[0], rect[2]), (rect[1], rect[2]), (rect[0], rect[3]), (rect[1], rect[3])]
            .iter()
            .all(|&(x, y)| self.contains(Vector2::new(x, y), tol))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub polytope: Polytope,
    pub proposition: Proposition,
}

impl Region {
    pub fn new(polytope: Polytope, proposition: Proposition) -> Self {
        Region { polytope, proposition }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub regions: Vec<Region>,
    /// Symmetric with a true diagonal.
    pub adjacency: Vec<Vec<bool>>,
    pub bbox: [f64; 4],
    /// End-effector start point, if the file designates one.
    pub start: Option<Vector2<f64>>,
}

impl Workspace {
    /// Regions must cover `bbox`; adjacency is "the closed regions touch".
    pub fn new(bbox: [f64; 4], regions: Vec<Region>) -> Result<Self> {
        if !(bbox[0] < bbox[1] && bbox[2] < bbox[3]) || !bbox.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("bad bounding box {bbox:?}")));
        }
        if regions.is_empty() {
            return Err(Error::Domain("workspace has no regions".into()));
        }
        let n = regions.len();
        let mut adjacency = vec![vec![false; n]; n];
        for i in 0..n {
            adjacency[i][i] = true;
            for j in i + 1..n {
                let t = regions[i].polytope.touches(&regions[j].polytope)?;
                adjacency[i][j] = t;
                adjacency[j][i] = t;
            }
        }
        Ok(Workspace { regions, adjacency, bbox, start: None })
    }

    /// Adds free rectangles for every part of `bbox` no given region covers.
    /// Given regions must be axis-aligned boxes.
    pub fn with_free_fill(bbox: [f64; 4], regions: Vec<Region>) -> Result<Self> {
        let mut regions = regions;
        let free = fill_free(bbox, &regions)?;
        regions.extend(free);
        Workspace::new(bbox, regions)
    }

    pub fn with_start(mut self, start: Vector2<f64>) -> Self {
        self.start = Some(start);
        self
    }

    /// Replaces the computed adjacency; must be square, symmetric, reflexive.
    pub fn with_adjacency(mut self, adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = self.regions.len();
        if adjacency.len() != n || adjacency.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("adjacency override has wrong shape".into()));
        }
        for i in 0..n {
            if !adjacency[i][i] {
                return Err(Error::Domain(format!("adjacency override: region {i} not self-adjacent")));
            }
            for j in 0..n {
                if adjacency[i][j] != adjacency[j][i] {
                    return Err(Error::Domain("adjacency override is not symmetric".into()));
                }
            }
        }
        self.adjacency = adjacency;
        Ok(self)
    }

    pub fn in_bbox(&self, p: Vector2<f64>) -> bool {
        p.x >= self.bbox[0] - TOL_GEO
            && p.x <= self.bbox[1] + TOL_GEO
            && p.y >= self.bbox[2] - TOL_GEO
            && p.y <= self.bbox[3] + TOL_GEO
    }

    /// Lowest-index region containing `p`.
    pub fn classify_point(&self, p: Vector2<f64>) -> Result<(usize, Proposition)> {
        if !self.in_bbox(p) || !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::OutOfWorkspace { x: p.x, y: p.y });
        }
        self.regions
            .iter()
            .position(|r| r.polytope.contains(p, TOL_GEO))
            .map(|i| (i, self.regions[i].proposition))
            .ok_or_else(|| Error::Spec(format!("point ({}, {}) lies in no region", p.x, p.y)))
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j]
    }

    /// Uniform grid with conservative obstacle labels.
    pub fn abstract_grid(&self, h: f64) -> Result<AbstractWorkspace> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Parameter(format!("cell size must be positive, got {h}")));
        }
        let (w, ht) = (self.bbox[1] - self.bbox[0], self.bbox[3] - self.bbox[2]);
        let nx = (w / h - 1e-9).ceil().max(1.0);
        let ny = (ht / h - 1e-9).ceil().max(1.0);
        if nx * ny > MAX_CELLS as f64 {
            return Err(Error::Resource(format!("{nx} x {ny} cells exceed the {MAX_CELLS} cell limit")));
        }
        let (nx, ny) = (nx as usize, ny as usize);
        let (hx, hy) = (w / nx as f64, ht / ny as f64);
        let region_bounds: Vec<[f64; 4]> = self.regions.iter().map(|r| r.polytope.bounds()).collect::<Result<_>>()?;
        let mut cells = Vec::with_capacity(nx * ny);
        for row in 0..ny {
            for col in 0..nx {
                let rect = [
                    self.bbox[0] + col as f64 * hx,
                    if col + 1 == nx { self.bbox[1] } else { self.bbox[0] + (col + 1) as f64 * hx },
                    self.bbox[2] + row as f64 * hy,
                    if row + 1 == ny { self.bbox[3] } else { self.bbox[2] + (row + 1) as f64 * hy },
                ];
                let poly = Polytope::from_box(rect[0], rect[1], rect[2], rect[3]);
                let centre = Vector2::new((rect[0] + rect[1]) / 2.0, (rect[2] + rect[3]) / 2.0);
                let (parent, _) = self.classify_point(centre)?;
                let mut overlaps_obstacle = false;
                for (r, rb) in self.regions.iter().zip(&region_bounds) {
                    if r.proposition != Proposition::Obstacle {
                        continue;
                    }
                    let bbox_overlap = rb[0] < rect[1] - TOL_GEO
                        && rb[1] > rect[0] + TOL_GEO
                        && rb[2] < rect[3] - TOL_GEO
                        && rb[3] > rect[2] + TOL_GEO;
                    if bbox_overlap && r.polytope.interiors_overlap(&poly)? {
                        overlaps_obstacle = true;
                        break;
                    }
                }
                let proposition = if overlaps_obstacle {
                    Proposition::Obstacle
                } else if self
                    .regions
                    .iter()
                    .any(|r| r.proposition == Proposition::Target && r.polytope.contains_rect(rect, 1e-7))
                {
                    Proposition::Target
                } else {
                    Proposition::Free
                };
                cells.push(Cell { rect, proposition, parent, row, col });
            }
        }
        Ok(AbstractWorkspace { bbox: self.bbox, nx, ny, hx, hy, cells, start: self.start })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: WorkspaceFile = toml::from_str(text).map_err(|e| Error::Parse(format!("workspace file: {e}")))?;
        file.build()
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = WorkspaceFile {
            bbox: self.bbox,
            start: self.start.map(|p| [p.x, p.y]),
            fill_free: false,
            regions: self
                .regions
                .iter()
                .map(|r| match r.polytope.as_box() {
                    Some(b) => RegionFile { proposition: r.proposition, rect: Some(b), c: None, b: None },
                    None => RegionFile {
                        proposition: r.proposition,
                        rect: None,
                        c: Some(r.polytope.c.clone()),
                        b: Some(r.polytope.b.clone()),
                    },
                })
                .collect(),
            adjacency: None,
        };
        toml::to_string(&file).expect("workspace serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    proposition: Proposition,
    /// `[xmin, xmax, ymin, ymax]` shorthand for a box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rect: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkspaceFile {
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<[f64; 2]>,
    /// Cover the rest of the box with free rectangles.
    #[serde(default)]
    fill_free: bool,
    regions: Vec<RegionFile>,
    /// Optional override as adjacent index pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adjacency: Option<Vec<[usize; 2]>>,
}

impl WorkspaceFile {
    fn build(self) -> Result<Workspace> {
        let mut regions = Vec::new();
        for (i, r) in self.regions.into_iter().enumerate() {
            let poly = match (r.rect, r.c, r.b) {
                (Some(b), None, None) => {
                    if !(b[0] < b[1] && b[2] < b[3]) {
                        return Err(Error::Domain(format!("region {i}: degenerate rect {b:?}")));
                    }
                    Polytope::from_box(b[0], b[1], b[2], b[3])
                }
                (None, Some(c), Some(b)) => Polytope::new(c, b)?,
                _ => return Err(Error::Parse(format!("region {i}: give either `rect` or both `c` and `b`"))),
            };
            regions.push(Region::new(poly, r.proposition));
        }
        let mut ws = if self.fill_free {
            Workspace::with_free_fill(self.bbox, regions)?
        } else {
            Workspace::new(self.bbox, regions)?
        };
        if let Some(pairs) = self.adjacency {
            let n = ws.regions.len();
            let mut adj = vec![vec![false; n]; n];
            for (i, row) in adj.iter_mut().enumerate() {
                row[i] = true;
            }
            for [i, j] in pairs {
                if i >= n || j >= n {
                    return Err(Error::Domain(format!("adjacency pair ({i}, {j}) out of range")));
                }
                adj[i][j] = true;
                adj[j][i] = true;
            }
            ws = ws.with_adjacency(adj)?;
        }
        if let Some([x, y]) = self.start {
            let p = Vector2::new(x, y);
            ws.classify_point(p)?;
            ws = ws.with_start(p);
        }
        Ok(ws)
    }
}

/// Free rectangles covering `bbox` minus the given (box) regions.
///
/// The plane is cut along every region edge; uncovered elementary cells are
/// merged along rows into maximal horizontal strips.
pub fn fill_free(bbox: [f64; 4], regions: &[Region]) -> Result<Vec<Region>> {
    let boxes: Vec<[f64; 4]> = regions
        .iter()
        .map(|r| {
            r.polytope
                .as_box()
                .ok_or_else(|| Error::Domain("free-space filling needs axis-aligned box regions".into()))
        })
        .collect::<Result<_>>()?;
    let cuts = |lo: f64, hi: f64, pick: &dyn Fn(&[f64; 4]) -> [f64; 2]| {
        let mut v = vec![lo, hi];
        for b in &boxes {
            for t in pick(b) {
                if t > lo && t < hi {
                    v.push(t);
                }
            }
        }
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < TOL_GEO);
        v
    };
    let xs = cuts(bbox[0], bbox[1], &|b| [b[0], b[1]]);
    let ys = cuts(bbox[2], bbox[3], &|b| [b[2], b[3]]);
    let mut out = Vec::new();
    for yw in ys.windows(2) {
        let mut run: Option<f64> = None;
        for (k, xw) in xs.windows(2).enumerate() {
            let (cx, cy) = ((xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0);
            let covered = boxes.iter().any(|b| cx > b[0] && cx < b[1] && cy > b[2] && cy < b[3]);
            if !covered && run.is_none() {
                run = Some(xw[0]);
            }
            let last = k + 2 == xs.len();
            if let Some(start) = run {
                if covered || last {
                    let end = if covered { xw[0] } else { xw[1] };
                    out.push(Region::new(Polytope::from_box(start, end, yw[0], yw[1]), Proposition::Free));
                    run = None;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// `[xmin, xmax, ymin, ymax]`.
    pub rect: [f64; 4],
    pub proposition: Proposition,
    /// Region of the original workspace holding the cell centre.
    pub parent: usize,
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn centre(&self) -> Vector2<f64> {
        Vector2::new((self.rect[0] + self.rect[1]) / 2.0, (self.rect[2] + self.rect[3]) / 2.0)
    }

    pub fn contains(&self, p: Vector2<f64>, tol: f64) -> bool {
        p.x >= self.rect[0] - tol && p.x <= self.rect[1] + tol && p.y >= self.rect[2] - tol && p.y <= self.rect[3] + tol
    }
}

/// Row-major grid of rectangular cells; cell id = `row * nx + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractWorkspace {
    pub bbox: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub cells: Vec<Cell>,
    pub start: Option<Vector2<f64>>,
}

impl AbstractWorkspace {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, id: usize) -> Result<&Cell> {
        self.cells.get(id).ok_or_else(|| Error::Domain(format!("no cell {id}")))
    }

    pub fn proposition(&self, id: usize) -> Proposition {
        self.cells[id].proposition
    }

    /// Lowest-index cell containing `p`.
    pub fn cell_at(&self, p: Vector2<f64>) -> Result<usize> {
        let inside = p.x >= self.bbox[0] - TOL_GEO
            && p.x <= self.bbox[1] + TOL_GEO
            && p.y >= self.bbox[2] - TOL_GEO
            && p.y <= self.bbox[3] + TOL_GEO;
        if !inside || !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::OutOfWorkspace { x: p.x, y: p.y });
        }
        let idx = |v: f64, lo: f64, h: f64, n: usize| {
            let t = ((v - lo) / h - 1e-9).floor();
            (t.max(0.0) as usize).min(n - 1)
        };
        let col = idx(p.x, self.bbox[0], self.hx, self.nx);
        let row = idx(p.y, self.bbox[2], self.hy, self.ny);
        Ok(row * self.nx + col)
    }

    pub fn start_cell(&self) -> Result<usize> {
        let p = self.start.ok_or_else(|| Error::Spec("workspace designates no start point".into()))?;
        self.cell_at(p)
    }

    /// 4-connected neighbours, excluding the cell itself.
    pub fn neighbors(&self, id: usize) -> Vec<usize> {
        let (row, col) = (id / self.nx, id % self.nx);
        let mut out = Vec::with_capacity(4);
        if row > 0 {
            out.push(id - self.nx);
        }
        if col > 0 {
            out.push(id - 1);
        }
        if col + 1 < self.nx {
            out.push(id + 1);
        }
        if row + 1 < self.ny {
            out.push(id + self.nx);
        }
        out
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        if i == j {
            return true;
        }
        let (ri, ci) = (i / self.nx, i % self.nx);
        let (rj, cj) = (j / self.nx, j % self.nx);
        ri.abs_diff(rj) + ci.abs_diff(cj) == 1
    }

    /// Dense adjacency matrix with a true diagonal.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| self.adjacent(i, j)).collect()).collect()
    }

    /// The cell's four rows `C p <= b`.
    pub fn region_constraints(&self, id: usize) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
        let r = self.cell(id)?.rect;
        let p = Polytope::from_box(r[0], r[1], r[2], r[3]);
        Ok((p.c, p.b))
    }

    pub fn ids_with(&self, prop: Proposition) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(move |(_, c)| c.proposition == prop).map(|(i, _)| i)
    }
}
