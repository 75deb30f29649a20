//! The n-sheeted covering of the plane branched over q- = (-1,0) and q+ = (1,0),
//! its geodesic distance, and the staggered finite-difference grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const Q_MINUS: (f64, f64) = (-1.0, 0.0);
pub const Q_PLUS: (f64, f64) = (1.0, 0.0);

/// Nudge applied in y to segments that run exactly through a branch point.
pub const BRANCH_NUDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveringSpec {
    pub num_sheets: usize,
}

impl Default for CoveringSpec {
    fn default() -> Self {
        CoveringSpec { num_sheets: 2 }
    }
}

impl CoveringSpec {
    pub fn new(num_sheets: usize) -> Result<Self> {
        if num_sheets < 2 {
            return Err(Error::InvalidParameter(format!(
                "num_sheets must be at least 2, got {num_sheets}"
            )));
        }
        Ok(CoveringSpec { num_sheets })
    }

    /// Sheet reached after one upward crossing of the cut.
    pub fn monodromy(&self, k: usize) -> usize {
        (k + 1) % self.num_sheets
    }

    pub fn monodromy_inv(&self, k: usize) -> usize {
        (k + self.num_sheets - 1) % self.num_sheets
    }

    /// Applies the monodromy `m` times (negative = downward crossings).
    pub fn monodromy_pow(&self, k: usize, m: i64) -> usize {
        let n = self.num_sheets as i64;
        ((k as i64 + m).rem_euclid(n)) as usize
    }

    pub fn branch_points(&self) -> [(f64, f64); 2] {
        [Q_MINUS, Q_PLUS]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        !is_branch_point(x, y)
    }
}

fn is_branch_point(x: f64, y: f64) -> bool {
    y == 0.0 && (x == 1.0 || x == -1.0)
}

fn on_open_cut(x: f64, y: f64) -> bool {
    y == 0.0 && x > -1.0 && x < 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SheetPoint {
    pub x: f64,
    pub y: f64,
    pub sheet: usize,
}

impl SheetPoint {
    /// Points on the open cut are kept as given and read as the limit from below.
    pub fn new(x: f64, y: f64, sheet: usize, spec: &CoveringSpec) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidPoint(format!("non-finite coordinate ({x}, {y})")));
        }
        if is_branch_point(x, y) {
            return Err(Error::InvalidPoint(format!("({x}, {y}) is a branch point")));
        }
        if sheet >= spec.num_sheets {
            return Err(Error::InvalidPoint(format!(
                "sheet {sheet} out of range for {} sheets",
                spec.num_sheets
            )));
        }
        Ok(SheetPoint { x, y, sheet })
    }

    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn is_on_cut(&self) -> bool {
        on_open_cut(self.x, self.y)
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Number of transversal crossings of the open cut by the segment p1 -> p2.
pub fn crossing_parity(p1: (f64, f64), p2: (f64, f64)) -> Result<u32> {
    for p in [p1, p2] {
        if on_open_cut(p.0, p.1) {
            return Err(Error::EndpointOnCut(p.0, p.1));
        }
    }
    if through_branch_point(p1, p2) {
        return Err(Error::SegmentThroughBranchPoint);
    }
    Ok(signed_crossing(p1, p2).unsigned_abs())
}

fn through_branch_point(p1: (f64, f64), p2: (f64, f64)) -> bool {
    [Q_MINUS, Q_PLUS].iter().any(|&q| {
        let cross = (p2.0 - p1.0) * (q.1 - p1.1) - (p2.1 - p1.1) * (q.0 - p1.0);
        if cross != 0.0 {
            return false;
        }
        let dot = (q.0 - p1.0) * (p2.0 - p1.0) + (q.1 - p1.1) * (p2.1 - p1.1);
        let len2 = (p2.0 - p1.0).powi(2) + (p2.1 - p1.1).powi(2);
        dot >= 0.0 && dot <= len2
    })
}

/// Side of the cut line: +1 above, -1 below, 0 on the axis outside the cut.
/// Points on the open cut count as below.
fn side(p: (f64, f64)) -> i32 {
    if p.1 > 0.0 {
        1
    } else if p.1 < 0.0 || on_open_cut(p.0, p.1) {
        -1
    } else {
        0
    }
}

/// +1 for an upward crossing of the open cut, -1 downward, 0 otherwise.
/// Cut endpoints are read from below; the caller removes branch-point hits.
fn signed_crossing(p1: (f64, f64), p2: (f64, f64)) -> i32 {
    let (s1, s2) = (side(p1), side(p2));
    if s1 * s2 >= 0 {
        return 0;
    }
    let t = (0.0 - p1.1) / (p2.1 - p1.1);
    let xc = if p1.1 == 0.0 {
        p1.0
    } else if p2.1 == 0.0 {
        p2.0
    } else {
        p1.0 + t * (p2.0 - p1.0)
    };
    if xc.abs() < 1.0 {
        if s2 > s1 {
            1
        } else {
            -1
        }
    } else {
        0
    }
}

/// Net sheet shift along the straight segment, with the nudge rule applied when
/// the segment meets a branch point.
fn segment_shift(p1: (f64, f64), p2: (f64, f64)) -> i32 {
    if through_branch_point(p1, p2) {
        let n1 = (p1.0, p1.1 + BRANCH_NUDGE);
        let n2 = (p2.0, p2.1 + BRANCH_NUDGE);
        signed_crossing(n1, n2)
    } else {
        signed_crossing(p1, p2)
    }
}

/// Which candidate realized the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceRoute {
    Direct,
    ViaMinus,
    ViaPlus,
}

pub fn geodesic_distance(p1: &SheetPoint, p2: &SheetPoint, spec: &CoveringSpec) -> f64 {
    geodesic_distance_route(p1, p2, spec).0
}

pub fn geodesic_distance_route(
    p1: &SheetPoint,
    p2: &SheetPoint,
    spec: &CoveringSpec,
) -> (f64, DistanceRoute) {
    let (a, b) = (p1.xy(), p2.xy());
    let mut best = (dist(a, Q_MINUS) + dist(Q_MINUS, b), DistanceRoute::ViaMinus);
    let plus = dist(a, Q_PLUS) + dist(Q_PLUS, b);
    if plus < best.0 {
        best = (plus, DistanceRoute::ViaPlus);
    }
    let shift = segment_shift(a, b);
    if spec.monodromy_pow(p1.sheet, shift as i64) == p2.sheet {
        let d = dist(a, b);
        if d <= best.0 {
            best = (d, DistanceRoute::Direct);
        }
    }
    best
}

/// Planar distances to q- and q+.
pub fn distance_to_branch_points(p: &SheetPoint) -> (f64, f64) {
    (dist(p.xy(), Q_MINUS), dist(p.xy(), Q_PLUS))
}

/// Where the cut sits relative to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CutLayout {
    /// Cut [-1,1] x {0} between q- and q+.
    Segment,
    /// Single branch point at the origin, cut along the negative x-axis.
    NegativeAxis,
    /// No cut: the sheets are disjoint planes.
    Decoupled,
}

impl CutLayout {
    /// Whether a vertical edge at abscissa x joining the rows y = -h/2 and y = h/2 crosses the cut.
    pub fn crosses(&self, x: f64) -> bool {
        match self {
            CutLayout::Segment => x.abs() < 1.0,
            CutLayout::NegativeAxis => x < 0.0,
            CutLayout::Decoupled => false,
        }
    }
}

/// Staggered grid over the box [-lx, lx] x [-ly, ly] on every sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchedGrid {
    pub spec: CoveringSpec,
    pub h: f64,
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub layout: CutLayout,
}

pub const DIR_XP: usize = 0;
pub const DIR_XM: usize = 1;
pub const DIR_YP: usize = 2;
pub const DIR_YM: usize = 3;

pub fn build_grid(spec: CoveringSpec, l: f64, h: f64) -> Result<BranchedGrid> {
    build_grid_rect(spec, l, l, h)
}

/// Rectangular variant: half extents lx and ly may differ.
pub fn build_grid_rect(spec: CoveringSpec, lx: f64, ly: f64, h: f64) -> Result<BranchedGrid> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("spacing h = {h} must be positive")));
    }
    for l in [lx, ly] {
        if !(l > 4.0) {
            return Err(Error::ExtentTooSmall(l));
        }
    }
    check_branch_avoidance(h)?;
    let nx = 2 * (lx / h - 1e-9).ceil() as usize;
    let ny = 2 * (ly / h - 1e-9).ceil() as usize;
    Ok(BranchedGrid {
        spec,
        h,
        lx,
        ly,
        nx,
        ny,
        layout: CutLayout::Segment,
    })
}

/// Rejects h when some node column (i+1/2)h equals +-1.
pub fn check_branch_avoidance(h: f64) -> Result<()> {
    let r = 1.0 / h - 0.5;
    if r >= -1e-12 && (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0) {
        return Err(Error::BranchPointOnGrid(h));
    }
    Ok(())
}

impl BranchedGrid {
    pub fn num_sheets(&self) -> usize {
        self.spec.num_sheets
    }

    pub fn nodes_per_sheet(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_nodes(&self) -> usize {
        self.num_sheets() * self.nodes_per_sheet()
    }

    pub fn index(&self, sheet: usize, i: usize, j: usize) -> usize {
        sheet * self.nx * self.ny + j * self.nx + i
    }

    /// (sheet, i, j) of a node id.
    pub fn unpack(&self, id: usize) -> (usize, usize, usize) {
        let per = self.nx * self.ny;
        let sheet = id / per;
        let r = id % per;
        (sheet, r % self.nx, r / self.nx)
    }

    pub fn x_of(&self, i: usize) -> f64 {
        (i as f64 - (self.nx / 2) as f64 + 0.5) * self.h
    }

    pub fn y_of(&self, j: usize) -> f64 {
        (j as f64 - (self.ny / 2) as f64 + 0.5) * self.h
    }

    pub fn coords(&self, id: usize) -> (f64, f64) {
        let (_, i, j) = self.unpack(id);
        (self.x_of(i), self.y_of(j))
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x_of(i)).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.ny).map(|j| self.y_of(j)).collect()
    }

    /// Row just below the cut line (y = -h/2).
    pub fn cut_row(&self) -> usize {
        self.ny / 2 - 1
    }

    /// Neighbor in direction DIR_*, or None at the Dirichlet boundary.
    pub fn neighbor(&self, id: usize, dir: usize) -> Option<usize> {
        let (k, i, j) = self.unpack(id);
        match dir {
            DIR_XP => (i + 1 < self.nx).then(|| self.index(k, i + 1, j)),
            DIR_XM => (i > 0).then(|| self.index(k, i - 1, j)),
            DIR_YP => {
                if j + 1 >= self.ny {
                    None
                } else if j == self.cut_row() && self.layout.crosses(self.x_of(i)) {
                    Some(self.index(self.spec.monodromy(k), i, j + 1))
                } else {
                    Some(self.index(k, i, j + 1))
                }
            }
            DIR_YM => {
                if j == 0 {
                    None
                } else if j == self.cut_row() + 1 && self.layout.crosses(self.x_of(i)) {
                    Some(self.index(self.spec.monodromy_inv(k), i, j - 1))
                } else {
                    Some(self.index(k, i, j - 1))
                }
            }
            _ => None,
        }
    }

    pub fn neighbors(&self, id: usize) -> [Option<usize>; 4] {
        [
            self.neighbor(id, DIR_XP),
            self.neighbor(id, DIR_XM),
            self.neighbor(id, DIR_YP),
            self.neighbor(id, DIR_YM),
        ]
    }

    /// Corner nodes [(i,j), (i+1,j), (i,j+1), (i+1,j+1)] of the cell with lower-left
    /// node (i,j) on sheet k, read in one chart. None if the cell holds a branch point
    /// or leaves the box.
    pub fn cell(&self, k: usize, i: usize, j: usize) -> Option<[usize; 4]> {
        if i + 1 >= self.nx || j + 1 >= self.ny {
            return None;
        }
        let a = self.index(k, i, j);
        let b = self.index(k, i + 1, j);
        if j == self.cut_row() {
            let c0 = self.layout.crosses(self.x_of(i));
            let c1 = self.layout.crosses(self.x_of(i + 1));
            if c0 != c1 {
                return None;
            }
            let up = if c0 { self.spec.monodromy(k) } else { k };
            Some([a, b, self.index(up, i, j + 1), self.index(up, i + 1, j + 1)])
        } else {
            Some([a, b, self.index(k, i, j + 1), self.index(k, i + 1, j + 1)])
        }
    }

    /// Whether the node lies in the outer margin of relative width `frac`.
    pub fn in_margin(&self, id: usize, frac: f64) -> bool {
        let (x, y) = self.coords(id);
        x.abs() > (1.0 - frac) * self.lx || y.abs() > (1.0 - frac) * self.ly
    }

    /// Adjacency list as CSV: node_id, sheet, x, y, neighbor_ids (';'-separated).
    pub fn adjacency_csv(&self) -> String {
        let mut out = String::from("node_id,sheet,x,y,neighbor_ids\n");
        for id in 0..self.num_nodes() {
            let (k, _, _) = self.unpack(id);
            let (x, y) = self.coords(id);
            let nb: Vec<String> = self
                .neighbors(id)
                .iter()
                .flatten()
                .map(|n| n.to_string())
                .collect();
            let _ = writeln!(out, "{id},{k},{x},{y},{}", nb.join(";"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(x: f64, y: f64, k: usize) -> SheetPoint {
        SheetPoint::new(x, y, k, &CoveringSpec::default()).unwrap()
    }

    #[test]
    fn crossing_examples() {
        assert_eq!(crossing_parity((0.0, -1.0), (0.0, 1.0)).unwrap(), 1);
        assert_eq!(crossing_parity((3.0, -1.0), (3.0, 1.0)).unwrap(), 0);
        assert_eq!(crossing_parity((-2.0, -1.0), (2.0, 1.0)).unwrap(), 1);
        assert_eq!(
            crossing_parity((0.0, -1.0), (2.0, 1.0)),
            Err(Error::SegmentThroughBranchPoint)
        );
        assert!(matches!(
            crossing_parity((0.5, 0.0), (0.0, 1.0)),
            Err(Error::EndpointOnCut(..))
        ));
    }

    #[test]
    fn distance_examples() {
        let spec = CoveringSpec::default();
        let d = geodesic_distance(&sp(0.0, 1.0, 0), &sp(0.0, -1.0, 0), &spec);
        assert!((d - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let d = geodesic_distance(&sp(0.0, 1.0, 0), &sp(0.0, -1.0, 1), &spec);
        assert!((d - 2.0).abs() < 1e-15);
        assert_eq!(geodesic_distance(&sp(0.3, 2.0, 1), &sp(0.3, 2.0, 1), &spec), 0.0);
    }

    #[test]
    fn same_place_other_sheet() {
        let spec = CoveringSpec::default();
        let (p, q) = (sp(0.4, 0.7, 0), sp(0.4, 0.7, 1));
        let (dm, dp) = distance_to_branch_points(&p);
        let d = geodesic_distance(&p, &q, &spec);
        assert!((d - 2.0 * dm.min(dp)).abs() < 1e-14);
    }

    #[test]
    fn cut_point_reads_from_below() {
        let spec = CoveringSpec::default();
        let on = sp(0.0, 0.0, 0);
        // straight down stays on sheet 0, straight up flips
        assert!((geodesic_distance(&on, &sp(0.0, -1.0, 0), &spec) - 1.0).abs() < 1e-15);
        assert!((geodesic_distance(&on, &sp(0.0, 1.0, 1), &spec) - 1.0).abs() < 1e-15);
        assert!(geodesic_distance(&on, &sp(0.0, 1.0, 0), &spec) > 1.4);
    }

    #[test]
    fn branch_distances() {
        let (a, b) = distance_to_branch_points(&sp(3.0, 0.0, 0));
        assert_eq!((a, b), (4.0, 2.0));
        let (a, b) = distance_to_branch_points(&sp(-1.0, 1.0, 1));
        assert!((a - 1.0).abs() < 1e-15 && (b - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn grid_construction() {
        let g = build_grid(CoveringSpec::default(), 8.0, 0.25).unwrap();
        assert_eq!(g.num_nodes(), 2 * 64 * 64);
        assert!(g.xs().iter().all(|x| (x.abs() - 1.0).abs() > 1e-9));
        assert!((g.x_of(32) - 0.125).abs() < 1e-15);
        assert_eq!(
            build_grid(CoveringSpec::default(), 8.0, 2.0 / 7.0),
            Err(Error::BranchPointOnGrid(2.0 / 7.0))
        );
        assert!(matches!(
            build_grid(CoveringSpec::default(), 3.0, 0.25),
            Err(Error::ExtentTooSmall(_))
        ));
    }

    #[test]
    fn three_sheet_adjacency_advances_upward() {
        let spec = CoveringSpec::new(3).unwrap();
        let g = build_grid(spec, 8.0, 0.25).unwrap();
        let j = g.cut_row();
        let mut crossings = 0;
        for k in 0..3 {
            for i in 0..g.nx {
                let id = g.index(k, i, j);
                let up = g.neighbor(id, DIR_YP).unwrap();
                let (k2, i2, j2) = g.unpack(up);
                assert_eq!((i2, j2), (i, j + 1));
                if g.x_of(i).abs() < 1.0 {
                    assert_eq!(k2, (k + 1) % 3);
                    crossings += 1;
                } else {
                    assert_eq!(k2, k);
                }
                assert_eq!(g.neighbor(up, DIR_YM), Some(id));
            }
        }
        assert_eq!(crossings, 3 * 8);
    }

    #[test]
    fn adjacency_symmetric() {
        let g = build_grid(CoveringSpec::new(3).unwrap(), 4.5, 0.5).unwrap();
        for id in 0..g.num_nodes() {
            for (d, back) in [(DIR_XP, DIR_XM), (DIR_XM, DIR_XP), (DIR_YP, DIR_YM), (DIR_YM, DIR_YP)] {
                if let Some(n) = g.neighbor(id, d) {
                    assert_eq!(g.neighbor(n, back), Some(id));
                }
            }
        }
    }

    #[test]
    fn loop_around_branch_point() {
        // walk a small square around q+ through grid edges and record the sheet change
        let g = build_grid(CoveringSpec::new(3).unwrap(), 4.5, 0.25).unwrap();
        let i0 = (0..g.nx).find(|&i| g.x_of(i) > 0.8).unwrap();
        let i1 = (0..g.nx).find(|&i| g.x_of(i) > 1.2).unwrap();
        let j0 = g.cut_row() - 1;
        let j1 = g.cut_row() + 2;
        let mut id = g.index(0, i0, j0);
        let step = |dir: usize, n: usize, id: &mut usize| {
            for _ in 0..n {
                *id = g.neighbor(*id, dir).unwrap();
            }
        };
        // counterclockwise: right, up, left, down
        step(DIR_XP, i1 - i0, &mut id);
        step(DIR_YP, j1 - j0, &mut id);
        step(DIR_XM, i1 - i0, &mut id);
        step(DIR_YM, j1 - j0, &mut id);
        let (k, i, j) = g.unpack(id);
        assert_eq!((i, j), (i0, j0));
        assert_eq!(k, 2);
    }

    #[test]
    fn cell_containing_branch_point_is_skipped() {
        let g = build_grid(CoveringSpec::default(), 4.5, 0.125).unwrap();
        let j = g.cut_row();
        let skipped: Vec<usize> = (0..g.nx - 1).filter(|&i| g.cell(0, i, j).is_none()).collect();
        assert_eq!(skipped.len(), 2);
        for i in skipped {
            let (a, b) = (g.x_of(i), g.x_of(i + 1));
            assert!((a < -1.0 && b > -1.0) || (a < 1.0 && b > 1.0));
        }
    }
}
