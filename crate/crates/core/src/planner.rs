//! Global planning: occupancy grids, exact-cost Dijkstra, sub-goal selection
//! and the navigation loop that hands sub-goals to the learned policy.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, Outcome, StepRecord};
use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Vec2};
use crate::net::ValuePolicy;
use crate::sim::{self, WorldState, ROBOT_RADIUS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub resolution: f64,
    pub d_sub: f64,
    pub deviation_threshold: f64,
    /// Obstacle inflation when rasterizing.
    pub inflation: f64,
    /// Forbid a diagonal move when either adjacent orthogonal cell is
    /// occupied instead of only when both are.
    pub strict_corners: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            resolution: 0.1,
            d_sub: 2.0,
            deviation_threshold: 0.5,
            inflation: ROBOT_RADIUS,
            strict_corners: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0
            && self.d_sub > 0.0
            && self.deviation_threshold > 0.0
            && self.inflation >= 0.0)
        {
            return Err(Error::InvalidArgument(
                "planner: resolution, d_sub and deviation_threshold must be positive, inflation non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Static obstacle shapes, in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Obstacle {
    Disc { center: Vec2, radius: f64 },
    Rect { min: Vec2, max: Vec2 },
}

/// Row-major binary occupancy; row 0 is the minimum-y row and cell `(c, r)`
/// covers `origin + [c, c+1) x [r, r+1)` times `resolution`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Vec2,
    pub cells: Vec<bool>,
}

pub type Cell = (usize, usize);

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Vec2) -> Self {
        assert!(
            width > 0 && height > 0 && resolution > 0.0,
            "grid dimensions must be positive"
        );
        OccupancyGrid {
            width,
            height,
            resolution,
            origin,
            cells: vec![false; width * height],
        }
    }

    /// Grid from rows of ASCII `0`/`1`, row 0 first.
    pub fn from_rows(rows: &[&[u8]], resolution: f64, origin: Vec2) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut g = OccupancyGrid::new(width, height, resolution, origin);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), width);
            for (c, &v) in row.iter().enumerate() {
                g.set((c, r), v == b'1');
            }
        }
        g
    }

    fn idx(&self, (c, r): Cell) -> usize {
        r * self.width + c
    }

    pub fn occupied(&self, cell: Cell) -> bool {
        self.cells[self.idx(cell)]
    }

    pub fn set(&mut self, cell: Cell, occupied: bool) {
        let i = self.idx(cell);
        self.cells[i] = occupied;
    }

    pub fn cell_center(&self, (c, r): Cell) -> Vec2 {
        self.origin
            + Vec2::new(
                (c as f64 + 0.5) * self.resolution,
                (r as f64 + 0.5) * self.resolution,
            )
    }

    /// Cell containing `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: Vec2) -> Option<Cell> {
        let q = (p - self.origin) * (1.0 / self.resolution);
        let (c, r) = (q.x.floor(), q.y.floor());
        (c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height)
            .then_some((c as usize, r as usize))
    }

    /// Free cell nearest to `p` by centre distance; ties to the lowest
    /// row-major index.
    pub fn nearest_free(&self, p: Vec2) -> Option<Cell> {
        let mut best: Option<(f64, Cell)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if !self.occupied((c, r)) {
                    let d = self.cell_center((c, r)).distance(p);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, (c, r)));
                    }
                }
            }
        }
        best.map(|(_, c)| c)
    }

    pub fn n_occupied(&self) -> usize {
        self.cells.iter().filter(|&&o| o).count()
    }
}

fn square_distance(p: Vec2, lo: Vec2, hi: Vec2) -> f64 {
    let dx = (lo.x - p.x).max(0.0).max(p.x - hi.x);
    let dy = (lo.y - p.y).max(0.0).max(p.y - hi.y);
    (dx * dx + dy * dy).sqrt()
}

fn rect_rect_distance(a_lo: Vec2, a_hi: Vec2, b_lo: Vec2, b_hi: Vec2) -> f64 {
    let dx = (b_lo.x - a_hi.x).max(a_lo.x - b_hi.x).max(0.0);
    let dy = (b_lo.y - a_hi.y).max(a_lo.y - b_hi.y).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// Marks every cell whose square overlaps an obstacle grown by `inflation`.
pub fn build_grid(
    width: usize,
    height: usize,
    resolution: f64,
    origin: Vec2,
    obstacles: &[Obstacle],
    inflation: f64,
) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(width, height, resolution, origin);
    for r in 0..height {
        for c in 0..width {
            let lo = origin + Vec2::new(c as f64 * resolution, r as f64 * resolution);
            let hi = lo + Vec2::new(resolution, resolution);
            let hit = obstacles.iter().any(|o| match *o {
                Obstacle::Disc { center, radius } => {
                    square_distance(center, lo, hi) < radius + inflation
                }
                Obstacle::Rect { min, max } => {
                    let d = rect_rect_distance(lo, hi, min, max);
                    d < inflation || overlaps(lo, hi, min, max)
                }
            });
            g.set((c, r), hit);
        }
    }
    g
}

fn overlaps(a_lo: Vec2, a_hi: Vec2, b_lo: Vec2, b_hi: Vec2) -> bool {
    a_lo.x < b_hi.x && b_lo.x < a_hi.x && a_lo.y < b_hi.y && b_lo.y < a_hi.y
}

/// Path cost as counts of straight and diagonal moves, compared exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct MoveCount {
    pub straight: u64,
    pub diagonal: u64,
}

impl MoveCount {
    pub fn length(self, resolution: f64) -> f64 {
        resolution * (self.straight as f64 + SQRT_2 * self.diagonal as f64)
    }
}

impl Ord for MoveCount {
    /// Sign of `(s1 - s2) + (d1 - d2) * sqrt 2` in integer arithmetic.
    fn cmp(&self, other: &Self) -> Ordering {
        let a = self.straight as i128 - other.straight as i128;
        let b = other.diagonal as i128 - self.diagonal as i128;
        // compare a with b * sqrt(2)
        match (a.signum(), b.signum()) {
            (0, 0) => Ordering::Equal,
            (sa, sb) if sa != sb => sa.cmp(&sb),
            (1, _) => (a * a).cmp(&(2 * b * b)),
            _ => (2 * b * b).cmp(&(a * a)),
        }
    }
}

impl PartialOrd for MoveCount {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanPath {
    pub waypoints: Vec<Vec2>,
    pub cost: f64,
    #[serde(skip)]
    pub cells: Vec<Cell>,
}

impl PlanPath {
    /// Total polyline length.
    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Distance from `p` to the nearest point of the polyline.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        match self.waypoints.len() {
            0 => f64::INFINITY,
            1 => p.distance(self.waypoints[0]),
            _ => self
                .waypoints
                .windows(2)
                .map(|w| point_segment_distance(p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Neighbour offsets in row-major order.
const NEIGHBOURS: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Successors of `cell` with whether the move is diagonal.
pub fn neighbours(
    grid: &OccupancyGrid,
    cell: Cell,
    strict_corners: bool,
) -> impl Iterator<Item = (Cell, bool)> + '_ {
    let (c, r) = (cell.0 as i64, cell.1 as i64);
    NEIGHBOURS.iter().filter_map(move |&(dc, dr)| {
        let (nc, nr) = (c + dc, r + dr);
        if nc < 0 || nr < 0 || nc >= grid.width as i64 || nr >= grid.height as i64 {
            return None;
        }
        let n = (nc as usize, nr as usize);
        if grid.occupied(n) {
            return None;
        }
        let diagonal = dc != 0 && dr != 0;
        if diagonal {
            let a = grid.occupied(((c + dc) as usize, r as usize));
            let b = grid.occupied((c as usize, (r + dr) as usize));
            if (strict_corners && (a || b)) || (a && b) {
                return None;
            }
        }
        Some((n, diagonal))
    })
}

#[derive(PartialEq, Eq)]
struct Frontier {
    cost: MoveCount,
    order: u64,
    cell: usize,
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .cmp(&self.cost)
            .then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost 8-connected path between two free cells.
pub fn dijkstra_cells(
    grid: &OccupancyGrid,
    start: Cell,
    goal: Cell,
    strict_corners: bool,
) -> Result<(Vec<Cell>, MoveCount)> {
    for (what, cell) in [("start", start), ("goal", goal)] {
        if cell.0 >= grid.width || cell.1 >= grid.height {
            return Err(Error::PlannerPrecondition(format!(
                "{what} cell {cell:?} outside the grid"
            )));
        }
        if grid.occupied(cell) {
            return Err(Error::PlannerPrecondition(format!(
                "{what} cell {cell:?} is occupied"
            )));
        }
    }
    let n = grid.width * grid.height;
    let mut best: Vec<Option<MoveCount>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let s = grid.idx(start);
    let g = grid.idx(goal);
    best[s] = Some(MoveCount::default());
    let mut order = 0u64;
    heap.push(Frontier {
        cost: MoveCount::default(),
        order,
        cell: s,
    });
    while let Some(Frontier { cost, cell, .. }) = heap.pop() {
        if done[cell] {
            continue;
        }
        done[cell] = true;
        if cell == g {
            break;
        }
        let cur = (cell % grid.width, cell / grid.width);
        for (nb, diagonal) in neighbours(grid, cur, strict_corners) {
            let ni = grid.idx(nb);
            if done[ni] {
                continue;
            }
            let mut next = cost;
            if diagonal {
                next.diagonal += 1;
            } else {
                next.straight += 1;
            }
            if best[ni].map_or(true, |b| next < b) {
                best[ni] = Some(next);
                parent[ni] = cell;
                order += 1;
                heap.push(Frontier {
                    cost: next,
                    order,
                    cell: ni,
                });
            }
        }
    }
    let total = best[g].ok_or(Error::NoPath)?;
    let mut cells = vec![goal];
    let mut at = g;
    while at != s {
        at = parent[at];
        cells.push((at % grid.width, at / grid.width));
    }
    cells.reverse();
    Ok((cells, total))
}

/// Shortest path between the cells containing `start` and `goal`,
/// returned as cell-centre waypoints.
pub fn dijkstra_path(
    grid: &OccupancyGrid,
    start: Vec2,
    goal: Vec2,
    strict_corners: bool,
) -> Result<PlanPath> {
    let locate = |p: Vec2, what: &str| {
        grid.cell_of(p).ok_or_else(|| {
            Error::PlannerPrecondition(format!("{what} ({}, {}) lies outside the grid", p.x, p.y))
        })
    };
    let (cells, count) = dijkstra_cells(
        grid,
        locate(start, "start")?,
        locate(goal, "goal")?,
        strict_corners,
    )?;
    Ok(PlanPath {
        waypoints: cells.iter().map(|&c| grid.cell_center(c)).collect(),
        cost: count.length(grid.resolution),
        cells,
    })
}

/// Nearest point of the path to `p` restricted to arc length `>= min_arc`,
/// as `(point, arc length)`. The earliest segment wins ties.
pub fn project_onto_path(path: &PlanPath, p: Vec2, min_arc: f64) -> (Vec2, f64) {
    let w = &path.waypoints;
    assert!(!w.is_empty(), "path must be non-empty");
    if w.len() == 1 {
        return (w[0], 0.0);
    }
    let mut best = (f64::INFINITY, w[0], 0.0);
    let mut arc = 0.0;
    for seg in w.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = a.distance(b);
        let seg_end = arc + len;
        if seg_end >= min_arc && len > 0.0 {
            let lo = ((min_arc - arc) / len).clamp(0.0, 1.0);
            let t = ((p - a).dot(b - a) / (len * len)).clamp(lo, 1.0);
            let q = a.lerp(b, t);
            let d = q.distance(p);
            if d < best.0 {
                best = (d, q, arc + t * len);
            }
        }
        arc = seg_end;
    }
    if best.0.is_infinite() {
        (*w.last().unwrap(), arc)
    } else {
        (best.1, best.2)
    }
}

/// Point at arc length `s` along the path, clamped to its ends.
pub fn point_at_arc(path: &PlanPath, s: f64) -> Vec2 {
    let w = &path.waypoints;
    let mut arc = 0.0;
    for seg in w.windows(2) {
        let len = seg[0].distance(seg[1]);
        if len > 0.0 && arc + len >= s {
            return seg[0].lerp(seg[1], ((s - arc) / len).clamp(0.0, 1.0));
        }
        arc += len;
    }
    *w.last().expect("path must be non-empty")
}

/// Sub-goal `d_sub` of arc length ahead of the projection of `robot_pos`.
pub fn select_subgoal(path: &PlanPath, robot_pos: Vec2, d_sub: f64) -> Vec2 {
    select_subgoal_from(path, robot_pos, d_sub, 0.0).0
}

/// As [`select_subgoal`] with the projection restricted to arc length at
/// least `min_arc`; also returns the sub-goal's arc length. Passing the
/// previous projection keeps the sub-goal chain monotone.
pub fn select_subgoal_from(
    path: &PlanPath,
    robot_pos: Vec2,
    d_sub: f64,
    min_arc: f64,
) -> (Vec2, f64, f64) {
    let (_, s) = project_onto_path(path, robot_pos, min_arc);
    let target = (s + d_sub).min(path.length());
    (point_at_arc(path, target), target, s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavStep {
    pub t: f64,
    pub position: Vec2,
    pub subgoal: Vec2,
    /// Arc length of the sub-goal along the current global path.
    pub subgoal_arc: f64,
    pub replanned: bool,
    /// Index of the global path in `NavLog::paths`.
    pub path_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavLog {
    pub outcome: Outcome,
    pub steps: Vec<NavStep>,
    pub records: Vec<StepRecord>,
    pub paths: Vec<PlanPath>,
    pub path_length: f64,
    pub nav_time: f64,
}

fn plan_from(grid: &OccupancyGrid, pos: Vec2, goal: Vec2, strict: bool) -> Result<PlanPath> {
    let start = match grid.cell_of(pos) {
        Some(c) if !grid.occupied(c) => pos,
        _ => grid
            .nearest_free(pos)
            .map(|c| grid.cell_center(c))
            .ok_or_else(|| Error::PlannerPrecondition("grid has no free cell".into()))?,
    };
    dijkstra_path(grid, start, goal, strict)
}

/// Drives the robot to its goal: plan a global path, follow sub-goals with
/// the learned policy, replan when the robot strays from the path.
pub fn run_mesa_navigation(
    policy: &ValuePolicy,
    mut world: WorldState,
    grid: &OccupancyGrid,
    cfg: &PlannerConfig,
    env: &Environment,
) -> Result<NavLog> {
    let goal = world.robot.goal;
    let mut paths = vec![plan_from(
        grid,
        world.robot.position,
        goal,
        cfg.strict_corners,
    )?];
    let mut min_arc = 0.0;
    let mut h = vec![0.0; policy.params.config().hidden];
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut steps = Vec::new();
    let mut records = vec![StepRecord::initial(&world)];
    let mut path_length = 0.0;
    let outcome = loop {
        let mut replanned = false;
        if paths.last().unwrap().distance_to(world.robot.position) > cfg.deviation_threshold {
            paths.push(plan_from(
                grid,
                world.robot.position,
                goal,
                cfg.strict_corners,
            )?);
            min_arc = 0.0;
            replanned = true;
        }
        let path = paths.last().unwrap();
        let (subgoal, subgoal_arc, proj) =
            select_subgoal_from(path, world.robot.position, cfg.d_sub, min_arc);
        min_arc = proj;
        // a sub-goal on top of the robot leaves the frame undefined; steer for the goal then
        let target = if subgoal.distance(world.robot.position) < 1e-9 {
            goal
        } else {
            subgoal
        };
        let (action, h_next) =
            policy.select_action(&world.with_robot_goal(target), &h, 0.0, &mut rng)?;
        h = h_next;
        steps.push(NavStep {
            t: world.time,
            position: world.robot.position,
            subgoal,
            subgoal_arc,
            replanned,
            path_index: paths.len() - 1,
        });
        let next = sim::step_world(&world, action.velocity, &env.crowd);
        let (_, reward, event) = env.evaluate_transition(&world, &next);
        path_length += next.robot.position.distance(world.robot.position);
        records.push(StepRecord::new(&next, Some(action.index), reward, event));
        world = next;
        if let Some(o) = Outcome::from_event(event) {
            break o;
        }
    };
    Ok(NavLog {
        outcome,
        steps,
        records,
        paths,
        path_length,
        nav_time: world.time,
    })
}

/// Parses the `MESAMAP` text format.
pub fn parse_map(text: &str) -> Result<OccupancyGrid> {
    let bad = |m: String| Error::Parse(format!("map: {m}"));
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split_whitespace()
        .collect();
    if header.len() != 6 || header[0] != "MESAMAP" {
        return Err(bad(
            "expected header `MESAMAP width height resolution origin_x origin_y`".into(),
        ));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(format!("bad integer {s:?}")))
    };
    let float = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| bad(format!("bad number {s:?}")))
    };
    let (width, height) = (int(header[1])?, int(header[2])?);
    let resolution = float(header[3])?;
    let origin = Vec2::new(float(header[4])?, float(header[5])?);
    if width == 0 || height == 0 || !(resolution > 0.0) {
        return Err(bad("dimensions and resolution must be positive".into()));
    }
    let mut grid = OccupancyGrid::new(width, height, resolution, origin);
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != height {
        return Err(bad(format!("expected {height} rows, found {}", rows.len())));
    }
    for (r, row) in rows.iter().enumerate() {
        let row = row.trim_end();
        if row.len() != width {
            return Err(bad(format!(
                "row {r} has {} cells, expected {width}",
                row.len()
            )));
        }
        for (c, ch) in row.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => grid.set((c, r), true),
                other => return Err(bad(format!("unexpected character {other:?} in row {r}"))),
            }
        }
    }
    Ok(grid)
}

pub fn write_map(grid: &OccupancyGrid) -> String {
    let mut s = format!(
        "MESAMAP {} {} {} {} {}\n",
        grid.width, grid.height, grid.resolution, grid.origin.x, grid.origin.y
    );
    for r in 0..grid.height {
        for c in 0..grid.width {
            s.push(if grid.occupied((c, r)) { '1' } else { '0' });
        }
        s.push('\n');
    }
    s
}
