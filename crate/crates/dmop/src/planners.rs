//! Planners over the 8-connected grid graph, all minimizing the combined
//! objective `distance + w * energy` with directed edge costs from the cost
//! module: exact Dijkstra, A* with an admissible heuristic, goal-biased RRT,
//! a one-step greedy heuristic, and the learned rollout planner.

use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cost::{
    path_distance, path_energy, point_distance, step_energy, CostError, CostModel, GridPath,
    Point3,
};
use crate::gridworld::{Action, Cell, ObservationRenderer};
use crate::qnet::{argmax_q, forward_with_scratch, QNetError, QNetworkParams, Scratch};
use crate::terrain::{DemGrid, TerrainError};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cell ({0}, {1}) is outside the grid")]
    OutOfBounds(i32, i32),
    #[error("start and goal must differ")]
    StartEqualsGoal,
    #[error("goal is unreachable from start")]
    Unreachable,
    #[error("map is {map_w}x{map_h} but the network expects {net_w}x{net_h}")]
    MapShapeMismatch {
        map_w: usize,
        map_h: usize,
        net_w: usize,
        net_h: usize,
    },
    #[error("successful result must start at the start and end at the goal")]
    EndpointMismatch,
    #[error("path csv parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    QNet(#[from] QNetError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Outcome of one planning call. Stored metrics are recomputed from the path
/// through the cost module at construction, so they always agree with it.
#[derive(Debug, Clone)]
pub struct PlannerResult {
    pub planner: String,
    pub path: Option<GridPath>,
    pub success: bool,
    pub distance_m: f64,
    pub energy_u: f64,
    pub objective_sum: f64,
    pub wall_time_s: f64,
    /// Settled nodes (graph searches), iterations (RRT) or steps (rollouts).
    pub expanded: usize,
    /// Cells touched during the search, for search-area renders.
    pub visited: Vec<Cell>,
}

impl PlannerResult {
    #[allow(clippy::too_many_arguments)]
    pub fn from_path(
        planner: &str,
        map: &DemGrid,
        model: &CostModel,
        path: Option<GridPath>,
        success: bool,
        start: Cell,
        goal: Cell,
        wall_time_s: f64,
        expanded: usize,
        visited: Vec<Cell>,
    ) -> Result<Self, PlanError> {
        if success {
            let p = path.as_ref().ok_or(PlanError::EndpointMismatch)?;
            let first = p.first();
            let last = p.last();
            if (first.x, first.y) != (start.x as f64, start.y as f64)
                || (last.x, last.y) != (goal.x as f64, goal.y as f64)
            {
                return Err(PlanError::EndpointMismatch);
            }
        }
        let (distance_m, energy_u, objective_sum) = match &path {
            Some(p) => {
                let d = path_distance(p, map.world_scale_m());
                let e = path_energy(p, model, map.world_scale_m());
                (d, e, d + model.energy_weight * e)
            }
            None => (0.0, 0.0, 0.0),
        };
        Ok(PlannerResult {
            planner: planner.to_string(),
            path,
            success,
            distance_m,
            energy_u,
            objective_sum,
            wall_time_s,
            expanded,
            visited,
        })
    }
}

fn check_task(map: &DemGrid, start: Cell, goal: Cell) -> Result<(), PlanError> {
    for cell in [start, goal] {
        if cell.x < 0
            || cell.y < 0
            || cell.x as usize >= map.width()
            || cell.y as usize >= map.height()
        {
            return Err(PlanError::OutOfBounds(cell.x, cell.y));
        }
    }
    if start == goal {
        return Err(PlanError::StartEqualsGoal);
    }
    Ok(())
}

fn surface(map: &DemGrid, cell: Cell) -> Point3 {
    Point3::new(
        cell.x as f64,
        cell.y as f64,
        map.at(cell.x as usize, cell.y as usize),
    )
}

/// Directed cost of moving between adjacent cells: step distance plus the
/// weighted step energy, in meters/u.
pub fn edge_cost(map: &DemGrid, model: &CostModel, from: Cell, to: Cell) -> f64 {
    let p = surface(map, from);
    let q = surface(map, to);
    point_distance(p, q, map.world_scale_m())
        + model.energy_weight
            * step_energy(p, q, model, map.world_scale_m()).expect("adjacent cells are distinct")
}

/// Min-heap entry ordered by cost, ties broken by node index so the search
/// order is fully deterministic.
#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    node: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // reversed: BinaryHeap is a max-heap, we want the cheapest on top
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn neighbors(map: &DemGrid, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
    Action::ALL.iter().filter_map(move |a| {
        let (dx, dy) = a.delta();
        let n = Cell::new(cell.x + dx, cell.y + dy);
        (n.x >= 0 && n.y >= 0 && (n.x as usize) < map.width() && (n.y as usize) < map.height())
            .then_some(n)
    })
}

fn extract_path(
    map: &DemGrid,
    parent: &[u32],
    start_idx: usize,
    goal_idx: usize,
) -> Result<GridPath, PlanError> {
    let w = map.width();
    let mut cells = Vec::new();
    let mut at = goal_idx;
    loop {
        cells.push(((at % w), (at / w)));
        if at == start_idx {
            break;
        }
        at = parent[at] as usize;
    }
    cells.reverse();
    Ok(GridPath::from_cells(map, cells)?)
}

/// Exact minimum-objective search over the 8-connected grid.
pub fn dijkstra(
    map: &DemGrid,
    model: &CostModel,
    start: Cell,
    goal: Cell,
) -> Result<PlannerResult, PlanError> {
    astar_inner(map, model, start, goal, None, "dijkstra")
}

/// Heuristic scaling knobs for [`astar`]; the defaults keep it admissible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HWeights {
    pub distance: f64,
    pub energy: f64,
}

impl Default for HWeights {
    fn default() -> Self {
        HWeights {
            distance: 1.0,
            energy: 1.0,
        }
    }
}

impl HWeights {
    pub fn zero() -> Self {
        HWeights {
            distance: 0.0,
            energy: 0.0,
        }
    }
}

/// A* over the same graph. With the default weights the heuristic is
/// admissible and consistent, so the returned objective equals Dijkstra's.
///
/// The heuristic under-estimates both components separately:
/// * distance: straight-line 3D distance;
/// * energy: any step climbing `dz` costs at least `(4/pi) * eta_us * dz`
///   (the gentle-slope limit of `D * (beta / (pi/4)) * eta_us`), so the
///   unavoidable net climb to the goal bounds the energy from below. Down
///   and flat steps cost at least `1 - 2 * eta_ds` per meter, which is
///   non-negative for `eta_ds <= 0.5`, the only regime where the climb term
///   alone is a valid bound. For `eta_ds > 0.5` a whole-objective floor of
///   `max(0, 1 + w * (1 - 2 * eta_ds))` per 3D meter is used instead.
pub fn astar(
    map: &DemGrid,
    model: &CostModel,
    start: Cell,
    goal: Cell,
    h_weights: HWeights,
) -> Result<PlannerResult, PlanError> {
    astar_inner(map, model, start, goal, Some(h_weights), "astar")
}

fn heuristic(map: &DemGrid, model: &CostModel, hw: HWeights, node: Point3, goal: Point3) -> f64 {
    let d3 = point_distance(node, goal, map.world_scale_m());
    if model.eta_ds <= 0.5 {
        let climb_m = (goal.z - node.z).max(0.0) * map.world_scale_m();
        let energy_lb = 4.0 / std::f64::consts::PI * model.eta_us * climb_m;
        hw.distance * d3 + hw.energy * model.energy_weight * energy_lb
    } else {
        let floor = (1.0 + model.energy_weight * (1.0 - 2.0 * model.eta_ds)).clamp(0.0, 1.0);
        hw.distance.min(hw.energy) * floor * d3
    }
}

fn astar_inner(
    map: &DemGrid,
    model: &CostModel,
    start: Cell,
    goal: Cell,
    h_weights: Option<HWeights>,
    label: &str,
) -> Result<PlannerResult, PlanError> {
    check_task(map, start, goal)?;
    let clock = Instant::now();
    let w = map.width();
    let n = w * map.height();
    let start_idx = start.y as usize * w + start.x as usize;
    let goal_idx = goal.y as usize * w + goal.x as usize;
    let goal_pt = surface(map, goal);

    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![u32::MAX; n];
    let mut settled = vec![false; n];
    let mut visited = Vec::new();
    let mut heap = BinaryHeap::new();

    let h0 = match h_weights {
        Some(hw) => heuristic(map, model, hw, surface(map, start), goal_pt),
        None => 0.0,
    };
    dist[start_idx] = 0.0;
    heap.push(HeapEntry {
        cost: h0,
        node: start_idx as u32,
    });

    let mut expanded = 0usize;
    let mut found = false;
    while let Some(HeapEntry { node, .. }) = heap.pop() {
        let u = node as usize;
        if settled[u] {
            continue;
        }
        settled[u] = true;
        expanded += 1;
        let cell = Cell::new((u % w) as i32, (u / w) as i32);
        visited.push(cell);
        if u == goal_idx {
            found = true;
            break;
        }
        for nb in neighbors(map, cell) {
            let v = nb.y as usize * w + nb.x as usize;
            if settled[v] {
                continue;
            }
            let candidate = dist[u] + edge_cost(map, model, cell, nb);
            if candidate < dist[v] {
                dist[v] = candidate;
                parent[v] = u as u32;
                let f = match h_weights {
                    Some(hw) => candidate + heuristic(map, model, hw, surface(map, nb), goal_pt),
                    None => candidate,
                };
                heap.push(HeapEntry {
                    cost: f,
                    node: v as u32,
                });
            }
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();
    if !found {
        // cannot happen on a full 8-connected grid, kept as a guard
        return Err(PlanError::Unreachable);
    }
    let path = extract_path(map, &parent, start_idx, goal_idx)?;
    PlannerResult::from_path(
        label,
        map,
        model,
        Some(path),
        true,
        start,
        goal,
        elapsed,
        expanded,
        visited,
    )
}

/// RRT configuration.
#[derive(Debug, Clone, Copy)]
pub struct RrtConfig {
    /// Probability of sampling the goal instead of a uniform cell.
    pub goal_bias: f64,
    /// Iteration budget before reporting failure.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RrtConfig {
    fn default() -> Self {
        RrtConfig {
            goal_bias: 0.05,
            max_iters: 200_000,
            seed: 0,
        }
    }
}

/// Goal-biased RRT on grid cells: each iteration samples a cell, finds the
/// nearest tree node in 2D and extends the tree one 8-connected step toward
/// the sample. Deterministic for a fixed seed. Budget exhaustion yields a
/// failure result with an empty path rather than an error.
pub fn rrt(
    map: &DemGrid,
    model: &CostModel,
    start: Cell,
    goal: Cell,
    config: RrtConfig,
) -> Result<PlannerResult, PlanError> {
    check_task(map, start, goal)?;
    let clock = Instant::now();
    let w = map.width();
    let h = map.height();
    let n = w * h;
    let idx = |c: Cell| c.y as usize * w + c.x as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut in_tree = vec![false; n];
    let mut parent = vec![u32::MAX; n];
    let mut nodes: Vec<Cell> = Vec::new();

    in_tree[idx(start)] = true;
    nodes.push(start);

    let mut iterations = 0usize;
    let mut found = false;
    while iterations < config.max_iters {
        iterations += 1;
        let sample = if rng.gen::<f64>() < config.goal_bias {
            goal
        } else {
            Cell::new(rng.gen_range(0..w as i32), rng.gen_range(0..h as i32))
        };

        // nearest tree node in 2D; oldest node wins ties
        let mut nearest = nodes[0];
        let mut best = i64::MAX;
        for &node in &nodes {
            let dx = (node.x - sample.x) as i64;
            let dy = (node.y - sample.y) as i64;
            let d2 = dx * dx + dy * dy;
            if d2 < best {
                best = d2;
                nearest = node;
            }
        }
        if nearest == sample {
            continue;
        }
        let step = Cell::new(
            nearest.x + (sample.x - nearest.x).signum(),
            nearest.y + (sample.y - nearest.y).signum(),
        );
        if in_tree[idx(step)] {
            continue;
        }
        in_tree[idx(step)] = true;
        parent[idx(step)] = idx(nearest) as u32;
        nodes.push(step);
        if step == goal {
            found = true;
            break;
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();
    let path = if found {
        Some(extract_path(map, &parent, idx(start), idx(goal))?)
    } else {
        None
    };
    PlannerResult::from_path(
        "rrt",
        map,
        model,
        path,
        found,
        start,
        goal,
        elapsed,
        iterations,
        nodes,
    )
}

/// The exploration heuristic: the action whose in-bounds successor minimizes
/// the 2D distance to the goal; ties go to the lowest action index.
pub fn greedy_heuristic_action(map: &DemGrid, pos: Cell, goal: Cell) -> Action {
    let mut best_action = Action::North;
    let mut best = i64::MAX;
    for action in Action::ALL {
        let (dx, dy) = action.delta();
        let next = Cell::new(pos.x + dx, pos.y + dy);
        if next.x < 0
            || next.y < 0
            || next.x as usize >= map.width()
            || next.y as usize >= map.height()
        {
            continue;
        }
        let ddx = (next.x - goal.x) as i64;
        let ddy = (next.y - goal.y) as i64;
        let d2 = ddx * ddx + ddy * ddy;
        if d2 < best {
            best = d2;
            best_action = action;
        }
    }
    best_action
}

/// Greedy rollout of a trained network: render the observation, take the
/// argmax-Q action, repeat. Fails (with the partial path) on the step budget
/// or when a (cell, action) pair repeats, which means the policy is looping.
/// Wall time covers only the rollout loop.
pub fn dmop_plan(
    map: &DemGrid,
    params: &QNetworkParams,
    model: &CostModel,
    start: Cell,
    goal: Cell,
    max_steps: u32,
) -> Result<PlannerResult, PlanError> {
    check_task(map, start, goal)?;
    let arch = params.arch();
    if map.width() != arch.input_w || map.height() != arch.input_h {
        return Err(PlanError::MapShapeMismatch {
            map_w: map.width(),
            map_h: map.height(),
            net_w: arch.input_w,
            net_h: arch.input_h,
        });
    }

    let renderer = ObservationRenderer::new(map);
    let mut scratch = Scratch::new(arch);
    let mut obs = renderer.render(start, goal);
    let mut seen: HashSet<(i32, i32, usize)> = HashSet::new();
    let mut cells = vec![start];
    let mut agent = start;
    let mut steps = 0usize;
    let mut success = false;

    let clock = Instant::now();
    while steps < max_steps as usize {
        renderer.render_into(agent, goal, &mut obs);
        let q = forward_with_scratch(params, &obs, &mut scratch)?;
        let (action_idx, _) = argmax_q(q);
        if !seen.insert((agent.x, agent.y, action_idx)) {
            break; // policy loop
        }
        let (dx, dy) = Action::from_index(action_idx)
            .expect("argmax over arch.actions")
            .delta();
        let next = Cell::new(agent.x + dx, agent.y + dy);
        let next = if next.x >= 0
            && next.y >= 0
            && (next.x as usize) < map.width()
            && (next.y as usize) < map.height()
        {
            next
        } else {
            agent
        };
        steps += 1;
        if next != agent {
            cells.push(next);
            agent = next;
        }
        if agent == goal {
            success = true;
            break;
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();

    let path = Some(GridPath::from_cells(
        map,
        cells.iter().map(|c| (c.x as usize, c.y as usize)),
    )?);
    PlannerResult::from_path(
        "dmop", map, model, path, success, start, goal, elapsed, steps, cells,
    )
}

// --- path CSV --------------------------------------------------------------

/// Serializes a path as `idx,x,y,z` CSV in map units. `Display`-formatted
/// floats reparse exactly, so write/read is lossless.
pub fn path_to_csv(path: &GridPath) -> String {
    let mut out = String::from("idx,x,y,z\n");
    for (i, p) in path.points().iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", p.x, p.y, p.z);
    }
    out
}

/// Parses raw `idx,x,y,z` records. Never panics on malformed input.
pub fn parse_path_csv(text: &str) -> Result<Vec<Point3>, PlanError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(PlanError::Parse {
        line: 1,
        msg: "empty input".to_string(),
    })?;
    if header.trim() != "idx,x,y,z" {
        return Err(PlanError::Parse {
            line: 1,
            msg: format!("expected header `idx,x,y,z`, got `{header}`"),
        });
    }
    let mut points = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(PlanError::Parse {
                line: lineno + 1,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let idx: usize = fields[0].trim().parse().map_err(|_| PlanError::Parse {
            line: lineno + 1,
            msg: format!("bad index `{}`", fields[0]),
        })?;
        if idx != points.len() {
            return Err(PlanError::Parse {
                line: lineno + 1,
                msg: format!("index {idx} out of order, expected {}", points.len()),
            });
        }
        let mut coords = [0.0f64; 3];
        for (slot, tok) in coords.iter_mut().zip(&fields[1..]) {
            let v: f64 = tok.trim().parse().map_err(|_| PlanError::Parse {
                line: lineno + 1,
                msg: format!("bad coordinate `{tok}`"),
            })?;
            if !v.is_finite() {
                return Err(PlanError::Parse {
                    line: lineno + 1,
                    msg: format!("non-finite coordinate `{tok}`"),
                });
            }
            *slot = v;
        }
        points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    if points.is_empty() {
        return Err(PlanError::Parse {
            line: 1,
            msg: "no data rows".to_string(),
        });
    }
    Ok(points)
}

pub fn write_path_csv(path: &GridPath, file: &Path) -> Result<(), PlanError> {
    fs::write(file, path_to_csv(path))?;
    Ok(())
}

/// Reads a path CSV and binds it to a map, verifying every point lies
/// exactly on the surface.
pub fn read_path_csv(map: &DemGrid, file: &Path) -> Result<GridPath, PlanError> {
    let text = fs::read_to_string(file)?;
    let points = parse_path_csv(&text)?;
    Ok(GridPath::from_points(map, points)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive search for the minimum-objective simple path on tiny maps.
    /// Positive edge weights make cost-pruned DFS exact. Returns the best
    /// path so the caller can put it through the same metric computation as
    /// the planner under test.
    fn brute_force_optimum(
        map: &DemGrid,
        model: &CostModel,
        start: Cell,
        goal: Cell,
    ) -> GridPath {
        #[allow(clippy::too_many_arguments)]
        fn go(
            map: &DemGrid,
            model: &CostModel,
            at: Cell,
            goal: Cell,
            visited: &mut Vec<bool>,
            trail: &mut Vec<Cell>,
            cost: f64,
            best: &mut (f64, Vec<Cell>),
        ) {
            if cost >= best.0 {
                return;
            }
            if at == goal {
                *best = (cost, trail.clone());
                return;
            }
            for nb in neighbors(map, at) {
                let i = nb.y as usize * map.width() + nb.x as usize;
                if !visited[i] {
                    visited[i] = true;
                    trail.push(nb);
                    go(
                        map,
                        model,
                        nb,
                        goal,
                        visited,
                        trail,
                        cost + edge_cost(map, model, at, nb),
                        best,
                    );
                    trail.pop();
                    visited[i] = false;
                }
            }
        }
        let mut visited = vec![false; map.width() * map.height()];
        visited[start.y as usize * map.width() + start.x as usize] = true;
        let mut trail = vec![start];
        let mut best = (f64::INFINITY, Vec::new());
        go(map, model, start, goal, &mut visited, &mut trail, 0.0, &mut best);
        assert!(!best.1.is_empty(), "exhaustive search found no path");
        GridPath::from_cells(map, best.1.iter().map(|c| (c.x as usize, c.y as usize))).unwrap()
    }

    /// Exact cost-to-go for every cell, by Dijkstra from the goal over
    /// reversed edges (edge costs evaluated in their original direction).
    fn exact_cost_to_go(map: &DemGrid, model: &CostModel, goal: Cell) -> Vec<f64> {
        let w = map.width();
        let n = w * map.height();
        let mut dist = vec![f64::INFINITY; n];
        let mut settled = vec![false; n];
        let mut heap = BinaryHeap::new();
        let gi = goal.y as usize * w + goal.x as usize;
        dist[gi] = 0.0;
        heap.push(HeapEntry {
            cost: 0.0,
            node: gi as u32,
        });
        while let Some(HeapEntry { node, .. }) = heap.pop() {
            let u = node as usize;
            if settled[u] {
                continue;
            }
            settled[u] = true;
            let cell = Cell::new((u % w) as i32, (u / w) as i32);
            for nb in neighbors(map, cell) {
                let v = nb.y as usize * w + nb.x as usize;
                if settled[v] {
                    continue;
                }
                // original direction: nb -> cell
                let candidate = dist[u] + edge_cost(map, model, nb, cell);
                if candidate < dist[v] {
                    dist[v] = candidate;
                    heap.push(HeapEntry {
                        cost: candidate,
                        node: v as u32,
                    });
                }
            }
        }
        dist
    }

    #[test]
    fn dijkstra_flat_3x3_corner_to_corner() {
        let map = DemGrid::flat(3, 3, 1.0, 0.0).unwrap();
        let model = CostModel::default();
        let r = dijkstra(&map, &model, Cell::new(0, 0), Cell::new(2, 2)).unwrap();
        assert!(r.success);
        // two diagonal steps, each sqrt(2) * (1 + 1)
        assert!((r.objective_sum - 4.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.path.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn dijkstra_single_step_adjacency() {
        let map = DemGrid::flat(4, 4, 1.0, 0.0).unwrap();
        let model = CostModel::default();
        let r = dijkstra(&map, &model, Cell::new(1, 1), Cell::new(2, 1)).unwrap();
        assert!((r.objective_sum - 2.0).abs() < 1e-12);
        let r2 = dijkstra(&map, &model, Cell::new(1, 1), Cell::new(2, 2)).unwrap();
        assert!((r2.objective_sum - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dijkstra_matches_brute_force_on_small_random_maps() {
        let model = CostModel::default();
        for seed in 0..20 {
            let map = DemGrid::generate(seed, 4, 4, 0.7).unwrap();
            let r = dijkstra(&map, &model, Cell::new(0, 0), Cell::new(3, 3)).unwrap();
            let oracle_path = brute_force_optimum(&map, &model, Cell::new(0, 0), Cell::new(3, 3));
            let oracle = crate::cost::path_objective(&oracle_path, &model, map.world_scale_m());
            assert_eq!(
                r.objective_sum, oracle,
                "seed {seed}: dijkstra {} vs oracle {oracle}",
                r.objective_sum
            );
        }
    }

    #[test]
    fn dijkstra_rejects_bad_tasks() {
        let map = DemGrid::flat(4, 4, 1.0, 0.0).unwrap();
        let model = CostModel::default();
        assert!(matches!(
            dijkstra(&map, &model, Cell::new(0, 0), Cell::new(0, 0)),
            Err(PlanError::StartEqualsGoal)
        ));
        assert!(matches!(
            dijkstra(&map, &model, Cell::new(-1, 0), Cell::new(2, 2)),
            Err(PlanError::OutOfBounds(-1, 0))
        ));
    }

    #[test]
    fn astar_equals_dijkstra_and_expands_no_more() {
        let model = CostModel::default();
        for seed in 0..20 {
            let map = DemGrid::generate(seed, 12, 12, 0.5).unwrap();
            let d = dijkstra(&map, &model, Cell::new(0, 0), Cell::new(11, 11)).unwrap();
            let a = astar(
                &map,
                &model,
                Cell::new(0, 0),
                Cell::new(11, 11),
                HWeights::default(),
            )
            .unwrap();
            assert_eq!(a.objective_sum, d.objective_sum, "seed {seed}");
            assert!(
                a.expanded <= d.expanded,
                "seed {seed}: astar {} > dijkstra {}",
                a.expanded,
                d.expanded
            );
        }
    }

    #[test]
    fn astar_with_zero_weights_degenerates_to_dijkstra() {
        let map = DemGrid::generate(7, 16, 16, 0.5).unwrap();
        let model = CostModel::default();
        let d = dijkstra(&map, &model, Cell::new(1, 2), Cell::new(14, 13)).unwrap();
        let a = astar(
            &map,
            &model,
            Cell::new(1, 2),
            Cell::new(14, 13),
            HWeights::zero(),
        )
        .unwrap();
        assert_eq!(a.expanded, d.expanded);
        assert_eq!(a.objective_sum, d.objective_sum);
    }

    #[test]
    fn heuristic_is_admissible_against_exact_cost_to_go() {
        let model = CostModel::default();
        for seed in [1, 5, 9] {
            let map = DemGrid::generate(seed, 14, 14, 0.6).unwrap();
            let goal = Cell::new(12, 3);
            let goal_pt = surface(&map, goal);
            let togo = exact_cost_to_go(&map, &model, goal);
            for y in 0..14 {
                for x in 0..14 {
                    let node = Cell::new(x, y);
                    let h = heuristic(
                        &map,
                        &model,
                        HWeights::default(),
                        surface(&map, node),
                        goal_pt,
                    );
                    let exact = togo[y as usize * 14 + x as usize];
                    assert!(
                        h <= exact + 1e-9,
                        "seed {seed} node ({x},{y}): h {h} > cost-to-go {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn flat_map_astar_finds_straight_diagonal() {
        let map = DemGrid::flat(20, 20, 1.0, 1.0).unwrap();
        let model = CostModel::default();
        let a = astar(
            &map,
            &model,
            Cell::new(2, 2),
            Cell::new(10, 10),
            HWeights::default(),
        )
        .unwrap();
        // 8 diagonal steps
        assert_eq!(a.path.as_ref().unwrap().len(), 9);
        assert!((a.objective_sum - 8.0 * 2f64.sqrt() * 2.0).abs() < 1e-9);
    }

    #[test]
    fn rrt_with_full_goal_bias_walks_straight() {
        let map = DemGrid::flat(20, 20, 1.0, 0.0).unwrap();
        let model = CostModel::default();
        let cfg = RrtConfig {
            goal_bias: 1.0,
            max_iters: 100,
            seed: 1,
        };
        let r = rrt(&map, &model, Cell::new(2, 2), Cell::new(9, 6), cfg).unwrap();
        assert!(r.success);
        // L-inf distance is 7: forced extension joins the goal in 7 steps
        assert_eq!(r.path.as_ref().unwrap().len(), 8);
    }

    #[test]
    fn rrt_is_seed_deterministic() {
        let map = DemGrid::generate(3, 20, 20, 0.5).unwrap();
        let model = CostModel::default();
        let cfg = RrtConfig::default();
        let a = rrt(&map, &model, Cell::new(1, 1), Cell::new(18, 17), cfg).unwrap();
        let b = rrt(&map, &model, Cell::new(1, 1), Cell::new(18, 17), cfg).unwrap();
        assert_eq!(a.success, b.success);
        assert_eq!(
            a.path.as_ref().map(|p| p.points().to_vec()),
            b.path.as_ref().map(|p| p.points().to_vec())
        );
        assert_eq!(a.expanded, b.expanded);
    }

    #[test]
    fn rrt_never_beats_dijkstra() {
        let model = CostModel::default();
        for seed in 0..10 {
            let map = DemGrid::generate(seed, 16, 16, 0.5).unwrap();
            let d = dijkstra(&map, &model, Cell::new(0, 0), Cell::new(15, 15)).unwrap();
            let r = rrt(
                &map,
                &model,
                Cell::new(0, 0),
                Cell::new(15, 15),
                RrtConfig {
                    seed,
                    ..RrtConfig::default()
                },
            )
            .unwrap();
            if r.success {
                assert!(r.objective_sum >= d.objective_sum - 1e-9, "seed {seed}");
            }
        }
    }

    #[test]
    fn rrt_budget_exhaustion_is_a_failure_result() {
        let map = DemGrid::flat(30, 30, 1.0, 0.0).unwrap();
        let model = CostModel::default();
        let cfg = RrtConfig {
            goal_bias: 0.0,
            max_iters: 3,
            seed: 0,
        };
        let r = rrt(&map, &model, Cell::new(0, 0), Cell::new(29, 29), cfg).unwrap();
        assert!(!r.success);
        assert!(r.path.is_none());
        assert_eq!(r.expanded, 3);
    }

    #[test]
    fn greedy_heuristic_action_cases() {
        let map = DemGrid::flat(20, 20, 1.0, 0.0).unwrap();
        // goal due north
        assert_eq!(
            greedy_heuristic_action(&map, Cell::new(10, 10), Cell::new(10, 2)),
            Action::North
        );
        // goal exactly northeast: the diagonal strictly beats N and E
        assert_eq!(
            greedy_heuristic_action(&map, Cell::new(10, 10), Cell::new(14, 6)),
            Action::NorthEast
        );
        // adjacent goal: land on it
        assert_eq!(
            greedy_heuristic_action(&map, Cell::new(10, 10), Cell::new(9, 10)),
            Action::West
        );
        // from a corner only in-bounds successors count
        assert_eq!(
            greedy_heuristic_action(&map, Cell::new(0, 0), Cell::new(5, 0)),
            Action::East
        );
    }

    #[test]
    fn dmop_plan_with_random_net_never_crashes() {
        let map = DemGrid::generate(2, 20, 20, 0.5).unwrap();
        let model = CostModel::default();
        let params =
            QNetworkParams::init(crate::qnet::NetArch::reduced(20, 20, 32, 16), 5).unwrap();
        let r = dmop_plan(&map, &params, &model, Cell::new(1, 1), Cell::new(18, 18), 150).unwrap();
        // untrained nets loop or wander; either way the result is well formed
        assert!(r.path.is_some());
        assert!(r.expanded <= 150);
        if !r.success {
            assert!(r.path.as_ref().unwrap().len() <= 151);
        }
    }

    #[test]
    fn dmop_plan_validates_resolution() {
        let map = DemGrid::generate(2, 20, 20, 0.5).unwrap();
        let model = CostModel::default();
        let params =
            QNetworkParams::init(crate::qnet::NetArch::reduced(10, 10, 32, 16), 5).unwrap();
        assert!(matches!(
            dmop_plan(&map, &params, &model, Cell::new(1, 1), Cell::new(8, 8), 150),
            Err(PlanError::MapShapeMismatch { .. })
        ));
    }

    #[test]
    fn planner_metrics_match_cost_module_recomputation() {
        let map = DemGrid::generate(11, 16, 16, 0.5).unwrap();
        let model = CostModel::default();
        let r = dijkstra(&map, &model, Cell::new(2, 3), Cell::new(13, 12)).unwrap();
        let p = r.path.as_ref().unwrap();
        assert_eq!(r.distance_m, path_distance(p, map.world_scale_m()));
        assert_eq!(r.energy_u, path_energy(p, &model, map.world_scale_m()));
        assert_eq!(
            r.objective_sum,
            r.distance_m + model.energy_weight * r.energy_u
        );
    }

    #[test]
    fn path_csv_round_trip() {
        let map = DemGrid::generate(13, 10, 10, 0.5).unwrap();
        let path = GridPath::from_cells(&map, [(0, 0), (1, 1), (2, 1), (3, 2)]).unwrap();
        let csv = path_to_csv(&path);
        let points = parse_path_csv(&csv).unwrap();
        assert_eq!(points, path.points());

        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("p.csv");
        write_path_csv(&path, &file).unwrap();
        let bound = read_path_csv(&map, &file).unwrap();
        assert_eq!(bound.points(), path.points());
    }

    #[test]
    fn path_csv_rejects_malformed_input() {
        assert!(parse_path_csv("").is_err());
        assert!(parse_path_csv("x,y,z\n").is_err());
        assert!(parse_path_csv("idx,x,y,z\n").is_err());
        assert!(parse_path_csv("idx,x,y,z\n0,1,2\n").is_err());
        assert!(parse_path_csv("idx,x,y,z\n1,1,2,3\n").is_err());
        assert!(parse_path_csv("idx,x,y,z\n0,a,2,3\n").is_err());
        assert!(parse_path_csv("idx,x,y,z\n0,inf,2,3\n").is_err());
    }

    #[test]
    fn monotone_energy_weight_on_dijkstra_optima() {
        let base = CostModel::default();
        for seed in 0..6 {
            let map = DemGrid::generate(seed, 14, 14, 0.6).unwrap();
            let mut prev_energy = f64::INFINITY;
            for w in [0.5, 1.0, 2.0, 4.0] {
                let model = base.with_energy_weight(w).unwrap();
                let r = dijkstra(&map, &model, Cell::new(0, 13), Cell::new(13, 0)).unwrap();
                let e = path_energy(r.path.as_ref().unwrap(), &base, map.world_scale_m());
                assert!(
                    e <= prev_energy + 1e-9,
                    "seed {seed}: energy rose from {prev_energy} to {e} at w {w}"
                );
                prev_energy = e;
            }
        }
    }
}
