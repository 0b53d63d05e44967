//! Gridworld environments: mismatched-expert grids and success-example grids.
//!
//! Cells are addressed as `(x, y)` with `x` the column; states are the
//! non-wall cells in row-major order. A blocked move self-loops, and the
//! optional goal cell is absorbing under every action. The mismatched-expert
//! pairing uses one cell set with two move sets: a diagonal-capable expert
//! and a cardinal-only imitator share the state space but not the action
//! capabilities.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};

/// Desk-scale cap; dense occupancy solves are cubic in `|S||A|`.
pub const MAX_CELLS: usize = 4096;

/// Default discount for the gridworld experiments.
pub const DEFAULT_GAMMA: f64 = 0.99;

/// Density-ratio smoothing used by the gridworld experiments. Large enough
/// that states outside the expert support keep a bounded penalty (the
/// χ² clamp then prunes actions instead of whole states), small enough that
/// the reward still separates expert-like from arbitrary states.
pub const GRIDWORLD_REWARD_EPSILON: f64 = 8e-3;

/// Available move geometries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveSet {
    Cardinal4,
    Diagonal8,
}

impl MoveSet {
    /// `(dx, dy)` per action, fixed order.
    pub fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            // up, right, down, left
            MoveSet::Cardinal4 => &[(0, -1), (1, 0), (0, 1), (-1, 0)],
            // up, up-right, right, down-right, down, down-left, left, up-left
            MoveSet::Diagonal8 => &[
                (0, -1),
                (1, -1),
                (1, 0),
                (1, 1),
                (0, 1),
                (-1, 1),
                (-1, 0),
                (-1, -1),
            ],
        }
    }

    pub fn num_actions(self) -> usize {
        self.offsets().len()
    }

    /// Arrow glyph for renderings.
    pub fn glyph(self, action: usize) -> char {
        match self {
            MoveSet::Cardinal4 => ['↑', '→', '↓', '←'][action],
            MoveSet::Diagonal8 => ['↑', '↗', '→', '↘', '↓', '↙', '←', '↖'][action],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartCell {
    pub cell: (usize, usize),
    pub weight: f64,
}

/// Declarative grid description; [`build_mdp`] materializes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub walls: BTreeSet<(usize, usize)>,
    pub start_cells: Vec<StartCell>,
    pub move_set: MoveSet,
    #[serde(default)]
    pub slip_prob: f64,
    #[serde(default)]
    pub goal: Option<(usize, usize)>,
}

impl GridSpec {
    /// Open grid with a single start cell and an optional absorbing goal.
    pub fn open(
        width: usize,
        height: usize,
        move_set: MoveSet,
        start: (usize, usize),
        goal: Option<(usize, usize)>,
    ) -> Self {
        Self {
            width,
            height,
            walls: BTreeSet::new(),
            start_cells: vec![StartCell {
                cell: start,
                weight: 1.0,
            }],
            move_set,
            slip_prob: 0.0,
            goal,
        }
    }

    /// Open grid starting uniformly over every non-goal cell.
    pub fn open_uniform_start(
        width: usize,
        height: usize,
        move_set: MoveSet,
        goal: Option<(usize, usize)>,
    ) -> Self {
        let mut cells = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if goal != Some((x, y)) {
                    cells.push((x, y));
                }
            }
        }
        let weight = 1.0 / cells.len() as f64;
        let mut start_cells: Vec<StartCell> = cells
            .into_iter()
            .map(|cell| StartCell { cell, weight })
            .collect();
        let total: f64 = start_cells.iter().map(|sc| sc.weight).sum();
        start_cells[0].weight += 1.0 - total;
        Self {
            width,
            height,
            walls: BTreeSet::new(),
            start_cells,
            move_set,
            slip_prob: 0.0,
            goal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::GridSpec("zero-sized grid".into()));
        }
        let cells = self
            .width
            .checked_mul(self.height)
            .filter(|&c| c <= MAX_CELLS)
            .ok_or_else(|| {
                Error::GridSpec(format!(
                    "{}x{} exceeds the {MAX_CELLS}-cell cap",
                    self.width, self.height
                ))
            })?;
        if self.walls.len() >= cells {
            return Err(Error::GridSpec("every cell is a wall".into()));
        }
        for &(x, y) in &self.walls {
            if x >= self.width || y >= self.height {
                return Err(Error::GridSpec(format!("wall ({x},{y}) out of bounds")));
            }
        }
        if self.start_cells.is_empty() {
            return Err(Error::GridSpec("no start cells".into()));
        }
        let mut weight_sum = 0.0;
        for sc in &self.start_cells {
            let (x, y) = sc.cell;
            if x >= self.width || y >= self.height {
                return Err(Error::GridSpec(format!("start ({x},{y}) out of bounds")));
            }
            if self.walls.contains(&sc.cell) {
                return Err(Error::GridSpec(format!("start ({x},{y}) is a wall")));
            }
            if !(sc.weight > 0.0 && sc.weight.is_finite()) {
                return Err(Error::GridSpec(format!(
                    "start ({x},{y}) has weight {}",
                    sc.weight
                )));
            }
            weight_sum += sc.weight;
        }
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::GridSpec(format!(
                "start weights sum to {weight_sum}, expected 1"
            )));
        }
        if let Some((x, y)) = self.goal {
            if x >= self.width || y >= self.height {
                return Err(Error::GridSpec(format!("goal ({x},{y}) out of bounds")));
            }
            if self.walls.contains(&(x, y)) {
                return Err(Error::GridSpec(format!("goal ({x},{y}) is a wall")));
            }
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::GridSpec(format!(
                "slip_prob {} outside [0, 1)",
                self.slip_prob
            )));
        }
        Ok(())
    }

    /// Non-wall cells in row-major order; index in this list = state index.
    pub fn cell_states(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.walls.contains(&(x, y)) {
                    cells.push((x, y));
                }
            }
        }
        cells
    }

    /// State index of a cell, if it is not a wall.
    pub fn state_of_cell(&self, cell: (usize, usize)) -> Option<usize> {
        self.cell_states().iter().position(|&c| c == cell)
    }

    pub fn num_states(&self) -> usize {
        self.cell_states().len()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: GridSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid spec serializes")
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn step(&self, cell: (usize, usize), action: usize) -> (usize, usize) {
        let (dx, dy) = self.move_set.offsets()[action];
        let nx = cell.0 as i64 + dx;
        let ny = cell.1 as i64 + dy;
        if nx < 0 || ny < 0 || nx as usize >= self.width || ny as usize >= self.height {
            return cell;
        }
        let next = (nx as usize, ny as usize);
        if self.walls.contains(&next) {
            cell
        } else {
            next
        }
    }
}

/// Materializes a grid spec as a [`TabularMdp`].
///
/// Blocked moves self-loop, the goal cell (if any) is absorbing under all
/// actions, and `slip_prob` mass is spread uniformly over the outcomes of
/// the other moves. Logs a warning when the goal is unreachable from the
/// start cells.
pub fn build_mdp(spec: &GridSpec, gamma: f64) -> Result<TabularMdp> {
    spec.validate()?;
    let cells = spec.cell_states();
    let n = cells.len();
    let k = spec.move_set.num_actions();
    let index: std::collections::HashMap<(usize, usize), usize> =
        cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let index_of = |cell: (usize, usize)| index[&cell];

    let mut t = Array3::<f64>::zeros((n, k, n));
    for (s, &cell) in cells.iter().enumerate() {
        if spec.goal == Some(cell) {
            for a in 0..k {
                t[[s, a, s]] = 1.0;
            }
            continue;
        }
        for a in 0..k {
            let intended = index_of(spec.step(cell, a));
            if spec.slip_prob == 0.0 {
                t[[s, a, intended]] = 1.0;
            } else {
                t[[s, a, intended]] += 1.0 - spec.slip_prob;
                let share = spec.slip_prob / (k - 1) as f64;
                for b in 0..k {
                    if b != a {
                        t[[s, a, index_of(spec.step(cell, b))]] += share;
                    }
                }
                let total: f64 = (0..n).map(|s2| t[[s, a, s2]]).sum();
                let mut argmax = 0;
                for s2 in 0..n {
                    if t[[s, a, s2]] > t[[s, a, argmax]] {
                        argmax = s2;
                    }
                }
                t[[s, a, argmax]] += 1.0 - total;
            }
        }
    }

    let mut mu = Array1::<f64>::zeros(n);
    for sc in &spec.start_cells {
        mu[index_of(sc.cell)] += sc.weight;
    }
    let total = mu.sum();
    let argmax = mu
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    mu[argmax] += 1.0 - total;

    if let Some(goal) = spec.goal {
        if !reachable_states(spec)[index_of(goal)] {
            log::warn!("goal {goal:?} is unreachable from the start cells");
        }
    }
    TabularMdp::new(t, mu, gamma)
}

/// BFS reachability from the start cells over the move set.
pub fn reachable_states(spec: &GridSpec) -> Vec<bool> {
    let cells = spec.cell_states();
    let index: std::collections::HashMap<(usize, usize), usize> =
        cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let index_of = |cell: (usize, usize)| index[&cell];
    let mut seen = vec![false; cells.len()];
    let mut queue = std::collections::VecDeque::new();
    for sc in &spec.start_cells {
        let s = index_of(sc.cell);
        if !seen[s] {
            seen[s] = true;
            queue.push_back(sc.cell);
        }
    }
    while let Some(cell) = queue.pop_front() {
        if spec.goal == Some(cell) {
            continue; // absorbing
        }
        for a in 0..spec.move_set.num_actions() {
            let next = spec.step(cell, a);
            let s = index_of(next);
            if !seen[s] {
                seen[s] = true;
                queue.push_back(next);
            }
        }
    }
    seen
}

/// Deterministic Chebyshev shortest-path policy toward the goal; requires a
/// diagonal-capable move set. Ties break by action index, and the goal state
/// emits action 0 (it is absorbing anyway).
pub fn diagonal_expert_policy(spec: &GridSpec) -> Result<TabularPolicy> {
    spec.validate()?;
    if spec.move_set != MoveSet::Diagonal8 {
        return Err(Error::GridSpec(
            "diagonal expert requires the diagonal8 move set".into(),
        ));
    }
    let goal = spec
        .goal
        .ok_or_else(|| Error::GridSpec("diagonal expert requires a goal".into()))?;
    let cells = spec.cell_states();
    let k = spec.move_set.num_actions();
    let chebyshev = |a: (usize, usize), b: (usize, usize)| -> usize {
        (a.0.abs_diff(b.0)).max(a.1.abs_diff(b.1))
    };
    let mut probs = Array2::<f64>::zeros((cells.len(), k));
    for (s, &cell) in cells.iter().enumerate() {
        if cell == goal {
            probs[[s, 0]] = 1.0;
            continue;
        }
        let mut best_action = 0;
        let mut best = usize::MAX;
        for a in 0..k {
            let d = chebyshev(spec.step(cell, a), goal);
            if d < best {
                best = d;
                best_action = a;
            }
        }
        probs[[s, best_action]] = 1.0;
    }
    TabularPolicy::new(probs)
}

/// Uniform policy over the move set at every state.
pub fn random_behavior_policy(spec: &GridSpec) -> Result<TabularPolicy> {
    spec.validate()?;
    Ok(TabularPolicy::uniform(
        spec.num_states(),
        spec.move_set.num_actions(),
    ))
}

/// A named experiment preset: the imitator grid plus, for mismatched-expert
/// tasks, the expert grid over the same cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPreset {
    pub name: String,
    pub imitator: GridSpec,
    pub expert: Option<GridSpec>,
    pub default_gamma: f64,
    pub reward_epsilon: f64,
}

/// Cardinal imitator and diagonal expert over one open cell set.
pub fn mismatched_pair(
    width: usize,
    height: usize,
    start: (usize, usize),
    goal: (usize, usize),
) -> (GridSpec, GridSpec) {
    let imitator = GridSpec::open(width, height, MoveSet::Cardinal4, start, Some(goal));
    let expert = GridSpec::open(width, height, MoveSet::Diagonal8, start, Some(goal));
    (imitator, expert)
}

/// Named presets for the two pedagogical gridworld experiments.
///
/// `figure2a` is the mismatched-expert task: a 7x7 open grid, corner start,
/// opposite-corner absorbing goal, diagonal expert versus cardinal imitator.
/// `figure2b` is the success-example task: a 5x5 open grid, starts uniform
/// over the non-goal cells, with the absorbing goal as the single success
/// state (sized so an optimal policy parks over 90% of its occupancy there
/// at γ = 0.99).
pub fn preset(name: &str) -> Result<GridPreset> {
    match name {
        "figure2a" => {
            let (imitator, expert) = mismatched_pair(7, 7, (0, 0), (6, 6));
            Ok(GridPreset {
                name: name.into(),
                imitator,
                expert: Some(expert),
                default_gamma: DEFAULT_GAMMA,
                reward_epsilon: GRIDWORLD_REWARD_EPSILON,
            })
        }
        "figure2b" => Ok(GridPreset {
            name: name.into(),
            imitator: GridSpec::open_uniform_start(5, 5, MoveSet::Cardinal4, Some((4, 4))),
            expert: None,
            default_gamma: DEFAULT_GAMMA,
            reward_epsilon: GRIDWORLD_REWARD_EPSILON,
        }),
        other => Err(Error::GridSpec(format!(
            "unknown preset '{other}' (expected figure2a or figure2b)"
        ))),
    }
}
