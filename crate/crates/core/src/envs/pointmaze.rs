//! Sparse-reward point navigation in an ASCII maze.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

pub const UMAZE: &str = "\
#######
#S....#
#####.#
#G....#
#######";

pub const MEDIUM_MAZE: &str = "\
#########
#S..#...#
###.#.#.#
#...#.#.#
#.###.#.#
#.....#.#
#####.#.#
#G......#
#########";

/// Largest displacement per axis per step; actions in `[-1, 1]` are scaled by it.
pub const MAX_STEP: f64 = 0.25;
pub const GOAL_RADIUS: f64 = 0.5;
pub const START_JITTER: f64 = 0.1;

/// Grid of free cells and walls. Cell `(row, col)` covers
/// `[col - 0.5, col + 0.5] × [row - 0.5, row + 0.5]`; positions are `(x, y) = (col, row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeLayout {
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    start: (usize, usize),
    goal: (usize, usize),
    /// BFS distance to the goal cell, `usize::MAX` when unreachable.
    goal_distance: Vec<usize>,
}

impl MazeLayout {
    /// Parses `#` walls, `S` start, `G` goal; any other character is free space.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::Config("empty maze layout".into()));
        }
        let cols = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0);
        let rows = lines.len();
        let mut walls = vec![true; rows * cols];
        let (mut start, mut goal) = (None, None);
        for (r, line) in lines.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                walls[r * cols + c] = ch == '#';
                match ch {
                    'S' if start.replace((r, c)).is_some() => return Err(Error::Config("maze has several 'S' cells".into())),
                    'G' if goal.replace((r, c)).is_some() => return Err(Error::Config("maze has several 'G' cells".into())),
                    _ => {}
                }
            }
        }
        let start = start.ok_or_else(|| Error::Config("maze has no 'S' cell".into()))?;
        let goal = goal.ok_or_else(|| Error::Config("maze has no 'G' cell".into()))?;
        let mut layout = Self {
            rows,
            cols,
            walls,
            start,
            goal,
            goal_distance: Vec::new(),
        };
        layout.goal_distance = layout.bfs_from(goal);
        if layout.goal_distance[layout.index(start)] == usize::MAX {
            return Err(Error::Config("maze goal is unreachable from the start".into()));
        }
        Ok(layout)
    }

    /// Inverse of [`MazeLayout::parse`] with `.` for free cells.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(match (r, c) {
                    p if p == self.start => 'S',
                    p if p == self.goal => 'G',
                    _ if self.is_wall(r, c) => '#',
                    _ => '.',
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    pub fn is_wall(&self, row: usize, col: usize) -> bool {
        row >= self.rows || col >= self.cols || self.walls[row * self.cols + col]
    }

    fn index(&self, (r, c): (usize, usize)) -> usize {
        r * self.cols + c
    }

    pub fn cell_center((r, c): (usize, usize)) -> [f64; 2] {
        [c as f64, r as f64]
    }

    /// Cell containing a point, `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (c, r) = (x.round(), y.round());
        if c < 0.0 || r < 0.0 || c as usize >= self.cols || r as usize >= self.rows {
            return None;
        }
        Some((r as usize, c as usize))
    }

    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some_and(|(r, c)| !self.is_wall(r, c))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows)
            .flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| !self.is_wall(r, c))
    }

    pub fn goal_distance(&self, cell: (usize, usize)) -> usize {
        self.goal_distance[self.index(cell)]
    }

    pub(crate) fn neighbors(&self, (r, c): (usize, usize)) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cand = [
            (r.wrapping_sub(1), c),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
        ];
        cand.into_iter().filter(|&(nr, nc)| !self.is_wall(nr, nc))
    }

    fn bfs_from(&self, source: (usize, usize)) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.rows * self.cols];
        let mut queue = VecDeque::new();
        dist[self.index(source)] = 0;
        queue.push_back(source);
        while let Some(cell) = queue.pop_front() {
            let d = dist[self.index(cell)];
            for n in self.neighbors(cell) {
                let i = self.index(n);
                if dist[i] == usize::MAX {
                    dist[i] = d + 1;
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Next waypoint on a shortest path to the goal from the cell containing `pos`.
    pub fn waypoint(&self, pos: [f64; 2]) -> [f64; 2] {
        let Some(cell) = self.cell_of(pos[0], pos[1]).filter(|&(r, c)| !self.is_wall(r, c)) else {
            return Self::cell_center(self.goal);
        };
        if cell == self.goal {
            return Self::cell_center(self.goal);
        }
        let next = self
            .neighbors(cell)
            .min_by_key(|&n| self.goal_distance(n))
            .unwrap_or(self.goal);
        Self::cell_center(next)
    }
}

#[derive(Debug, Clone)]
pub struct PointMaze {
    layout: MazeLayout,
    pos: [f64; 2],
}

impl PointMaze {
    pub fn new(layout: MazeLayout) -> Self {
        let pos = MazeLayout::cell_center(layout.start);
        Self { layout, pos }
    }

    pub fn layout(&self) -> &MazeLayout {
        &self.layout
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let [cx, cy] = MazeLayout::cell_center(self.layout.start);
        self.pos = [
            cx + rng.random_range(-START_JITTER..=START_JITTER),
            cy + rng.random_range(-START_JITTER..=START_JITTER),
        ];
        self.pos.to_vec()
    }

    /// Moves axis by axis; a move that would enter a wall leaves that axis unchanged.
    /// Returns `(next_obs, reward, reached_goal)`.
    pub fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        let dx = MAX_STEP * action[0].clamp(-1.0, 1.0);
        let dy = MAX_STEP * action[1].clamp(-1.0, 1.0);
        let [mut x, mut y] = self.pos;
        if self.layout.is_free_point(x + dx, y) {
            x += dx;
        }
        if self.layout.is_free_point(x, y + dy) {
            y += dy;
        }
        self.pos = [x, y];
        let [gx, gy] = MazeLayout::cell_center(self.layout.goal);
        let reached = ((x - gx).powi(2) + (y - gy).powi(2)).sqrt() <= GOAL_RADIUS;
        (self.pos.to_vec(), if reached { 1.0 } else { 0.0 }, reached)
    }

    /// Waypoint-following controller along BFS shortest paths.
    pub fn expert_action(&self, obs: &[f64]) -> Vec<f64> {
        let target = self.layout.waypoint([obs[0], obs[1]]);
        vec![
            ((target[0] - obs[0]) / MAX_STEP).clamp(-1.0, 1.0),
            ((target[1] - obs[1]) / MAX_STEP).clamp(-1.0, 1.0),
        ]
    }
}
