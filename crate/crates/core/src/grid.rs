//! Planar occupancy grid: the navigable layer of the exploration map.
//!
//! Row index grows with `y` (north), column index grows with `x` (east).
//! Cell `(row, col)` spans `[origin + col*cs, origin + (col+1)*cs)` in x.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Frontier, FrontierId, Position2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct GridIndex {
    pub row: u32,
    pub col: u32,
}

impl GridIndex {
    pub const fn new(row: u32, col: u32) -> Self {
        Self { row, col }
    }
}

impl From<(u32, u32)> for GridIndex {
    fn from((row, col): (u32, u32)) -> Self {
        Self { row, col }
    }
}

impl From<GridIndex> for (u32, u32) {
    fn from(g: GridIndex) -> Self {
        (g.row, g.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Unknown,
    Occupied,
    Navigable,
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("cell size must be positive and finite, got {0}")]
    BadCellSize(f64),
    #[error("grid dimensions must be non-zero")]
    Empty,
    #[error("malformed grid row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("unsupported grid format {0:?}")]
    Format(String),
}

/// Neighbor offsets `(d_row, d_col)` in the fixed order E, N, W, S, NE, NW, SW, SE.
pub const NEIGHBORS8: [(i64, i64); 8] = [
    (0, 1),
    (1, 0),
    (0, -1),
    (-1, 0),
    (1, 1),
    (1, -1),
    (-1, -1),
    (-1, 1),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GridDocument", try_from = "GridDocument")]
pub struct OccupancyGrid {
    cell_size: f64,
    origin: Position2,
    width: u32,
    height: u32,
    cells: Vec<CellState>,
    explored: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(origin: Position2, width: u32, height: u32, cell_size: f64) -> Result<Self, GridError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::BadCellSize(cell_size));
        }
        if width == 0 || height == 0 {
            return Err(GridError::Empty);
        }
        let n = width as usize * height as usize;
        Ok(Self {
            cell_size,
            origin,
            width,
            height,
            cells: vec![CellState::Unknown; n],
            explored: vec![false; n],
        })
    }

    /// Grid with origin at (0, 0) large enough to cover `size_x` by `size_y` meters.
    pub fn covering(size_x: f64, size_y: f64, cell_size: f64) -> Result<Self, GridError> {
        let w = (size_x / cell_size - 1e-9).ceil().max(1.0) as u32;
        let h = (size_y / cell_size - 1e-9).ceil().max(1.0) as u32;
        Self::new(Position2::new(0.0, 0.0), w, h, cell_size)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Position2 {
        self.origin
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn flat(&self, idx: GridIndex) -> usize {
        idx.row as usize * self.width as usize + idx.col as usize
    }

    pub fn contains(&self, idx: GridIndex) -> bool {
        idx.row < self.height && idx.col < self.width
    }

    /// Signed lookup used when walking neighbors.
    pub fn checked(&self, row: i64, col: i64) -> Option<GridIndex> {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            None
        } else {
            Some(GridIndex::new(row as u32, col as u32))
        }
    }

    pub fn index_of(&self, p: Position2) -> Option<GridIndex> {
        let col = ((p.x - self.origin.x) / self.cell_size).floor();
        let row = ((p.y - self.origin.y) / self.cell_size).floor();
        if !col.is_finite() || !row.is_finite() {
            return None;
        }
        self.checked(row as i64, col as i64)
    }

    pub fn center(&self, idx: GridIndex) -> Position2 {
        Position2::new(
            self.origin.x + (idx.col as f64 + 0.5) * self.cell_size,
            self.origin.y + (idx.row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn state(&self, idx: GridIndex) -> CellState {
        self.cells[self.flat(idx)]
    }

    pub fn set_state(&mut self, idx: GridIndex, state: CellState) {
        let i = self.flat(idx);
        self.cells[i] = state;
        if state != CellState::Navigable {
            self.explored[i] = false;
        }
    }

    pub fn is_navigable(&self, idx: GridIndex) -> bool {
        self.state(idx) == CellState::Navigable
    }

    pub fn is_explored(&self, idx: GridIndex) -> bool {
        self.explored[self.flat(idx)]
    }

    /// Flags a navigable cell as explored. Returns false (and does nothing)
    /// for cells that are not navigable.
    pub fn set_explored(&mut self, idx: GridIndex) -> bool {
        let i = self.flat(idx);
        if self.cells[i] != CellState::Navigable {
            return false;
        }
        self.explored[i] = true;
        true
    }

    pub fn is_unexplored_navigable(&self, idx: GridIndex) -> bool {
        let i = self.flat(idx);
        self.cells[i] == CellState::Navigable && !self.explored[i]
    }

    pub fn indices(&self) -> impl Iterator<Item = GridIndex> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| GridIndex::new(r, c)))
    }

    pub fn neighbors8(&self, idx: GridIndex) -> impl Iterator<Item = GridIndex> + '_ {
        NEIGHBORS8
            .iter()
            .filter_map(move |&(dr, dc)| self.checked(idx.row as i64 + dr, idx.col as i64 + dc))
    }

    pub fn explored_count(&self) -> usize {
        self.explored.iter().filter(|e| **e).count()
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|c| **c == state).count()
    }

    fn cell_char(&self, idx: GridIndex) -> char {
        match self.state(idx) {
            CellState::Unknown => '?',
            CellState::Occupied => '#',
            CellState::Navigable if self.is_explored(idx) => 'e',
            CellState::Navigable => '.',
        }
    }

    /// Plain-text map, north row first. Frontier cells are drawn as the last
    /// digit of the frontier id.
    pub fn render_ascii(&self, frontiers: &BTreeMap<FrontierId, Frontier>) -> String {
        let mut overlay = BTreeMap::new();
        for f in frontiers.values() {
            let digit = char::from_digit(f.id.0 % 10, 10).unwrap_or('*');
            for cell in &f.region {
                overlay.insert(*cell, digit);
            }
        }
        let mut out = String::with_capacity(self.len() + self.height as usize);
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                let idx = GridIndex::new(row, col);
                out.push(overlay.get(&idx).copied().unwrap_or_else(|| self.cell_char(idx)));
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of [`render_ascii`](Self::render_ascii) without frontier digits.
    /// Lines are read north row first; blank lines are skipped.
    pub fn from_ascii(text: &str, origin: Position2, cell_size: f64) -> Result<Self, GridError> {
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let height = lines.len() as u32;
        let width = lines.first().map_or(0, |l| l.chars().count()) as u32;
        let mut grid = Self::new(origin, width, height, cell_size)?;
        for (i, line) in lines.iter().enumerate() {
            let row = height - 1 - i as u32;
            if line.chars().count() as u32 != width {
                return Err(GridError::MalformedRow { row: i, reason: "ragged row".into() });
            }
            for (col, ch) in line.chars().enumerate() {
                let idx = GridIndex::new(row, col as u32);
                match ch {
                    '?' => {}
                    '#' => grid.set_state(idx, CellState::Occupied),
                    '.' => grid.set_state(idx, CellState::Navigable),
                    'e' => {
                        grid.set_state(idx, CellState::Navigable);
                        grid.set_explored(idx);
                    }
                    other => {
                        return Err(GridError::MalformedRow {
                            row: i,
                            reason: format!("unexpected cell {other:?}"),
                        })
                    }
                }
            }
        }
        Ok(grid)
    }

    fn encode_row(&self, row: u32) -> String {
        let mut out = String::new();
        let mut run: Option<(char, usize)> = None;
        for col in 0..self.width {
            let ch = self.cell_char(GridIndex::new(row, col));
            run = match run {
                Some((c, n)) if c == ch => Some((c, n + 1)),
                Some((c, n)) => {
                    let _ = write!(out, "{n}{c}");
                    Some((ch, 1))
                }
                None => Some((ch, 1)),
            };
        }
        if let Some((c, n)) = run {
            let _ = write!(out, "{n}{c}");
        }
        out
    }
}

/// Wire form of the grid: one run-length-encoded string per row, row 0 first.
/// Each run is a decimal count followed by a cell character (`?#.e`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDocument {
    pub cell_size: f64,
    pub origin: Position2,
    pub width: u32,
    pub height: u32,
    pub rows: Vec<String>,
}

impl From<OccupancyGrid> for GridDocument {
    fn from(g: OccupancyGrid) -> Self {
        let rows = (0..g.height).map(|r| g.encode_row(r)).collect();
        GridDocument { cell_size: g.cell_size, origin: g.origin, width: g.width, height: g.height, rows }
    }
}

impl TryFrom<GridDocument> for OccupancyGrid {
    type Error = GridError;

    fn try_from(doc: GridDocument) -> Result<Self, Self::Error> {
        let mut grid = OccupancyGrid::new(doc.origin, doc.width, doc.height, doc.cell_size)?;
        if doc.rows.len() != doc.height as usize {
            return Err(GridError::MalformedRow { row: doc.rows.len(), reason: "row count mismatch".into() });
        }
        for (r, line) in doc.rows.iter().enumerate() {
            let mut col = 0u32;
            let mut count = String::new();
            for ch in line.chars() {
                if ch.is_ascii_digit() {
                    count.push(ch);
                    continue;
                }
                let n: u32 = count
                    .parse()
                    .map_err(|_| GridError::MalformedRow { row: r, reason: "missing run length".into() })?;
                count.clear();
                if col + n > doc.width {
                    return Err(GridError::MalformedRow { row: r, reason: "row overflows width".into() });
                }
                for _ in 0..n {
                    let idx = GridIndex::new(r as u32, col);
                    match ch {
                        '?' => {}
                        '#' => grid.set_state(idx, CellState::Occupied),
                        '.' => grid.set_state(idx, CellState::Navigable),
                        'e' => {
                            grid.set_state(idx, CellState::Navigable);
                            grid.set_explored(idx);
                        }
                        other => {
                            return Err(GridError::MalformedRow {
                                row: r,
                                reason: format!("unexpected cell {other:?}"),
                            })
                        }
                    }
                    col += 1;
                }
            }
            if !count.is_empty() || col != doc.width {
                return Err(GridError::MalformedRow { row: r, reason: "row does not fill width".into() });
            }
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_center_agree() {
        let g = OccupancyGrid::covering(3.0, 2.0, 0.1).unwrap();
        assert_eq!((g.width(), g.height()), (30, 20));
        let idx = g.index_of(Position2::new(0.45, 0.05)).unwrap();
        assert_eq!(idx, GridIndex::new(0, 4));
        let c = g.center(idx);
        assert!((c.x - 0.45).abs() < 1e-12 && (c.y - 0.05).abs() < 1e-12);
        assert!(g.index_of(Position2::new(-0.01, 0.0)).is_none());
        assert!(g.index_of(Position2::new(3.0, 0.0)).is_none());
    }

    #[test]
    fn explored_requires_navigable() {
        let mut g = OccupancyGrid::covering(1.0, 1.0, 0.1).unwrap();
        let idx = GridIndex::new(2, 2);
        assert!(!g.set_explored(idx));
        g.set_state(idx, CellState::Navigable);
        assert!(g.set_explored(idx));
        g.set_state(idx, CellState::Occupied);
        assert!(!g.is_explored(idx));
    }

    #[test]
    fn ascii_and_rle_round_trip() {
        let text = "\
            ??##\n\
            .e.#\n\
            ee..\n";
        let g = OccupancyGrid::from_ascii(text, Position2::new(0.0, 0.0), 0.1).unwrap();
        assert_eq!(g.render_ascii(&BTreeMap::new()), "??##\n.e.#\nee..\n");
        let doc = GridDocument::from(g.clone());
        assert_eq!(doc.rows, vec!["2e2.", "1.1e1.1#", "2?2#"]);
        let back = OccupancyGrid::try_from(doc).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_bad_rows() {
        let doc = GridDocument {
            cell_size: 0.1,
            origin: Position2::new(0.0, 0.0),
            width: 3,
            height: 1,
            rows: vec!["2.".into()],
        };
        assert!(OccupancyGrid::try_from(doc).is_err());
        assert_eq!(
            OccupancyGrid::new(Position2::new(0.0, 0.0), 1, 1, 0.0).unwrap_err(),
            GridError::BadCellSize(0.0)
        );
    }
}
