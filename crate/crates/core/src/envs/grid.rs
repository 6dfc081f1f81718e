use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn in_grid(self) -> bool {
        self.row < GRID_SIZE && self.col < GRID_SIZE
    }

    /// Moving off the board is a no-op.
    pub fn apply(self, mv: Move) -> Pos {
        self.try_apply(mv).unwrap_or(self)
    }

    pub fn try_apply(self, mv: Move) -> Option<Pos> {
        let (dr, dc) = mv.delta();
        let row = self.row as isize + dr;
        let col = self.col as isize + dc;
        let p = Pos::new(row.try_into().ok()?, col.try_into().ok()?);
        p.in_grid().then_some(p)
    }

    pub fn neighbors(self) -> impl Iterator<Item = Pos> {
        Move::ALL.into_iter().filter_map(move |m| self.try_apply(m))
    }

    pub fn as_features(self) -> [f64; 2] {
        [self.row as f64, self.col as f64]
    }
}

/// Cardinal moves, in the fixed tie-break order: rows before columns,
/// negative direction before positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn from_index(i: usize) -> Result<Move> {
        Move::ALL.get(i).copied().ok_or(Error::InvalidAction {
            action: i,
            n_actions: 4,
        })
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Move::Up => (-1, 0),
            Move::Down => (1, 0),
            Move::Left => (0, -1),
            Move::Right => (0, 1),
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Move::Up | Move::Down)
    }
}

pub fn all_cells() -> impl Iterator<Item = Pos> {
    (0..GRID_SIZE).flat_map(|r| (0..GRID_SIZE).map(move |c| Pos::new(r, c)))
}

/// Uniform cell not in `occupied`.
pub fn random_free_cell(rng: &mut impl Rng, occupied: &[Pos]) -> Pos {
    let free: Vec<Pos> = all_cells().filter(|p| !occupied.contains(p)).collect();
    debug_assert!(!free.is_empty());
    free[rng.gen_range(0..free.len())]
}

/// `n` distinct uniform cells.
pub fn distinct_cells(rng: &mut impl Rng, n: usize) -> Vec<Pos> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let p = random_free_cell(rng, &out);
        out.push(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn border_moves_are_noops() {
        let corner = Pos::new(0, 0);
        assert_eq!(corner.apply(Move::Up), corner);
        assert_eq!(corner.apply(Move::Left), corner);
        assert_eq!(corner.apply(Move::Down), Pos::new(1, 0));
        let far = Pos::new(4, 4);
        assert_eq!(far.apply(Move::Right), far);
        assert_eq!(far.neighbors().count(), 2);
        assert_eq!(Pos::new(2, 2).neighbors().count(), 4);
    }
}
