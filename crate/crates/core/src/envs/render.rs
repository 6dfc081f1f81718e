//! Plain-text rendering of world snapshots.
//!
//! Grid glyphs, highest priority first: agent index digit (`#` when several
//! agents share a cell), `M` monster, `a` apple, `*` lit cell, `.` empty.

use std::fmt::Write;

use super::grid::{Pos, GRID_SIZE};
use super::Snapshot;

pub fn glyph_at(snapshot: &Snapshot, cell: Pos) -> char {
    let Snapshot::Grid {
        agents,
        monster,
        apples,
        lit,
        ..
    } = snapshot
    else {
        return ' ';
    };
    let here: Vec<usize> = (0..agents.len()).filter(|&i| agents[i] == cell).collect();
    match here.len() {
        0 => {}
        1 => return char::from_digit(here[0] as u32 % 10, 10).unwrap_or('?'),
        _ => return '#',
    }
    if *monster == Some(cell) {
        'M'
    } else if apples.contains(&cell) {
        'a'
    } else if *lit == Some(cell) {
        '*'
    } else {
        '.'
    }
}

pub fn render(snapshot: &Snapshot) -> String {
    let mut out = String::new();
    match snapshot {
        Snapshot::Iterated { round, last_actions } => {
            let name = |a: i8| match a {
                0 => "Stag",
                1 => "Hare",
                _ => "-",
            };
            let _ = writeln!(
                out,
                "round {round}: last actions ({}, {})",
                name(last_actions[0]),
                name(last_actions[1])
            );
        }
        Snapshot::Grid { step, streak, lit, .. } => {
            let _ = write!(out, "step {step}");
            if lit.is_some() {
                let _ = write!(out, " L={streak}");
            }
            out.push('\n');
            for r in 0..GRID_SIZE {
                for c in 0..GRID_SIZE {
                    out.push(glyph_at(snapshot, Pos::new(r, c)));
                }
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_entities() {
        let snap = Snapshot::Grid {
            step: 3,
            agents: vec![Pos::new(0, 0), Pos::new(4, 4)],
            monster: Some(Pos::new(2, 2)),
            apples: vec![Pos::new(1, 1), Pos::new(3, 3)],
            lit: None,
            streak: 0,
        };
        let text = render(&snap);
        assert_eq!(text, "step 3\n0....\n.a...\n..M..\n...a.\n....1\n");
    }
}
