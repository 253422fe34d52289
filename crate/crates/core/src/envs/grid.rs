//! Square-grid helpers shared by the Oracle, Gathering and Escape rooms.

use crate::dec_pomdp::JointAction;
use crate::error::{usage, Result};

pub(crate) type Cell = (i32, i32);

/// Four moves plus void, in action-index order.
pub(crate) const MOVES_4: [Cell; 5] = [(0, 1), (1, 0), (0, -1), (-1, 0), (0, 0)];

/// Eight compass moves (N, NE, E, SE, S, SW, W, NW) plus void.
pub(crate) const MOVES_8: [Cell; 9] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 0),
];

pub(crate) fn clamp_move(cell: Cell, delta: Cell, size: i32) -> Cell {
    (
        (cell.0 + delta.0).clamp(0, size - 1),
        (cell.1 + delta.1).clamp(0, size - 1),
    )
}

pub(crate) fn chebyshev(a: Cell, b: Cell) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

pub(crate) fn index(cell: Cell, size: i32) -> usize {
    (cell.1 * size + cell.0) as usize
}

pub(crate) fn cell_of(index: usize, size: i32) -> Cell {
    (index as i32 % size, index as i32 / size)
}

pub(crate) fn normalize(v: i32, size: i32) -> f32 {
    v as f32 / (size - 1) as f32
}

pub(crate) fn denormalize(v: f32, size: i32) -> i32 {
    (v * (size - 1) as f32).round() as i32
}

pub(crate) fn check_joint_action(action: &JointAction, n_agents: usize, n_actions: usize) -> Result<()> {
    if action.0.len() != n_agents {
        return Err(usage(format!(
            "joint action has {} entries for {} agents",
            action.0.len(),
            n_agents
        )));
    }
    if let Some(&a) = action.0.iter().find(|&&a| a >= n_actions) {
        return Err(usage(format!("action {a} out of range 0..{n_actions}")));
    }
    Ok(())
}

/// Resolves simultaneous moves on a grid where agents may not share cells.
///
/// Agents whose targets coincide bounce back to their previous cells, as does
/// any agent whose target is held by an agent that ends the step in place.
/// Returns the final cells and the number of collisions (one per contested
/// pair, plus one per agent blocked by a stationary occupant).
pub(crate) fn resolve_moves(current: &[Cell], proposed: &[Cell]) -> (Vec<Cell>, usize) {
    let n = current.len();
    let mut resolved = proposed.to_vec();
    let mut collisions = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if proposed[i] == proposed[j] {
                collisions += 1;
                resolved[i] = current[i];
                resolved[j] = current[j];
            }
        }
    }
    loop {
        let mut changed = false;
        for i in 0..n {
            if resolved[i] == current[i] {
                continue;
            }
            if (0..n).any(|j| j != i && resolved[j] == resolved[i]) {
                resolved[i] = current[i];
                collisions += 1;
                changed = true;
            }
        }
        if !changed {
            return (resolved, collisions);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn head_on_conflict_bounces_both() {
        let (cells, hits) = resolve_moves(&[(0, 0), (2, 0)], &[(1, 0), (1, 0)]);
        assert_eq!(cells, vec![(0, 0), (2, 0)]);
        assert_eq!(hits, 1);
    }

    #[test]
    fn moving_into_a_stationary_agent_bounces() {
        let (cells, hits) = resolve_moves(&[(0, 0), (1, 0)], &[(1, 0), (1, 0)]);
        assert_eq!(cells, vec![(0, 0), (1, 0)]);
        assert_eq!(hits, 1);
    }

    #[test]
    fn chain_behind_a_bounced_agent_bounces() {
        // 0 and 1 contest (2,0); 2 follows into 1's old cell which 1 keeps.
        let current = [(1, 0), (3, 0), (4, 0)];
        let proposed = [(2, 0), (2, 0), (3, 0)];
        let (cells, hits) = resolve_moves(&current, &proposed);
        assert_eq!(cells, current.to_vec());
        assert_eq!(hits, 2);
    }

    #[test]
    fn free_moves_pass() {
        let (cells, hits) = resolve_moves(&[(0, 0), (3, 3)], &[(0, 1), (3, 2)]);
        assert_eq!(cells, vec![(0, 1), (3, 2)]);
        assert_eq!(hits, 0);
    }

    proptest! {
        #[test]
        fn resolution_never_stacks_agents(
            moves in proptest::collection::vec((0usize..5, 0usize..5, 0usize..5), 2..5)
        ) {
            let mut current: Vec<Cell> = Vec::new();
            let mut proposed = Vec::new();
            for (x, y, a) in moves {
                let c = (x as i32, y as i32);
                if current.contains(&c) {
                    continue;
                }
                current.push(c);
                proposed.push(clamp_move(c, MOVES_4[a], 5));
            }
            let (cells, _) = resolve_moves(&current, &proposed);
            for i in 0..cells.len() {
                prop_assert!(cells[i] == current[i] || cells[i] == proposed[i]);
                for j in (i + 1)..cells.len() {
                    prop_assert_ne!(cells[i], cells[j]);
                }
            }
        }
    }

    #[test]
    fn normalization_round_trips() {
        for size in [4, 5, 7, 10, 11] {
            for v in 0..size {
                assert_eq!(denormalize(normalize(v, size), size), v);
            }
        }
    }
}
