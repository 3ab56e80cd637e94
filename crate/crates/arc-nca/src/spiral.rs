//! Procedural generator for the inward rectangular spiral family.
//!
//! The recipe is a turtle walk: start at the top-left corner heading right,
//! painting as you go. Turn clockwise whenever the cell ahead is off-grid or
//! already painted, or the cell beyond it is already painted (that lookahead
//! leaves the one-cell gap between consecutive arms). Stop when the same test
//! fails again immediately after turning. Run on an all-background grid this
//! yields the classic one-gap clockwise spiral at any size, which makes it a
//! size-independent oracle for models trained on small spirals.

use crate::data::{Grid, Task, TaskExample};

/// Headings in clockwise order: right, down, left, up.
const DIRS: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

/// Paints the inward clockwise spiral of the given color on a background of
/// color 0.
pub fn spiral_grid(rows: usize, cols: usize, color: u8) -> Grid {
    let mut grid = Grid::filled(rows, cols, 0).expect("spiral dimensions in range");
    let mut painted = vec![false; rows * cols];
    let in_bounds = |y: i64, x: i64| y >= 0 && y < rows as i64 && x >= 0 && x < cols as i64;

    let (mut y, mut x) = (0i64, 0i64);
    let mut dir = 0usize;
    grid.set(0, 0, color);
    painted[0] = true;
    loop {
        // A heading is walkable when the next cell is on-grid and unpainted
        // and the cell beyond it is not painted either.
        let walkable = |dir: usize, painted: &[bool]| {
            let (dy, dx) = DIRS[dir];
            let (ny, nx) = (y + dy, x + dx);
            if !in_bounds(ny, nx) || painted[ny as usize * cols + nx as usize] {
                return false;
            }
            let (ly, lx) = (ny + dy, nx + dx);
            !(in_bounds(ly, lx) && painted[ly as usize * cols + lx as usize])
        };
        if !walkable(dir, &painted) {
            dir = (dir + 1) % 4;
            if !walkable(dir, &painted) {
                break;
            }
        }
        let (dy, dx) = DIRS[dir];
        y += dy;
        x += dx;
        grid.set(y as usize, x as usize, color);
        painted[y as usize * cols + x as usize] = true;
    }
    grid
}

/// The input grids of the spiral family: all background.
pub fn spiral_input(rows: usize, cols: usize) -> Grid {
    Grid::filled(rows, cols, 0).expect("spiral dimensions in range")
}

/// Builds a spiral-growth task: every input is blank, every output is the
/// spiral at that size.
pub fn spiral_task(
    id: &str,
    train_sizes: &[(usize, usize)],
    test_sizes: &[(usize, usize)],
    color: u8,
) -> Task {
    let pair = |&(r, c): &(usize, usize)| TaskExample {
        input: spiral_input(r, c),
        output: spiral_grid(r, c, color),
    };
    Task {
        id: id.to_string(),
        train: train_sizes.iter().map(pair).collect(),
        test: test_sizes.iter().map(pair).collect(),
    }
}

/// Checks that a task's training pairs follow the spiral recipe exactly:
/// blank inputs, generator-identical outputs of the given color. Returns the
/// first discrepancy as text.
pub fn validate_spiral_recipe(task: &Task, color: u8) -> Result<(), String> {
    for (i, pair) in task.train.iter().enumerate() {
        let (rows, cols) = pair.input.shape();
        if pair.input != spiral_input(rows, cols) {
            return Err(format!("train[{i}].input is not all background"));
        }
        let expected = spiral_grid(rows, cols, color);
        if pair.output != expected {
            return Err(format!(
                "train[{i}].output ({rows}x{cols}) does not match the spiral recipe"
            ));
        }
    }
    Ok(())
}
