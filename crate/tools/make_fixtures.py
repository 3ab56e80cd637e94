#!/usr/bin/env python3
"""Regenerates the JSON task fixtures under crates/arc-nca/fixtures/.

The spiral generator here is an independent reimplementation of the turtle
recipe in crates/arc-nca/src/spiral.rs; the Rust test suite cross-checks the
two by comparing these files against its own generator. Run from anywhere:

    python3 tools/make_fixtures.py
"""

import json
import pathlib

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "crates" / "arc-nca" / "fixtures"

# Headings in clockwise order: right, down, left, up.
DIRS = [(0, 1), (1, 0), (0, -1), (-1, 0)]


def spiral(rows: int, cols: int, color: int) -> list[list[int]]:
    """Inward clockwise spiral from the top-left corner on a 0 background.

    The turtle paints as it walks. A heading is walkable when the next cell
    is on-grid and unpainted and the cell beyond it is unpainted too (the
    lookahead leaves one-cell gaps between arms). When the current heading is
    not walkable the turtle turns clockwise once; if the new heading is not
    walkable either, it stops.
    """
    grid = [[0] * cols for _ in range(rows)]
    painted = [[False] * cols for _ in range(rows)]
    y, x, d = 0, 0, 0
    grid[0][0] = color
    painted[0][0] = True

    def walkable(d: int) -> bool:
        dy, dx = DIRS[d]
        ny, nx = y + dy, x + dx
        if not (0 <= ny < rows and 0 <= nx < cols) or painted[ny][nx]:
            return False
        ly, lx = ny + dy, nx + dx
        return not (0 <= ly < rows and 0 <= lx < cols and painted[ly][lx])

    while True:
        if not walkable(d):
            d = (d + 1) % 4
            if not walkable(d):
                break
        dy, dx = DIRS[d]
        y, x = y + dy, x + dx
        grid[y][x] = color
        painted[y][x] = True
    return grid


def blank(rows: int, cols: int) -> list[list[int]]:
    return [[0] * cols for _ in range(rows)]


def spiral_task(train_sizes, test_sizes, color=3):
    pair = lambda rc: {"input": blank(*rc), "output": spiral(*rc, color)}
    return {"train": [pair(rc) for rc in train_sizes], "test": [pair(rc) for rc in test_sizes]}


def identity_task():
    grids = [
        [[1, 0, 0, 2], [0, 1, 2, 0], [0, 2, 1, 0], [2, 0, 0, 1]],
        [[3, 3, 0, 0], [3, 0, 0, 4], [0, 0, 4, 4], [0, 3, 4, 0]],
        [[5, 0, 5, 0], [0, 5, 0, 5], [1, 0, 1, 0], [0, 1, 0, 1]],
    ]
    test = [[2, 0, 0, 1], [0, 2, 1, 0], [0, 1, 2, 0], [1, 0, 0, 2]]
    return {
        "train": [{"input": g, "output": g} for g in grids],
        "test": [{"input": test, "output": test}],
    }


# An L-triomino occupies a 2x2 box minus one corner; the rule completes the
# square by painting the missing corner blue (1). The test set includes an
# orientation absent from training (missing top-left corner).
TRIOMINO = {
    "br": {"cells": [(0, 0), (0, 1), (1, 0)], "fill": (1, 1)},  # missing bottom-right
    "bl": {"cells": [(0, 0), (0, 1), (1, 1)], "fill": (1, 0)},  # missing bottom-left
    "tr": {"cells": [(0, 0), (1, 0), (1, 1)], "fill": (0, 1)},  # missing top-right
    "tl": {"cells": [(0, 1), (1, 0), (1, 1)], "fill": (0, 0)},  # missing top-left
}


def corner_fill_pair(placements, size=7):
    inp = blank(size, size)
    out = blank(size, size)
    for kind, r, c in placements:
        shape = TRIOMINO[kind]
        for dy, dx in shape["cells"]:
            inp[r + dy][c + dx] = 8
            out[r + dy][c + dx] = 8
        fy, fx = shape["fill"]
        out[r + fy][c + fx] = 1
    return {"input": inp, "output": out}


def corner_fill_task():
    return {
        "train": [
            corner_fill_pair([("br", 1, 0), ("bl", 2, 5), ("tr", 4, 2)]),
            corner_fill_pair([("bl", 0, 3), ("tr", 2, 0), ("br", 4, 4)]),
        ],
        "test": [
            corner_fill_pair([("bl", 1, 1), ("tl", 2, 4), ("tr", 4, 1)]),
        ],
    }


def write(name, task):
    FIXTURES.mkdir(parents=True, exist_ok=True)
    path = FIXTURES / name
    with open(path, "w") as f:
        json.dump(task, f, separators=(",", ":"))
        f.write("\n")
    print(f"wrote {path}")


def main():
    write("identity.json", identity_task())
    write("corner_fill.json", corner_fill_task())
    write(
        "spiral_growth.json",
        spiral_task([(6, 6), (8, 8), (10, 10)], [(12, 12)]),
    )
    write(
        "spiral_100.json",
        spiral_task([(6, 6), (8, 8), (10, 10)], [(100, 100)]),
    )


if __name__ == "__main__":
    main()
