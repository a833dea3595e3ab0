"""Place eight layer rectangles on the 38 x 8 array three ways.

    python demos/placement_comparison.py

Branch and bound is compared with the two greedy sweeps on the same
transition cost; the ASCII maps show where each layer lands.
"""

import time

from aiemap.placement import Block, place_bnb, place_greedy, render_ascii

BLOCKS = [Block("g0", 4, 4), Block("g1", 8, 4), Block("g2", 6, 3), Block("g3", 8, 4),
          Block("g4", 6, 2), Block("g5", 4, 4), Block("g6", 8, 4), Block("g7", 2, 2)]
GRID = (38, 8)
LAM, MU = 1.0, 0.05


def main():
    for name, run in [
        ("greedy_right", lambda: place_greedy(BLOCKS, GRID, "right", lam=LAM, mu=MU)),
        ("greedy_up", lambda: place_greedy(BLOCKS, GRID, "up", lam=LAM, mu=MU)),
        ("branch_and_bound", lambda: place_bnb(BLOCKS, GRID, LAM, MU, node_limit=200_000)),
    ]:
        t0 = time.perf_counter()
        sol = run()
        print(f"{name}: J = {sol.cost:.2f} ({time.perf_counter() - t0:.2f}s)")
        print(render_ascii(sol, GRID))


if __name__ == "__main__":
    main()
