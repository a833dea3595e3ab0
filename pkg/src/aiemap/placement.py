"""Placement of layer rectangles on the 2D tile grid.

Each layer is a block ``width = cas_len`` columns by ``height = cas_num``
rows, anchored at its bottom-left tile.  The transition cost of an ordered
placement is::

    J = sum_i |c_out(i) - c_in(i+1)| + lam * |r_out(i) - r_in(i+1)|
      + mu * sum_i r_top(i)

Transitions are counted for consecutive pairs only; every block pays its
``mu * r_top`` term.  Port model (see :func:`ports`): data enters at the
leftmost column and leaves at the rightmost column, both on the bottom row,
because memory tiles sit under the array and cascades run west to east.

Three solvers share this cost: :func:`place_bnb` (exact branch and bound),
:func:`place_greedy` (baselines) and :func:`place_exhaustive` (brute force
for tiny instances, used as a test oracle).
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field

from .errors import InfeasibleError, ValidationError

EPS = 1e-9


@dataclass(frozen=True)
class Block:
    graph_id: str
    width: int
    height: int
    anchor: tuple[int, int] | None = None   # pinned (col, row)


@dataclass
class PlacementSolution:
    anchors: list[tuple[int, int]]
    cost: float
    legal: bool
    optimal: bool = True
    method: str = "bnb"
    nodes_explored: int = 0
    blocks: list[Block] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "cost": round(self.cost, 12),
            "legal": self.legal,
            "optimal": self.optimal,
            "anchors": {b.graph_id: list(a) for b, a in zip(self.blocks, self.anchors)},
            "blocks": [{"id": b.graph_id, "width": b.width, "height": b.height,
                        **({"pin": list(b.anchor)} if b.anchor else {})} for b in self.blocks],
        }


def ports(block: Block, anchor) -> tuple[int, int, int, int, int]:
    """(c_in, c_out, r_in, r_out, r_top) for a block anchored at ``anchor``."""
    c, r = anchor
    return c, c + block.width - 1, r, r, r + block.height - 1


def transition(prev: Block, pa, nxt: Block, na, lam: float) -> float:
    _, c_out, _, r_out, _ = ports(prev, pa)
    c_in, _, r_in, _, _ = ports(nxt, na)
    return abs(c_out - c_in) + lam * abs(r_out - r_in)


def cost_J(blocks: list[Block], anchors, lam: float = 1.0, mu: float = 0.05) -> float:
    j = 0.0
    for i, (b, a) in enumerate(zip(blocks, anchors)):
        j += mu * ports(b, a)[4]
        if i + 1 < len(anchors):
            j += transition(b, a, blocks[i + 1], anchors[i + 1], lam)
    return j


class _TailBound:
    """Admissible bound on the cost still to come after blocks ``< j`` are placed.

    Three ingredients, all valid for any completion:

    * every unplaced block pays at least ``mu * (height - 1)`` (``mu`` times
      its pinned top row if pinned);
    * a hop can never land on the previous block's output tile, so each
      transition costs at least one column, or ``lam`` when the column is
      unchanged and only the row moves;
    * chaining blocks eastwards drifts the port column by ``width - 1`` per
      block, and the grid edge forces that drift to be paid back: from a last
      placed block with input column ``c`` the column terms add up to at least
      ``H = c + max_m (drift_m + width_m) - cols``.

    The last two combine as ``min_z max(H, T - z) + lam * z`` over the number
    ``z`` of column-preserving hops among the ``T`` remaining transitions.
    """

    def __init__(self, blocks: list[Block], cols: int, lam: float, mu: float):
        n = len(blocks)
        self.n, self.cols, self.lam = n, cols, lam
        self.mu_tail = [0.0] * (n + 1)
        for i in range(n - 1, -1, -1):
            b = blocks[i]
            top = b.anchor[1] + b.height - 1 if b.anchor is not None else b.height - 1
            self.mu_tail[i] = self.mu_tail[i + 1] + mu * top
        drift = [0] * (n + 1)
        for i, b in enumerate(blocks):
            drift[i + 1] = drift[i] + b.width - 1
        self.drift = drift
        self.reach = [float("-inf")] * (n + 1)     # max_{m >= j} drift[m] + width_m
        for i in range(n - 1, -1, -1):
            self.reach[i] = max(self.reach[i + 1], drift[i] + blocks[i].width)

    def __call__(self, j: int, last_col: int) -> float:
        lb = self.mu_tail[j]
        t = self.n - j
        if j == 0 or t == 0:
            return lb
        h = max(0.0, last_col + self.reach[j] - self.drift[j - 1] - self.cols)
        z_opts = {0, t, max(0, int(t - h))}
        return lb + min(max(h, t - z) + self.lam * z for z in z_opts)


def lower_bound(blocks: list[Block], anchors, lam: float = 1.0, mu: float = 0.05,
                cols: int | None = None) -> float:
    """Admissible bound on every completion of the partial placement ``anchors``.

    Exact cost of the placed prefix plus :class:`_TailBound` for the rest.
    An empty assignment gets 0 and a complete one gets exactly J.  Without
    ``cols`` the grid edge argument is dropped (infinitely wide grid).
    """
    k = len(anchors)
    if k == 0:
        return 0.0
    lb = cost_J(blocks[:k], anchors, lam, mu)
    tail = _TailBound(blocks, cols if cols is not None else 10 ** 9, lam, mu)
    return lb + tail(k, anchors[-1][0])


def _grid(device_or_dims):
    if isinstance(device_or_dims, tuple):
        return device_or_dims
    return device_or_dims.cols, device_or_dims.rows


def _cells(block: Block, anchor):
    c, r = anchor
    return {(c + dc, r + dr) for dc in range(block.width) for dr in range(block.height)}


def _mask(block: Block, anchor, cols: int) -> int:
    c, r = anchor
    row_bits = ((1 << block.width) - 1) << c
    m = 0
    for dr in range(block.height):
        m |= row_bits << ((r + dr) * cols)
    return m


def _check_instance(blocks, cols, rows, start):
    if not blocks:
        raise ValidationError("nothing to place")
    for b in blocks:
        if not (1 <= b.width <= cols and 1 <= b.height <= rows):
            raise InfeasibleError(f"graph {b.graph_id}: {b.width}x{b.height} block does not fit a {cols}x{rows} grid")
        if b.anchor is not None:
            c, r = b.anchor
            if not (0 <= c and c + b.width <= cols and 0 <= r and r + b.height <= rows):
                raise InfeasibleError(f"graph {b.graph_id}: pinned anchor {b.anchor} leaves the grid")
    if sum(b.width * b.height for b in blocks) > cols * rows:
        raise InfeasibleError(f"blocks need {sum(b.width * b.height for b in blocks)} tiles, grid has {cols * rows}")
    pinned = [b for b in blocks if b.anchor is not None]
    for a, b in itertools.combinations(pinned, 2):
        if _cells(a, a.anchor) & _cells(b, b.anchor):
            raise InfeasibleError(f"pinned graphs {a.graph_id} and {b.graph_id} overlap")
    sc, sr = start
    if not (0 <= sc < cols and 0 <= sr < rows):
        raise ValidationError(f"start {start} outside the grid")


def _fixed_anchor(i: int, b: Block, start):
    if b.anchor is not None:
        return tuple(b.anchor)
    if i == 0:
        return tuple(start)
    return None


def _seq_key(anchors) -> tuple:
    # enumeration order is row-major: compare (row, col)
    return tuple((r, c) for c, r in anchors)


def place_bnb(blocks: list[Block], device, lam: float = 1.0, mu: float = 0.05, start=(0, 0),
              time_limit: float | None = None, node_limit: int | None = None) -> PlacementSolution:
    """Minimum-J legal placement by depth-first branch and bound.

    Candidate anchors of each block are generated row-major ascending and
    visited in order of their bound (ties row-major).  A branch is cut when its
    :func:`lower_bound` exceeds the incumbent, or equals it while its anchor
    prefix is already lexicographically larger, so among equal-cost
    solutions the lexicographically smallest (row, col) sequence wins.  The
    greedy baselines seed the incumbent.  With ``time_limit`` (seconds) the
    search may stop early and return its incumbent with ``optimal=False``.
    ``node_limit`` does the same after that many search nodes; unlike the
    wall-clock limit it keeps the result reproducible.
    """
    cols, rows = _grid(device)
    blocks = list(blocks)
    _check_instance(blocks, cols, rows, start)
    n = len(blocks)
    pinned_mask = 0
    for b in blocks:
        if b.anchor is not None:
            pinned_mask |= _mask(b, b.anchor, cols)

    cands = []
    for i, b in enumerate(blocks):
        fixed = _fixed_anchor(i, b, start)
        if fixed is not None:
            c, r = fixed
            if c + b.width > cols or r + b.height > rows:
                raise InfeasibleError(f"graph {b.graph_id}: start anchor {fixed} leaves the grid")
            anchors = [fixed]
        else:
            anchors = [(c, r) for r in range(rows - b.height + 1) for c in range(cols - b.width + 1)]
        own = _mask(b, b.anchor, cols) if b.anchor is not None else 0
        lst = []
        for a in anchors:
            m = _mask(b, a, cols)
            if m & (pinned_mask & ~own):
                continue
            lst.append((a, m))
        cands.append(lst)

    tail = _TailBound(blocks, cols, lam, mu)

    best_cost = float("inf")
    best_seq: list | None = None
    best_key = None
    for mode in ("right", "up"):
        try:
            g = place_greedy(blocks, (cols, rows), mode, start, lam, mu)
        except InfeasibleError:
            continue
        k = _seq_key(g.anchors)
        if g.cost < best_cost - EPS or (abs(g.cost - best_cost) <= EPS and k < best_key):
            best_cost, best_seq, best_key = g.cost, list(g.anchors), k

    deadline = None if time_limit is None else time.monotonic() + time_limit
    state = {"nodes": 0, "timed_out": False, "deepest": 0}
    seq: list = []

    def dfs(i: int, occ: int, cost: float):
        nonlocal best_cost, best_seq, best_key
        state["nodes"] += 1
        if deadline is not None and state["nodes"] % 2048 == 0 and time.monotonic() > deadline:
            state["timed_out"] = True
        if node_limit is not None and state["nodes"] > node_limit:
            state["timed_out"] = True
        if state["timed_out"]:
            return
        state["deepest"] = max(state["deepest"], i)
        if i == n:
            k = _seq_key(seq)
            if cost < best_cost - EPS or (abs(cost - best_cost) <= EPS and (best_key is None or k < best_key)):
                best_cost, best_seq, best_key = cost, list(seq), k
            return
        b = blocks[i]
        own = _mask(b, b.anchor, cols) if b.anchor is not None else 0
        free_occ = occ & ~own
        children = []
        for a, m in cands[i]:
            if m & free_occ:
                continue
            inc = mu * (a[1] + b.height - 1)
            if i > 0:
                inc += transition(blocks[i - 1], seq[-1], b, a, lam)
            children.append((cost + inc + tail(i + 1, a[0]), a[1], a[0], cost + inc, m))
        children.sort()
        for bound, r, c, new_cost, m in children:
            if bound > best_cost + EPS:
                break
            a = (c, r)
            seq.append(a)
            if bound >= best_cost - EPS and best_key is not None and _seq_key(seq) > best_key[:len(seq)]:
                seq.pop()
                continue
            dfs(i + 1, occ | m, new_cost)
            seq.pop()
            if state["timed_out"]:
                return

    dfs(0, pinned_mask, 0.0)
    if best_seq is None:
        culprit = blocks[min(state["deepest"], n - 1)]
        if state["timed_out"]:
            raise InfeasibleError(f"search limit reached before graph {culprit.graph_id} could be placed")
        raise InfeasibleError(f"no legal placement: graph {culprit.graph_id} cannot be placed")
    return PlacementSolution(best_seq, best_cost, legal=is_legal(blocks, best_seq, (cols, rows)),
                             optimal=not state["timed_out"], method="bnb",
                             nodes_explored=state["nodes"], blocks=blocks)


def place_greedy(blocks: list[Block], device, mode: str = "right", start=(0, 0),
                 lam: float = 1.0, mu: float = 0.05) -> PlacementSolution:
    """Baseline: put each block right next to (``right``) or on top of
    (``up``) the previous one.

    Right mode fills a horizontal band starting at the start column; when a
    block would cross the right edge the band wraps to the row just above
    the tallest block of the current band.  Up mode is the transpose:
    column bands that wrap to the column right of the widest block.  If the
    natural slot is taken (by a pinned block) the cursor keeps moving along
    the band.  Pinned blocks go to their pins.
    """
    if mode not in ("right", "up"):
        raise ValueError("mode must be 'right' or 'up'")
    cols, rows = _grid(device)
    blocks = list(blocks)
    _check_instance(blocks, cols, rows, start)
    occupied: set = set()
    for b in blocks:
        if b.anchor is not None:
            occupied |= _cells(b, b.anchor)
    anchors: list = []
    band_base = start[1] if mode == "right" else start[0]
    band_extent = band_base          # highest top row / rightmost column seen in the band
    cursor = None
    for i, b in enumerate(blocks):
        fixed = _fixed_anchor(i, b, start)
        if fixed is not None:
            a = fixed
            cells = _cells(b, a)
            if b.anchor is None:
                if a[0] + b.width > cols or a[1] + b.height > rows or cells & occupied:
                    raise InfeasibleError(f"graph {b.graph_id} cannot be placed at start {a}")
                occupied |= cells
        else:
            if mode == "right":
                c, r = cursor[0], band_base
            else:
                c, r = band_base, cursor[1]
            while True:
                if mode == "right" and c + b.width > cols:
                    band_base = band_extent + 1
                    band_extent = band_base
                    c, r = start[0], band_base
                    if c + b.width > cols:
                        c = 0
                elif mode == "up" and r + b.height > rows:
                    band_base = band_extent + 1
                    band_extent = band_base
                    c, r = band_base, start[1]
                    if r + b.height > rows:
                        r = 0
                if (mode == "right" and r + b.height > rows) or (mode == "up" and c + b.width > cols):
                    raise InfeasibleError(f"greedy-{mode}: graph {b.graph_id} cannot be placed")
                if _cells(b, (c, r)) & occupied:
                    if mode == "right":
                        c += 1
                    else:
                        r += 1
                    continue
                break
            a = (c, r)
            occupied |= _cells(b, a)
        anchors.append(a)
        if mode == "right":
            cursor = (a[0] + b.width, a[1])
            if b.anchor is None:
                band_extent = max(band_extent, a[1] + b.height - 1)
        else:
            cursor = (a[0], a[1] + b.height)
            if b.anchor is None:
                band_extent = max(band_extent, a[0] + b.width - 1)
    return PlacementSolution(anchors, cost_J(blocks, anchors, lam, mu), legal=is_legal(blocks, anchors, (cols, rows)),
                             optimal=False, method=f"greedy_{mode}", blocks=blocks)


def place_exhaustive(blocks: list[Block], device, lam: float = 1.0, mu: float = 0.05,
                     start=(0, 0)) -> PlacementSolution:
    """Brute force over every combination of anchors.  Only for tiny grids."""
    cols, rows = _grid(device)
    blocks = list(blocks)
    options = []
    for i, b in enumerate(blocks):
        fixed = _fixed_anchor(i, b, start)
        if fixed is not None:
            options.append([tuple(fixed)])
        else:
            options.append([(c, r) for r in range(rows - b.height + 1) for c in range(cols - b.width + 1)])
    best = None
    for combo in itertools.product(*options):
        if not is_legal(blocks, combo, (cols, rows)):
            continue
        j = cost_J(blocks, combo, lam, mu)
        key = _seq_key(combo)
        if best is None or j < best[0] - EPS or (abs(j - best[0]) <= EPS and key < best[1]):
            best = (j, key, list(combo))
    if best is None:
        raise InfeasibleError("no legal placement")
    return PlacementSolution(best[2], best[0], True, True, "exhaustive", blocks=blocks)


def is_legal(blocks: list[Block], anchors, device) -> bool:
    cols, rows = _grid(device)
    seen: set = set()
    for b, a in zip(blocks, anchors):
        if b.anchor is not None and tuple(b.anchor) != tuple(a):
            return False
        cells = _cells(b, a)
        if any(not (0 <= c < cols and 0 <= r < rows) for c, r in cells) or cells & seen:
            return False
        seen |= cells
    return len(anchors) == len(blocks)


# instance files and rendering -------------------------------------------------

def load_instance(data: bytes | str) -> dict:
    """Placement instance: ``{"cols", "rows", "blocks": [{"id", "width",
    "height", "pin"?}], "lambda"?, "mu"?, "start"?, "time_limit"?}``."""
    try:
        d = json.loads(data)
    except json.JSONDecodeError as e:
        raise ValidationError(f"instance line {e.lineno}: {e.msg}") from None
    try:
        blocks = [Block(str(b["id"]), int(b["width"]), int(b["height"]),
                        tuple(b["pin"]) if b.get("pin") is not None else None) for b in d["blocks"]]
        return {
            "cols": int(d["cols"]), "rows": int(d["rows"]), "blocks": blocks,
            "lam": float(d.get("lambda", 1.0)), "mu": float(d.get("mu", 0.05)),
            "start": tuple(d.get("start", (0, 0))), "time_limit": d.get("time_limit"),
        }
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"malformed placement instance: {e}") from None


def _label(i: int) -> str:
    alphabet = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    return alphabet[i % len(alphabet)]


def render_ascii(sol: PlacementSolution, device) -> str:
    """Grid picture, top row first; each block drawn with its index label."""
    cols, rows = _grid(device)
    grid = [["." for _ in range(cols)] for _ in range(rows)]
    for i, (b, a) in enumerate(zip(sol.blocks, sol.anchors)):
        for c, r in _cells(b, a):
            grid[r][c] = _label(i)
    lines = [f"{r:2d} " + "".join(grid[r]) for r in range(rows - 1, -1, -1)]
    lines.append("   " + "".join(str(c % 10) for c in range(cols)))
    legend = [f"{_label(i)}={b.graph_id}@{tuple(a)}" for i, (b, a) in enumerate(zip(sol.blocks, sol.anchors))]
    lines.append(f"{sol.method} J={sol.cost:.4f}  " + " ".join(legend))
    return "\n".join(lines) + "\n"


def render_svg(sol: PlacementSolution, device, cell: int = 20) -> str:
    cols, rows = _grid(device)
    w, h = cols * cell, rows * cell
    palette = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
               "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h + 24}" viewBox="0 0 {w} {h + 24}">',
           f'<rect x="0" y="0" width="{w}" height="{h}" fill="#f4f4f4" stroke="#999"/>']
    for c in range(cols):
        for r in range(rows):
            out.append(f'<rect x="{c * cell}" y="{(rows - 1 - r) * cell}" width="{cell}" height="{cell}" '
                       f'fill="none" stroke="#ddd"/>')
    for i, (b, a) in enumerate(zip(sol.blocks, sol.anchors)):
        x = a[0] * cell
        y = (rows - a[1] - b.height) * cell
        out.append(f'<rect x="{x}" y="{y}" width="{b.width * cell}" height="{b.height * cell}" '
                   f'fill="{palette[i % len(palette)]}" fill-opacity="0.8" stroke="#222"/>')
        out.append(f'<text x="{x + 3}" y="{y + 14}" font-size="11" font-family="monospace">{b.graph_id}</text>')
    out.append(f'<text x="2" y="{h + 16}" font-size="12" font-family="monospace">'
               f'{sol.method} J={sol.cost:.4f} ({cols}x{rows})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
