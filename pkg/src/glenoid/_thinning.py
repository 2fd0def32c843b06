"""Lee-Kashyap-Chu 3-D medial-axis thinning.

A foreground voxel is deleted when it is a border point in the current
sub-iteration direction, is not an end point, keeps the Euler characteristic
unchanged, and leaves its 26-neighbourhood as a single 26-connected object.
Candidates are collected in parallel and then rechecked one by one, so every
actual deletion is of a simple point and topology is preserved.

End points are rechecked in the sequential pass as well: a voxel that became
the tip of a line after an earlier deletion in the same pass is kept, so
even-width bars thin to a centre line instead of eroding from their ends.

Sub-iteration directions run in the fixed order +x, -x, +y, -y, +z, -z.
"""

import numpy as np
from numba import njit


def _euler_block_table() -> np.ndarray:
    """8x the Euler contribution of every 2x2x2 block configuration.

    Voxel ``(a, b, c)`` of a block is bit ``a + 2b + 4c``. Counting the
    closed-cube complex (26-connected foreground) around the shared vertex:
    the vertex weighs 1, each of its 6 edges 1/2, each of its 12 faces 1/4 and
    each of the 8 cubes 1/8.
    """
    table = np.zeros(256, dtype=np.int64)
    for cfg in range(256):
        occ = np.array([(cfg >> bit) & 1 for bit in range(8)], dtype=bool).reshape(2, 2, 2, order="F")
        if not occ.any():
            continue
        edges = sum(occ.take(side, axis=axis).any() for axis in range(3) for side in (0, 1))
        faces = 0
        for fixed in range(3):
            sub = np.moveaxis(occ, fixed, 0)
            faces += sum(sub[:, s, t].any() for s in (0, 1) for t in (0, 1))
        table[cfg] = 8 - 4 * edges + 2 * faces - int(occ.sum())
    return table


def _neighbour_tables():
    offsets = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dx, dy, dz) != (0, 0, 0):
                    offsets.append((dx, dy, dz))
    offsets = np.array(offsets, dtype=np.int64)
    diff = np.abs(offsets[:, None, :] - offsets[None, :, :]).max(axis=2)
    adjacency = (diff == 1).astype(np.uint8)
    return offsets, adjacency


EULER_BLOCK = _euler_block_table()
OFFSETS, ADJACENCY = _neighbour_tables()
DIRECTIONS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


@njit(cache=True)
def _euler_invariant(img, x, y, z, table):
    delta = 0
    for bx in (-1, 0):
        for by in (-1, 0):
            for bz in (-1, 0):
                cfg = 0
                pbit = 0
                for c in range(2):
                    for b in range(2):
                        for a in range(2):
                            bit = a + 2 * b + 4 * c
                            xx, yy, zz = x + bx + a, y + by + b, z + bz + c
                            if xx == x and yy == y and zz == z:
                                pbit = bit
                            elif img[xx, yy, zz]:
                                cfg |= 1 << bit
                delta += table[cfg | (1 << pbit)] - table[cfg]
    return delta == 0


@njit(cache=True)
def _single_object(img, x, y, z, offsets, adjacency):
    present = np.zeros(26, dtype=np.uint8)
    n = 0
    start = -1
    for q in range(26):
        if img[x + offsets[q, 0], y + offsets[q, 1], z + offsets[q, 2]]:
            present[q] = 1
            n += 1
            if start < 0:
                start = q
    if n == 0:
        return False
    seen = np.zeros(26, dtype=np.uint8)
    stack = np.empty(26, dtype=np.int64)
    top = 0
    stack[0] = start
    seen[start] = 1
    reached = 1
    while top >= 0:
        q = stack[top]
        top -= 1
        for r in range(26):
            if present[r] and not seen[r] and adjacency[q, r]:
                seen[r] = 1
                reached += 1
                top += 1
                stack[top] = r
    return reached == n


@njit(cache=True)
def _is_endpoint(img, x, y, z, offsets):
    n = 0
    for q in range(26):
        if img[x + offsets[q, 0], y + offsets[q, 1], z + offsets[q, 2]]:
            n += 1
    return n == 1


@njit(cache=True)
def _thin(img, table, offsets, adjacency, directions):
    nx, ny, nz = img.shape
    cand = np.empty((img.size, 3), dtype=np.int64)
    unchanged = 0
    while unchanged < 6:
        unchanged = 0
        for d in range(6):
            dx, dy, dz = directions[d, 0], directions[d, 1], directions[d, 2]
            m = 0
            for x in range(1, nx - 1):
                for y in range(1, ny - 1):
                    for z in range(1, nz - 1):
                        if not img[x, y, z] or img[x + dx, y + dy, z + dz]:
                            continue
                        if _is_endpoint(img, x, y, z, offsets):
                            continue
                        if not _euler_invariant(img, x, y, z, table):
                            continue
                        if not _single_object(img, x, y, z, offsets, adjacency):
                            continue
                        cand[m, 0] = x
                        cand[m, 1] = y
                        cand[m, 2] = z
                        m += 1
            changed = False
            for c in range(m):
                x, y, z = cand[c, 0], cand[c, 1], cand[c, 2]
                if _is_endpoint(img, x, y, z, offsets):
                    continue
                if _euler_invariant(img, x, y, z, table) and _single_object(
                    img, x, y, z, offsets, adjacency
                ):
                    img[x, y, z] = 0
                    changed = True
            if not changed:
                unchanged += 1
    return img


def thin(binary: np.ndarray) -> np.ndarray:
    """Thin a 3-D boolean array to a one-voxel-wide skeleton."""
    padded = np.pad(np.asarray(binary, dtype=np.uint8), 1)
    out = _thin(padded, EULER_BLOCK, OFFSETS, ADJACENCY, DIRECTIONS)
    return out[1:-1, 1:-1, 1:-1].astype(bool)
