"""Pure-numpy versions of the kernels in ``_kernels.pyx``.

Jacobi here uses round-robin (tournament) ordering so that each round
applies n/2 disjoint rotations as one vectorized update. The ordering
differs from the compiled cyclic sweep, so factors may differ by sign or
within-tie rotation, but singular values agree to working precision.
"""

import numpy as np

_ROW_CHUNK = 4096


def _round_robin(n):
    # circle method; a dummy slot -1 pads odd n
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0]
        if pairs:
            p, q = np.array(pairs).T
            rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_columns(g, v, tol, max_sweeps):
    n = g.shape[0]
    rounds = _round_robin(n)
    # columns below eps * ||g||_F are rounding noise; rotating them only
    # regenerates noise
    floor2 = float(np.einsum("ij,ij->", g, g)) * np.finfo(np.float64).eps ** 2
    for sweep in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            gp, gq = g[p], g[q]
            alpha = np.einsum("ij,ij->i", gp, gp)
            beta = np.einsum("ij,ij->i", gq, gq)
            gamma = np.einsum("ij,ij->i", gp, gq)
            act = (
                (gamma != 0.0) & (alpha > floor2) & (beta > floor2)
                & (np.abs(gamma) > tol * np.sqrt(alpha) * np.sqrt(beta))
            )
            if not act.any():
                continue
            rotated = True
            p, q = p[act], q[act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                root = np.sqrt(1.0 + zeta * zeta)
                t = np.where(
                    np.abs(zeta) > 1e150,
                    0.5 / zeta,
                    np.sign(zeta + (zeta == 0)) / (np.abs(zeta) + root),
                )
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for mat in (g, v):
                mp, mq = mat[p], mat[q]
                mat[p] = c[:, None] * mp - s[:, None] * mq
                mat[q] = s[:, None] * mp + c[:, None] * mq
        if not rotated:
            return sweep + 1
    return -1


def csr_matmat(indptr, indices, data, x):
    nrows = len(indptr) - 1
    out = np.zeros((nrows, x.shape[1]))
    for lo in range(0, nrows, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, nrows)
        a, b = indptr[lo], indptr[hi]
        if a == b:
            continue
        rows = np.repeat(np.arange(lo, hi), np.diff(indptr[lo : hi + 1]))
        np.add.at(out, rows, data[a:b, None] * x[indices[a:b]])
    return out


def csr_rmatmat(indptr, indices, data, x, ncols):
    nrows = len(indptr) - 1
    out = np.zeros((ncols, x.shape[1]))
    for lo in range(0, nrows, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, nrows)
        a, b = indptr[lo], indptr[hi]
        if a == b:
            continue
        rows = np.repeat(np.arange(lo, hi), np.diff(indptr[lo : hi + 1]))
        np.add.at(out, indices[a:b], data[a:b, None] * x[rows])
    return out
