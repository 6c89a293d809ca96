"""Pure numpy implementations of the Goursat kernels.

Same signatures and results as the compiled ``_kernels`` module; the grid
recursion runs cell by cell but is vectorised across path pairs.
"""
import numpy as np

LINEAR = 0
RBF = 1
FIRST_ORDER = 0
SECOND_ORDER = 1

OVERFLOW = 1e300
_BLOCK = 2048


def _static_block(xa, yb, kind, sigma):
    # xa: (B, P, d), yb: (B, Q, d) -> (B, P, Q)
    if kind == LINEAR:
        return np.einsum("bpd,bqd->bpq", xa, yb)
    sq = (
        np.sum(xa**2, axis=2)[:, :, None]
        + np.sum(yb**2, axis=2)[:, None, :]
        - 2.0 * np.einsum("bpd,bqd->bpq", xa, yb)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * sigma * sigma))


def _sweep(delta, scheme, stride):
    """Run the recursion on a batch of increment grids (B, P-1, Q-1).

    Returns the diagonal samples u[s*stride, s*stride] when ``stride`` > 0,
    otherwise the terminal values only.
    """
    nb, rows, cols = delta.shape
    prev = np.ones((nb, cols + 1))
    diag = None
    if stride:
        ndiag = rows // stride + 1
        diag = np.empty((nb, ndiag))
        diag[:, 0] = 1.0
    for a in range(rows):
        cur = np.empty_like(prev)
        cur[:, 0] = 1.0
        d_row = delta[:, a, :]
        if scheme == SECOND_ORDER:
            d2 = d_row * d_row / 12.0
            c1 = 1.0 + 0.5 * d_row + d2
            c2 = 1.0 - d2
            for b in range(cols):
                cur[:, b + 1] = (cur[:, b] + prev[:, b + 1]) * c1[:, b] - prev[:, b] * c2[:, b]
        else:
            for b in range(cols):
                cur[:, b + 1] = cur[:, b] + prev[:, b + 1] + prev[:, b] * (d_row[:, b] - 1.0)
        prev = cur
        if stride and (a + 1) % stride == 0:
            diag[:, (a + 1) // stride] = cur[:, a + 1]
    return diag if stride else prev[:, -1]


def goursat_pairs(X, Y, kind, sigma, scheme, stride, symmetric):
    """Signature-kernel values for every pair (X[i], Y[j]).

    X is (n, P, d) and Y is (m, Q, d): statically unlifted points on an already
    refined grid. Returns (n, m) terminal values, or (n, m, K) diagonal samples
    when ``stride`` > 0 (requires P == Q).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    n, m = X.shape[0], Y.shape[0]
    if stride and X.shape[1] != Y.shape[1]:
        raise ValueError("diagonal sampling needs equal grid lengths")
    if symmetric:
        ii, jj = np.triu_indices(n)
    else:
        ii, jj = np.divmod(np.arange(n * m), m)
    width = (X.shape[1] - 1) // stride + 1 if stride else None
    flat = np.empty((len(ii), width) if stride else len(ii))
    for start in range(0, len(ii), _BLOCK):
        sl = slice(start, start + _BLOCK)
        G = _static_block(X[ii[sl]], Y[jj[sl]], kind, sigma)
        delta = G[:, 1:, 1:] - G[:, 1:, :-1] - G[:, :-1, 1:] + G[:, :-1, :-1]
        flat[sl] = _sweep(delta, scheme, stride)
    out = np.empty((n, m, width) if stride else (n, m))
    out[ii, jj] = flat
    if symmetric:
        out[jj, ii] = flat
    _check(out)
    return out


def goursat_increments(delta, scheme):
    """Terminal values for a batch of precomputed increment grids (B, P, Q)."""
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    out = np.empty(delta.shape[0])
    for start in range(0, delta.shape[0], _BLOCK):
        sl = slice(start, start + _BLOCK)
        out[sl] = _sweep(delta[sl], scheme, 0)
    _check(out)
    return out


def _check(out):
    if not np.all(np.isfinite(out)) or np.any(np.abs(out) > OVERFLOW):
        from .errors import NumericalOverflow

        raise NumericalOverflow("signature kernel PDE solution exceeded 1e300")
