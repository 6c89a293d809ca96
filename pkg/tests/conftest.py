import numpy as np
import pytest

from speedrs.paths import Path


def riemann_signature(values, level, subdivisions=10_000, extrapolate=True):
    """Nested left-point sums of the iterated integrals of a piecewise-linear path.

    Independent of the Chen/Horner code: the path is resampled on a fine grid
    and every level is accumulated as a running sum over increments. The
    left-point error is O(1/N); one Richardson step removes it.
    """
    if extrapolate:
        coarse = riemann_signature(values, level, subdivisions, False)
        fine = riemann_signature(values, level, 2 * subdivisions, False)
        return 2.0 * fine - coarse
    values = np.asarray(values, dtype=float)
    n_seg = len(values) - 1
    per = max(1, subdivisions // n_seg)
    fine = [values[0]]
    for a, b in zip(values[:-1], values[1:]):
        w = np.arange(1, per + 1)[:, None] / per
        fine.extend(a + w * (b - a))
    fine = np.array(fine)
    incs = np.diff(fine, axis=0)
    d = values.shape[1]
    # run[k] holds the level-k iterated integral up to the current point
    run = [np.ones(())] + [np.zeros((d,) * k) for k in range(1, level + 1)]
    for dx in incs:
        for k in range(level, 0, -1):
            run[k] = run[k] + np.multiply.outer(run[k - 1], dx)
    return np.concatenate([r.ravel() for r in run[1:]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_path(rng, length=6, dim=2, scale=1.0, augment=False):
    times = np.sort(rng.uniform(0, 1, length))
    times[0], times[-1] = 0.0, 1.0
    times = np.unique(times)
    vals = np.cumsum(rng.normal(0, scale, (len(times), dim)), axis=0)
    if augment:
        vals = np.column_stack([times, vals])
    return Path(times, vals)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
