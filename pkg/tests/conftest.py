import contextlib
import time

import numpy as np
import pytest

from bitdiff.tensor import Tensor

_ACCEPTANCE: dict = {}


def numeric_grad(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (modified in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def loop_conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Six nested loops, no vectorization."""
    b, c, h, wd = x.shape
    m, _, kh, kw = w.shape
    xp = np.zeros((b, c, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((b, m, oh, ow))
    for n in range(b):
        for o in range(m):
            for y in range(oh):
                for z in range(ow):
                    acc = 0.0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[n, ch, y * stride + i, z * stride + j] * w[o, ch, i, j]
                    out[n, o, y, z] = acc
    return out


def t64(a, grad=False) -> Tensor:
    return Tensor(np.asarray(a, np.float64), requires_grad=grad)


@pytest.fixture
def acceptance():
    """Context manager recording one acceptance criterion as PASS/FAIL."""

    @contextlib.contextmanager
    def run(number: int, title: str):
        rec = {"title": title, "detail": "", "passed": False}
        start = time.perf_counter()
        try:
            yield rec
            rec["passed"] = True
        finally:
            rec["seconds"] = time.perf_counter() - start
            _ACCEPTANCE[number] = rec

    return run


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        r = _ACCEPTANCE[n]
        status = "PASS" if r["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {n} {status}: {r['title']} ({r['seconds']:.1f}s) {r['detail']}")
