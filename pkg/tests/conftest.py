from __future__ import annotations

import numpy as np
import pytest

from dacer.numcore import backward
from dacer.numcore.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class ZeroRng:
    """Stand-in generator whose Gaussian draws are all zero."""

    def standard_normal(self, size=None):
        return np.zeros(size)


def central_diff(f, params: list[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def autodiff(loss_fn, params: list[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    backward(loss_fn())
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def max_rel_err(a, b, floor: float = 1e-6) -> float:
    """Largest per-coordinate |a - b| / max(|a|, |b|, floor)."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# -- acceptance report -----------------------------------------------------
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
