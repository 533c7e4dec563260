import re
from pathlib import Path

import numpy as np
import pytest

from robustpt import numkit as nk
from robustpt.policy import init_params


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


@pytest.fixture
def tiny_mlp():
    return init_params([3, 4, 2], nk.rng_stream(11, ["tiny"]), log_std=-0.3, out_scale=0.5)


REFERENCE_DOC = Path(__file__).resolve().parents[1] / "paper.md"


def reference_table(caption: str) -> dict:
    """Rows ``name & $value$`` of the LaTeX table with the given caption."""
    text = REFERENCE_DOC.read_text()
    start = text.index(f"\\caption{{{caption}}}")
    body = text[start : text.index("\\end{tabular", start)]
    rows = {}
    for line in body.splitlines():
        m = re.match(r"\s*(.+?)\s*&\s*(.+?)\s*\\\\", line)
        if m and "multicolumn" not in line:
            rows[m.group(1)] = m.group(2).strip("$ ")
    return rows


def reference_value(caption: str, prefix: str) -> float:
    """Numeric value of the first table row whose name starts with ``prefix``; ``a/b`` is a ratio."""
    for name, value in reference_table(caption).items():
        if name.startswith(prefix):
            num, _, den = value.partition("/")
            return float(num) / (float(den) if den else 1.0)
    raise KeyError(prefix)


# acceptance results, one (number, passed, detail) per criterion
ACCEPTANCE: list = []


def record(number: int, passed: bool, detail: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE.append((number, passed, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
