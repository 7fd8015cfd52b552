import numpy as np

from lddr.process import FiniteSupportProcess


def two_leaf_tree(low=60.0, high=140.0):
    """T=2, J=1: stage-1 demand 100, then low or high with equal probability."""
    return FiniteSupportProcess.stagewise([[[100.0]], [[low], [high]]], [[1.0], [0.5, 0.5]])


def point_tree(demands):
    """Single-leaf tree following ``demands`` (T x J)."""
    demands = np.asarray(demands, dtype=float)
    return FiniteSupportProcess.stagewise([[row] for row in demands], [[1.0]] * len(demands))


CRITERIA_LINES: list[str] = []


def criterion(k: int, ok: bool, detail: str) -> None:
    """Record and print one pass/fail line, then fail the test if needed."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    assert ok, line
