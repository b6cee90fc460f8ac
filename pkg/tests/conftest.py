import numpy as np
import pytest


def naive_conv2d(x, weights, biases):
    """Six nested loops, zero padding 1, stride 1."""
    n, c, h, w = x.shape
    o = weights.shape[0]
    out = np.zeros((n, o, h, w))
    for b in range(n):
        for oc in range(o):
            for i in range(h):
                for j in range(w):
                    acc = biases[oc]
                    for ic in range(c):
                        for ki in range(3):
                            for kj in range(3):
                                si, sj = i + ki - 1, j + kj - 1
                                if 0 <= si < h and 0 <= sj < w:
                                    acc += weights[oc, ic, ki, kj] * x[b, ic, si, sj]
                    out[b, oc, i, j] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> summary lines, printed after the run
_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion (``ok=None`` for INFO)."""

    def record(number, ok, detail):
        tag = "INFO" if ok is None else "PASS" if ok else "FAIL"
        line = f"[{tag}] criterion {number:>2}: {detail}"
        _ACCEPTANCE.setdefault(number, []).append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            for line in _ACCEPTANCE[number]:
                terminalreporter.write_line(line)
