import numpy as np
import pytest

from dmplug import autodiff as ad
from dmplug.schedule import make_linear_schedule


def fd_grad(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar numpy function."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def tape_grad(build, x):
    """Gradient of ``build(Tensor) -> scalar Tensor`` at ``x`` via the tape."""
    t = ad.Tensor(x, requires_grad=True)
    with ad.Tape() as tape:
        loss = build(t)
    (g,) = tape.backward(loss, [t])
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def check_grad(build, x, tol=1e-5, h=1e-6):
    def f(v):
        with ad.no_tape():
            return build(ad.Tensor(v)).item()
    g = tape_grad(build, x)
    return rel_err(g, fd_grad(f, x, h)), g


@pytest.fixture(scope="session")
def schedule():
    return make_linear_schedule()


# acceptance verdicts, printed together at the end of the run
_VERDICTS = {}


@pytest.fixture
def report():
    """``report(n, title, ok, detail)`` records and prints one criterion line."""
    def _report(n, title, ok, detail=""):
        line = f"criterion {str(n):>3} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _VERDICTS[n] = line
        print(line, flush=True)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    def key(n):
        s = str(n)
        digits = len(s) - len(s.lstrip("0123456789"))
        return int(s[:digits]), s[digits:]

    for n in sorted(_VERDICTS, key=key):
        terminalreporter.write_line(_VERDICTS[n])
