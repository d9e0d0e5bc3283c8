import numpy as np
import pytest

from edad import numerics as nx


def _central(loss_fn, flat, j, h):
    old = flat[j]
    flat[j] = old + h
    up = loss_fn().item()
    flat[j] = old - h
    down = loss_fn().item()
    flat[j] = old
    return (up - down) / (2 * h)


def _rel(a, n):
    return abs(a - n) / max(abs(a) + abs(n), 1e-6)


LADDER = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)


def fd_check(loss_fn, params, h=1e-6, coords=None, seed=0, refine=False):
    """Max relative error between autograd and central differences.

    ``loss_fn`` builds the loss Tensor from the (mutated in place) params.
    ``coords`` limits the check to that many randomly chosen coordinates.
    With ``refine`` a coordinate whose step-``h`` estimate disagrees is
    re-estimated over a ladder of steps, keeping the estimate where two
    successive steps agree best; the analytic value plays no part in that
    choice, so sharply curved directions get a converged reference.
    """
    analytic = nx.gradient(loss_fn(), params)
    where = [(name, j) for name, p in params.items() for j in range(p.data.size)]
    if coords is not None and coords < len(where):
        pick = np.random.default_rng(seed).choice(len(where), coords, replace=False)
        where = [where[k] for k in sorted(pick)]
    worst = 0.0
    for name, j in where:
        flat = params[name].data.reshape(-1)
        a = analytic[name].reshape(-1)[j]
        err = _rel(a, _central(loss_fn, flat, j, h))
        if refine and err >= 1e-4:
            est = [_central(loss_fn, flat, j, s) for s in LADDER]
            k = min(range(len(est) - 1), key=lambda k: abs(est[k] - est[k + 1]))
            err = _rel(a, est[k + 1])
        worst = max(worst, err)
    return float(worst)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---- acceptance bookkeeping: one line per criterion in the terminal summary

ACCEPTANCE: list[str] = []


def record(name: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


# ---- desk-scale fixture shared by the end-to-end checks

E2E = dict(d=64, layers=2, heads=8, B=100, stride=10, max_epochs=10, seed=0)


@pytest.fixture(scope="session")
def e2e_run():
    """Train once on the contaminated sine fixture; returns (model, cfg, test series, seconds)."""
    import time

    from edad.cli import RunConfig, load_test, load_train
    from edad.data import preprocess
    from edad.trainer import train

    cfg = RunConfig(**E2E)
    t0 = time.perf_counter()
    tc = cfg.train_config()
    batches, stats = preprocess(load_train(cfg), tc.B, tc.stride)
    model, _ = train(batches, tc, stats=stats)
    return model, cfg, load_test(cfg), time.perf_counter() - t0
