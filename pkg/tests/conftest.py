from __future__ import annotations

import numpy as np
import pytest

from dacmdp.solver import add_solve_listener

# every solve in the suite must contract: delta_{t+1} <= gamma * delta_t + 1e-9
CONTRACTION_SLACK = 1e-9
CONTRACTION = {"solves": 0, "violations": []}
ACCEPTANCE: dict[str, list[tuple[bool, str]]] = {}


def _check_contraction(result, gamma) -> None:
    CONTRACTION["solves"] += 1
    r = np.asarray(result.residuals)
    if r.size > 1:
        excess = r[1:] - (gamma * r[:-1] + CONTRACTION_SLACK)
        if (excess > 0).any():
            t = int(np.argmax(excess))
            msg = f"sweep {t + 2}: {r[t + 1]!r} > {gamma} * {r[t]!r} + {CONTRACTION_SLACK}"
            CONTRACTION["violations"].append(msg)
            raise AssertionError(f"residual contraction violated at {msg}")


add_solve_listener(_check_contraction)


def record(criterion: str, passed: bool, detail: str) -> None:
    """Remember one sub-check of an acceptance criterion for the summary."""
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not CONTRACTION["solves"]:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    ACCEPTANCE.setdefault("2", [])
    ACCEPTANCE["2"].append((
        not CONTRACTION["violations"],
        f"suite-wide: {CONTRACTION['solves']} solves checked, "
        f"{len(CONTRACTION['violations'])} contraction violations",
    ))
    for crit in sorted(ACCEPTANCE, key=lambda c: int(c)):
        checks = ACCEPTANCE[crit]
        ok = all(p for p, _ in checks)
        detail = "; ".join(f"{'ok' if p else 'FAILED'}: {d}" for p, d in checks)
        tr.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} | {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
