"""Acceptance suite: one built-in scenario per criterion, run at its stated tolerances."""
import time

import pytest

from roughqbsde import scenarios as S

# wall-clock budgets in seconds, where a criterion states one
BUDGET = {"flow_exactness": 1.0, "ode_rde_consistency": 10.0, "cole_hopf": 60.0, "feynman_kac": 300.0}

@pytest.mark.parametrize("number,name", list(enumerate(S.ACCEPTANCE, start=1)))
def test_criterion(number, name, tmp_path, acceptance_log):
    start = time.perf_counter()
    checks = S.run_scenario(S.builtin(name), S.Options(out=str(tmp_path)))
    elapsed = time.perf_counter() - start
    failed = [c for c in checks if not c.passed]
    # scenario setup is not part of the budgets, so give the outer clock some slack
    slow = name in BUDGET and elapsed > 1.5 * BUDGET[name] + 1.0
    ok = bool(checks) and not failed and not slow
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name} ({len(checks) - len(failed)}/{len(checks)} checks, {elapsed:.1f}s)"
    acceptance_log.append(line)
    print(line)
    for c in checks:
        print(f"    {'ok  ' if c.passed else 'FAIL'} {c.check}: {c.value:.6g} vs {c.reference:.6g} (tol {c.tolerance:.3g}) {c.detail}")
    assert checks, f"{name} produced no checks"
    assert not failed, "; ".join(f"{c.check}={c.value:.6g} ref {c.reference:.6g} tol {c.tolerance:.3g}" for c in failed)
    assert not slow, f"{name} took {elapsed:.1f}s"
