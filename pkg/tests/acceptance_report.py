"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
import time
from contextlib import contextmanager

LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str, budget_s: float | None = None):
    """Run a criterion body; record PASS/FAIL with timing, re-raising failures."""
    notes: list[str] = []
    t0 = time.perf_counter()
    try:
        yield notes
        elapsed = time.perf_counter() - t0
        if budget_s is not None:
            assert elapsed < budget_s, f"took {elapsed:.2f} s, budget {budget_s:g} s"
    except BaseException as exc:
        elapsed = time.perf_counter() - t0
        LINES.append(f"criterion {number:2d} FAIL  {title} ({elapsed:.2f} s): {exc}".splitlines()[0])
        raise
    detail = "; ".join(notes)
    LINES.append(f"criterion {number:2d} PASS  {title} ({elapsed:.2f} s){': ' + detail if detail else ''}")
