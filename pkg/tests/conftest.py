"""Shared test configuration.

Caps BLAS threads before numpy loads: the model's matrices are small enough
that thread fan-out costs more than it saves, and a fixed count keeps runs
bit-reproducible.
"""

import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")


def pytest_terminal_summary(terminalreporter):
    rows = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance" in rep.nodeid:
                rows.append((rep.nodeid.split("::")[-1], rep.passed))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, ok in sorted(rows):
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
