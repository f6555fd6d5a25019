"""Pin BLAS to one thread before numpy is imported anywhere.

The timing-sensitive tests assert single-core budgets, and thread-count
variation is the one nondeterminism source numpy allows; forcing it to 1
keeps runtimes honest and results reproducible.  Must run before the first
numpy import, which is why it lives here rather than in a fixture.
"""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ[var] = "1"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    import re

    verdicts = {}
    for outcome, reports in terminalreporter.stats.items():
        if outcome not in ("passed", "failed", "error"):
            continue
        for rep in reports:
            m = re.search(r"test_criterion_(\d{2})_(\w+)",
                          getattr(rep, "nodeid", ""))
            if not m:
                continue
            num, name = int(m.group(1)), m.group(2)
            prev_name, prev_ok = verdicts.get(num, (name, True))
            verdicts[num] = (prev_name, prev_ok and outcome == "passed")
    if verdicts:
        terminalreporter.write_sep("-", "acceptance criteria")
        for num in sorted(verdicts):
            name, ok = verdicts[num]
            terminalreporter.write_line(
                f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'}: {name}")
