from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# small simulated study that runs every stage in seconds
FAST = {
    "run": {"seed": 7},
    "simulate": {"rows": 60, "cols": 60, "years": 14, "intensity": 0.02, "n_projects": 1, "n_donors": 16,
                 "radius": 3, "buffer_radii": [4]},
    "sc": {"covariate_list": ["slope", "deforestation_cumulative"], "outer_starts": 2},
    "gsc": {"estimator": "ife", "factors": 1, "bootstrap_runs": 20, "controls": "all"},
    "match": {"k": 3, "genetic": {"population": 8, "generations": 4},
              "panel": {"max_lead": 3, "max_controls": 3, "bootstrap_runs": 50}},
}

_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``report(n, ok, detail)`` records one pass/fail line for the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
