import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    results = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m or (rep.when != "call" and outcome == "passed"):
                continue
            num = int(m.group(1))
            status = "PASS" if outcome == "passed" else "FAIL"
            if results.get(num, ("PASS",))[0] == "FAIL":
                continue
            results[num] = (status, m.group(2).replace("_", " "), rep.duration)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        status, name, secs = results[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {name} ({secs:.1f}s)")
