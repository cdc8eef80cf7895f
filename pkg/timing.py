import contextlib
import io
import statistics
import sys
import timeit
from pathlib import Path

import pytest

TIERS = ("category_partition", "metamorphic")


def run_module_with_timing(test_module, num_runs=5):
    """
    Run one test module repeatedly and record its wall-clock time.

    :param test_module: path to the test module
    :param num_runs: number of pytest sessions to time
    :return: timing statistics, or None when a run failed
    """

    def run_once():
        captured = io.StringIO()
        with contextlib.redirect_stdout(captured), contextlib.redirect_stderr(captured):
            result = pytest.main(["-q", "-p", "no:cacheprovider", test_module])
        if result != 0:
            print(f"\n{test_module} failed with exit code {result}")
            print(captured.getvalue())
        return result == 0

    times = []
    for _ in range(num_runs):
        passed = []
        times.append(timeit.timeit(lambda: passed.append(run_once()), number=1))
        if not passed[0]:
            return None

    return {
        "total_runs": num_runs,
        "mean": statistics.mean(times),
        "std_dev": statistics.stdev(times) if num_runs > 1 else 0,
        "min": min(times),
    }


def discover_modules(root="tests"):
    modules = []
    for tier in TIERS:
        modules.extend(sorted(str(p) for p in Path(root, tier).glob("test_*.py")))
    return modules


if __name__ == "__main__":
    runs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    for module in discover_modules():
        print(f"\nTiming results for {module}:")
        stats = run_module_with_timing(module, runs)
        if stats is None:
            continue
        print("Execution Time Statistics (in seconds):")
        for key, value in stats.items():
            print(f"{key}: {value:.4f}")
