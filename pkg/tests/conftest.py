import time

_START = time.perf_counter()
RUNTIME_LIMIT = 600.0  # seconds, whole suite


def pytest_terminal_summary(terminalreporter):
    elapsed = time.perf_counter() - _START
    try:
        from test_acceptance import RESULTS
    except ImportError:
        RESULTS = {}
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            ok, detail = RESULTS[n]
            terminalreporter.line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    ok = elapsed < RUNTIME_LIMIT
    terminalreporter.line(f"{'PASS' if ok else 'FAIL'} suite runtime {elapsed:.1f} s < {RUNTIME_LIMIT:.0f} s")
