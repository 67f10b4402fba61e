def pytest_runtest_logreport(report):
    # surface the acceptance-criterion verdict lines even when output
    # capture is on (i.e. without -s)
    if report.when != "call":
        return
    for line in report.capstdout.splitlines():
        if line.startswith("ACCEPTANCE"):
            print(f"\n{line}")
