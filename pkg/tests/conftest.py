import acceptance_log


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(acceptance_log.RESULTS):
        passed, detail = acceptance_log.RESULTS[k]
        lines = detail.splitlines() or [""]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {lines[0]}")
        for line in lines[1:]:
            terminalreporter.write_line(f"    {line}")
