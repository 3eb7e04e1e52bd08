"""Collects acceptance outcomes and prints one line per criterion after the run."""

_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    cid = props["criterion"]
    failed = report.failed or hasattr(report, "wasxfail")
    if report.when == "call" or failed:
        prev = _criteria.get(cid, ("PASS", ""))[0]
        status = "FAIL" if failed or prev == "FAIL" else "PASS"
        _criteria[cid] = (status, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: int(c[1:].split(".")[0])):
        status, detail = _criteria[cid]
        terminalreporter.write_line(f"{cid:<5} {status}  {detail}")
