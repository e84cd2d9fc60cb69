import numpy as np
import pytest

from knotfield.ratmap import preset

FAST_PRESETS = ("hopf", "trefoil", "fig8_a", "fig8_d", "cable_23_32", "unknot_P_only")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=FAST_PRESETS)
def any_preset(request):
    return preset(request.param)


def pytest_collection_modifyitems(config, items):
    # acceptance criteria run last so their summary lines are grouped
    items.sort(key=lambda item: "test_acceptance" in item.nodeid)


_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    entry = _CRITERIA.setdefault(key, {"passed": True, "measured": []})
    entry["passed"] &= report.passed
    entry["title"] = props.get("title", "")
    if "measured" in props:
        entry["measured"].append(props["measured"])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(k.split(".")[0]), k)):
        e = _CRITERIA[key]
        status = "PASS" if e["passed"] else "FAIL"
        line = f"criterion {key}: {status}  {e['title']}"
        if e["measured"]:
            line += "  [" + "; ".join(e["measured"]) + "]"
        terminalreporter.write_line(line)
