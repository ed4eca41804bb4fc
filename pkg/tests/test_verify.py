import math

from selfdecoherence.verify import Check, run_suite


def test_spectral_suite_passes_and_echoes():
    lines = []
    checks = run_suite(0, ["spectral"], echo=lines.append)
    assert checks and all(c.passed for c in checks)
    assert len(lines) == len(checks) and all(line.startswith("PASS") for line in lines)


def test_check_serialization():
    c = Check("x", math.nan, (1.0, 2.0), "in", False)
    assert c.as_dict()["value"] is None
    assert c.line().startswith("FAIL  x")
