import os
import subprocess
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "repro", derandomize=True, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repro")


@pytest.fixture(scope="session")
def pipeline_run():
    """One full training + evaluation pass with the default configuration."""
    from statebsd.pipeline import PipelineConfig, run_pipeline

    return run_pipeline(PipelineConfig())


_RERUN = """
import sys
from pathlib import Path
from statebsd.pipeline import PipelineConfig, run_pipeline
res = run_pipeline(PipelineConfig(), workers=2)
Path(sys.argv[1], "bundle.json").write_text(res.bundle.dumps())
Path(sys.argv[1], "report.json").write_text(res.report.dumps())
"""


@pytest.fixture(scope="session")
def pipeline_rerun(tmp_path_factory):
    """A second pass in a fresh interpreter (other hash seed, two workers).

    Returns the (bundle, report) artifact texts.
    """
    out = tmp_path_factory.mktemp("rerun")
    env = dict(os.environ, PYTHONHASHSEED="12345")
    subprocess.run([sys.executable, "-c", _RERUN, str(out)], check=True, env=env)
    return (out / "bundle.json").read_text(), (out / "report.json").read_text()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
