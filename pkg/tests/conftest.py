import pytest

from logitmixoe import pipeline
from logitmixoe.config import ExperimentConfig

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One full pipeline run on the default config, shared by slow tests."""
    out = tmp_path_factory.mktemp("default_run")
    cfg = ExperimentConfig(output_dir=str(out / "run"))
    rows = pipeline.run(cfg)
    return cfg, rows
