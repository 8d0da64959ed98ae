"""Shared fixtures: the reference dataset and identified model, built once per
session through the command-line pipeline, and the acceptance report."""

import json

import pytest

from thermoform_mpc import persist
from thermoform_mpc.cli import main
from thermoform_mpc.narx import NarxModel

_REPORT = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """``report(criterion, name, ok, detail)`` prints and records one verdict line."""
    def _report(criterion: int, name: str, ok: bool, detail: str) -> None:
        line = f"criterion {criterion} ({name}): {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[_REPORT].append(line)
    return _report


class Pipeline:
    """Outputs of excite -> collect -> fit -> validate at the default settings."""

    def __init__(self, root):
        self.root = root
        self.excitation = root / "excite" / "excitation.csv"
        self.dataset_path = root / "collect" / "dataset.csv"
        self.model_path = root / "fit" / "model.txt"
        self.fit_table_path = root / "validate" / "fit_table.csv"

    def run(self) -> None:
        r = self.root
        for argv in (["excite", "--out-dir", str(r / "excite")],
                     ["collect", "--excitation", str(self.excitation), "--out-dir", str(r / "collect")],
                     ["fit", "--dataset", str(self.dataset_path), "--out-dir", str(r / "fit")],
                     ["validate", "--dataset", str(self.dataset_path), "--model", str(self.model_path),
                      "--out-dir", str(r / "validate")]):
            if main(argv) != 0:
                raise RuntimeError(f"pipeline step failed: {argv}")
        self.data = persist.read_dataset(self.dataset_path)
        self.model = NarxModel.load(self.model_path)
        self.table = persist.read_columns(self.fit_table_path, ["N"])[0]

    def timing(self, command: str) -> float:
        man = json.loads((self.root / command / "manifest.json").read_text())
        return man["timings"][command]


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    p = Pipeline(tmp_path_factory.mktemp("pipeline"))
    p.run()
    return p
