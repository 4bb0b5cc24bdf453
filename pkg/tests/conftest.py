import os
import subprocess
import sys
from pathlib import Path

import pytest

from skyfork import deployer
from skyfork.emulator import Emulator, PlatformConfig

TESTS_DIR = Path(__file__).resolve().parent
BUILD_MODULES = ["skyfork.benchkit.tasks", "sample_tasks"]


def run_build(out_dir, mode, modules=BUILD_MODULES):
    """Build in a fresh interpreter: the mode is fixed when task modules are imported."""
    env = dict(os.environ)
    env["CPLS_MODE"] = mode
    env["PYTHONPATH"] = os.pathsep.join([str(TESTS_DIR), env.get("PYTHONPATH", "")])
    cmd = [sys.executable, "-m", "skyfork", "build", "--out", str(out_dir)]
    for m in modules:
        cmd += ["--module", m]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    return Path(out_dir)


@pytest.fixture(scope="session")
def serverless_build(tmp_path_factory):
    return run_build(tmp_path_factory.mktemp("serverless"), "serverless")


@pytest.fixture(scope="session")
def host_build(tmp_path_factory):
    return run_build(tmp_path_factory.mktemp("host"), "host")


@pytest.fixture
def make_emulator(serverless_build):
    """Start an emulator with every built function deployed."""
    started = []

    def factory(config=None, deploy=True):
        emu = Emulator(config or PlatformConfig()).start()
        started.append(emu)
        if deploy:
            summary = deployer.deploy(serverless_build / "cppless-manifest.json",
                                      serverless_build / "cppless-worker", emu.url)
            assert not summary.failed, summary.report
        return emu

    yield factory
    for emu in started:
        emu.stop()


# -- acceptance report -----------------------------------------------------------

ACCEPTANCE_LINES = []


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
