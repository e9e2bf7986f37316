import contextlib
import io
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from glradapt.calibration import (calibrate_binomial_exact, calibrate_four_stage,
                                  calibrate_three_stage)
from glradapt.serialize import load_file

FIXTURES = os.path.join(os.path.dirname(__file__), os.pardir, "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def bin_a_spec():
    return load_file(fixture_path("binomial_single_arm_a.json"))


@pytest.fixture(scope="session")
def bin_b_spec():
    return load_file(fixture_path("binomial_single_arm_b.json"))


@pytest.fixture(scope="session")
def twoarm_spec():
    return load_file(fixture_path("two_arm_bernoulli.json"))


@pytest.fixture(scope="session")
def normal3_spec():
    return load_file(fixture_path("normal_three_stage.json"))


@pytest.fixture(scope="session")
def four_spec():
    return load_file(fixture_path("normal_four_stage.json"))


@pytest.fixture(scope="session")
def bin_a_report(bin_a_spec):
    return calibrate_binomial_exact(bin_a_spec)


@pytest.fixture(scope="session")
def normal3_report(normal3_spec):
    return calibrate_three_stage(normal3_spec, nodes=64)


@pytest.fixture(scope="session")
def four_report(four_spec):
    return calibrate_four_stage(four_spec)


@pytest.fixture()
def run_cli(monkeypatch):
    """Invoke the CLI in-process; returns (exit_code, stdout, stderr)."""
    from glradapt import cli

    def _run(argv, stdin_text=None):
        out, err = io.StringIO(), io.StringIO()
        if stdin_text is not None:
            monkeypatch.setattr(sys, "stdin", io.StringIO(stdin_text))
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            code = cli.run(list(argv))
        return code, out.getvalue(), err.getvalue()

    return _run


@pytest.fixture()
def service_client(tmp_path):
    from fastapi.testclient import TestClient

    from glradapt.service import create_app

    app = create_app(str(tmp_path / "sessions"))
    with TestClient(app, raise_server_exceptions=False) as client:
        client.app = app
        yield client
