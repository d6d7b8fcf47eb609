"""Test fixtures for CLI tests."""
import json

import pytest

from app.main import main


@pytest.fixture
def run_cli(capsys):
    """Run the CLI in-process.

    Returns (exit_code, stdout JSON or None, last stderr line as JSON or None).
    SystemExit from argparse is turned into its exit code.
    """

    def _run(*argv):
        try:
            code = main([str(a) for a in argv])
        except SystemExit as e:
            code = e.code
        captured = capsys.readouterr()
        out = json.loads(captured.out) if captured.out.strip().startswith(("{", "[")) else None
        err_lines = [line for line in captured.err.splitlines() if line.startswith("{")]
        err = json.loads(err_lines[-1]) if err_lines else None
        return code, out, err

    return _run
