"""Suite-wide hygiene: run every test from a scratch directory so nothing
the code writes relative to the cwd (CLI manifest fallback, hypothesis
cache) can land in the repository.
"""

import pytest


@pytest.fixture(autouse=True)
def _run_in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
