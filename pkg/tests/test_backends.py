import subprocess
import sys

import pytest

from regstruct import _backend


def _active(env_value):
    code = "from regstruct._backend import backend; print(backend())"
    env = {"RS_BACKEND": env_value, "PATH": ""}
    res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
    return res.stdout.strip()


@pytest.mark.parametrize("value,expected", [("numpy", "numpy"), ("NUMPY", "numpy"), ("numba", "numba")])
def test_environment_selects_backend(value, expected):
    if expected == "numba" and not _backend.HAVE_NUMBA:
        pytest.skip("numba not installed")
    assert _active(value) == expected


def test_select():
    assert _backend.select("a", "b", "numpy") == "b"
    assert _backend.select("a", "b", "numba") == "a"
    with pytest.raises(ValueError):
        _backend.select("a", "b", "cuda")


@pytest.mark.parametrize("raw,expected", [("", None), ("3", 3)])
def test_thread_cap(monkeypatch, raw, expected):
    monkeypatch.setenv("RS_THREADS", raw)
    assert _backend.thread_cap() == expected


def test_thread_cap_rejects_zero(monkeypatch):
    monkeypatch.setenv("RS_THREADS", "0")
    with pytest.raises(ValueError):
        _backend.thread_cap()
