"""
    Shared fixtures for atr_qkd.

    Fitting the built-in profiles takes a jitter deconvolution, so the fitted
    library is built once per test session.
"""
import pytest

from atr_qkd.profiles import default_library


@pytest.fixture(scope="session")
def library():
    return default_library()


@pytest.fixture(scope="session")
def id201(library):
    return library.model("id201")


@pytest.fixture(scope="session")
def homemade(library):
    return library.model("homemade_1mhz")
