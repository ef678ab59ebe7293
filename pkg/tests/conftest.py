# tests/conftest.py
import pytest

from app.models.specs import KernelFamily, KernelSpec
from tests.factories import toy_regression


@pytest.fixture
def regression_data():
    return toy_regression()


@pytest.fixture
def se_kernel():
    return KernelSpec(family=KernelFamily.SQUARED_EXPONENTIAL, bandwidth=1.0)
