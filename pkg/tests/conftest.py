import pytest

from mfsmp.instances import e1_problem


@pytest.fixture(scope="session")
def e1():
    """One-step scalar benchmark with closed-form cost J(u) = 2 u^2 + 1."""
    spec = e1_problem()
    return spec, spec.build_tree()
