import pytest

from spikedgen.priors import LINEAR, SIGN, RELU, gauss_prior, rademacher_prior


@pytest.fixture(scope="session")
def gauss1():
    return gauss_prior(1.0)


@pytest.fixture(scope="session")
def rademacher():
    return rademacher_prior()


@pytest.fixture(params=["linear", "sign", "relu"], scope="session")
def any_act(request):
    return {"linear": LINEAR, "sign": SIGN, "relu": RELU}[request.param]


@pytest.fixture(params=["linear", "sign"], scope="session")
def odd_act(request):
    return {"linear": LINEAR, "sign": SIGN}[request.param]
