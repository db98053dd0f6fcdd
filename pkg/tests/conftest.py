import pytest

from immse_lab.systems import (
    DiscreteSystemSpec, GaussianScalar, MessagePrior, validate_spec,
)


@pytest.fixture
def gaussian_prior():
    return MessagePrior(GaussianScalar(0.0, 1.0), shared=True)


def make(g, prior=None, **kw):
    """Validated discrete spec from a list of expression strings."""
    prior = prior or MessagePrior(GaussianScalar(0.0, 1.0), shared=True)
    return validate_spec(DiscreteSystemSpec(len(g), prior, tuple(g), **kw))
