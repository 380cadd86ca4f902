import pytest

import fixtures_common


@pytest.fixture(scope="session")
def identity():
    return fixtures_common.get_identity()


@pytest.fixture(scope="session")
def vectors_dir():
    assert fixtures_common.VECTOR_DIR.is_dir(), "run tests/generate_vectors.py first"
    return fixtures_common.VECTOR_DIR


@pytest.fixture()
def make_config(identity):
    def factory(**kwargs):
        return fixtures_common.make_config(identity, **kwargs)

    return factory


@pytest.fixture()
def make_client(identity):
    def factory(**kwargs):
        return fixtures_common.make_client(identity, **kwargs)

    return factory
