import pytest

from smoke_fixtures import SmokeSet


@pytest.fixture()
def smoke_set(tmp_path):
    return SmokeSet(tmp_path)
