import json

import pytest

from nefkit.fixtures import fixture_dir, fixture_path
from nefkit.llm import mock_provider
from nefkit.specs import flatten, make_directory_resolver, parse_spec_file
from nefkit.synth import SyntheticRecord


@pytest.fixture(scope="session")
def nef_spec():
    root = parse_spec_file(fixture_path("nef_main.yaml"))
    return flatten(root, make_directory_resolver(fixture_dir()))


@pytest.fixture(scope="session")
def seed_records():
    data = json.loads(fixture_path("seed_records.json").read_text(encoding="utf-8"))
    return [SyntheticRecord.from_mapping(item) for item in data]


@pytest.fixture(scope="session")
def seed_batch_10():
    data = json.loads(fixture_path("seed_batch_10.json").read_text(encoding="utf-8"))
    return [SyntheticRecord.from_mapping(item) for item in data]


@pytest.fixture(scope="session")
def canned_replies():
    return json.loads(fixture_path("mock_canned.json").read_text(encoding="utf-8"))


@pytest.fixture()
def offline_provider(canned_replies):
    return mock_provider(seed=7, canned=canned_replies, dim=64)
