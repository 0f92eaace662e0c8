import json
import os

import pytest

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


@pytest.fixture(scope="session")
def golden():
    with open(os.path.join(GOLDEN_DIR, "relaxations_golden.json")) as fh:
        return json.load(fh)
