import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from partial_reid import toy  # noqa: E402


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    paths = toy.write_toy_dataset(root, seed=0)
    return root, paths
