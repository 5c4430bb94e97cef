from __future__ import annotations

import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from benthoscan.synthetic import bundled_synthetic_dir  # noqa: E402
from benthoscan.taxonomy import tree_from_dict  # noqa: E402

# acceptance outcomes, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


FIG4 = {
    "node_id": "1",
    "code": "",
    "name": "biota",
    "children": [
        {
            "node_id": "1.1",
            "code": "",
            "name": "macroalgae",
            "children": [
                {"node_id": "1.1.1", "code": "MAECK", "name": "kelp", "children": []},
                {"node_id": "1.1.2", "code": "MAOTH", "name": "other macroalgae", "children": []},
            ],
        },
        {"node_id": "1.2", "code": "NONMA", "name": "non-macroalgae", "children": []},
    ],
}


@pytest.fixture
def fig4_doc():
    import copy

    return copy.deepcopy(FIG4)


@pytest.fixture
def fig4_tree():
    return tree_from_dict(FIG4)


@pytest.fixture
def synthetic_dir(tmp_path) -> Path:
    """A private copy of the bundled 20-image survey."""
    dest = tmp_path / "synthetic20"
    shutil.copytree(bundled_synthetic_dir(), dest)
    return dest
