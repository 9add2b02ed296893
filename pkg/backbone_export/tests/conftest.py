"""Shared fixtures: one exported model reused across the test session."""

import pytest

from backbone_export import export_backbone, make_fixture_image


@pytest.fixture(scope="session")
def export_dir(tmp_path_factory):
    """Random-weight export at levels 2 and 3 plus a fixture image."""
    root = tmp_path_factory.mktemp("export")
    manifest = export_backbone(
        (2, 3),
        root / "trunk.pt",
        root / "trunk.json",
        weights="random",
        seed=0,
    )
    make_fixture_image(root / "fixture.png", size=320, seed=0)
    return root, manifest
