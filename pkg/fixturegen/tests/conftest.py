from __future__ import annotations

import pytest


@pytest.fixture(scope="session")
def generated(tmp_path_factory):
    from fixturegen.corpus import generate_corpus

    out = tmp_path_factory.mktemp("corpus")
    manifest = generate_corpus(out, seed=0)
    return out, manifest
