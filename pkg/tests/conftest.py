import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import hypothesis  # noqa: E402
import numpy as np  # noqa: E402
import pytest  # noqa: E402

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = dict(num_layers=2, dim=16, num_heads=2, adapter_rank=4, num_experts=4, top_k=2,
            template_points=32, search_points=32, template_groups=16, search_groups=16,
            group_neighbors=8)


@pytest.fixture
def tiny_cfg():
    from geotrack.config import ModelConfig
    return ModelConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_data():
    from geotrack.synthdata import make_desk_dataset
    return make_desk_dataset(0, n_train=2, n_test=1, length=5)


ACCEPTANCE: list = []  # (criterion, passed, detail), filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
