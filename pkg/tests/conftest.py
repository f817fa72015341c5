import os

import numpy as np
import pytest

from roadaug import dataset, ganlab
from roadaug.toydata import FIXTURE_LAYOUT, e2e_layout, write_dataset

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """Five images, seven D40 boxes by hand count."""
    root = tmp_path_factory.mktemp("fixture") / "data"
    return write_dataset(str(root), FIXTURE_LAYOUT)


@pytest.fixture(scope="session")
def e2e_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e") / "data"
    return write_dataset(str(root), e2e_layout(15))


@pytest.fixture(scope="session")
def tiny_gan_config():
    return ganlab.GanConfig(noise_dim=8, roi_side=32, hidden=(32, 32), total_steps=20,
                            batch_size=4, seed=3)


@pytest.fixture(scope="session")
def e2e_gallery(e2e_root, tiny_gan_config, tmp_path_factory):
    index = dataset.split(dataset.ingest(e2e_root), 0.8, 0)
    rois = dataset.extract_rois(index, "D40", "train")
    ckpt = ganlab.train([r.image for r in rois], tiny_gan_config)
    out = tmp_path_factory.mktemp("gallery")
    return ganlab.generate_gallery(ckpt, 12, 5, str(out))


# filled by test_acceptance, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
