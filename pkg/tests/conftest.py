import numpy as np
import pytest

from moc import synthetic
from moc.store import BagStore

# Small enough that every unit test stays fast; 2 classes, 3 backgrounds.
UNIT_SPEC = synthetic.SyntheticSpec(
    dataset_id="unit",
    classes=2,
    background_classes=3,
    dim=16,
    slides_per_class=6,
    patches_per_slide=40,
    tumor_fraction=0.2,
    noise=0.3,
)
UNIT_SEED = 11


@pytest.fixture(scope="session")
def unit_dataset():
    return synthetic.generate_synthetic(UNIT_SPEC, UNIT_SEED)


@pytest.fixture(scope="session")
def unit_dir(unit_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("unit-data")
    synthetic.write_dataset(unit_dataset, root)
    return root


@pytest.fixture(scope="session")
def unit_store(unit_dataset, unit_dir):
    from moc.store import read_manifest

    return BagStore(read_manifest(unit_dir / "manifest.tsv"))


@pytest.fixture(scope="session")
def unit_manifest(unit_store):
    return unit_store.manifest


@pytest.fixture(scope="session")
def unit_prompts(unit_dataset):
    return unit_dataset.prompts


def random_unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)
