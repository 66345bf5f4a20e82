import numpy as np
import pandas as pd
import pytest

from regmva.dataset import Dataset, data_dir, one_hot


def make_classification(N=400, n=6, m=4, seed=7, duplicate_feature=False):
    """
    Segment-like data: n Gaussian features whose class means differ, m classes
    in equal proportion, centered one-hot outputs. Returns (Dataset, labels).
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(N) % m
    rng.shuffle(labels)
    scales = np.linspace(3.0, 0.5, n)
    means = rng.normal(size=(m, n)) * scales
    F = means[labels] + rng.normal(size=(N, n)) * np.linspace(1.0, 0.6, n)
    if duplicate_feature:
        F[:, -1] = F[:, 0]
    names = [f"c{c}" for c in labels]
    d = Dataset.from_matrices(F.T, one_hot(names), feature_names=tuple(f"f{i}" for i in range(n)))
    return d, names


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope='session')
def segment_like():
    return make_classification()[0]


@pytest.fixture
def make_dataset():
    return make_classification


@pytest.fixture
def tiny_csv(tmp_path):
    path = tmp_path / 'tiny.csv'
    path.write_text("a,b,label\n1,2,x\n3,5,y\n4,1,x\n")
    return path


@pytest.fixture
def classification_csv(tmp_path):
    """segment_like written as CSV with a 'class' column."""
    def write(name='classes.csv', **kwargs):
        d, labels = make_classification(**kwargs)
        frame = pd.DataFrame((d.X + d.means[:, None]).T, columns=list(d.feature_names))
        frame['class'] = labels
        path = tmp_path / name
        frame.to_csv(path, index=False, float_format='%.17g')
        return path
    return write


@pytest.fixture(scope='session')
def segment_csv():
    path = data_dir() / 'segment.csv'
    if not path.exists():
        pytest.skip(f"{path} not present (run scripts/download_segment_data.py)")
    return path
