import numpy as np
import pytest
from hypothesis import settings, HealthCheck

settings.register_profile(
    "ci",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    return path


@pytest.fixture
def animal_lexicon(tmp_path):
    """dog/puppy -> dog.n.01 (a kind of animal.n.01), plus ball and car."""
    from capalign.lexicon import load_lexicon

    path = write_lines(
        tmp_path / "lexicon.tsv",
        [
            "# comment",
            "dog\tdog.n.01",
            "puppy\tdog.n.01",
            "animal\tanimal.n.01",
            "ball\tball.n.01",
            "car\tcar.n.01",
            "!hypo\tdog.n.01\tanimal.n.01",
        ],
    )
    return load_lexicon(path)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
