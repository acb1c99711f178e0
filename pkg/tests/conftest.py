"""Session-scoped pipeline artifacts shared by the CLI and acceptance tests."""

import pytest

from modref import cli

ACCEPTANCE_FIXTURE_ARGS = [
    "fixtures",
    "--seed", "7",
    "--classes", "20",
    "--dim", "64",
    "--shots", "24",
    "--ambiguity", "0.5",
    "--sigma", "0.3",
]

ACCEPTANCE_TRAIN_ARGS = [
    "train",
    "--episodes", "200",
    "--k", "8",
    "--class-batch", "16",
    "--lr", "6e-3",
    "--tau-t", "0.1",
    "--seed", "1",
]


@pytest.fixture(scope="session")
def acceptance_dataset(tmp_path_factory):
    """The trend fixture: 20 classes, d=64, 24 shots, half the texts swapped."""
    prefix = str(tmp_path_factory.mktemp("dataset") / "fix")
    code = cli.main(ACCEPTANCE_FIXTURE_ARGS + ["--out", prefix])
    assert code == 0
    return prefix


@pytest.fixture(scope="session")
def trained_generator(acceptance_dataset, tmp_path_factory):
    """Generator trained 200 episodes on the trend fixture (one run per session).

    Wall-clock duration lands in <prefix>.time for the runtime criterion.
    """
    import time

    prefix = str(tmp_path_factory.mktemp("train") / "gen")
    start = time.perf_counter()
    code = cli.main(ACCEPTANCE_TRAIN_ARGS + ["--data", acceptance_dataset, "--out", prefix])
    elapsed = time.perf_counter() - start
    assert code == 0
    with open(prefix + ".time", "w") as fh:
        fh.write(f"{elapsed:.3f}")
    return prefix
