import json

import pytest

import bfsa.config as config
import bfsa.kernels as kernels
import bfsa.optimizer as optimizer
import bfsa.parallel as parallel


@pytest.fixture
def reset_threads():
    yield
    parallel.set_thread_count(None)


def test_defaults():
    sut = config.load_config(None)

    assert sut == config.RunConfig()
    assert sut.kernel.variant == kernels.PACIOREK_SCHERVISH
    assert sut.trust_region.curvature_mode == optimizer.FISHER_SAA
    assert sut.local_trust_region.curvature_mode == optimizer.FISHER_EXACT


def test_nested_sections_are_built(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "kernel": {"variant": "matern", "nugget": 1e-4},
                "trust_region": {"curvature_mode": "hessian-exact", "max_iters": 7},
                "num_landmarks": 16,
            }
        )
    )

    sut = config.load_config(str(path))

    assert sut.kernel.variant == kernels.STATIONARY
    assert sut.kernel.nugget == 1e-4
    assert isinstance(sut.trust_region, optimizer.TrustRegionConfig)
    assert sut.trust_region.max_iters == 7
    assert sut.num_landmarks == 16


@pytest.mark.parametrize(
    "data",
    [
        {"unknown": 1},
        {"kernel": {"variant": "gaussian"}},
        {"kernel": {"typo": 1}},
        {"kernel": []},
        {"trust_region": {"curvature_mode": "newton"}},
        {"bench": {"ladder": [64], "block_size": 128}},
        {"bench": {"repeats": 0}},
        {"synthetic": {"holdout": [0.0, 0.0, 1.0]}},
        {"block_size": 0},
    ],
)
def test_invalid_configurations(data):
    with pytest.raises(ValueError):
        config.from_dict(config.RunConfig, data)


def test_invalid_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json")

    with pytest.raises(ValueError):
        config.load_config(str(path))


def test_dict_roundtrip():
    original = config.RunConfig(num_landmarks=5, free=[0, 2])

    sut = config.from_dict(config.RunConfig, config.to_dict(original))

    assert sut == original


def test_schema_lists_every_field():
    sut = config.schema()

    assert sut["additionalProperties"] is False
    assert sut["properties"]["num_landmarks"] == {"type": "integer", "default": 32}
    assert sut["properties"]["kernel"]["properties"]["variant"]["default"] == kernels.PACIOREK_SCHERVISH
    assert sut["properties"]["bench"]["properties"]["ladder"]["type"] == "array"
    json.dumps(sut)


@pytest.mark.parametrize("n, expected", [(100, 1), (256, 2), (1000, 4), (4096, 32)])
def test_blocks_follow_the_block_size(n, expected):
    assert config.RunConfig(block_size=128).blocks_for(n) == expected


def test_explicit_block_count_wins():
    assert config.RunConfig(num_blocks=8).blocks_for(100) == 8


def test_thread_flag_wins_over_the_environment(monkeypatch, reset_threads):
    monkeypatch.setenv(parallel.THREADS_VARIABLE, "3")

    assert config.resolve_threads(None) == 3
    assert config.resolve_threads(2) == 2
    assert parallel.get_thread_count() == 2


def test_basis_regions_set_the_block_count_unless_overridden():
    assert config.RunConfig(block_size=128).blocks_for(2000, num_regions=4) == 4
    assert config.RunConfig(block_size=128).blocks_for(2000) == 8
    assert config.RunConfig(num_blocks=2).blocks_for(2000, num_regions=4) == 2
