import json
import math
from collections import Counter

import numpy as np
import pytest

from dyadic_sim.coder import BitString
from dyadic_sim.common import DecodeError, DimensionMismatchError, DyadicCube
from dyadic_sim.dyadic import decompose, residual_tail_ratio, table_entropy
from dyadic_sim.regions import AxisBox, load_region
from dyadic_sim.simulate import (
    ExactSimulator,
    ProtocolConfig,
    agent_count,
    plan_truncation,
    protocol_demo,
    run_exact,
    run_truncated,
    truncation_length,
    truncation_level,
)
from dyadic_sim.stats import chi_square_uniform

L_CUBES = {DyadicCube(0, (0, 0)), DyadicCube(0, (0, 1)), DyadicCube(0, (1, 0))}


def _inside_closure(cube, x):
    lo, hi = cube.bounds()
    return np.all((lo <= x) & (x <= hi))


def test_agent_count():
    assert agent_count(load_region("l-shape")) == 2
    assert agent_count(load_region("gauss-example2")) == 2
    assert agent_count(load_region("triangular")) == 1


def test_run_exact_l_shape():
    transcripts = run_exact("l-shape", n_agents=2, seeds=[0, 1, 2, 3, 4])
    assert len(transcripts) == 5
    for t in transcripts:
        assert t.cube in L_CUBES
        assert _inside_closure(t.cube, t.outputs)
    single = run_exact("l-shape", seeds=7)
    assert single.seeds == (7, 0)
    with pytest.raises(DimensionMismatchError):
        run_exact("l-shape", n_agents=3)


def test_sessions_are_reproducible():
    simulator = ExactSimulator(load_region("ellipse-example1"), "arithmetic")
    a = simulator.draw(3, 7)
    b = simulator.draw(3, 7)
    assert a.codeword == b.codeword
    assert a.cube == b.cube
    assert np.array_equal(a.outputs, b.outputs)


def test_prefix_sessions_on_l_shape():
    simulator = ExactSimulator(load_region("l-shape"), "prefix", 6)
    batch = simulator.run(3000, seed=0)
    assert len(batch) == 3000
    counts = Counter(batch.cubes())
    assert set(counts) == L_CUBES
    sd = math.sqrt(3000 * 2 / 9)
    assert all(abs(c - 1000) < 4 * sd for c in counts.values())
    # Huffman lengths are 1, 2, 2
    assert set(batch.codeword_lengths) <= {1, 2}
    assert math.log2(3) <= batch.codeword_lengths.mean() <= math.log2(3) + 1
    assert batch.resamples.sum() == 0
    fit = chi_square_uniform(batch.outputs, load_region("l-shape"), bins=8)
    assert fit.p_value > 1e-4


def test_arithmetic_outputs_are_uniform_on_the_disk():
    disk = load_region("unit-disk")
    batch = ExactSimulator(disk, "arithmetic").run(2000, seed=1)
    assert np.all(np.sum(batch.outputs**2, axis=1) <= 1 + 1e-12)
    assert chi_square_uniform(batch.outputs, disk, bins=8).p_value > 1e-4


def test_prefix_escapes_are_redrawn():
    disk = load_region("unit-disk")
    simulator = ExactSimulator(disk, "prefix", 4)
    assert simulator.table.residual_mass > 0.05
    batch = simulator.run(2000, seed=2)
    assert batch.resamples.sum() > 0
    known = {cube for cube, _ in simulator.table.entries}
    assert set(batch.cubes()) <= known


def test_agent_errors():
    simulator = ExactSimulator(load_region("l-shape"), "prefix", 6)
    word = simulator.code.encode(DyadicCube(0, (0, 1)))
    cube, x = simulator.agent(2, word, seed=0)
    assert cube == DyadicCube(0, (0, 1))
    assert 1.0 <= x <= 2.0
    with pytest.raises(DecodeError):
        simulator.agent(1, word + BitString("0"), seed=0)
    with pytest.raises(DimensionMismatchError):
        simulator.agent_output(3, cube, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ExactSimulator(load_region("l-shape"), "huffman")


def test_transcripts_to_jsonl(tmp_path):
    batch = ExactSimulator(load_region("l-shape"), "prefix", 6).run(10, seed=0)
    path = str(tmp_path / "transcripts.jsonl")
    batch.to_jsonl(path)
    with open(path) as f:
        records = [json.loads(line) for line in f]
    assert len(records) == 10
    assert records[3]["seeds"] == [0, 3]
    assert DyadicCube(records[0]["k"], tuple(records[0]["v"])) in L_CUBES


def test_truncation_constants():
    # the L-shape: H = log2 3, V = 3, n = 2, eps = 0.1
    h = math.log2(3)
    assert truncation_level(h, 0.1, 3.0, 2) == 8
    assert truncation_length(h, 0.1) == 13
    # far beyond double range, still finite
    assert truncation_length(200.0, 0.1) == math.ceil(math.log2(0.1) + 2000)


def test_truncation_plan_of_l_shape():
    table = decompose(load_region("l-shape"), 11)
    plan, truncated = plan_truncation(table, 0.1)
    assert (plan.l, plan.l_effective, plan.N) == (8, 8, 13)
    assert plan.cardinality == 3
    assert plan.fits
    assert plan.moved_mass < 1e-12
    assert len(truncated) == 3


def test_truncation_plan_of_disk():
    table = decompose(load_region("unit-disk"), 8)
    plan, truncated = plan_truncation(table, 0.5)
    assert plan.l_effective == min(plan.l, 9)
    assert np.all(truncated.k < plan.l_effective)
    assert np.isclose(math.fsum(truncated.probabilities), 1.0)
    assert 0 <= plan.moved_mass <= 1
    assert plan.to_dict()["H"] == plan.h_bits


def test_run_truncated():
    plan, batch = run_truncated("l-shape", 0.1, seed=0, sessions=500, k_max=11)
    assert batch.path == "truncated-13"
    assert set(batch.codeword_lengths) == {13}
    assert set(batch.cubes()) <= L_CUBES
    rows = {int(c, 2) for c in batch.codewords}
    assert rows <= {0, 1, 2}


def test_truncation_collapses_when_nothing_is_shallow():
    # one cube at level -1 with H = 0 puts the cutoff at -1
    table = decompose(AxisBox([0, 0], [2, 2]), 3)
    assert list(table.k) == [-1]
    plan, truncated = plan_truncation(table, 0.5)
    assert plan.l_effective == -1
    assert plan.N == 0
    assert len(truncated) == 1
    assert plan.moved_mass == 0.0


def test_residual_tail_ratio_pairs_consecutive_levels():
    table = decompose(load_region("unit-disk"), 1)
    r = [res for _, res in table.level_residuals]
    assert residual_tail_ratio(table) == min(max(b / a for a, b in zip(r[:-1], r[1:])), 0.99)


@pytest.mark.parametrize("transport", ["inprocess", "socket"])
@pytest.mark.parametrize("path", ["prefix", "arithmetic"])
def test_protocol_demo_codeword(transport, path):
    config = ProtocolConfig(
        region="l-shape",
        transport=transport,
        path=path,
        sessions=20,
        seed=4,
        k_max=6 if path == "prefix" else None,
    )
    result = protocol_demo(config)
    assert result.disagreements == 0
    assert len(result.cubes) == 20
    assert result.bytes_received == result.bytes_expected
    assert result.bytes_sent == result.bytes_expected
    for cube, x in zip(result.cubes, result.outputs):
        assert cube in L_CUBES
        assert _inside_closure(cube, x)


def test_protocol_demo_shared_stream(tmp_path):
    out = str(tmp_path / "sessions.jsonl")
    result = protocol_demo(
        {"region": "unit-disk", "mode": "shared-stream", "sessions": 10, "seed": 1, "out": out}
    )
    assert result.disagreements == 0
    assert result.bytes_sent == 0
    assert result.stream_bits > 0
    assert np.all(np.sum(result.outputs**2, axis=1) <= 1 + 1e-9)
    with open(out) as f:
        assert len(f.readlines()) == 10


def test_protocol_config_validation():
    with pytest.raises(AssertionError):
        ProtocolConfig(region="l-shape", mode="shared-stream", path="prefix")
    with pytest.raises(AssertionError):
        ProtocolConfig(region="l-shape", transport="pigeon")
    with pytest.raises(DimensionMismatchError):
        protocol_demo(ProtocolConfig(region="l-shape", agents=3, sessions=1))


@pytest.fixture(scope="module")
def example1_batch():
    simulator = ExactSimulator(load_region("ellipse-example1"), "arithmetic")
    return simulator, simulator.run(2000, seed=0)


def test_example1_arithmetic_codewords_are_fair_bits(example1_batch):
    simulator, batch = example1_batch
    # centered ellipse is coded in a frame with a single root cell, so no root prefix
    assert simulator.coder.single_root
    assert np.allclose(batch.offset, [-1.0, -1.0])
    bits = "".join(batch.codewords)
    total = len(bits)
    assert abs(bits.count("1") / total - 0.5) < 4 * 0.5 / math.sqrt(total)
    for j in range(int(batch.codeword_lengths.max())):
        column = [word[j] for word in batch.codewords if len(word) > j]
        if len(column) < 500:
            break
        assert abs(column.count("1") / len(column) - 0.5) < 4 * 0.5 / math.sqrt(len(column))


def test_example1_arithmetic_length_and_outputs(example1_batch):
    simulator, batch = example1_batch
    region = load_region("ellipse-example1")
    _, h_upper = table_entropy(decompose(simulator.coded, 9))
    assert batch.codeword_lengths.mean() <= h_upper + 2
    assert np.all(region.closure_contains(batch.outputs))
    transcript = next(batch.transcripts())
    assert np.allclose(transcript.to_dict()["offset"], [-1.0, -1.0])
