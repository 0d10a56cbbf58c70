import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import naive_dense_outputs
from regen_nca.analysis import HalfCut, apply_damage_dense
from regen_nca.dense import (
    DenseRule,
    DenseRuleConfig,
    dense_forward,
    dense_seed,
    genome_from_bytes,
    genome_to_bytes,
    grow,
    init_genome,
    load_genome,
    param_count,
    save_genome,
    unpack,
)
from regen_nca.grid import GridShapeError, alive_mask_array, types_to_dense


def test_param_counts():
    assert param_count(DenseRuleConfig(9)) == 5766
    assert param_count(DenseRuleConfig(27)) == 8070
    h, i = 64, 18
    lstm = (i * h + h) + (h * 4 * h) * 2 + 4 * h + (h * 6 + 6)
    assert param_count(DenseRuleConfig(9, recurrent=True)) == lstm


def test_config_validation():
    with pytest.raises(ValueError):
        DenseRuleConfig(neighborhood_size=8)
    with pytest.raises(ValueError):
        DenseRuleConfig(update_p=0.0)


def test_lstm_forget_bias(rng):
    cfg = DenseRuleConfig(9, hidden_dim=4, recurrent=True)
    w = unpack(cfg, init_genome(cfg, rng))
    assert np.all(w["b_g"][4:8] == 1.0)


@pytest.mark.parametrize("nbhd,dims", [(9, (7, 7, 1)), (27, (5, 5, 5))])
def test_forward_matches_per_cell_oracle(nbhd, dims):
    cfg = DenseRuleConfig(nbhd, hidden_dim=8, init_std=0.8)
    r = np.random.default_rng(nbhd)
    rule = DenseRule(cfg, init_genome(cfg, r))
    grid = dense_seed(dims)
    for _ in range(3):  # a few steps so the neighbourhoods are non-trivial
        grid, _ = dense_forward(rule, grid, None, r, p=1.0)
    nxt, _ = dense_forward(rule, grid, None, r, p=1.0)
    types, alpha = grid.cells[..., 0], grid.cells[..., 1]
    alive = alive_mask_array(grid.cells, 1)
    for cell in np.ndindex(*dims):
        if not alive[cell]:
            assert not nxt.cells[cell].any()
            continue
        t, a = naive_dense_outputs(rule.weights, types, alpha, cell, cfg.ndim)
        assert nxt.cells[cell][0] == t
        assert nxt.cells[cell][1] == pytest.approx(a, rel=1e-12)


@given(st.integers(0, 1000), st.booleans())
def test_outputs_stay_in_range(seed, recurrent):
    cfg = DenseRuleConfig(9, hidden_dim=6, recurrent=recurrent, init_std=1.0)
    r = np.random.default_rng(seed)
    rule = DenseRule(cfg, init_genome(cfg, r))
    for g in grow(rule, dense_seed((7, 7, 1)), 10, r):
        t, a = g.cells[..., 0], g.cells[..., 1]
        assert np.all((0 <= a) & (a <= 1))
        assert np.all(np.isin(t, np.arange(5)))


def test_grow_lengths(rng):
    cfg = DenseRuleConfig(9)
    rule = DenseRule(cfg, init_genome(cfg, rng))
    seed = dense_seed((7, 7, 1))
    assert len(grow(rule, seed, 0, rng)) == 1
    seq = grow(rule, seed, 10, rng)
    assert len(seq) == 11 and seq[0] is seed


def test_seed_positions():
    assert dense_seed((7, 7, 1)).cells[3, 3, 0, 1] == 1.0
    assert dense_seed((9, 9, 9)).cells[4, 4, 4, 1] == 1.0


def test_dimension_mismatch_rejected(rng):
    cfg = DenseRuleConfig(27)
    rule = DenseRule(cfg, init_genome(cfg, rng))
    with pytest.raises(GridShapeError):
        dense_forward(rule, dense_seed((7, 7, 1)), None, rng)
    with pytest.raises(GridShapeError):
        DenseRule(cfg, np.zeros(10))


def test_feedforward_step_ignores_cell_order(rng):
    """The step reads only the frozen pre-step grid, so it commutes with grid symmetries
    for a rule that only looks at the centre cell."""
    cfg = DenseRuleConfig(9, hidden_dim=4, init_std=0.5)
    genome = init_genome(cfg, rng)
    w = unpack(cfg, genome)
    centre = np.zeros(w["W_in"].shape[0], bool)
    centre[8:10] = True  # offset (0, 0) is the fifth of nine neighbours
    w["W_in"][~centre] = 0.0
    rule = DenseRule(cfg, genome)
    grid = dense_seed((7, 7, 1))
    grid, _ = dense_forward(rule, grid, None, rng, p=1.0)
    grid, _ = dense_forward(rule, grid, None, rng, p=1.0)
    a, _ = dense_forward(rule, grid, None, rng, p=1.0)
    b, _ = dense_forward(rule, grid.with_cells(grid.cells[::-1, ::-1].copy()), None, rng, p=1.0)
    assert np.array_equal(a.cells[::-1, ::-1], b.cells)


def test_damage_resets_recurrent_memory(rng):
    cfg = DenseRuleConfig(9, hidden_dim=8, recurrent=True, init_std=0.5)
    rule = DenseRule(cfg, init_genome(cfg, rng))
    grown = grow(rule, dense_seed((7, 7, 1)), 5, np.random.default_rng(1), p=1.0)[-1]
    reference = np.zeros((7, 7, 1), np.int8)
    reference[1:6, 1:6] = 1
    mem = rule.empty_memory(grown.dims) + 3.0
    damaged, mem2 = apply_damage_dense(grown, mem, HalfCut("left"), reference)
    cut = np.zeros((7, 7, 1), bool)
    cut[1:4] = True
    assert not mem2[cut].any() and np.all(mem2[~cut] == 3.0)
    assert not damaged.cells[cut].any()
    # with every memory reset, the next step equals a fresh first step
    zero = rule.empty_memory(grown.dims)
    a, _ = dense_forward(rule, damaged, zero, np.random.default_rng(2), p=1.0)
    b, _ = dense_forward(rule, damaged, np.zeros_like(mem), np.random.default_rng(3), p=1.0)
    assert np.array_equal(a.cells, b.cells)


def test_recurrent_requires_memory(rng):
    cfg = DenseRuleConfig(9, hidden_dim=4, recurrent=True)
    rule = DenseRule(cfg, init_genome(cfg, rng))
    with pytest.raises(GridShapeError):
        dense_forward(rule, dense_seed((7, 7, 1)), None, rng)


def test_genome_file_roundtrip(tmp_path, rng):
    cfg = DenseRuleConfig(27, hidden_dim=5, recurrent=True)
    g = init_genome(cfg, rng)
    cfg2, g2 = genome_from_bytes(genome_to_bytes(cfg, g))
    assert cfg2 == cfg and np.array_equal(g, g2)
    save_genome(tmp_path / "g.bin", cfg, g)
    assert np.array_equal(load_genome(tmp_path / "g.bin")[1], g)
    raw = bytearray(genome_to_bytes(cfg, g))
    with pytest.raises(ValueError):
        genome_from_bytes(bytes(raw[:-8]))


def test_types_to_dense_is_fixed_point_of_identity_like_rule():
    """A rule with zero weights still zeroes cells outside the alive region."""
    cfg = DenseRuleConfig(9, hidden_dim=4)
    rule = DenseRule(cfg, np.zeros(param_count(cfg)))
    t = np.zeros((7, 7, 1), np.int8)
    t[3, 3] = 2
    out, _ = dense_forward(rule, types_to_dense(t, np.float64), None, np.random.default_rng(0), p=1.0)
    # zero network: argmax ties -> Empty, alpha sigmoid(0) = 0.5 inside the alive region
    alive = alive_mask_array(types_to_dense(t, np.float64).cells, 1)
    assert np.all(out.cells[alive][:, 0] == 0) and np.allclose(out.cells[alive][:, 1], 0.5)
    assert not out.cells[~alive].any()
