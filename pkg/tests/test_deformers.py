import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import cKDTree

from meshmove.deformers import (DeformerModel, clip_baseline_deform, clip_to_domain, collate, extract_global,
                                gat_deform, gnn_block, prepare_sample, rq_spline, rq_spline_inverse, sample_grid,
                                spline_deform, spline_knots)
from meshmove.deformers.gat import AttentionBlock, closed_ring
from meshmove.errors import ConfigError, InvalidArgument, InvalidDomain, ShapeError
from meshmove.mesh import CORNER, EDGE, DomainSpec, build_polygon_mesh, build_unit_square_mesh, inversion_fraction
from meshmove.nn import ParameterStore
from meshmove.nn import tensor as T
from meshmove.problems import InputState

from helpers import on_segment_distance, poisson_input, randomize, ring_hull_violations

SMALL = {"conv_channels": [4, 8], "hidden": 16, "grid_n": 16}


def random_knots(seed, n=1, bins=8):
    raw = np.random.default_rng(seed).normal(scale=2.0, size=(n, 3 * bins - 1))
    return spline_knots(raw, bins)


# global features

def test_constant_state_grid_is_ones():
    dom = DomainSpec.unit_square()
    grid, scale = sample_grid(InputState("poisson_source", lambda p: np.full(len(p), 3.0), dom), 16)
    assert scale == 3.0
    assert np.all(grid == 1.0)


def test_zero_state_grid_is_zero():
    dom = DomainSpec.unit_square()
    grid, scale = sample_grid(InputState("poisson_source", lambda p: np.zeros(len(p)), dom), 16)
    assert np.all(grid == 0.0) and scale == 1.0
    model = DeformerModel("m2n_spline", SMALL)
    e = extract_global(model, InputState("poisson_source", lambda p: np.zeros(len(p)), dom, [10.0]))
    assert np.all(np.isfinite(e))


def test_grid_is_zero_outside_polygon():
    dom = DomainSpec.heptagon()
    grid, _ = sample_grid(InputState("poisson_source", lambda p: np.ones(len(p)), dom), 16)
    assert grid[0, 0, 0] == 0.0 and grid[0, 8, 8] == 1.0


def test_grid_resolution_guard():
    with pytest.raises(InvalidArgument):
        sample_grid(InputState("poisson_source", lambda p: np.ones(len(p)), DomainSpec.unit_square()), 4)


def test_embedding_independent_of_mesh_resolution():
    model = randomize(DeformerModel("m2n_spline", SMALL), 1)
    mix, _ = poisson_input(build_unit_square_mesh(15))
    from meshmove.problems import poisson_state
    state = poisson_state(mix, DomainSpec.unit_square(), 14.0)
    grids = [prepare_sample(build_unit_square_mesh(n), state, 16).grid for n in (15, 20)]
    assert np.array_equal(grids[0], grids[1])
    e = model.extractor(np.stack(grids), np.zeros((2, 1))).data
    assert np.array_equal(e[0], e[1])
    assert np.array_equal(extract_global(model, state), extract_global(model, state))


# spline

def test_identity_spline():
    kx, ky, kd = spline_knots(np.zeros((100, 23)), 8)
    x = np.random.default_rng(0).random(100)
    y, dydx, _ = rq_spline(x, kx, ky, kd)
    np.testing.assert_allclose(y.data, x, atol=1e-15)
    np.testing.assert_allclose(dydx.data, 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_spline_endpoints_exact(seed):
    kx, ky, kd = random_knots(seed, n=2)
    y, _, _ = rq_spline(np.array([0.0, 1.0]), kx, ky, kd)
    assert y.data[0] == 0.0 and y.data[1] == 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_knot_invariants(seed):
    kx, ky, kd = random_knots(seed, n=5)
    for k in (kx.data, ky.data):
        assert np.all(k[:, 0] == 0.0) and np.all(k[:, -1] == 1.0)
        assert np.all(np.diff(k, axis=1) >= 1e-3 - 1e-15)
    assert np.all(kd.data > 0) and np.all(kd.data[:, [0, -1]] == 1.0)


def test_spline_round_trip_by_bisection():
    n = 10_000
    kx, ky, kd = random_knots(11, n=n)
    x = np.random.default_rng(12).random(n)
    y, dydx, _ = rq_spline(x, kx, ky, kd)
    assert np.all(dydx.data > 0)
    back = rq_spline_inverse(y.data, kx, ky, kd)
    fwd, _, _ = rq_spline(back, kx, ky, kd)
    assert np.abs(back - x).max() < 1e-9
    assert np.abs(fwd.data - y.data).max() < 1e-10


def test_spline_derivative_matches_finite_difference():
    kx, ky, kd = random_knots(5, n=200)
    x = np.random.default_rng(6).uniform(0.01, 0.99, 200)
    h = 1e-6
    fd = (rq_spline(x + h, kx, ky, kd)[0].data - rq_spline(x - h, kx, ky, kd)[0].data) / (2 * h)
    np.testing.assert_allclose(rq_spline(x, kx, ky, kd)[1].data, fd, rtol=1e-5, atol=1e-6)


def test_spline_clamps_and_flags():
    kx, ky, kd = random_knots(1, n=4)
    y, _, flags = rq_spline(np.array([-0.1, -1e-13, 1 + 1e-13, 1.2]), kx, ky, kd)
    assert flags.tolist() == [True, False, False, True]
    assert y.data.tolist() == [0.0, 0.0, 1.0, 1.0]


def test_untrained_spline_is_identity():
    mesh = build_unit_square_mesh(9)
    model = DeformerModel("m2n_spline", SMALL)
    _, state = poisson_input(mesh)
    np.testing.assert_allclose(spline_deform(model, mesh, state), mesh.nodes, atol=1e-15)


def spline_outputs(seed, n=12):
    mesh = build_unit_square_mesh(n)
    model = randomize(DeformerModel("m2n_spline", SMALL, seed=seed), seed, scale=0.5)
    _, state = poisson_input(mesh, seed)
    return mesh, model, state, spline_deform(model, mesh, state)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_spline_preserves_square_boundary(seed):
    mesh, _, _, x = spline_outputs(seed)
    assert np.all((x >= 0) & (x <= 1))
    corner = mesh.tag_kind == CORNER
    assert np.abs(x[corner] - mesh.nodes[corner]).max() <= 1e-12
    for axis in (0, 1):
        for side in (0.0, 1.0):
            on = mesh.nodes[:, axis] == side
            assert np.all(x[on, axis] == side)
    assert inversion_fraction(mesh, x) == 0.0


def test_spline_is_injective_on_random_points():
    mesh, model, state, _ = spline_outputs(3)
    batch = collate([model.prepare(mesh, state)])
    cond = model.extractor(batch.grids, batch.params)
    u = np.random.default_rng(0).random((10_000, 2))
    out, _ = model.net(u, cond, np.zeros(len(u), dtype=np.int64))
    pairs = cKDTree(out.data).query_pairs(1e-12)
    assert all(np.array_equal(u[a], u[b]) for a, b in pairs)
    assert np.abs(out.data - u).max() > 1e-3  # the map is not trivial


def test_spline_needs_square_without_bbox_normalisation():
    mesh = build_polygon_mesh(DomainSpec.heptagon(), 8)
    _, state = poisson_input(mesh)
    model = DeformerModel("m2n_spline", {**SMALL, "normalize_to_bbox": False})
    with pytest.raises(InvalidDomain):
        spline_deform(model, mesh, state)
    x = spline_deform(DeformerModel("m2n_spline", SMALL), mesh, state)
    np.testing.assert_allclose(x, mesh.nodes, atol=1e-15)


def test_wrong_kind_or_channels_rejected():
    mesh = build_unit_square_mesh(5)
    _, state = poisson_input(mesh)
    with pytest.raises(ConfigError):
        gat_deform(DeformerModel("m2n_spline", SMALL), mesh, state)
    with pytest.raises(ConfigError):
        DeformerModel("m2n_spline", {**SMALL, "state_channels": 2}).deform(mesh, state)
    with pytest.raises(ConfigError):
        DeformerModel("unet")


# message passing

def test_gnn_block_identity_stub_on_path():
    # path 0 - 1 - 2, both directions
    senders = np.array([0, 1, 1, 2])
    receivers = np.array([1, 0, 2, 1])
    feats = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 3.0], [0.0, 4.0]])
    v = gnn_block(lambda e: e, feats, receivers, 3).data
    np.testing.assert_array_equal(v, [[2.0, 0.0], [1.0, 4.0], [0.0, 3.0]])


def test_gnn_block_matches_loop_oracle():
    rng = np.random.default_rng(0)
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (1, 3)]
    senders = np.array([a for a, b in edges] + [b for a, b in edges])
    receivers = np.array([b for a, b in edges] + [a for a, b in edges])
    feats = rng.normal(size=(len(senders), 4))
    extra = rng.normal(size=(5, 3))
    store = ParameterStore()
    from meshmove.nn import MLP
    f = MLP(store, "f", [4, 6, 6, 5], rng)
    out = gnn_block(f, feats, receivers, 5, extra).data
    upd = f(T.Tensor(feats)).data
    for i in range(5):
        expect = np.zeros(5)
        for e in range(len(receivers)):
            if receivers[e] == i:
                expect = expect + upd[e]
        np.testing.assert_allclose(out[i], np.concatenate([expect, extra[i]]), atol=1e-14)


def test_gnn_block_shape_errors():
    with pytest.raises(ShapeError):
        gnn_block(lambda e: e, np.ones((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(ShapeError):
        gnn_block(lambda e: e, np.ones((2, 2)), np.array([0, 1]), 2, extra=np.ones((3, 1)))


def triangle_block(self_bias, zero_scores):
    store = ParameterStore()
    block = AttentionBlock(store, "b", 2, 4, np.random.default_rng(0), self_bias=self_bias)
    if zero_scores:
        block.a.data[...] = 0.0
    senders = np.array([0, 1, 1, 2, 2, 0])
    receivers = np.array([1, 0, 2, 1, 0, 2])
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.2, 0.9]])
    ring = closed_ring(senders, receivers, 3)
    return block(T.Tensor(pos), ring, 3, pos, np.ones(3)), pos


def test_attention_all_on_self_is_identity():
    (_, new_pos, _), pos = triangle_block(self_bias=1e3, zero_scores=False)
    np.testing.assert_allclose(new_pos.data, pos, atol=1e-12)


def test_uniform_attention_gives_centroid():
    (_, new_pos, alpha), pos = triangle_block(self_bias=0.0, zero_scores=True)
    np.testing.assert_allclose(alpha.data, 1 / 3)
    np.testing.assert_allclose(new_pos.data, np.tile(pos.mean(axis=0), (3, 1)), atol=1e-15)


@pytest.mark.parametrize("mesh", [build_unit_square_mesh(8), build_polygon_mesh(DomainSpec.heptagon(), 7)],
                         ids=["square", "heptagon"])
@pytest.mark.parametrize("seed", [0, 1])
def test_gat_blocks_stay_in_ring_hull(mesh, seed):
    model = randomize(DeformerModel("m2n_gat", SMALL, seed=seed), seed, scale=1.0)
    _, state = poisson_input(mesh, seed)
    batch = collate([model.prepare(mesh, state)])
    trace = []
    model.forward(batch, trace)
    assert len(trace) == model.config["gat_blocks"]
    assert ring_hull_violations(trace, batch.senders, batch.receivers, batch.n_nodes) == [0] * len(trace)
    x = model.finalize(batch, trace[-1][1])[0]
    assert on_segment_distance(mesh, x)[mesh.tag_kind == EDGE].max() < 1e-12
    corner = mesh.tag_kind == CORNER
    assert np.array_equal(x[corner], mesh.nodes[corner])


# clip baselines

@pytest.mark.parametrize("kind", ["mlp_deform_clip", "gat_deform_clip"])
def test_zero_head_clip_baseline_is_identity(kind):
    mesh = build_unit_square_mesh(7)
    _, state = poisson_input(mesh)
    np.testing.assert_allclose(clip_baseline_deform(DeformerModel(kind, SMALL), mesh, state), mesh.nodes, atol=1e-15)


def test_clip_pulls_exterior_point_in():
    mesh = build_unit_square_mesh(3)
    coords = mesh.nodes.copy()
    c = int(np.flatnonzero((mesh.nodes == [0.5, 0.5]).all(axis=1))[0])
    coords[c] = [1.2, 0.5]
    np.testing.assert_allclose(clip_to_domain(mesh, coords)[c], [1.0, 0.5])


def test_clip_boundary_keeps_tangential_part():
    mesh = build_unit_square_mesh(5)
    model = DeformerModel("mlp_deform_clip", SMALL)
    model.net.mlp.layers[-1].bias.data[...] = [0.05, 0.05]
    _, state = poisson_input(mesh)
    x = clip_baseline_deform(model, mesh, state)
    bottom = (mesh.tag_kind == EDGE) & (mesh.nodes[:, 1] == 0)
    np.testing.assert_allclose(x[bottom], mesh.nodes[bottom] + [0.05, 0.0])
    corner = mesh.tag_kind == CORNER
    assert np.array_equal(x[corner], mesh.nodes[corner])


def test_checkpoint_round_trip(tmp_path):
    mesh = build_unit_square_mesh(9)
    _, state = poisson_input(mesh)
    for kind in ("m2n_spline", "m2n_gat", "mlp_deform_clip", "gat_deform_clip"):
        model = randomize(DeformerModel(kind, SMALL, seed=2), 3, scale=0.3)
        model.save(tmp_path / f"{kind}.json", meta={"k": kind})
        loaded = DeformerModel.load(tmp_path / f"{kind}.json")
        assert loaded.kind == kind and loaded.config == model.config and loaded.meta == {"k": kind}
        assert np.array_equal(loaded.deform(mesh, state), model.deform(mesh, state))


def test_batched_deform_matches_single():
    meshes = [build_unit_square_mesh(9), build_unit_square_mesh(12)]
    model = randomize(DeformerModel("m2n_gat", SMALL), 4, scale=0.5)
    pairs = [(m, poisson_input(m, k)[1]) for k, m in enumerate(meshes)]
    many = model.deform_many(pairs)
    for (m, s), x in zip(pairs, many):
        np.testing.assert_allclose(x, model.deform(m, s), atol=1e-12)
