import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from diffloc.checks import REFERENCE_ANCHORS
from diffloc.config import SPEED_OF_LIGHT
from diffloc.errors import CornerDiffraction, NonDifferentiable, NotIdentifiable
from diffloc.fisher import (
    RangingModel,
    batch_peb,
    build_fim,
    delay_crlb,
    fim_from_jacobian,
    identifiability,
    jacobian,
    numerical_rank,
    path_gradient,
)
from diffloc.oracles import finite_difference_gradient

# reference anchors, node (0, 10, 22), 100 MHz, 15 dB
PEB_3D_REF = 0.7866457106816642
PEB_Z_REF = 0.5613883423453994


def test_delay_crlb_anchor():
    model = RangingModel(100e6, 10.0)
    crlb = delay_crlb(model)
    assert crlb == pytest.approx(1.2665e-19, rel=1e-4)
    assert SPEED_OF_LIGHT * math.sqrt(crlb) == pytest.approx(0.1067, abs=1e-4)


def test_delay_crlb_scaling():
    base = delay_crlb(RangingModel(100e6, 10.0))
    assert delay_crlb(RangingModel(100e6, 20.0)) == pytest.approx(base / 2, rel=1e-15)
    assert delay_crlb(RangingModel(200e6, 10.0)) == pytest.approx(base / 4, rel=1e-15)


def test_per_anchor_snr():
    model = RangingModel.from_db(100e6, [10.0, 13.0, 20.0])
    assert delay_crlb(model, 2) == pytest.approx(delay_crlb(RangingModel(100e6, 100.0)), rel=1e-12)
    with pytest.raises(ValueError):
        model.snr(2)


@pytest.mark.parametrize("bad", [dict(bandwidth_beta=0.0), dict(bandwidth_beta=1e8, snr_linear=-1.0)])
def test_invalid_model(bad):
    with pytest.raises(ValueError):
        RangingModel(**bad)


def test_symmetric_gradient_has_no_x_component():
    g = path_gradient((0.0, -10.0, 0.0), (0.0, 10.0, 9.0), 2.0)
    assert g[0] == pytest.approx(0.0, abs=1e-15)
    assert g[1] > 0


def test_gradient_errors():
    with pytest.raises(CornerDiffraction):
        path_gradient((0.0, -10.0, 0.0), (25.0, 10.0, 9.0), 2.0)
    with pytest.raises(NonDifferentiable):
        # diffraction point exactly at x = 10
        path_gradient((10.0, -10.0, 0.0), (10.0, 10.0, 9.0), 2.0)


def test_gradient_at_double_root_matches_finite_differences():
    # a vanishing discriminant once produced NaN here
    for anchor in REFERENCE_ANCHORS:
        g = path_gradient(anchor, (0.0, 10.0, 22.0), 2.0)
        fd = finite_difference_gradient(anchor, (0.0, 10.0, 22.0), 2.0, -10.0, 10.0)
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_lower_edge_gradient_matches_finite_differences():
    anchor, node = (3.0, -12.0, -5.0), (1.0, 8.0, 15.0)
    g = path_gradient(anchor, node, 2.0, edge_kind="lower")
    fd = finite_difference_gradient(anchor, node, 2.0, -10.0, 10.0, edge_kind="lower")
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_reference_geometry_fim():
    r = build_fim(REFERENCE_ANCHORS, (0.0, 10.0, 22.0), 2.0, -10.0, 10.0, RangingModel.from_db(100e6, 15.0))
    assert r.rank == 3 and r.identifiable
    assert r.peb_3d == pytest.approx(PEB_3D_REF, rel=1e-9)
    assert r.peb_z == pytest.approx(PEB_Z_REF, rel=1e-9)
    assert r.jacobian.shape == (3, 3)
    assert not r.ill_conditioned


def test_degenerate_x_plane_not_identifiable():
    anchors = ((0.0, -20.0, -10.0), (0.0, -7.0, -20.0), (0.0, -30.0, 5.0))
    node = (0.0, 10.0, 22.0)
    with pytest.raises(NotIdentifiable) as info:
        build_fim(anchors, node, 2.0, -10.0, 10.0, RangingModel(100e6, 10.0))
    assert info.value.rank == 2
    report = build_fim(anchors, node, 2.0, -10.0, 10.0, RangingModel(100e6, 10.0), strict=False)
    assert report.peb_3d is None and report.rank == 2
    assert identifiability(anchors, node, 2.0) == ("rank_deficient", 2)


def test_two_anchors_never_identifiable():
    rng = np.random.default_rng(9)
    for _ in range(50):
        anchors = [(rng.uniform(-10, 10), rng.uniform(-30, -2), rng.uniform(-20, 20)) for _ in range(2)]
        node = (rng.uniform(-5, 5), rng.uniform(1, 20), rng.uniform(5, 40))
        verdict, rank = identifiability(anchors, node, 2.0)
        assert verdict == "rank_deficient" and rank <= 2


def test_generic_three_anchors_identifiable():
    assert identifiability(REFERENCE_ANCHORS, (3.0, 10.0, 22.0), 2.0) == ("identifiable", 3)


def test_batch_matches_single():
    nodes = np.array([[0.0, 10.0, 22.0], [3.0, 4.0, 30.0], [-7.5, 18.0, 6.0]])
    model = RangingModel.from_db(100e6, 9.0)
    p3, pz, rank = batch_peb(REFERENCE_ANCHORS, nodes, 2.0, -10.0, 10.0, model.range_sigmas(3))
    for i, node in enumerate(nodes):
        r = build_fim(REFERENCE_ANCHORS, node, 2.0, -10.0, 10.0, model)
        assert rank[i] == 3
        assert p3[i] == pytest.approx(r.peb_3d, rel=1e-9)
        assert pz[i] == pytest.approx(r.peb_z, rel=1e-9)


def test_batch_marks_invalid_geometry():
    nodes = np.array([[0.0, 10.0, 22.0], [0.0, -1.0, 10.0]])
    _, _, rank = batch_peb(REFERENCE_ANCHORS, nodes, 2.0, -10.0, 10.0, np.ones(3))
    assert list(rank) == [3, -1]


# --------------------------------------------------------------------------- properties

scene = st.tuples(
    st.floats(-15, 15), st.floats(-30, -1), st.floats(-25, 30),
    st.floats(-9, 9), st.floats(0.5, 20), st.floats(0, 40),
)  # fmt: skip


@settings(max_examples=200, deadline=None)
@given(scene)
def test_gradient_matches_finite_differences(s):
    anchor, node = s[:3], s[3:]
    try:
        g = path_gradient(anchor, node, 2.0)
    except (CornerDiffraction, NonDifferentiable):
        return
    fd = finite_difference_gradient(anchor, node, 2.0, -10.0, 10.0)
    assert np.max(np.abs(g - fd)) <= 1e-5 * max(np.max(np.abs(fd)), 1e-12)
    assert g[1] > 0


node_st = st.tuples(st.floats(-9.5, 9.5), st.floats(0.5, 20), st.floats(5, 40))


def _report(node, snr_db):
    try:
        return build_fim(REFERENCE_ANCHORS, node, 2.0, -10.0, 10.0, RangingModel.from_db(100e6, snr_db), strict=False)
    except (CornerDiffraction, NonDifferentiable):
        return None


@settings(max_examples=150, deadline=None)
@given(node_st, st.lists(st.floats(0.1, 1e3), min_size=3, max_size=3))
def test_fim_symmetric_psd_and_rank_weight_free(node, weights):
    r = _report(node, 10.0)
    assume(r is not None)
    fim = r.fim
    assert np.array_equal(fim, fim.T)
    eig = np.linalg.eigvalsh(fim)
    assert eig.min() >= -1e-9 * eig.max()
    reweighted = fim_from_jacobian(r.jacobian, 1.0 / np.sqrt(weights))
    assert numerical_rank(reweighted) == numerical_rank(r.jacobian) == r.rank


@settings(max_examples=100, deadline=None)
@given(node_st, st.floats(-5, 20), st.floats(0.0, 10.0))
def test_peb_monotone_in_snr(node, snr_db, extra):
    lo, hi = _report(node, snr_db), _report(node, snr_db + extra)
    assume(lo is not None and lo.rank == 3)
    assert hi.peb_3d <= lo.peb_3d * (1 + 1e-12)
    assert hi.peb_z <= lo.peb_z * (1 + 1e-12)
    assert lo.peb_z <= lo.peb_3d


@settings(max_examples=100, deadline=None)
@given(node_st, st.lists(st.floats(0.5, 100), min_size=3, max_size=3), st.integers(0, 2), st.floats(1.0, 10.0))
def test_peb_monotone_per_anchor(node, snr, j, factor):
    lo = RangingModel(100e6, tuple(snr))
    boosted = list(snr)
    boosted[j] *= factor
    try:
        a = build_fim(REFERENCE_ANCHORS, node, 2.0, -10.0, 10.0, lo, strict=False)
        b = build_fim(REFERENCE_ANCHORS, node, 2.0, -10.0, 10.0, RangingModel(100e6, tuple(boosted)), strict=False)
    except (CornerDiffraction, NonDifferentiable):
        return
    assume(a.rank == 3)
    assert b.peb_3d <= a.peb_3d * (1 + 1e-12)
    assert b.peb_z <= a.peb_z * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(node_st)
def test_peb_unit_consistency(node):
    # bandwidth in kHz with the speed of light in m/ms gives identical range sigmas
    si = RangingModel(100e6, 10.0)
    khz = RangingModel(100e3, 10.0, c=SPEED_OF_LIGHT / 1e3)
    assert khz.range_sigmas(3) == pytest.approx(si.range_sigmas(3), rel=1e-14)
    a, b = _report(node, 10.0), None
    assume(a is not None and a.rank == 3)
    b = build_fim(REFERENCE_ANCHORS, node, 2.0, -10.0, 10.0, khz)
    assert b.peb_3d == pytest.approx(a.peb_3d, rel=1e-12)


def test_jacobian_columns_are_gradients():
    node = (1.0, 8.0, 15.0)
    jac = jacobian(REFERENCE_ANCHORS, node, 2.0)
    for j, a in enumerate(REFERENCE_ANCHORS):
        assert np.array_equal(jac[:, j], path_gradient(a, node, 2.0))
