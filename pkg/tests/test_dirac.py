import numpy as np
import pytest

from tgmetric.courant import CourantData, GeneralizedSection
from tgmetric.dirac import (
    DiracFrame,
    FrameError,
    check_involutivity,
    check_isotropy,
    check_projectability,
    check_regularity,
    dirac_checks,
    null_space,
    point_frame,
)
from tgmetric.fields import TensorField

from conftest import DIRAC_CORPUS, assert_close, scenario


def flat_data(chart, H="0"):
    g = TensorField.from_strings(chart, "symbilinear", ["1", "0", "0", "1", "0", "1"])
    return CourantData(chart, g, TensorField.from_strings(chart, "threeform", [H]))


def frame(chart, *secs, H="0"):
    return DiracFrame(flat_data(chart, H), tuple(GeneralizedSection.from_strings(chart, X, a) for X, a in secs))


Z = ["0", "0", "0"]


def test_isotropy_examples(chart3, pts3):
    assert check_isotropy(scenario("s1_flat").frame, pts3).value == 0
    assert check_isotropy(scenario("s2_twisted").frame, pts3).passed
    rep = check_isotropy(frame(chart3, (["1", "0", "0"], ["1", "0", "0"])), pts3)
    assert not rep.passed and rep.value == 2.0


def test_involutivity_examples(chart3, pts3):
    assert check_involutivity(scenario("s2_twisted").frame, pts3).passed
    rep = check_involutivity(frame(chart3, (["1", "0", "0"], Z), (["0", "1", "0"], Z)), pts3)
    assert rep.passed and all(v == 0 for v in rep.detail["max_structure_function"].values())


def test_contact_frame_is_not_involutive():
    sc = scenario("s6_noninvolutive")
    pts = sc.points()
    rep = check_involutivity(sc.frame, pts)
    assert not rep.passed
    # [(d_x,0),(d_y + x d_z,0)] = (d_z, 0); its distance to span is 1/sqrt(1+x^2)
    assert rep.value == pytest.approx(np.max(1 / np.sqrt(1 + pts[:, 0] ** 2)), rel=1e-10)


def test_x_dy_frame_is_pointwise_involutive_off_its_singular_line(chart3):
    # (d_y,0) = (1/x)(x d_y,0) wherever x != 0, so pointwise membership holds there
    pts = chart3.sample(100, seed=4)
    fr = frame(chart3, (["1", "0", "0"], Z), (["0", "x", "0"], Z))
    assert check_involutivity(fr, pts).passed
    assert not check_regularity(fr, pts).passed  # x = 0 lies in the box


def test_regularity_examples(chart3, pts3):
    assert check_regularity(scenario("s1_flat").frame, pts3).value == pytest.approx(1.0)
    assert not check_regularity(frame(chart3, (["x", "0", "0"], Z)), pts3).passed
    sc = scenario("s3_heisenberg")
    assert check_regularity(sc.frame, sc.points()).value >= 1.0


def test_projectability_examples(chart3, pts3):
    assert check_projectability(scenario("s1_flat").frame, pts3).passed
    assert check_projectability(scenario("s2_twisted").frame, pts3).passed
    assert not check_projectability(frame(chart3, (Z, ["1", "0", "0"])), pts3).passed


def test_rank_deficient_frame_reports_regularity_failure(chart3, pts3):
    fr = frame(chart3, (["1", "0", "0"], Z), (["2", "0", "0"], Z))
    rep = check_involutivity(fr, pts3)
    assert not rep.passed and "rank-deficient" in rep.detail["error"]


def test_frame_rank_bounds(chart3):
    with pytest.raises(ValueError):
        DiracFrame(flat_data(chart3), ())


def test_point_frame_s1():
    pfd = point_frame(scenario("s1_flat").frame, [0.1, 0.2, 0.3])
    assert_close(pfd.beta_plus[:, 0], [0, 0, 1], 0)
    assert_close(pfd.beta_minus[:, 0], [0, 0, -1], 0)
    assert pfd.ann_plus.shape == (3, 2)
    assert_close(pfd.ann_plus[2], 0, 1e-15)
    assert_close(pfd.ann_plus.T @ pfd.ann_plus, np.eye(2), 1e-12)


def test_point_frame_s2():
    x = 0.4
    pfd = point_frame(scenario("s2_twisted").frame, [x, -0.3, 0.2])
    assert_close(pfd.beta_plus[:, 0], [0, 2 * x, 1], 1e-15)
    assert_close(pfd.beta_minus[:, 0], [0, 2 * x, -1], 1e-15)
    assert_close(pfd.beta_plus.T @ pfd.ann_plus, 0, 1e-12)
    assert_close(pfd.beta_minus.T @ pfd.ann_minus, 0, 1e-12)


def test_point_frame_degenerate_probe(chart3):
    fr = frame(chart3, (["0", "0", "1"], ["0", "0", "-1"]))
    with pytest.raises(FrameError, match="pi_\\+"):
        point_frame(fr, [0.0, 0.0, 0.0])


@pytest.mark.parametrize("name", DIRAC_CORPUS)
def test_point_frame_invariants(name):
    sc = scenario(name)
    fr = sc.frame
    assert all(c.passed for c in dirac_checks(fr, sc.points()).values())
    for p in sc.points(20):
        pfd = point_frame(fr, p)
        normsq = np.einsum("ia,ij,ja->a", pfd.X_mat, pfd.g, pfd.X_mat)
        assert_close(np.einsum("ia,ia->a", pfd.X_mat, pfd.beta_plus), normsq, 1e-10)
        assert_close(np.einsum("ia,ia->a", pfd.X_mat, pfd.beta_minus), -normsq, 1e-10)
        assert pfd.ann_plus.shape[1] == pfd.ann_minus.shape[1] == fr.n - fr.k
        assert_close(pfd.beta_plus.T @ pfd.ann_plus, 0, 1e-12)
        Q = np.block([[np.zeros((3, 3)), np.eye(3)], [np.eye(3), np.zeros((3, 3))]])
        assert_close(pfd.D_mat.T @ Q @ pfd.D_mat, 0, 1e-10)


def test_null_space_cutoff():
    A = np.array([[1.0, 0, 0], [0, 1e-12, 0]])
    ns = null_space(A)
    assert ns.shape == (3, 2)
    assert_close(A[:1] @ ns, 0, 1e-15)
