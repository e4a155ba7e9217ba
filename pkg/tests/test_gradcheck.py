import pytest

from tdet.gradcheck import CHECKED_OPS, TOLERANCE, finite_diff_check, run_all


def test_registry_lists_five_ops():
    assert CHECKED_OPS == (
        "conv2d",
        "deformable_conv2d",
        "roi_extract",
        "smooth_l1",
        "total_loss",
    )


@pytest.mark.parametrize("op", CHECKED_OPS)
def test_analytic_gradients_match_finite_differences(op):
    assert finite_diff_check(op, seed=0, eps=1e-3) < TOLERANCE


@pytest.mark.parametrize("seed", [1, 2])
def test_other_seeds_also_pass(seed):
    for op, err in run_all(seed=seed).items():
        assert err < TOLERANCE, f"{op}: {err}"


@pytest.mark.parametrize("op", CHECKED_OPS)
def test_zero_upstream_gradient_has_zero_error(op):
    assert finite_diff_check(op, seed=0, eps=1e-3, zero_probe=True) == 0.0


def test_unknown_op_rejected():
    with pytest.raises(ValueError):
        finite_diff_check("not_an_op")
