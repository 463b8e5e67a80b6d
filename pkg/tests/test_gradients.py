"""Tape gradients against central finite differences (h=1e-3, float64)."""

import pytest

from gradcheck_util import GRAD_CASES, case_dtdnn_layer, max_grad_error

SEEDS = range(20)


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_matches_finite_differences(name, f64):
    worst = max(max_grad_error(*GRAD_CASES[name](seed)) for seed in SEEDS)
    assert worst < 1e-3, f"{name}: rel err {worst:.2e}"


def test_dtdnn_layer_inference_mode(f64):
    worst = max(max_grad_error(*case_dtdnn_layer(seed, training=False)) for seed in range(5))
    assert worst < 1e-3
