import math

import pytest

from archmodel import ArchGridSpec, ArchitectureConfig, InfeasibleHeadCountException, Snapping, derived_metrics
from corpus import reference_model
from costmodel import Workload, builtin_hardware
from laws import LAW_FIT_1B, LAW_FIT_80M_TO_297M, ConditionalLaw, NoInteriorOptimumException, conditional_loss, ref_loss
from search import (
    OPTIMAL,
    InvalidSearchProblemException,
    NoFeasibleCandidateException,
    SearchProblem,
    closed_form_architecture,
    constrained_search,
    gqa_local_search,
    run_algorithm1,
)
from synthetic import synthetic_reference

A100 = builtin_hardware("a100-40g")
REF = synthetic_reference()
LLAMA_1B = reference_model("LLaMA-3.2-1B").to_config()
N_LLAMA = 973_078_528
D_TOKENS = 1e11
GRID = ArchGridSpec(n_target=N_LLAMA, n_layers=16, d_head=64, gqa_values=[4],
                    d_model_values=[2048, 2560, 3072], r_values=[1.0, 2.0, 3.6, 4.8])
# 36 heads on the Surefire-1B budget before the GQA walk
SUREFIRE_BUDGET = 964_689_920
SUREFIRE_BASE = ArchitectureConfig("base", 16, 2560, 36, 64, 4, 5952)


def llama_loss():
    metrics = derived_metrics(LLAMA_1B)
    return conditional_loss(LAW_FIT_80M_TO_297M, metrics.x, metrics.r, ref_loss(REF, N_LLAMA, D_TOKENS))


def problem(budget, grid=GRID):
    return SearchProblem(LAW_FIT_80M_TO_297M, REF, N_LLAMA, D_TOKENS, budget, grid, A100)


def test_closed_form_reproduces_panda_1b():
    config = closed_form_architecture(LAW_FIT_80M_TO_297M, 975_175_680, 16, 64, 4, Snapping(d_multiple=512))
    assert config.shape_key() == reference_model("Panda-1B").to_config().shape_key()


def test_closed_form_reproduces_3b_shape_from_1b_law():
    config = closed_form_architecture(LAW_FIT_1B, 2_877_292_544, 28, 128, 3, Snapping(d_multiple=512))
    assert (config.d_model, config.n_head, config.f_size) == (4096, 33, 4608)
    assert derived_metrics(config).r == pytest.approx(1.227, abs=0.001)


def test_closed_form_errors():
    with pytest.raises(NoInteriorOptimumException):
        closed_form_architecture(ConditionalLaw("multiplicative", 2.7, -0.1, 0.0078, 0.387, 0.0063, 0.0065),
                                 975_175_680, 16, 64, 4)
    with pytest.raises(InfeasibleHeadCountException, match="cannot realize optimum"):
        closed_form_architecture(LAW_FIT_80M_TO_297M, 100_000, 16, 64, 4)


def test_search_beats_llama_at_its_own_loss():
    result = constrained_search(problem(llama_loss()))
    assert result.reference_loss == pytest.approx(2.38886, abs=1e-4)
    assert len(result.candidates) == 12
    assert result.best.arch.name == "L16-d3072-h28-g4-f5120"
    llama = next(c for c in result.candidates if c.arch.shape_key() == LLAMA_1B.shape_key())
    assert llama.feasible and llama.dominated
    assert result.best.modeled_throughput > llama.modeled_throughput
    assert sum(not c.feasible for c in result.candidates) == 2
    assert len(result.pareto) == 8
    assert result.best in result.pareto


def test_search_without_loss_ceiling_takes_fastest_shape():
    result = constrained_search(problem(math.inf))
    assert result.best.arch.name == "L16-d3072-h20-g4-f5504"
    assert result.best.modeled_throughput == max(c.modeled_throughput for c in result.candidates)


def test_search_with_unreachable_budget():
    l_opt = ref_loss(REF, N_LLAMA, D_TOKENS)
    with pytest.raises(NoFeasibleCandidateException) as info:
        constrained_search(problem(l_opt))
    assert info.value.min_predicted_loss == pytest.approx(2.395786, abs=1e-5)
    with pytest.raises(InvalidSearchProblemException, match="below the reference loss"):
        constrained_search(problem(l_opt - 0.01))
    with pytest.raises(InvalidSearchProblemException):
        constrained_search(problem(math.nan))


def test_search_problem_consistency():
    other = ArchGridSpec(n_target=975_175_680, n_layers=16, d_head=64, gqa_values=[4],
                         d_model_values=[2560], r_values=[1.0])
    with pytest.raises(InvalidSearchProblemException, match="n_target"):
        constrained_search(problem(3.0, other))


def test_gqa_walk_reaches_surefire_shape():
    calls = []
    losses = {4: 2.500, 6: 2.501, 9: 2.5015, 12: 2.510, 18: 2.6, 36: 2.7}

    def evaluator(gqa):
        calls.append(gqa)
        return losses[gqa]

    trace, chosen = gqa_local_search(SUREFIRE_BASE, evaluator, n_target=SUREFIRE_BUDGET,
                                     workload=Workload(batch=16, t_in=1024, t_out=256))
    assert calls == [4, 6, 9, 12]
    assert [e.accepted for e in trace] == [True, True, True, False]
    assert chosen.gqa == 9
    assert chosen.arch.shape_key() == reference_model("Surefire-1B").to_config().shape_key()


def test_gqa_walk_with_flat_losses_goes_to_the_top():
    trace, chosen = gqa_local_search(SUREFIRE_BASE, lambda gqa: 2.5, n_target=SUREFIRE_BUDGET)
    assert [e.gqa for e in trace] == [4, 6, 9, 12, 18, 36]
    assert chosen.gqa == 36
    assert all(e.arch.n_head == 36 for e in trace)


def test_gqa_walk_stops_at_first_rejection():
    trace, chosen = gqa_local_search(SUREFIRE_BASE, {4: 2.5, 6: 2.6}.get, n_target=SUREFIRE_BUDGET)
    assert len(trace) == 2
    assert chosen.gqa == 4
    assert chosen.arch == SUREFIRE_BASE


def test_gqa_walk_with_nan_loss_keeps_baseline():
    trace, chosen = gqa_local_search(SUREFIRE_BASE, lambda gqa: math.nan, n_target=SUREFIRE_BUDGET)
    assert len(trace) == 1
    assert chosen.gqa == 4 and not chosen.accepted


def test_gqa_walk_rebuilds_baseline():
    surefire = reference_model("Surefire-1B").to_config()
    trace, _ = gqa_local_search(surefire, lambda gqa: 2.5, n_target=SUREFIRE_BUDGET)
    assert trace[0].arch.gqa == 4 and trace[0].arch.f_size == 5952
    with pytest.raises(InvalidSearchProblemException):
        gqa_local_search(surefire, lambda gqa: 2.5, epsilon=-0.1)


def test_algorithm_with_loss_budget():
    result = run_algorithm1(n_target=N_LLAMA, d_tokens=D_TOKENS, n_layers=16, d_head=64,
                            loss_budget=llama_loss(), law=LAW_FIT_80M_TO_297M, ref=REF, grid=GRID)
    assert result.architecture.name == "L16-d3072-h28-g4-f5120"
    assert result.gqa == 4
    assert result.search is not None and result.gqa_trace == ()
    assert result.notes == []


def test_algorithm_optimal_then_gqa_walk():
    result = run_algorithm1(n_target=975_175_680, d_tokens=D_TOKENS, n_layers=16, d_head=64,
                            loss_budget=OPTIMAL, law=LAW_FIT_80M_TO_297M, ref=REF,
                            snapping=Snapping(d_multiple=512), evaluator=lambda gqa: 2.5)
    assert result.search is None
    assert [e.gqa for e in result.gqa_trace] == [4, 6, 8, 9, 12, 18, 24, 36, 72]
    assert result.architecture.n_head == 72 and result.architecture.d_model == 2560
    assert result.gqa == result.architecture.gqa == 72


def test_algorithm_needs_inputs():
    with pytest.raises(InvalidSearchProblemException, match="reference"):
        run_algorithm1(n_target=N_LLAMA, d_tokens=D_TOKENS, n_layers=16, d_head=64, loss_budget=OPTIMAL,
                       law=LAW_FIT_80M_TO_297M)
    with pytest.raises(InvalidSearchProblemException, match="law"):
        run_algorithm1(n_target=N_LLAMA, d_tokens=D_TOKENS, n_layers=16, d_head=64, loss_budget=OPTIMAL, ref=REF)
    with pytest.raises(InvalidSearchProblemException, match="grid"):
        run_algorithm1(n_target=N_LLAMA, d_tokens=D_TOKENS, n_layers=16, d_head=64, loss_budget=2.5,
                       law=LAW_FIT_80M_TO_297M, ref=REF)
