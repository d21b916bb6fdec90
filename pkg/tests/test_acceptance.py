"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line in the terminal summary."""

import math
import time

import numpy as np
import pytest

from cone_certify import certify, dynamics as dyn, transfer as tr, verify as vf
from cone_certify.cli import main


class Timed:
    def __init__(self):
        self.elapsed = 0.0

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed += time.perf_counter() - self.t0


def built(spec, f):
    with Timed() as t:
        model = tr.model_for(spec, f, 4096)
        model.base_triple
    return model, t.elapsed


@pytest.fixture(scope="module")
def doubling():
    spec = dyn.doubling_map()
    f = dyn.observable("cos1", spec.metric)
    model, secs = built(spec, f)
    return spec, f, model, secs


@pytest.fixture(scope="module")
def gauss():
    spec = dyn.gauss_map(0.2, 64)
    f = dyn.observable("gauss_x", spec.metric)
    model, secs = built(spec, f)
    return spec, f, model, secs


@pytest.fixture(scope="module")
def cone_sweep():
    with Timed() as t:
        reports = vf.cone_lab(dim=5, matrices=1000, seed=0, comparisons=100)
    return {r.check_id: r for r in reports}, t.elapsed


def summary(reports):
    return ", ".join(f"{r.check_id} {r.evaluations - r.violations}/{r.evaluations}" for r in reports)


@pytest.mark.criterion(1)
def test_golden_constants(request):
    with Timed() as t:
        g = certify.golden_constants()
        _, D0 = certify.delta0_threshold(0.0)
        C = certify.c_alpha(4 / 25)
    assert D0 == pytest.approx(3 * math.log(1 / (1 - (2 / 3) * math.exp(1 / 6))), rel=1e-15)
    assert 4.60 <= D0 <= 4.65
    assert C <= 2 / 9
    assert 2 * math.sqrt(math.pi) * math.exp(2 * D0 / 9) <= 10
    assert g["fourier_factor"] <= 10
    assert math.ceil(g["Delta0_nm_computed"] * 100) / 100 == g["Delta0_nm"] == 3.51
    assert g["nonmarkov_chain"] <= g["nonmarkov_coeff"] == 9168
    assert t.elapsed < 1.0
    request.node.acceptance_detail = f"Delta0={D0:.6f} C(4/25)={C:.6f} ({t.elapsed:.3f}s)"


@pytest.mark.criterion(2)
def test_diameter_dual_forms(request):
    with Timed() as t:
        worst = 0.0
        for gamma in np.linspace(1.05, 10.0, 20):
            for G in np.linspace(0.0, 10.0, 20):
                a = certify.dr_closed_form(gamma, G)
                b = certify.dr_composed_form(gamma, G)
                worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    assert worst <= 1e-12
    assert t.elapsed < 1.0
    request.node.acceptance_detail = f"400 points, worst gap {worst:.2e} ({t.elapsed:.3f}s)"


@pytest.mark.criterion(3)
def test_variance_cross_validation(request, doubling):
    spec, f, m, secs = doubling
    with Timed() as t:
        s = tr.sigma2_spectral(spec, f, model=m)
        gk = tr.sigma2_green_kubo(spec, f, model=m).value
    assert abs(s - 0.5) <= 1e-3
    assert abs(gk - 0.5) <= 1e-3
    assert abs(s - gk) <= 1e-3
    total = t.elapsed + secs
    assert total < 60
    request.node.acceptance_detail = f"spectral {s:.10f} green-kubo {gk:.10f} ({total:.1f}s)"


@pytest.mark.criterion(4)
def test_normalization(request, doubling, gauss):
    _, _, md, sd = doubling
    _, _, mg, sg = gauss
    b = md.base_triple
    assert abs(b.lam - 1.0) <= 1e-10
    h_err = float(np.max(np.abs(b.h - 1.0)))
    assert h_err <= 1e-8
    x = mg.grid.nodes
    hg = mg.base_triple.h / np.dot(mg.grid.quadrature_weights(), mg.base_triple.h)
    g_err = float(np.max(np.abs(hg - 1 / ((1 + x) * math.log(2)))))
    assert g_err <= 1e-3
    total = sd + sg
    assert total < 120
    request.node.acceptance_detail = (f"doubling |lambda-1|={abs(b.lam - 1):.1e} |h-1|={h_err:.1e}; "
                                      f"gauss density error {g_err:.2e} ({total:.1f}s)")


@pytest.mark.criterion(5)
def test_cone_isometry_and_contraction(request, cone_sweep):
    reps, secs = cone_sweep
    wanted = [reps[k] for k in ("cone-isometry", "birkhoff-contraction", "complex-real-leg", "estimator-sandwich")]
    assert reps["cone-isometry"].tolerances["abs"] == 1e-9
    assert reps["birkhoff-contraction"].tolerances["abs"] == 1e-12
    for r in wanted:
        assert r.ok, r.to_dict()
    assert secs < 60
    request.node.acceptance_detail = f"{summary(wanted)} ({secs:.1f}s)"


@pytest.mark.criterion(6)
def test_perturbed_comparison_sweep(request, cone_sweep):
    reps, secs = cone_sweep
    r = reps["perturbed-comparison"]
    assert r.evaluations == 100
    assert r.ok, r.to_dict()
    assert r.tolerances["abs"] == 1e-9
    assert secs < 60
    request.node.acceptance_detail = f"100 instances, worst margin {r.worst_margin:.3g} ({secs:.1f}s incl. criterion 5)"


@pytest.mark.criterion(7)
def test_operator_lemma_sweeps(request, doubling, gauss):
    out = []
    with Timed() as t:
        for name, (_, _, m, _) in (("doubling", doubling), ("gauss", gauss)):
            reps = vf.lemma_suite(m, only=["5.1", "5.2"], z_count=100, u_samples=10, pairs=100,
                                  diameter_pairs=1000)
            out += reps
            for r in reps:
                assert r.ok, (name, r.to_dict())
    eps = [r for r in out if r.check_id == "lemma-epsilon"]
    assert all(r.details["z_count"] == 100 for r in eps)
    assert t.elapsed < 300
    request.node.acceptance_detail = f"{summary(out)} ({t.elapsed:.1f}s)"


@pytest.mark.criterion(8)
def test_analytic_lemma_sweeps(request, doubling, gauss):
    out = []
    with Timed() as t:
        for name, (_, _, m, _) in (("doubling", doubling), ("gauss", gauss)):
            reps = vf.lemma_suite(m, only=["6.3", "6.4", "6.5", "6.6", "7.1"])
            assert {r.check_id for r in reps} == {"ring-lemma", "pressure-real-part", "pressure-taylor",
                                                  "variance-rate", "refined-fourier"}
            out += reps
            for r in reps:
                assert r.ok, (name, r.to_dict())
    assert t.elapsed < 300
    request.node.acceptance_detail = f"{len(out)} sweeps, {sum(r.evaluations for r in out)} evaluations ({t.elapsed:.1f}s)"


@pytest.mark.criterion(9)
@pytest.mark.slow
def test_end_to_end_experiment(request, doubling):
    spec, f, m, secs = doubling
    with Timed() as t:
        rep = vf.be_experiment(spec, f, [256, 1024, 4096], 10 ** 6, seed=0, model=m, raise_on_failure=False)
    assert rep.ok, rep.failures
    for row in rep.rows:
        assert row.distance - row.slack <= row.feller + row.feller_quad
        assert row.distance - row.slack <= row.certificate
    assert 0.35 <= rep.beta <= 0.65
    total = t.elapsed + secs
    assert total < 600
    ratios = " ".join(f"n={r.n}:{r.slack_ratio:.2e}" for r in rep.rows)
    request.node.acceptance_detail = f"beta={rep.beta:.3f} certificate/distance {ratios} ({total:.0f}s)"


@pytest.mark.criterion(10)
def test_reproducible_outputs(request, tmp_path):
    commands = {
        "certify": ["certify", "--map", "gauss", "--obs", "gauss_x", "--grid", "1024"],
        "spectrum": ["spectrum", "--map", "doubling", "--obs", "cos1", "--grid", "1024"],
        "check-lemmas": ["check-lemmas", "--map", "doubling", "--obs", "cos1", "--grid", "1024",
                         "--z-count", "10", "--only", "5.1,6.4,6.6"],
        "cone-lab": ["cone-lab", "--dim", "4", "--matrices", "50", "--seed", "3"],
        "experiment": ["experiment", "--map", "doubling", "--obs", "cos1", "--grid", "1024", "--n-list", "4,16",
                       "--samples", "20000", "--seed", "9"],
    }
    compared = 0
    for name, argv in commands.items():
        trees = []
        for k in range(2):
            out = tmp_path / f"{name}-{k}"
            assert main(argv + ["--out", str(out)]) in (0, 4)
            trees.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        assert trees[0] and trees[0] == trees[1], name
        compared += len(trees[0])
    request.node.acceptance_detail = f"{len(commands)} commands, {compared} files byte-identical"
