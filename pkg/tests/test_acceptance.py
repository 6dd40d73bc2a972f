"""Acceptance suite: one pass/fail line per criterion.

Every test prints ``[PASS]`` or ``[FAIL]`` with the measured quantities
(visible without ``-s``) and then asserts the same condition.
"""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from shiftniche.cli import main
from shiftniche.critical_speed import (
    fat_tail_speed_bound,
    find_speeds,
    spectral_speed_bound,
    symmetric_remark_values,
)
from shiftniche.discrete_operator import Grid, assemble
from shiftniche.environment import ConstantProfile, FunctionProfile, Logistic, niche_profile
from shiftniche.evolution import bump_initial, comparison_probe, integrate, long_time_classify
from shiftniche.kernel import make_kernel, truncate
from shiftniche.spectral import (
    continuum_dual,
    duality_residual,
    principal_eigenvalue,
    reflection_identity_check,
)
from shiftniche.steady_state import fat_tail_solve, solve_bounded, uniqueness_probe, vanishing_viscosity

H = 0.05
BAND = 1e-4  # |lambda_p| below this counts as borderline


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} | {detail}")
    assert ok, detail


def lam(grid, kernel, c, a, epsilon=0.0, tol=1e-12, **kw):
    return principal_eigenvalue(assemble(grid, kernel, c, epsilon, a), tol=tol, **kw).lambda_p


@pytest.fixture(scope="module")
def uniform():
    return make_kernel("uniform", radius=1.0)


@pytest.fixture(scope="module")
def niche():
    return Logistic(niche_profile(inner=1.0, outer=-1.0, half_width=2.0, ramp=1.0), 1.0)


@pytest.fixture(scope="module")
def skew():
    z = np.linspace(-1.0, 2.0, 31)
    j = np.where(z < 0, 1.0 + z, 1.0 - 0.5 * z)
    return make_kernel({"abscissae": z, "densities": np.clip(j, 0.0, None)})


@pytest.fixture(scope="module")
def grid20():
    return Grid.from_spacing(20.0, H)


@pytest.fixture(scope="module")
def speeds(uniform, niche):
    return find_speeds(uniform, niche, {"h": H})


@pytest.fixture(scope="module")
def dichotomy(uniform, niche, grid20, speeds):
    """Steady states and evolutions on both sides of the thresholds."""
    c_in = 0.5 * speeds.c_star_plus[0]
    c_out = 1.2 * speeds.c_dstar_plus[1]
    out = {"c_in": c_in, "c_out": c_out}
    for key, c, T in (("in", c_in, 200.0), ("out", c_out, 400.0)):
        steady = solve_bounded(grid20, uniform, niche, c, 0.0, tol=1e-10)
        u0 = bump_initial(grid20, niche)
        trace = integrate(u0, "moving", uniform, niche, c, grid20, T, reference=steady.u)
        out[key] = dict(
            steady=steady,
            trace=trace,
            label=long_time_classify(trace, steady.u if steady.classification == "nontrivial" else None),
            lam=lam(grid20, uniform, c, niche),
        )
    return out


def test_criterion_01_constant_potential(capsys, uniform):
    a = ConstantProfile(0.5)
    Rs = (10.0, 20.0, 40.0, 80.0)
    lams = [lam(Grid.from_spacing(R, 0.025), uniform, 0.0, a) for R in Rs]
    nonincreasing = all(b <= a_ + 1e-12 for a_, b in zip(lams, lams[1:]))
    bounded = min(lams) >= -0.5 - 1e-12
    close = abs(lams[-1] + 0.5) <= 1e-2
    g = Grid(10.0, 400)
    op = assemble(g, uniform, 0.0, 0.0, a)
    perron = principal_eigenvalue(op, tol=1e-13).lambda_p
    dense = principal_eigenvalue(op, method="dense-oracle").lambda_p
    oracle = abs(perron - dense) <= 1e-9
    verdict(
        capsys, 1, "constant potential",
        nonincreasing and bounded and close and oracle,
        f"lambda(R)={[f'{v:.6f}' for v in lams]} n(80)={Grid.from_spacing(80.0, 0.025).n} "
        f"|perron-dense|={abs(perron - dense):.1e}",
    )


def test_criterion_02_duality(capsys, skew, niche):
    grid = Grid.from_spacing(10.0, H)
    worst_disc, worst_cont = 0.0, 0.0
    for c in (-0.7, 0.0, 0.7):
        op = assemble(grid, skew, c, 0.0, niche)
        worst_disc = max(worst_disc, duality_residual(op))
        primal = principal_eigenvalue(op, tol=1e-12).lambda_p
        cont = principal_eigenvalue(continuum_dual(op), tol=1e-12).lambda_p
        worst_cont = max(worst_cont, abs(primal - cont))
    ok = worst_disc <= 1e-10 and worst_cont <= 5 * H
    verdict(capsys, 2, "discrete duality", ok,
            f"max|l(A)-l(A^T)|={worst_disc:.1e} max|l(A)-l(continuum dual)|={worst_cont:.2e} (allow {5 * H})")


def test_criterion_03_reflection(capsys, skew):
    base = niche_profile()
    growth = Logistic(FunctionProfile(lambda x: base(x - 0.7) + 0.2 * np.tanh(x), 4.0, (-1.2, -0.8)), 1.0)
    grid = Grid.from_spacing(10.0, H)
    worst = max(reflection_identity_check(skew, growth, c, grid) for c in (-0.6, 0.0, 0.4))
    verdict(capsys, 3, "reflection identity", worst <= 1e-10, f"max defect={worst:.1e}")


def test_criterion_04_lipschitz(capsys, uniform, niche):
    grid = Grid.from_spacing(10.0, 0.1)
    a_vals = niche.a(grid.x)
    rng = np.random.default_rng(4)
    base = {c: lam(grid, uniform, c, a_vals) for c in (0.0, 0.5)}
    worst = -math.inf
    for trial in range(100):
        c = (0.0, 0.5)[trial % 2]
        da = rng.uniform(-0.1, 0.1, grid.n)
        excess = abs(lam(grid, uniform, c, a_vals + da) - base[c]) - np.max(np.abs(da))
        worst = max(worst, excess)
    verdict(capsys, 4, "Lipschitz in a", worst <= 1e-8, f"100 trials, max(|dl|-|da|)={worst:.2e}")


def test_criterion_05_monotonicity(capsys, uniform, skew):
    rng = np.random.default_rng(5)
    worst_dom, worst_a = -math.inf, -math.inf
    for i in range(20):
        kernel = (uniform, skew)[i % 2]
        prof = niche_profile(
            inner=rng.uniform(0.2, 1.5), outer=rng.uniform(-1.5, -0.2),
            half_width=rng.uniform(0.5, 3.0), ramp=rng.uniform(0.5, 2.0),
        )
        c = rng.uniform(-0.8, 0.8)
        lams = [lam(Grid.from_spacing(R, 0.1), kernel, c, prof) for R in (6.0, 12.0, 24.0)]
        worst_dom = max(worst_dom, *(b - a for a, b in zip(lams, lams[1:])))
        grid = Grid.from_spacing(12.0, 0.1)
        a_vals = prof(grid.x)
        up = lam(grid, kernel, c, a_vals + rng.uniform(0.0, 0.2, grid.n))
        worst_a = max(worst_a, up - lams[1])
    ok = worst_dom <= 1e-12 and worst_a <= 1e-12
    verdict(capsys, 5, "monotonicity", ok, f"20 instances, max increase: domain {worst_dom:.1e}, in a {worst_a:.1e}")


def test_criterion_06_dichotomy(capsys, speeds, dichotomy):
    lo, hi = speeds.c_star_plus
    ordered = 0 < lo and speeds.c_star_plus[0] <= speeds.c_dstar_plus[0]
    inn, out = dichotomy["in"], dichotomy["out"]
    steady_ok = (
        inn["steady"].classification == "nontrivial" and inn["steady"].residual <= 1e-8
        and out["steady"].classification == "trivial"
    )
    tr_in, tr_out = inn["trace"], out["trace"]
    tail = tr_in.times >= 0.75 * tr_in.times[-1]
    evo_ok = (
        inn["label"] == "persistent" and tr_in.niche_minima[tail].min() >= 5e-2
        and out["label"] == "extinct" and tr_out.sup_norms[-1] <= 1e-3
    )
    # the labels follow the sign of lambda_p away from the borderline band
    signs_ok = inn["lam"] < -BAND and out["lam"] > BAND
    verdict(
        capsys, 6, "persistence dichotomy", ordered and steady_ok and evo_ok and signs_ok,
        f"c*+=[{lo:.5f},{hi:.5f}] c**+=[{speeds.c_dstar_plus[0]:.5f},{speeds.c_dstar_plus[1]:.5f}]; "
        f"c={dichotomy['c_in']:.4f}: lambda={inn['lam']:.4f} res={inn['steady'].residual:.1e} {inn['label']}; "
        f"c={dichotomy['c_out']:.4f}: lambda={out['lam']:.4f} {out['steady'].classification} "
        f"{out['label']} sup(T=400)={tr_out.sup_norms[-1]:.1e}",
    )


def test_criterion_07_long_time(capsys, dichotomy):
    tr = dichotomy["in"]["trace"]
    tail = tr.times >= 0.75 * tr.times[-1]
    d = tr.distances[tail]
    decreasing = bool(np.all(np.diff(d) <= 0))
    ok = decreasing and d[-1] <= 1e-2
    verdict(capsys, 7, "long-time convergence", ok,
            f"distance {d[0]:.2e} -> {d[-1]:.2e} over last quartile, nonincreasing={decreasing}")


def test_criterion_08_uniqueness(capsys, uniform, niche, grid20, dichotomy):
    spread, sols = uniqueness_probe(grid20, uniform, niche, dichotomy["c_in"], kappa_ratio=4.0)
    verdict(capsys, 8, "uniqueness probe", spread <= 1e-8, f"seeds {sorted(sols)} spread={spread:.1e}")


def test_criterion_09_vanishing_viscosity(capsys, uniform, niche, grid20):
    c = 0.4
    res = vanishing_viscosity(grid20, uniform, niche, c, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 0.0], tol=1e-10)
    incs = [d["sup_increment"] for d in res.trace[1:]]
    strictly = all(b < a for a, b in zip(incs, incs[1:]))
    bound = (niche.saturation + niche.sup_abs_f()) / abs(c) + 10 * H
    ok = strictly and res.grad_sup <= bound
    verdict(capsys, 9, "vanishing viscosity", ok,
            f"increments={[f'{v:.2e}' for v in incs]} grad_sup={res.grad_sup:.3f} <= {bound:.3f}")


def test_criterion_10_comparison(capsys, uniform, niche):
    grid = Grid.from_spacing(10.0, 0.1)
    rng = np.random.default_rng(10)
    worst = 0.0
    pairs = []
    for i in range(10):
        lower = rng.uniform(0.0, 0.8, grid.n)
        upper = lower + rng.uniform(0.0, 0.8, grid.n)
        pairs.append((lower, upper))
        frame = ("moving", "fixed")[i % 2]
        worst = max(worst, comparison_probe(lower, upper, frame, uniform, niche, 0.5, grid, 50.0))
    unsafe = comparison_probe(*pairs[0], "moving", uniform, niche, 0.5, grid, 50.0, unsafe_dt_factor=2.0)
    ok = worst <= 1e-13 and unsafe > 1e-6
    verdict(capsys, 10, "comparison principle", ok, f"max violation={worst:.1e}; 2x dt violation={unsafe:.1e}")


def test_criterion_11_speed_bounds(capsys, uniform, niche, speeds):
    c_alpha = spectral_speed_bound(uniform, niche, "+")[0]
    alpha = brentq(lambda t: math.tanh(t) - t / 2.0, 1.0, 3.0, xtol=1e-15)
    oracle = math.sinh(alpha) / alpha**2
    frozen = 0.9052617393690582  # frozen after the scalar-root oracle above
    outer_ok = speeds.c_dstar_plus[1] <= c_alpha + 1e-3
    value_ok = abs(c_alpha - oracle) <= 1e-6 and abs(oracle - frozen) <= 1e-12
    worst = -math.inf
    remarks = []
    for name, params in (("uniform", {"radius": 1.0}), ("tent", {"radius": 1.5}),
                         ("truncated_cosine", {"radius": 1.0}), ("gaussian", {"sigma": 0.5, "sampling_radius": 6.0})):
        kernel = make_kernel(name, **params)
        for sup_a in (0.5, 1.0, 2.0):
            g = Logistic(niche_profile(inner=sup_a), 1.0)
            remark, corrected = symmetric_remark_values(kernel, g)
            worst = max(worst, corrected - spectral_speed_bound(kernel, g)[0])
            if name == "uniform" and sup_a == 1.0:
                remarks = (remark, corrected)
    ok = outer_ok and value_ok and worst <= 0.0
    verdict(
        capsys, 11, "speed bounds", ok,
        f"c**+.hi={speeds.c_dstar_plus[1]:.5f} <= c_alpha+={c_alpha:.9f} (oracle {oracle:.9f}); "
        f"max(corrected-c0)={worst:.3f}; remark value {remarks[0]:.4f} (reported), corrected {remarks[1]:.4f}",
    )


def test_criterion_12_symmetry(capsys, speeds):
    d_star = abs(speeds.c_star_plus[0] - speeds.c_star_minus[0])
    d_dstar = abs(speeds.c_dstar_plus[1] - speeds.c_dstar_minus[1])
    ok = d_star <= 2e-3 and d_dstar <= 2e-3
    verdict(capsys, 12, "threshold symmetry", ok, f"|c*+ - c*-|={d_star:.1e} |c**+ - c**-|={d_dstar:.1e}")


def test_criterion_13_fat_tails(capsys):
    kernel = make_kernel("fat_quartic", scale=1.0, sampling_radius=200.0)
    growth = Logistic(niche_profile(inner=1.5), 1.0)
    grid = Grid.from_spacing(20.0, H)
    res = fat_tail_solve(kernel, growth, 0.0, [5.0, 10.0, 20.0, 40.0], grid)  # raises on u_N decrease
    margin = 1.0 - growth.sup_a
    lam_N = [d["lambda_p"] for d in res.trace]
    eig_ok = all(v <= margin for v in lam_N)
    lam40 = lam(grid, truncate(kernel, 40.0), 0.0, growth, tol=1e-10)
    lam_full = lam(grid, kernel, 0.0, growth, tol=1e-10)
    cont_ok = abs(lam40 - lam_full) <= 1e-3
    fat = fat_tail_speed_bound(kernel, growth)
    bound_ok = math.isfinite(fat["c_hash"]) and abs(fat["root_residual"]) <= 1e-12
    c = 1.1 * fat["c_hash"]
    tr = integrate(bump_initial(grid, growth), "moving", kernel, growth, c, grid, 20.0)
    extinct = long_time_classify(tr) == "extinct"
    ok = eig_ok and cont_ok and bound_ok and extinct
    verdict(
        capsys, 13, "fat tails", ok,
        f"lambda(J_N)={[f'{v:.5f}' for v in lam_N]} <= {margin}; |l(J_40)-l(J)|={abs(lam40 - lam_full):.1e}; "
        f"c#={fat['c_hash']:.4f} root res={fat['root_residual']:.1e}; at 1.1c# sup(T=20)={tr.sup_norms[-1]:.1e}",
    )


def _run_cli(tmp_path, tag, task, cfg_text, workers):
    cfg = tmp_path / f"{tag}.cfg"
    cfg.write_text(cfg_text, encoding="utf-8")
    out = tmp_path / f"{tag}_w{workers}"
    code = main([task, "--config", str(cfg), "--out", str(out), "--workers", str(workers), "--seed", "1"])
    files = sorted(p for p in out.iterdir() if p.suffix == ".csv" or p.name == "report.txt")
    return code, {p.name: p.read_bytes() for p in files}


def test_criterion_14_determinism(capsys, tmp_path):
    runs = [
        ("c1", "eig", "growth.a.kind = constant\ngrowth.a.value = 0.5\nnumerics.h = 0.025\n"
                      "numerics.R_schedule = 10, 20, 40, 80\nnumerics.R_tol = 0\ntask.c = 0.0, 0.25, -0.25\n"),
        ("c6s", "speeds", "numerics.h = 0.05\n"),
        ("c6e", "evolve", "task.c = 0.44\nnumerics.R = 20\ntask.T = 50\ntask.snapshots = 10, 50\n"),
        ("c11", "bounds", "kernel.preset = uniform\n"),
    ]
    mismatched, compared = [], 0
    for tag, task, text in runs:
        code1, one = _run_cli(tmp_path, tag, task, text, 1)
        code8, eight = _run_cli(tmp_path, tag, task, text, 8)
        if code1 or code8 or one.keys() != eight.keys():
            mismatched.append(tag)
            continue
        compared += len(one)
        mismatched += [f"{tag}/{name}" for name in one if one[name] != eight[name]]
    verdict(capsys, 14, "determinism", not mismatched,
            f"{compared} artifacts byte-identical across --workers 1/8" if not mismatched else f"differ: {mismatched}")
