"""Smoke test for the levelset_py bindings.

Build and install first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/levelset_py-*.whl
"""

import json
import math
import tempfile

import levelset_py as ls


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAILED: {what}")
    print(f"ok  {what}")


def main():
    m = ls.Model.harmonic(4)
    check(m.n == 4 and m.kind == "harmonic", "model constructor")
    q = [0.1, -0.2, 0.3, 0.0]
    check(abs(m.energy(q) - 0.5 * sum(x * x for x in q)) < 1e-12, "harmonic energy")
    check(all(abs(g - x) < 1e-12 for g, x in zip(m.gradient(q), q)), "harmonic gradient")
    check(len(m.hessian(q)) == 4, "dense hessian")

    est = ls.entropy_derivatives(m, 0.5, k_max=2, n_steps=6000, burn_in=600, seed=3)
    check(abs(est[0].value - 0.5) < 1e-3, f"dS1 = {est[0].value:.5f}")
    check(abs(est[1].value + 1.0) < 1e-3, f"dS2 = {est[1].value:.5f}")
    check(abs(ls.harmonic_entropy_derivative(4, 0.5, 2) + 1.0) < 1e-12, "closed form")

    paired = ls.entropy_derivatives(m, 0.5, k_max=1, n_steps=4000, burn_in=400, seed=3, paired=True)
    check(abs(paired[0].value - 0.5) < 1e-3, "paired ε, ε/2 estimate")

    pts = ls.find_critical_points(ls.Model.fpu(6, 0.1), random_seeds=500, seed=1)
    check(len(pts) == 1 and pts[0].morse_index == 0, "FPU single minimum")

    rot = ls.Model.coupled_rotators(2)
    dos = ls.oracle_density_of_states(rot, 400, 0.0, 6.0, 1200)
    value, err = dos.entropy_derivative(0.5, 1)
    check(math.isfinite(value) and err >= 0.0, f"grid dS1 at 0.5 = {value:.4f} ± {err:.1e}")

    rows = ls.sum_function_moments({"kind": "uniform", "lo": -0.5, "hi": 0.5}, [16, 64], trials=20000, seed=2)
    check(all(abs(12 * r["nb"] - 1) < 0.05 for r in rows), "N·B = 1/12")

    gaps, exponent = ls.ratio_average_check(
        {"kind": "uniform", "lo": 0.0, "hi": 1.0},
        {"kind": "uniform", "lo": 1.0, "hi": 2.0},
        [16, 64, 256],
        trials=200000,
        seed=4,
    )
    check(exponent is not None and abs(exponent + 1) < 0.3, f"ratio gap exponent {exponent}")

    vbar = [0.2 + 1.8 * i / 999 for i in range(1000)]
    s = [0.5 * math.log(4 * math.e * math.pi * v) for v in vbar]
    t = ls.legendre(vbar, s)
    check(abs(t.eval(1.0) - 0.5 * math.log(2 * math.pi)) < 1e-3, "Legendre transform")
    check(abs(ls.helmholtz(0.0, 1.0) + 0.5 * math.log(math.pi)) < 1e-12, "Helmholtz")

    config = 'experiment = "khinchin"\nseed = 5\n[khinchin]\nladder = [8, 32]\ntrials = 20000\n' \
        '[khinchin.base]\nkind = "gaussian"\nmean = 0.0\nstd = 1.0\n'
    with tempfile.TemporaryDirectory() as out:
        code, manifest = ls.run_experiment(config, out, threads=2)
        files = [f["name"] for f in json.loads(manifest)["files"]]
    check(code == 0 and "moments.csv" in files, "run_experiment")

    try:
        ls.sum_function_moments({"kind": "uniform", "lo": 1.0, "hi": 0.0}, [4, 8])
    except ValueError:
        check(True, "bad parameters raise ValueError")
    else:
        check(False, "bad parameters raise ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
