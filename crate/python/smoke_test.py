#!/usr/bin/env python3
"""Smoke test for the esarb Python bindings.

Builds the extension module with cargo if needed, imports it, and drives a
small end-to-end pipeline: synthetic prices -> Markov training -> value cube
-> dispatch -> benchmark comparison. Exits non-zero on the first failure.

Usage: python3 python/smoke_test.py [--skip-build]
"""

import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_extension(skip_build: bool) -> Path:
    """Compile the cdylib and stage it as an importable module."""
    if not skip_build:
        subprocess.run(
            ["cargo", "build", "-p", "esarb-python", "--release"],
            cwd=ROOT,
            check=True,
        )
    lib = ROOT / "target" / "release" / "libesarb.so"
    if not lib.is_file():
        sys.exit(f"extension library not found at {lib}")
    stage = Path(tempfile.mkdtemp(prefix="esarb_py_"))
    shutil.copy2(lib, stage / "esarb.so")
    return stage


def fail(msg: str) -> None:
    print(f"FAIL: {msg}")
    sys.exit(1)


def check(name: str, cond: bool, detail: str = "") -> None:
    if not cond:
        fail(f"{name} {detail}")
    print(f"PASS: {name}")


def main() -> None:
    skip_build = "--skip-build" in sys.argv
    sys.path.insert(0, str(build_extension(skip_build)))
    import esarb

    # One square-wave day: hourly alternation between $10 and $50.
    def wave_points(day: str):
        points = []
        for k in range(288):
            hour, minute = divmod(5 * k, 60)
            price = 10.0 if (hour % 2 == 0) else 50.0
            points.append((f"{day}T{hour:02}:{minute:02}", price))
        return points

    train_points = []
    for day in ("2018-02-01", "2018-02-02", "2018-02-03", "2018-02-04"):
        train_points.extend(wave_points(day))
    training = esarb.PriceSeries("SYN", 5, train_points)
    check("price series construction", training.n_observed() == 4 * 288)
    check("summary statistics", abs(training.mean() - 30.0) < 1e-9)

    # CSV round trip.
    with tempfile.TemporaryDirectory() as tmp:
        csv_path = str(Path(tmp) / "train.csv")
        training.save_csv(csv_path)
        reloaded = esarb.PriceSeries.load_csv(csv_path, 5, "SYN")
        check("csv round trip", reloaded.points() == training.points())

    spec = esarb.StorageSpec(
        p_mw=6.0,
        e_mwh=1.0,
        cost_per_mwh=0.0,
        efficiency={"kind": "constant", "value": 1.0},
    )
    check("storage spec units", abs(spec.power_per_interval - 0.5) < 1e-12)

    model = esarb.TransitionModel.train(
        training, kind="rtp", interior=4, low=0.0, high=60.0
    )
    check("markov training", model.n_nodes() == 6)
    check("row coverage", 0.0 < model.row_coverage() <= 1.0)

    with tempfile.TemporaryDirectory() as tmp:
        model_path = str(Path(tmp) / "model.json")
        model.save_json(model_path)
        back = esarb.TransitionModel.load_json(model_path)
        check("model json round trip", back.n_nodes() == model.n_nodes())

    test_series = esarb.PriceSeries("SYN", 5, wave_points("2019-03-01"))

    # Perfect forecast on the wave: 12 cycles of $40 on a 1 MWh battery.
    pf = esarb.run_perfect_forecast(test_series, spec, initial_soc=0.0)
    pf.validate()
    check(
        "perfect forecast matches hand optimum",
        abs(pf.revenue - 480.0) < 1e-6,
        f"(revenue {pf.revenue})",
    )

    # Model-driven dispatch captures most of the perfect-forecast profit.
    sdp = esarb.run_sdp(model, test_series, spec, initial_soc=0.0)
    sdp.validate()
    check(
        "stochastic dispatch near benchmark",
        sdp.revenue >= 0.9 * pf.revenue,
        f"(revenue {sdp.revenue} vs {pf.revenue})",
    )

    # Value cube: charging is optimal at the low price from empty.
    cube = esarb.value_cube(model, spec, "2019-03-01", soc_segments=200)
    check("cube dimensions", cube.dims() == (288, 6, 200))
    p, b = cube.act(0, 10.0, 0.0)
    check("policy charges at the low price", p == 0.0 and b > 0.49)

    # MPC with a perfect hourly forecast reproduces the benchmark.
    dap_points = [
        (f"2019-03-01T{h:02}:00", 10.0 if h % 2 == 0 else 50.0) for h in range(24)
    ]
    dap = esarb.PriceSeries("SYN", 60, dap_points)
    mpc = esarb.run_mpc_dap(test_series, dap, spec, initial_soc=0.0)
    check(
        "day-ahead MPC with exact forecast",
        abs(mpc.revenue - pf.revenue) < 1e-6,
        f"(revenue {mpc.revenue})",
    )

    bias = esarb.compute_bias(test_series, dap)
    check("bias of exact forecast is zero", abs(bias.mean()) < 1e-12)

    print("all smoke tests passed")


if __name__ == "__main__":
    main()
