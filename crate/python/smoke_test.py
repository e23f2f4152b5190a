"""Smoke test for the tvopt_py extension.

Build it first:
    cargo build -p tvopt-python --release --features extension-module
    cp target/release/libtvopt_py.so python/tvopt_py.so
"""

import json
import math
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

import tvopt_py as tv  # noqa: E402

ROOT = HERE.parent


def main():
    p = tv.derive_params(4.0, 1.0, 1.0)
    assert p["params"]["theta"] == 4.0, p
    auto = tv.derive_params(100.0, 1.0, 9.0, "auto")
    assert auto["T"] == math.ceil(9 * math.log(2)), auto

    hard_cfg = (ROOT / "configs" / "hard_instance.json").read_text()
    chi = tv.measure_chi(hard_cfg)
    assert abs(chi - 9.0) < 1e-9, chi
    assert all(all(c["passed"] for c in r.values() if isinstance(c, dict)) for r in tv.check_gossip(hard_cfg, 6))

    quad = json.loads((ROOT / "configs" / "quadratic_multiconsensus.json").read_text())
    quad["output"] = {}
    quad["stop"] = {"budget": 50}
    out = tv.run_experiment(json.dumps(quad))
    assert len(out["records"]) == 51
    assert out["summary"]["iterations"] == 50

    assert tv.rho(11.0, 2.0) == 1.0 / 3.0
    inst = tv.HardInstance(9.0, 100.0, 1.0, 200)
    assert (inst.n, inst.d) == (9, 200)
    sol, ref = inst.solution(), inst.reference_minimizer()
    assert max(abs(a - b) for a, b in zip(sol[:50], ref[:50])) < 1e-6
    cert = inst.certify(1e-6)
    assert cert["passed"], cert["first_violation"]

    curve = tv.lower_bound_curve(12.0, 1e5, 1.0, 50)
    assert len(curve) == 51 and all(e >= r for _, e, r in curve)

    t = tv.SpanTracker(9)
    for op in [t.compute, t.communicate, t.communicate, t.compute, t.communicate]:
        op()
        assert t.span_bound_holds()
    assert t.rounds == 3

    try:
        tv.HardInstance(9.0, 1.0, 1.0, 10)
    except tv.TvoptError:
        pass
    else:
        raise AssertionError("L == mu should be rejected")

    print("tvopt_py smoke test passed")


if __name__ == "__main__":
    main()
