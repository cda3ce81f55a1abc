"""Smoke test for the rb_engine extension module.

Build first, from the repository root:

    cargo build -p rb-py --release --features extension-module
    cp target/release/librb_engine.so python/rb_engine.so

or `maturin develop -m crates/py/Cargo.toml` inside a virtualenv.
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import rb_engine  # noqa: E402


def main():
    names = rb_engine.builtin_names()
    assert "three-state-nongap" in names, names
    assert "id" in rb_engine.policy_names()

    inst = rb_engine.Instance.builtin("three-state-nongap")
    assert inst.n_states == 3 and inst.alpha == 0.4
    again = rb_engine.Instance.from_json(inst.to_json())
    assert again.name == inst.name

    sol = inst.solve()
    assert 0.0 < sol.r_rel <= 1.0
    assert abs(sum(sol.mu_star) - 1.0) < 1e-9
    assert sol.chain()["is_aperiodic"] and sol.chain()["is_unichain"]
    assert len(sol.priority_order()) == 3

    res = rb_engine.simulate(inst, "id", 100, horizon=4000, replications=3, seed=1)
    assert res["avg_reward"] <= sol.r_rel + 3 * res["ci_half"], res
    assert len(res["batch_means"]) == 3 and len(res["batch_means"][0]) == 4

    periodic = rb_engine.Instance.builtin("periodic-two-state")
    for policy in rb_engine.policy_names():
        r = rb_engine.simulate(periodic, policy, 4, horizon=400, replications=1, initial_rule="all-state-0")
        assert abs(r["avg_reward"] - 0.5) < 1e-12, (policy, r)

    cycle = rb_engine.Instance.builtin("two-state-cycle")
    exact = rb_engine.exact_average(cycle, "id", 2)
    assert 0.0 < exact <= cycle.solve().r_rel + 1e-12

    b = rb_engine.bounds(inst, [100, 1000])
    assert math.isclose(b["bound_se"][0], b["c_se"] / 10.0)

    s = rb_engine.scan(20, n_states=6, param=0.1, seed=3)
    assert s["rows"] == 20 and 0.0 <= s["unstable_fraction"] <= 1.0

    try:
        rb_engine.simulate(inst, "id", 3)
    except ValueError:
        pass
    else:
        raise AssertionError("alpha * N = 1.2 should be rejected")

    print(json.dumps({"r_rel": sol.r_rel, "id_ratio": res["optimality_ratio"], "exact_cycle": exact}))
    print("smoke test ok")


if __name__ == "__main__":
    main()
