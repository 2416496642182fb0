import json
import os
import subprocess
import sys

SCRIPT = """
import json, numpy as np
from wickapprox._backend import NAME
from wickapprox.chaos import Caps, eval_at
from wickapprox.fnspace import GridSpec
from wickapprox.schemes import wick_wp
from wickapprox.solution import exp_problem
out = wick_wp(exp_problem(), GridSpec(4), Caps()).terminal
w = np.random.default_rng(0).normal(size=(7, 4)) * 0.5
print(json.dumps({"name": NAME, "values": eval_at(out, w).tolist(), "terms": len(out)}))
"""


def run(pure: bool) -> dict:
    env = dict(os.environ)
    env.pop("WICKAPPROX_PURE", None)
    if pure:
        env["WICKAPPROX_PURE"] = "1"
    res = subprocess.run([sys.executable, "-c", SCRIPT], capture_output=True, text=True, env=env, check=True)
    return json.loads(res.stdout)


def test_fallback_is_selectable_and_bitwise_equal():
    pure = run(True)
    default = run(False)
    assert pure["name"] == "python"
    assert default["name"] in ("cython", "python")
    assert pure["values"] == default["values"]
    assert pure["terms"] == default["terms"]
