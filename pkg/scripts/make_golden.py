"""Regenerate the golden-value tables used by the regression tests.

Run from the repository root:  python scripts/make_golden.py
Only rerun this when the documented generator algorithm itself changes;
the point of the tables is to pin today's outputs.
"""

import json
import math
import os

import numpy as np

from softbits import relaxations as rx
from softbits.noise import RngStream


def main():
    golden = {}

    r = RngStream(12345, 0)
    golden["uniform_seed12345_stream0_first8"] = r.uniform((8,)).tolist()
    golden["gumbel_seed12345_stream1_first8"] = RngStream(12345, 1).gumbel((8,)).tolist()
    golden["logistic_seed12345_stream2_first8"] = RngStream(12345, 2).logistic((8,)).tolist()

    logits = np.log([2.0, 0.5, 1.0]).tolist()
    golden["three_state_log_mass"] = {
        "logits": logits,
        "state0": math.log(4 / 7),
        "state1": math.log(1 / 14) - math.log(0.5),  # log(0.5/3.5)
        "state2": math.log(2 / 7),
    }
    golden["two_state_log_mass_e"] = {
        "logits": [1.0, 0.0],
        "state0": 1.0 - math.log(1.0 + math.e),
    }

    golden["concrete_stub_softmax"] = {
        "logits": logits, "lam": 1.0,
        "sample": rx.concrete_sample(np.array(logits), 1.0, noise=np.zeros(3)).tolist(),
    }
    golden["exp_concrete_density_half"] = {
        "value": rx.exp_concrete_log_density(np.zeros(2), 1.0, np.log([0.5, 0.5]))}
    golden["exp_concrete_density_quarter"] = {
        "value": rx.exp_concrete_log_density(np.zeros(2), 1.0, np.log([0.25, 0.75]))}
    golden["binary_logit_density_origin"] = {
        "value": rx.binary_logit_log_density(0.0, 1.0, 0.0)}

    sample_stream = RngStream(777, 3)
    golden["concrete_sample_seed777_stream3"] = {
        "logits": logits, "lam": 0.7,
        "samples": rx.concrete_sample(
            np.broadcast_to(np.array(logits), (4, 3)), 0.7, sample_stream).tolist(),
    }
    golden["binary_concrete_sample_seed777_stream4"] = {
        "logit": 0.3, "lam": 0.5,
        "samples": rx.binary_concrete_sample(
            np.broadcast_to(0.3, (6,)), 0.5, RngStream(777, 4)).tolist(),
    }

    out = os.path.join(os.path.dirname(__file__), "..", "tests", "golden",
                       "relaxations_golden.json")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    with open(out, "w") as fh:
        json.dump(golden, fh, indent=2)
    print(f"wrote {os.path.normpath(out)}")


if __name__ == "__main__":
    main()
