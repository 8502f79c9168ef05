"""Smoke test for the flowloss extension module.

Build the module first, for example with
    maturin develop -m crates/python/Cargo.toml --features extension-module
or copy target/release/libflowloss.so to python/flowloss.so.
"""

import math
import os
import random
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import flowloss  # noqa: E402


def main():
    rng = random.Random(0)
    c, h, w = 4, 6, 6
    feats = flowloss.FeatureMap(c, h, w, [rng.gauss(0.0, 1.0) for _ in range(c * h * w)])
    raw = flowloss.FlowField(
        w, h, [rng.uniform(-3, 3) for _ in range(h * w)], [rng.uniform(-3, 3) for _ in range(h * w)]
    )

    flow = flowloss.stabilize(raw)
    assert max(abs(x) for x in flow.u + flow.v) == 1.0
    assert abs(sum(flow.u) / (h * w)) < 1e-9

    report = flowloss.flow_loss(feats, flow)
    assert len(report["patches"]) == 4
    weights = sum(p["weight"] for p in report["patches"])
    assert abs(weights - 1.0) < 1e-12
    total = sum(p["weight"] * p["loss"] for p in report["patches"])
    assert abs(total - report["total"]) < 1e-12

    again, grad = flowloss.flow_loss_grad(feats, flow, k=3, stride=1)
    assert len(grad) == c * h * w and all(math.isfinite(g) for g in grad)
    assert len(again["patches"]) == 16

    # One central difference on a single coordinate.
    step, i = 1e-5, 7
    values = feats.values

    def loss_at(delta):
        moved = list(values)
        moved[i] += delta
        return flowloss.flow_loss(flowloss.FeatureMap(c, h, w, moved), flow, k=3, stride=1)["total"]

    numeric = (loss_at(step) - loss_at(-step)) / (2 * step)
    assert abs(numeric - grad[i]) <= 1e-6 + 1e-4 * abs(grad[i]), (numeric, grad[i])

    sal = flowloss.SaliencyMap(h, w, [rng.random() for _ in range(h * w)])
    assert flowloss.flow_loss(feats, flow, saliency=sal)["total"] >= 0.0

    back = flowloss.read_flo(flowloss.write_flo(raw))
    assert flowloss.write_flo(back) == flowloss.write_flo(raw)

    decoded = flowloss.decode_tiff(flowloss.encode_tiff(back, 64))
    assert all(abs(a - b) <= 0.5 / 64 for a, b in zip(back.u + back.v, decoded.u + decoded.v))
    qu, qv = flowloss.quantize(back, 64)
    words = flowloss.pack(back, 64)
    assert words[0] == ((qu[0] & 0xFFFF) << 16) | (qv[0] & 0xFFFF)

    try:
        flowloss.read_flo(b"garbage!")
    except ValueError as e:
        assert "offset" in str(e)
    else:
        raise AssertionError("bad .flo accepted")

    print("python smoke test passed: total =", report["total"])


if __name__ == "__main__":
    main()
