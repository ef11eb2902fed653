"""Smoke test for the sugartc extension module.

Build and run:

    cargo build --release -p sugartc-python --features extension-module
    cp target/release/libsugartc_py.so python/sugartc.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import sugartc  # noqa: E402


def main():
    t = sugartc.Tensor((2, 2, 1), [1.0, 2.0, 3.0, 4.0])
    doubled = t.mode_product([[2.0, 0.0], [0.0, 2.0]], 2)
    assert doubled.values() == [2.0, 4.0, 6.0, 8.0], doubled.values()
    summed = t.mode_product([[1.0, 1.0]], 1)
    assert summed.dims == (1, 2, 1) and summed.values() == [4.0, 6.0]
    assert math.isclose(sugartc.f_measure(0.5, 0.5), 0.5)

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "data")
        truth = sugartc.synth(data, seed=3)
        assert len(truth) == 200

        cfg = sugartc.Config(data=data, c_i="5", c_u="5", sigma="0.5")
        assert cfg.get("c_i") == "5"
        assert "alpha" in sugartc.Config.keys()
        try:
            cfg.set("no_such_key", "1")
        except ValueError:
            pass
        else:
            raise AssertionError("unknown key accepted")

        out = os.path.join(tmp, "out")
        res = sugartc.run(cfg, out_dir=out)
        assert len(res.rankings) == 200
        assert all(a >= b for a, b in zip(res.trace, res.trace[1:]))
        print(f"iterations {res.iterations}, anchors {len(res.anchor_images)}")
        print(f"average F {res.metrics.average_fscore:.4f} vs observed {res.observed_metrics.average_fscore:.4f}")
        print(f"MAP@50 {res.metrics.map_at(50):.4f} vs observed {res.observed_metrics.map_at(50):.4f}")

        again = sugartc.evaluate(os.path.join(out, "retagged.tsv"), os.path.join(data, "ground_truth.tsv"))
        assert again.to_json() == res.metrics.to_json()
        assert json.loads(again.to_json())["k"] == 10

    print("ok")


if __name__ == "__main__":
    main()
