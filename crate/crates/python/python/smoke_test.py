"""Smoke test for the fedfilm_py extension module.

Build first:

    cargo build -p fedfilm-py --release --features extension-module

then run `python3 crates/python/python/smoke_test.py`. The script copies the
built shared library next to a temporary `fedfilm_py.so` and imports it, so
no wheel or installer is needed. Pass a path to override the library used.
"""

import importlib
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def locate(argv):
    if len(argv) > 1:
        return pathlib.Path(argv[1])
    for profile in ("release", "debug"):
        for name in ("libfedfilm_py.so", "libfedfilm_py.dylib"):
            candidate = ROOT / "target" / profile / name
            if candidate.exists():
                return candidate
    sys.exit("fedfilm_py library not found; build it with cargo first")


def load(lib):
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, pathlib.Path(tmp) / "fedfilm_py.so")
    sys.path.insert(0, tmp)
    return importlib.import_module("fedfilm_py")


def main(argv):
    ff = load(locate(argv))

    # aggregate arithmetic
    assert abs(ff.overall(0.7239, 0.8047) - 0.7562) < 5e-5

    data = ff.synth(n_batches=3, n_types=3, dim=5, cells_per_batch=80, seed=3)
    values, batches, labels = data["values"], data["batches"], data["labels"]
    assert len(values) == 240 and len(values[0]) == 5

    names = sorted(set(batches))
    identity = ff.FilmAdapter.identity(names, 5)
    assert ff.apply(values, batches, identity) == values

    adapter, log = ff.fit(values, batches, seed=1, rounds=3)
    assert len(log) == 3 * len(names)
    assert all(math.isfinite(r["train_loss"]) for r in log)
    again, _ = ff.fit(values, batches, seed=1, rounds=3)
    assert adapter.to_json() == again.to_json()
    assert ff.FilmAdapter.from_json(adapter.to_json()) == adapter

    inverse = data["true_inverse"]
    fixed = ff.apply(values, batches, inverse)
    before = ff.evaluate(values, batches, labels, seed=0)
    after = ff.evaluate(fixed, batches, labels, seed=0)
    assert abs(before["overall"] - (0.6 * before["bio"] + 0.4 * before["batch"])) < 1e-12
    assert after["batch_asw"] >= before["batch_asw"]

    # two clients with weights 1 and 3 editing only their own rows
    start = ff.FilmAdapter(["a", "b"], [[1.0], [1.0]], [[0.0], [0.0]])
    edit_a = ff.FilmAdapter(["a", "b"], [[2.0], [1.0]], [[0.0], [0.0]])
    merged = ff.aggregate(start, [edit_a, start], [1, 3])
    assert merged.gamma[0][0] == 1.25
    owned = ff.aggregate(start, [edit_a, start], [1, 3], mode="row-restricted", owners=[0, 1])
    assert owned.gamma[0][0] == 2.0

    try:
        ff.fit(values, batches, rounds=0)
    except ValueError:
        pass
    else:
        raise AssertionError("rounds=0 accepted")

    print("fedfilm_py smoke test passed")


if __name__ == "__main__":
    main(sys.argv)
