#!/usr/bin/env python3
"""Smoke test for the innodex_py extension module.

Builds nothing itself: run `cargo build -p innodex-py` first. The script
finds the compiled cdylib under target/, exposes it as an importable module,
and drives the pipeline end to end on a synthetic fixture.
"""

import shutil
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent


def import_innodex_py():
    candidates = [
        REPO_ROOT / "target" / profile / f"libinnodex_py{ext}"
        for profile in ("release", "debug")
        for ext in (".so", ".dylib")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("libinnodex_py not found; run `cargo build -p innodex-py` first")
    stage = Path(tempfile.mkdtemp(prefix="innodex_py_"))
    shutil.copy(built, stage / "innodex_py.so")
    sys.path.insert(0, str(stage))
    import innodex_py

    return innodex_py


def main():
    ix = import_innodex_py()
    tmp = Path(tempfile.mkdtemp(prefix="innodex_smoke_"))

    features_csv, targets_csv = ix.synth_fixture(tmp, rows=80, metrics=6, seed=5)

    model = ix.ForestModel.train(
        features_csv, targets_csv, "score", seed=7, n_trees=40
    )
    again = ix.ForestModel.train(
        features_csv, targets_csv, "score", seed=7, n_trees=40
    )
    assert model.hash() == again.hash(), "same seed must give the same model"

    model_path = tmp / "model.json"
    model.save(model_path)
    loaded = ix.ForestModel.load(model_path)
    assert loaded.hash() == model.hash(), "save/load must preserve the model"

    r2, used, skipped = model.evaluate(features_csv, targets_csv, "score", mode="in_sample")
    assert 0.0 < r2 <= 1.0, f"implausible in-sample r2 {r2}"
    r2_oob, used_oob, _ = model.evaluate(features_csv, targets_csv, "score", mode="oob")
    assert used_oob > 0 and r2_oob <= 1.0
    print(f"r2_in_sample={r2:.4f} r2_oob={r2_oob:.4f} rows={used}")

    matrix = model.contribution_matrix(features_csv)
    for country, year, baseline, contribs, predicted in matrix.rows():
        residual = abs(predicted - baseline - sum(contribs))
        assert residual <= 1e-9 * max(1.0, abs(predicted)), (
            f"additive identity broken for {country}:{year}: {residual}"
        )

    csv_path = tmp / "contributions.csv"
    matrix.save_csv(csv_path)
    back = ix.ContributionMatrix.load_csv(csv_path)
    assert back.model_hash() == matrix.model_hash()

    labels, assignments, inertia = matrix.cluster(k=3, seed=11)
    assert len(labels) == len(assignments) == 80
    assert inertia >= 0.0
    print(f"clusters=3 inertia={inertia:.4f}")

    a, b, pa, pb, baseline, entries = matrix.compare("C000", "C001", top_n=5)
    _, _, pb2, pa2, _, entries_rev = matrix.compare("C001", "C000", top_n=5)
    assert (pa, pb) == (pa2, pb2)
    for (metric, _, _, diff), (metric_rev, _, _, diff_rev) in zip(entries, entries_rev):
        assert metric == metric_rev and diff == -diff_rev, "comparison must be antisymmetric"
    print(f"compare {a} vs {b}: top metric {entries[0][0]} diff {entries[0][3]:+.4f}")

    neighbors = matrix.nearest("C000", count=3)
    assert len(neighbors) == 3 and neighbors[0][1] <= neighbors[-1][1]

    print("SMOKE TEST PASSED")


if __name__ == "__main__":
    main()
