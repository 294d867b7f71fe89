"""Smoke test for the maskfab Python extension.

Build and install first, e.g.:
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/maskfab-*.whl
"""

import math
import sys
import tempfile
from pathlib import Path

import maskfab


def close(a, b, tol=1e-9):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    square = [(0, 0), (1, 0), (1, 1), (0, 1)]
    moved = [(x + 5, y + 3) for x, y in square]
    h = maskfab.estimate_homography(square, moved)
    assert close(h.apply((0.5, 0.5)), (5.5, 3.5))
    assert close(h.inverse().apply((5, 3)), (0, 0))
    m = h.matrix
    assert abs(math.sqrt(sum(v * v for row in m for v in row)) - 1) < 1e-12

    assert maskfab.point_in_polygon((1, 0.5), square)
    assert not maskfab.point_in_polygon((2, 0.5), square)

    try:
        maskfab.estimate_homography(square[:3], moved[:3])
    except ValueError:
        pass
    else:
        raise AssertionError("three points should be rejected")

    ids = [f"{i:05d}" for i in range(1000)]
    counts = {}
    for _, mode in maskfab.assign_modes(ids, seed=1, pairing="single"):
        counts[mode] = counts.get(mode, 0) + 1
    assert counts == {
        "CMFD": 490,
        "IMFD2_UNCOVERED_NOSE": 408,
        "IMFD1_UNCOVERED_CHIN": 51,
        "IMFD3_UNCOVERED_NOSE_MOUTH": 51,
    }, counts
    assert maskfab.apportion(18, [0.8, 0.1, 0.1]) == [14, 2, 2]

    pts, moved_idx = maskfab.perturb_keypoints([(0, 0)] * 12, {0, 1, 2}, seed=3, bbox_height=500)
    assert len(pts) == 12 and set(moved_idx) <= {0, 1, 2}
    assert all(math.hypot(*p) <= 15 + 1e-9 for p in pts)

    pairs = maskfab.select_correspondences(maskfab.canonical_landmarks(), "CMFD")
    assert len(pairs) == 12 and sorted(k for _, k in pairs) == list(range(12))

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        corpus = maskfab.write_corpus(str(root), count=6, seed=2, no_face=[4])
        info = maskfab.validate_template(corpus["template"])
        assert len(info["keypoints"]) == 12
        manifest = maskfab.generate(
            corpus["faces"], corpus["landmarks"], corpus["template"], str(root / "out"), seed=7, workers=2
        )
        statuses = [r["status"] for r in manifest["records"]]
        assert statuses.count("generated") == 10, statuses
        assert statuses.count("skipped_no_face") == 1, statuses
        stats = maskfab.compute_statistics(str(root / "out" / "manifest.csv"))
        assert stats["generated"] == 10 and stats["pct_correct"] == 50.0
        print(stats["text"])

    print("maskfab", maskfab.__version__, "smoke test ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
