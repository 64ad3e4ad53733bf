#!/usr/bin/env python3
"""Smoke test for the boundary_kd_py extension module.

Builds nothing itself: expects `cargo build -p boundary-kd-py` (or --release)
to have produced the cdylib, copies it into a temp directory under the
importable module name, and runs a miniature end-to-end flow:

    blobs task -> MBD robustness vs exact distances -> soft labels ->
    pseudo-sample ascent -> student distillation -> teacher agreement.
"""

import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def import_module():
    names = ["libboundary_kd_py.so", "boundary_kd_py.so", "libboundary_kd_py.dylib"]
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in names
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("build the extension first: cargo build -p boundary-kd-py")
    tmp = tempfile.mkdtemp(prefix="boundary_kd_py_")
    shutil.copy(built, pathlib.Path(tmp) / "boundary_kd_py.so")
    sys.path.insert(0, tmp)
    import boundary_kd_py

    return boundary_kd_py


def main():
    bkd = import_module()

    # A 3-class, 2-D blobs task with its analytic teacher.
    samples, labels, teacher = bkd.blobs_task(
        (1, 2, 1), class_count=3, per_class=30, dispersion=0.04, seed=11
    )
    assert teacher.class_count() == 3
    assert len(samples) == 90

    # References bucketed by the teacher's own decisions.
    references = [[], [], []]
    for s in samples:
        references[teacher.classify(s)].append(s)
    assert all(len(r) > 0 for r in references), "every class needs references"

    # MBD robustness tracks the exact boundary distances. Pairs whose nearest
    # point sits on a region corner (no facet projection) have no closed-form
    # ground truth and are skipped.
    checked = 0
    skipped = 0
    for i in range(0, 12):
        x0, label = samples[i], labels[i]
        rec = bkd.robustness(
            teacher, x0, label, references,
            strategy="mbd", seed=100 + i, query_limit=3000, gradient_samples=32,
        )
        own = rec["own_class"]
        for cls, est in enumerate(rec["distances"]):
            if est is None:
                assert cls == own
                continue
            try:
                exact = teacher.exact_boundary_distance(x0, cls)
            except ValueError:
                skipped += 1
                continue
            assert abs(est - exact) / exact < 0.05, (
                f"sample {i} class {cls}: est {est} vs exact {exact}"
            )
            checked += 1
    assert checked >= 10, f"only {checked} verifiable pairs ({skipped} corner cases)"
    print(f"robustness: {checked} pairs within 5% of exact ({skipped} corner pairs skipped)")

    # Soft labels: argmax at the own class, larger distance -> less mass.
    acts = bkd.activations_from_distances(0, [None, 2.0, 4.0])
    assert abs(acts[0] - 4.0 / 3.0) < 1e-12
    probs, top1 = bkd.soft_label(acts, 0.3)
    assert top1 == 0
    assert probs[1] > probs[2]
    assert abs(sum(probs) - 1.0) < 1e-6
    print(f"soft label: {[round(p, 3) for p in probs]}")

    # Zero-shot ascent pushes noise away from the boundary.
    tensor, cls, trace, _queries = bkd.generate_pseudo_sample(
        teacher, 1, iterations=12, step=0.04, probes=2,
        mbd_query_limit=1500, gradient_samples=24, seed=3,
    )
    assert teacher.classify(tensor) == cls
    assert trace[-1] >= trace[0] - 1e-6, f"trace did not grow: {trace}"
    print(f"pseudo sample: class {cls}, distance {trace[0]:.3f} -> {trace[-1]:.3f}")

    # Distill a student from constructed soft labels and check agreement.
    soft_labels = []
    for i, (x0, label) in enumerate(zip(samples, labels)):
        rec = bkd.robustness(
            teacher, x0, label, references,
            strategy="bd", seed=500 + i, query_limit=200,
        )
        acts = bkd.activations_from_distances(rec["own_class"], rec["distances"])
        probs, _ = bkd.soft_label(acts, 0.3)
        soft_labels.append(probs)
    student = bkd.distill(
        samples, soft_labels, (1, 2, 1), 3,
        preset="mlp-tiny", temperature=0.3, lambda_=1.0, lr=5e-3,
        epochs=60, batch_size=32, seed=1,
    )
    fresh, _, _ = bkd.blobs_task(
        (1, 2, 1), class_count=3, per_class=40, dispersion=0.04, seed=11, slot_offset=30
    )
    teacher_labels = [teacher.classify(s) for s in fresh]
    predictions = student.predict(fresh)
    agree = sum(p == t for p, t in zip(predictions, teacher_labels)) / len(fresh)
    print(f"student/teacher agreement on held-out samples: {agree:.3f}")
    assert agree >= 0.9, f"agreement too low: {agree}"

    assert teacher.query_count() > 0
    print(f"total teacher queries: {teacher.query_count()}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
