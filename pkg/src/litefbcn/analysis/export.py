import csv

import numpy as np


def export_features(model, x, labels, out_path, batch_size=256):
    """Write ``label,f0,f1,...`` rows of inference-mode head embeddings.

    Bilinear heads export the normalized bilinear vector; the GAP baseline
    exports its pooled vector.  Rows follow the order of ``x``.
    """
    labels = np.asarray(labels)
    chunks = [model.embed(x[i:i + batch_size]) for i in range(0, len(labels), batch_size)]
    feats = np.concatenate(chunks) if chunks else np.zeros((0, model.head.feature_width))
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{i}" for i in range(feats.shape[1])])
        for y, row in zip(labels.tolist(), feats):
            writer.writerow([y] + [repr(float(v)) for v in row])
    return feats


def export_manifest_features(model, manifest, out_path):
    return export_features(model, manifest.load(), manifest.labels, out_path)
