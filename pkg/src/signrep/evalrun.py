"""Evaluation harnesses that tie trained task heads together.

back_translate_eval scores text-to-sign production by translating the
generated keypoints back to text with this kit's own translator
("self" back-translation) and also reports MPJPE of the generated
keypoints against the reference keypoints.

export_reprs writes frozen per-window representations as line-delimited
JSON for external projection.
"""

from __future__ import annotations

import json

import numpy as np

from .metrics import mpjpe, score_texts
from .tasks.s2t import translate
from .tasks.t2s import t2s_generate
from .tasks.windows import WindowSpec, extract_reprs


def back_translate_eval(records, mae, s2t_model, t2s_model):
    """Round-trip a split (text -> keypoints -> text) into a MetricReport."""
    spec = WindowSpec(s2t_model.config["window_w"],
                      s2t_model.config["window_s"])
    hyps, refs, dists = [], [], []
    for rec in records:
        generated = t2s_generate(t2s_model, mae, text=rec.text)
        z, _ = extract_reprs(generated, mae, spec)
        ids, _ = translate(s2t_model, z)
        hyps.append(s2t_model.vocab.decode(ids))
        refs.append(rec.text)
        dists.append(mpjpe(generated, rec.sequence()))
    return score_texts(hyps, refs, mpjpe_value=float(np.mean(dists)))


def export_reprs(records, mae, spec, path):
    """Write {id, offset, label?, vector} lines; returns the line count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            z, offsets = extract_reprs(rec.sequence(), mae, spec)
            for vec, off in zip(z, offsets):
                entry = {"id": rec.id, "offset": int(off)}
                if rec.labels:
                    entry["label"] = rec.labels[0]
                entry["vector"] = [float(v) for v in vec]
                fh.write(json.dumps(entry) + "\n")
                count += 1
    return count


def read_reprs(path):
    """Parse an export_reprs file back into a list of dicts."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entry = json.loads(line)
                entry["vector"] = np.asarray(entry["vector"], dtype=np.float32)
                out.append(entry)
    return out
