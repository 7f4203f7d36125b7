"""Smoke test for the seqbind Python extension.

Uses an installed `seqbind` module if there is one; otherwise loads the
library built by

    cargo build --release -p seqbind-python --features extension-module
"""

import importlib.util
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    try:
        import seqbind

        return seqbind
    except ImportError:
        pass
    for name in ("libseqbind.so", "libseqbind.dylib", "seqbind.dll"):
        built = os.path.join(ROOT, "target", "release", name)
        if os.path.exists(built):
            break
    else:
        sys.exit("seqbind extension not found; build it first (see module docstring)")
    tmp = tempfile.mkdtemp()
    target = os.path.join(tmp, "seqbind.so")
    shutil.copy(built, target)
    spec = importlib.util.spec_from_file_location("seqbind", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    sb = load()
    assert "DeepBind" in sb.PRESETS

    pos, neg = sb.planted_motif_data("TGACTCA", length=60, n=150, seed=3)
    assert len(pos) == len(neg) == 150
    assert all(len(s) == 60 for s in pos)

    shuffled = sb.dinuc_shuffle(pos[0], 1)
    assert sorted(shuffled) == sorted(pos[0]) and shuffled[0] == pos[0][0]

    assert sb.roc_auc([0.1, 0.9, 0.4, 0.4], [0, 1, 1, 0]) == 0.875
    w, p = sb.wilcoxon([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert w == 0 and abs(p - 0.0625) < 1e-12

    assert sb.conv1d([[1, 2, 3]], [[[1], [-1]]], [0.0]) == [[0.0, 0.0]]
    assert sb.maxpool1d([[1, 3, 2, 5]], 3, 1) == [[3, 5]]

    model = sb.Model.build("DeepBind", 60, seed=5)
    before = model.predict(pos[:4])
    auc = model.fit(pos, neg, steps=150, seed=5)
    print(model, "training AUC %.3f" % auc)
    assert model.trained_steps == 150 and before != model.predict(pos[:4])

    clone = sb.Model.from_text(model.to_text())
    assert clone.predict(pos[:20]) == model.predict(pos[:20])

    motifs = sb.extract_motifs(model, pos)
    assert motifs and all(len(m["consensus"]) == 24 for m in motifs)
    assert sb.meme(model, pos).startswith("MEME version 4\n")

    try:
        sb.Model.build("NoSuchNet", 60)
    except ValueError as e:
        assert "NoSuchNet" in str(e)
    else:
        raise AssertionError("unknown preset accepted")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
