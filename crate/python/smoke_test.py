"""Smoke test for the `facegame` extension module.

    cargo build -p facegame-py --features extension-module
    python3 python/smoke_test.py

The script imports an installed `facegame` if there is one, otherwise it
loads the freshly built library from target/.
"""

import importlib.util
import io
import random
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    try:
        import facegame

        return facegame
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libfacegame.so", "libfacegame.dylib", "facegame.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                spec = importlib.util.spec_from_file_location("facegame", lib)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit("facegame not built; run: cargo build -p facegame-py --features extension-module")


def png(seed, width=48, height=48, blank=False):
    from PIL import Image

    rng = random.Random(seed)
    img = Image.new("RGB", (width, height))
    if blank:
        img.paste((90, 90, 90), (0, 0, width, height))
    else:
        img.putdata([(rng.randrange(256), rng.randrange(256), rng.randrange(256)) for _ in range(width * height)])
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def main():
    fg = load_module()
    labels = fg.emotions()
    assert labels == ["angry", "disgust", "fear", "happy", "neutral", "sad", "surprise"], labels

    p = fg.normalize_scores([1, 1, 2, 4, 0, 0, 0])
    assert abs(sum(p) - 1) < 1e-9 and p[3] == 0.5
    assert fg.top_emotion(p) == "happy"
    assert fg.verify("happy", p) == (True, 0.5, 0.5)
    assert fg.verify("angry", p, [0.2] * 7)[0] is False

    backend = fg.ReferenceBackend.seeded(32, 16, seed=3, scale=0.1)
    scores = backend.classify(png(1))
    assert len(scores) == 7 and abs(sum(scores) - 1) < 1e-6
    assert len(backend.embed(png(1))) == backend.feature_dimension == 16

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        weights = tmp / "demo.gmf"
        backend.save(str(weights))
        reloaded = fg.ReferenceBackend.load(str(weights))
        assert reloaded.name == "demo"
        assert reloaded.classify(png(1)) == scores

        # zero thresholds: every detected face matches
        game = fg.Game(backend, str(tmp / "general"), thresholds=[0.0] * 7, min_frame_interval_ms=0)
        s = game.start_session("general", seed=42)
        assert s["lives"] == 5 and s["score"] == 0 and s["target"] in labels
        out = game.submit_frame(s["session_id"], png(2))
        assert out["matched"] and out["session"]["score"] == 1 and out["record_id"]
        assert game.counts()[out["target"]] == 1
        assert fg.distribution(str(tmp / "general"))[out["target"]] == 1

        game = fg.Game(backend, str(tmp / "custom"), min_frame_interval_ms=0)
        faces = {e: png(100 + i) for i, e in enumerate(labels)}
        try:
            game.register_template("ann", "sad", png(0, blank=True))
            raise AssertionError("blank frame accepted")
        except fg.FacegameError as e:
            assert "Sad" in str(e)
        for e in labels:
            registered = game.register_template("ann", e, faces[e])
        assert registered == labels
        game.complete_registration("ann")
        s = game.start_session("customized", player_id="ann", seed=1)
        out = game.submit_frame(s["session_id"], faces[s["target"]])
        assert out["matched"] and out["matched_emotion"] == s["target"]

    r = fg.simulate_session([0.0] * 7, seed=5)
    assert (r["final_score"], r["rounds"], r["life_losses"]) == (0, 5, 5)
    r = fg.simulate_session([1.0] * 7, seed=5, max_rounds=100)
    assert r["final_score"] == 100 and sum(r["saves"].values()) == 100

    print("facegame smoke test ok")


if __name__ == "__main__":
    main()
