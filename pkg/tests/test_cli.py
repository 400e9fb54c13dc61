import json
import subprocess
import sys

import numpy as np

from latticenet.grid import SparseGrid
from latticenet.ingest import FrameSequence, StrokeSample, write_strokes_json, write_svid


def run_cli(*args, **kw):
    return subprocess.run([sys.executable, "-m", "latticenet", *args],
                          capture_output=True, text=True, **kw)


SPHERE_OFF_HEADER = None


def write_sphere_off(path):
    from test_ingest import sphere_mesh
    from latticenet.ingest import save_off
    save_off(sphere_mesh(), path)


# ---------------------------------------------------------------------------
# count-ops


def test_count_ops_trivial_16_macs(tmp_path):
    r = run_cli("count-ops", "--arch", "1C2-output", "--lattice", "square",
                "--field", "3", "--json")
    assert r.returncode == 0, r.stderr
    doc = json.loads(r.stdout)
    assert doc["layers"][0]["macs"] == 16


def test_count_ops_first_layer_ratio_784():
    reports = {}
    for lat in ("square", "cubic"):
        r = run_cli("count-ops", "--arch", "96C7/2-output", "--lattice", lat,
                    "--field", "229", "--json")
        assert r.returncode == 0, r.stderr
        reports[lat] = json.loads(r.stdout)["layers"][0]["macs"]
    assert reports["cubic"] / reports["square"] == 784.0


def test_count_ops_geometric_triangular_vs_square():
    parts = []
    for i in range(1, 7):
        parts += [f"{32*i}C2", f"{32*i}C2"]
        if i < 6:
            parts.append("MP3/2")
    arch = "-".join(parts) + "-output"
    totals = {}
    for lat in ("square", "triangular"):
        r = run_cli("count-ops", "--arch", arch, "--lattice", lat,
                    "--mode", "geometric", "--width", "32", "--json")
        assert r.returncode == 0, r.stderr
        totals[lat] = json.loads(r.stdout)["total_macs"]
    ratio = totals["triangular"] / totals["square"]
    assert 0.65 <= ratio <= 0.82


def test_count_ops_text_table():
    r = run_cli("count-ops", "--arch", "32C2-MP3/2-output", "--lattice", "tetrahedral")
    assert r.returncode == 0
    assert "MegaOps" in r.stdout
    assert "MP3/2" in r.stdout


def test_count_ops_bad_arch_exit_2():
    r = run_cli("count-ops", "--arch", "32Q2-output", "--lattice", "square")
    assert r.returncode == 2
    assert "error" in r.stderr


# ---------------------------------------------------------------------------
# demo-knot and voxelize


def test_demo_knot(tmp_path):
    out = tmp_path / "trefoil.grid"
    r = run_cli("demo-knot", "--kind", "trefoil", "--scale", "40",
                "--seed", "3", "--out", str(out))
    assert r.returncode == 0, r.stderr
    assert out.exists()
    grid = SparseGrid.load(out)
    assert grid.a / grid.shape.num_sites < 0.02
    assert "active" in r.stdout


def test_voxelize_off(tmp_path):
    mesh_path = tmp_path / "sphere.off"
    write_sphere_off(mesh_path)
    out = tmp_path / "sphere.grid"
    r = run_cli("voxelize", "--input", str(mesh_path), "--scale", "40",
                "--seed", "1", "--out", str(out))
    assert r.returncode == 0, r.stderr
    grid = SparseGrid.load(out)
    assert 0 < grid.a / grid.shape.num_sites < 0.2


def test_voxelize_static_video_warns_empty(tmp_path):
    vid = tmp_path / "still.svid"
    write_svid(vid, FrameSequence(np.full((4, 8, 8), 50, dtype=np.uint8)))
    out = tmp_path / "still.grid"
    r = run_cli("voxelize", "--input", str(vid), "--threshold-pct", "12", "--out", str(out))
    assert r.returncode == 0, r.stderr
    assert "no active sites" in r.stderr
    assert SparseGrid.load(out).a == 0


def test_voxelize_strokes(tmp_path):
    sj = tmp_path / "char.json"
    write_strokes_json(sj, StrokeSample([[[0.0, 0.0], [5.0, 8.0]]], label=2))
    out = tmp_path / "char.grid"
    r = run_cli("voxelize", "--input", str(sj), "--scale", "20", "--out", str(out))
    assert r.returncode == 0, r.stderr
    assert SparseGrid.load(out).a > 0


def test_voxelize_unknown_format(tmp_path):
    p = tmp_path / "data.xyz"
    p.write_text("hi")
    r = run_cli("voxelize", "--input", str(p))
    assert r.returncode == 2


def test_voxelize_missing_file(tmp_path):
    r = run_cli("voxelize", "--input", str(tmp_path / "absent.off"))
    assert r.returncode == 3


# ---------------------------------------------------------------------------
# train / eval


TOY = ["--arch", "8C2-MP3/2-12C2-output", "--lattice", "tetrahedral",
       "--classes", "3", "--train-data", "knots", "--test-data", "knots"]


def knot_counts(train=8, test=4):
    return ["--config"]


def write_cfg(tmp_path, **extra):
    lines = {
        "train-per-class": "8",
        "test-per-class": "4",
        "epochs": "1",
        "batch-size": "8",
        "lr": "0.05",
        "seed": "5",
    }
    lines.update({k.replace("_", "-"): str(v) for k, v in extra.items()})
    p = tmp_path / "toy.cfg"
    p.write_text("\n".join(f"{k} = {v}" for k, v in lines.items()) + "\n")
    return p


def test_train_epochs_zero_writes_initial_checkpoint(tmp_path):
    cfg = write_cfg(tmp_path, epochs=0)
    out = tmp_path / "init.lnck"
    r = run_cli("train", *TOY, "--config", str(cfg), "--out", str(out))
    assert r.returncode == 0, r.stderr
    assert out.exists()


def test_train_bad_arch_exit_2(tmp_path):
    r = run_cli("train", "--arch", "32C0-output", "--lattice", "tetrahedral",
                "--classes", "3", "--train-data", "knots")
    assert r.returncode == 2
    assert "nonpositive" in r.stderr


def test_train_missing_data_exit_3(tmp_path):
    r = run_cli("train", "--arch", "8C2-output", "--lattice", "cubic",
                "--classes", "2", "--train-data", f"off:{tmp_path}/nowhere")
    assert r.returncode == 3


def test_train_eval_cycle_and_nfold_exactness(tmp_path):
    cfg = write_cfg(tmp_path, epochs=2)
    ckpt = tmp_path / "toy.lnck"
    log = tmp_path / "toy.log"
    r = run_cli("train", *TOY, "--config", str(cfg), "--out", str(ckpt),
                "--log", str(log))
    assert r.returncode == 0, r.stderr
    assert ckpt.exists()
    lines = log.read_text().strip().split("\n")
    assert len(lines) == 2 and all(len(l.split("\t")) == 4 for l in lines)

    # eval: 1-fold vs 12-fold with zero-magnitude augmentation, bit-identical
    outs = []
    for rep in ("1", "12"):
        rp = tmp_path / f"report{rep}.json"
        r = run_cli("eval", "--checkpoint", str(ckpt), "--test-data", "knots",
                    "--config", str(cfg), "--repeats", rep, "--out", str(rp))
        assert r.returncode == 0, r.stderr
        outs.append(rp.read_text())
    a, b = json.loads(outs[0]), json.loads(outs[1])
    assert a["outputs"] == b["outputs"]
    assert a["accuracy"] == b["accuracy"]
    # report self-consistency
    preds = np.argmax(np.array(a["outputs"]), axis=1)
    assert float((preds == np.array(a["labels"])).mean()) == a["accuracy"]


def test_eval_architecture_mismatch_exit_2(tmp_path):
    cfg = write_cfg(tmp_path, epochs=0)
    ckpt = tmp_path / "toy.lnck"
    r = run_cli("train", *TOY, "--config", str(cfg), "--out", str(ckpt))
    assert r.returncode == 0, r.stderr
    r = run_cli("eval", "--checkpoint", str(ckpt), "--test-data", "knots",
                "--config", str(cfg), "--arch", "9C2-MP3/2-12C2-output")
    assert r.returncode == 2
    assert "does not match" in r.stderr


def test_flags_override_config(tmp_path):
    cfg = write_cfg(tmp_path, epochs=3)
    log = tmp_path / "short.log"
    ckpt = tmp_path / "short.lnck"
    r = run_cli("train", *TOY, "--config", str(cfg), "--epochs", "1",
                "--out", str(ckpt), "--log", str(log))
    assert r.returncode == 0, r.stderr
    assert len(log.read_text().strip().split("\n")) == 1


def test_train_determinism_across_thread_flag(tmp_path):
    cfg = write_cfg(tmp_path, epochs=2)
    artifacts = []
    for threads in ("1", "2"):
        ckpt = tmp_path / f"t{threads}.lnck"
        log = tmp_path / f"t{threads}.log"
        r = run_cli("train", *TOY, "--config", str(cfg), "--threads", threads,
                    "--out", str(ckpt), "--log", str(log))
        assert r.returncode == 0, r.stderr
        artifacts.append((log.read_bytes(), ckpt.read_bytes()))
    assert artifacts[0] == artifacts[1]
