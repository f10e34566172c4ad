import json
import subprocess
import sys

import numpy as np
import pytest

from infovaegan.cli import main, montage, parse_latent, traversal_base, UsageError
from infovaegan.data import read_pgm
from infovaegan.distributions import PriorConfig

TINY = {
    "train": {"batch_size": 4, "n_critic": 1, "stage_one_steps": 2, "stage_two_steps": 2,
              "hidden": [8], "checkpoint_every": 1, "seed": 2},
    "prior": {"z_dim": 2, "c_dim": 2, "K": 3},
    "data": {"image_side": 8, "sprite_size": 2, "grid": 4},
    "eval": {"votes": 10, "samples_per_vote": 2, "n_elbo": 4, "n_mc": 1},
}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["train", str(cfg), str(root / "out")]) == 0
    return root, cfg


def test_train_outputs(run):
    root, _ = run
    out = root / "out"
    names = sorted(p.name for p in out.iterdir())
    assert names == ["checkpoint-s1-000001.ivgn", "checkpoint-s1-000002.ivgn",
                     "checkpoint-s2-000001.ivgn", "checkpoint-s2-000002.ivgn",
                     "checkpoint.ivgn", "metrics.json", "runlog.csv"]
    metrics = json.loads((out / "metrics.json").read_text())
    assert "cluster_accuracy" in metrics and "disentanglement_score" in metrics
    lines = (out / "runlog.csv").read_text().splitlines()
    assert lines[0] == "step,stage,term,value"
    assert max(int(line.split(",")[0]) for line in lines[1:]) == 2 * 2 + 2


def test_train_is_reproducible(run, tmp_path):
    root, cfg = run
    assert main(["train", str(cfg), str(tmp_path), "--no-eval"]) == 0
    for name in ("checkpoint.ivgn", "runlog.csv", "checkpoint-s1-000001.ivgn"):
        assert (tmp_path / name).read_bytes() == (root / "out" / name).read_bytes()


def test_resume_matches_uninterrupted(run, tmp_path):
    root, cfg = run
    # seed the resumed directory with the uninterrupted log so earlier rows are kept
    (tmp_path / "runlog.csv").write_bytes((root / "out" / "runlog.csv").read_bytes())
    resume = root / "out" / "checkpoint-s1-000001.ivgn"
    assert main(["train", str(cfg), str(tmp_path), "--resume", str(resume), "--no-eval"]) == 0
    for name in ("checkpoint.ivgn", "runlog.csv"):
        assert (tmp_path / name).read_bytes() == (root / "out" / name).read_bytes()


def test_eval_prints_json(run, capsys):
    root, cfg = run
    assert main(["eval", str(root / "out" / "checkpoint.ivgn"), "--config", str(cfg)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics == json.loads((root / "out" / "metrics.json").read_text())


@pytest.mark.parametrize("latent,steps,rows,dims", [("c0", 5, 2, (17, 44)), ("d", 7, 4, (35, 26))])
def test_traverse_writes_montage(run, tmp_path, latent, steps, rows, dims):
    root, cfg = run
    out = tmp_path / "grid.pgm"
    argv = ["traverse", str(root / "out" / "checkpoint.ivgn"), "--latent", latent,
            "--steps", str(steps), "--rows", str(rows), "--config", str(cfg), "--out", str(out)]
    assert main(argv) == 0
    assert read_pgm(out).shape == dims


def test_export_dataset(run, tmp_path):
    _, cfg = run
    assert main(["export-dataset", str(tmp_path), "--config", str(cfg)]) == 0
    assert len(list(tmp_path.glob("*.pgm"))) == 3 * 4 * 4
    assert len((tmp_path / "index.csv").read_text().splitlines()) == 49


def test_corrupt_checkpoint_exit_4(run, tmp_path, capsys):
    root, cfg = run
    data = bytearray((root / "out" / "checkpoint.ivgn").read_bytes())
    data[100] ^= 0xFF
    bad = tmp_path / "bad.ivgn"
    bad.write_bytes(bytes(data))
    assert main(["eval", str(bad), "--config", str(cfg)]) == 4
    assert "checksum" in capsys.readouterr().err


def test_bad_inputs_exit_2(run, tmp_path, capsys):
    root, cfg = run
    ckpt = str(root / "out" / "checkpoint.ivgn")
    assert main(["train", str(tmp_path / "nope.json"), str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"train": {"colour": 1}}')
    assert main(["train", str(bad), str(tmp_path)]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["traverse", ckpt, "--latent", "q3", "--out", str(tmp_path / "x.pgm")]) == 2
    assert "usage:" in capsys.readouterr().err
    assert main(["traverse", ckpt, "--latent", "c9", "--config", str(cfg),
                 "--out", str(tmp_path / "x.pgm")]) == 2
    assert main(["eval", str(tmp_path / "missing.ivgn")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_divergence_exit_3(tmp_path):
    cfg = tmp_path / "nan.json"
    cfg.write_text(json.dumps({**TINY, "weights": {"gp": 1e308}, "train": {**TINY["train"], "lr": 1e300}}))
    code = main(["train", str(cfg), str(tmp_path / "out")])
    assert code == 3
    assert (tmp_path / "out" / "runlog.csv").exists()


def test_help_exits_zero():
    res = subprocess.run([sys.executable, "-m", "infovaegan.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("train", "eval", "traverse", "export-dataset"):
        assert cmd in res.stdout


def test_parse_latent():
    assert parse_latent("d") == "d"
    assert parse_latent("c1") == ("c", 1) and parse_latent("z12") == ("z", 12)
    for bad in ("c", "x1", "c-1", ""):
        with pytest.raises(UsageError):
            parse_latent(bad)


def test_montage_layout():
    cells = np.ones((2, 3, 4))
    img = montage(cells, 2)
    assert img.shape == (5, 8)
    assert np.all(img[2] == 0) and np.all(img[:, 2] == 0) and np.all(img[:, 5] == 0)
    assert img.sum() == 2 * 3 * 4


def test_traversal_base():
    base = traversal_base(PriorConfig(z_dim=2, c_dim=2, K=3), 4, seed=1)
    np.testing.assert_array_equal(base.d.value.argmax(axis=1), [0, 1, 2, 0])
    assert np.all(base.c.value == 0)
    np.testing.assert_array_equal(base.z.value, traversal_base(PriorConfig(z_dim=2, c_dim=2, K=3), 4, 1).z.value)
