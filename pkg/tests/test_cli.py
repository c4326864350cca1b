import json

import numpy as np
import pytest

from dsir import cli, io
from dsir.volume import LabelVolume


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert cli.main(["--seed", "3", "phantom", "--out", str(out), "--count", "2", "--dims", "16",
                     "--amplitude", "2"]) == 0
    return out


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"register": {"iterations": [3, 2, 2]}}))
    return path


def test_dns_without_checkpoint_is_usage_error(corpus, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["register", "--fixed", str(corpus / "phantom_000.f32"), "--moving",
                  str(corpus / "phantom_000_moving.f32"), "--metric", "dns", "--out", "x"])
    assert exc.value.code == 2
    assert "--checkpoint" in capsys.readouterr().err


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["register", "--fixed", "a"])
    assert exc.value.code == 2


def test_phantom_outputs(corpus):
    names = sorted(p.name for p in corpus.glob("*.f32"))
    assert names == sorted(f"phantom_00{i}{tag}.f32" for i in range(2)
                           for tag in ("", "_labels", "_moving", "_moving_labels", "_gt_field"))
    assert isinstance(io.read_volume(corpus / "phantom_000_labels.f32"), LabelVolume)


def test_eval_identical_labels(corpus, capsys):
    lab = str(corpus / "phantom_000_labels.f32")
    assert cli.main(["eval", "--fixed-labels", lab, "--warped-labels", lab]) == 0
    rows = [line.split("\t") for line in capsys.readouterr().out.splitlines()[1:]]
    assert rows and all(float(r[1]) == 1.0 and float(r[2]) == 0.0 for r in rows)


def test_runtime_error_exits_1(tmp_path, capsys):
    a = tmp_path / "a.f32"
    b = tmp_path / "b.f32"
    io.write_volume(np.zeros((4, 4, 4)), a)
    io.write_volume(np.zeros((4, 4, 8)), b)
    assert cli.main(["eval", "--fixed-labels", str(a), "--warped-labels", str(b)]) == 1
    assert "dsir: error" in capsys.readouterr().err


def test_unreadable_file_exits_1(tmp_path):
    assert cli.main(["eval", "--fixed-labels", str(tmp_path / "nope.f32"),
                     "--warped-labels", str(tmp_path / "nope.f32")]) == 1


def test_tiny_pipeline(corpus, tmp_path, fast_config, capsys):
    ck = tmp_path / "ck"
    assert cli.main(["--seed", "1", "train", "--data", str(corpus), "--out", str(ck), "--steps", "2",
                     "--n-samples", "16", "--features", "2", "--trace", str(tmp_path / "t.csv")]) == 0
    assert (ck / "best.ckpt").exists()
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 3

    fixed, moving = str(corpus / "phantom_000.f32"), str(corpus / "phantom_000_moving.f32")
    field = tmp_path / "field.f32"
    assert cli.main(["--config", str(fast_config), "register", "--fixed", fixed, "--moving", moving,
                     "--metric", "dns", "--checkpoint", str(ck / "best.ckpt"), "--out", str(field),
                     "--warped", str(tmp_path / "w.f32"), "--trace", str(tmp_path / "r.csv")]) == 0
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 1 + 7

    capsys.readouterr()
    assert cli.main(["eval", "--fixed-labels", str(corpus / "phantom_000_labels.f32"),
                     "--moving-labels", str(corpus / "phantom_000_moving_labels.f32"),
                     "--field", str(field)]) == 0
    assert "folding" in capsys.readouterr().out

    assert cli.main(["heatmap", "--fixed", fixed, "--moving", moving, "--metric", "mind",
                     "--point", "8", "8", "8", "--out", str(tmp_path / "h.f32"),
                     "--csv", str(tmp_path / "h.csv")]) == 0
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 1 + 16 ** 3

    assert cli.main(["landscape", "--fixed", fixed, "--moving", fixed, "--metric", "mind",
                     "--range", "10", "--step", "10", "--out", str(tmp_path / "l.csv")]) == 0
    assert "optimum at (0, 0)" in capsys.readouterr().out


def test_heatmap_point_outside(corpus):
    f = str(corpus / "phantom_000.f32")
    with pytest.raises(SystemExit) as exc:
        cli.main(["heatmap", "--fixed", f, "--moving", f, "--metric", "mind", "--point", "99", "0", "0",
                  "--out", "x"])
    assert exc.value.code == 2
