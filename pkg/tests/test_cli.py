import subprocess
import sys

import numpy as np
import pytest

from sckn.cli import main, result_line
from sckn.io import read_image, write_image

TINY_UNSUP = ["--data", "synthetic", "--size", "40", "--classes", "2", "--filters", "4", "--subsampling", "2",
               "--patches", "500", "--kmeans-iters", "5", "--lambda-exponents=-1,1"]
TINY_SUP = TINY_UNSUP + ["--epochs", "2", "--eta", "1", "--batch-size", "16"]


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _result(stdout):
    lines = [l for l in stdout.splitlines() if l.startswith("RESULT ")]
    assert len(lines) == 1
    return dict(kv.split("=", 1) for kv in lines[0].split()[1:])


def test_result_line_format():
    assert result_line(a=1, b=0.5, ok=True, name="x") == "RESULT a=1 b=0.5 ok=true name=x"


def test_gradcheck_passes(capsys):
    code, out, _ = _run(capsys, "gradcheck", "--seed", "0")
    assert code == 0
    res = _result(out)
    assert float(res["max_rel_error"]) < 1e-3
    assert res["passed"] == "true"


def test_eval_without_checkpoint_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["eval"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["bogus"], ["gradcheck", "--no-such-flag"], []])
def test_bad_invocations_exit_2(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_runtime_failure_exits_1(capsys, tmp_path):
    code, _, err = _run(capsys, "eval", "--checkpoint", str(tmp_path / "missing.sckn"))
    assert code == 1
    assert "error" in err
    bad = tmp_path / "bad.cfg"
    bad.write_text("no equals sign\n")
    code, _, _ = _run(capsys, "gradcheck", "--config", str(bad))
    assert code == 1


def test_console_script_usage_exit_code():
    proc = subprocess.run([sys.executable, "-m", "sckn.cli", "eval"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "--checkpoint" in proc.stderr


def test_train_eval_round_trip(capsys, tmp_path):
    ckpt = tmp_path / "c.sckn"
    code, out, _ = _run(capsys, "train-sup", *TINY_SUP, "--deterministic", "--out", str(ckpt))
    assert code == 0 and ckpt.exists()
    train = _result(out)
    code, out, _ = _run(capsys, "eval", "--checkpoint", str(ckpt), "--data", "synthetic", "--size", "40",
                        "--classes", "2")
    assert code == 0
    # same seed, same synthetic set: evaluation reproduces the training error
    assert float(_result(out)["error"]) == float(train["train_error"])


def test_train_unsup_runs(capsys, tmp_path):
    code, out, _ = _run(capsys, "train-unsup", *TINY_UNSUP, "--out", str(tmp_path / "u.sckn"))
    assert code == 0
    assert 0.0 <= float(_result(out)["train_error"]) <= 100.0


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# kernel bench settings\nfilters = 4\nsize = 8\nbatch-size = 2\nrepeats = 1\n")
    code, out, _ = _run(capsys, "kernel-bench", "--config", str(cfg), "--deterministic")
    assert code == 0
    assert _result(out)["filters"] == "4"
    code, out, _ = _run(capsys, "kernel-bench", "--config", str(cfg), "--filters", "6", "--deterministic")
    assert _result(out)["filters"] == "6"


@pytest.mark.parametrize("argv", [
    ["kernel-bench", "--filters", "4", "--size", "8", "--batch-size", "2", "--repeats", "1"],
    ["train-sup", *TINY_SUP],
])
def test_deterministic_runs_repeat(capsys, argv):
    lines = []
    for _ in range(2):
        code, out, _ = _run(capsys, *argv, "--seed", "3", "--deterministic")
        assert code == 0
        lines.append([l for l in out.splitlines() if l.startswith("RESULT ")])
    assert lines[0] == lines[1]


@pytest.fixture(scope="module")
def sr_checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("sr")
    rng = np.random.default_rng(0)
    images = root / "images"
    images.mkdir()
    for k in range(2):
        write_image(images / f"{k}.png", rng.integers(0, 256, (40, 40, 3), dtype=np.uint8))
    ckpt = root / "sr.sckn"
    code = main(["sr-train", "--images", str(images), "--layers", "1", "--filters", "4", "--patches", "16",
                 "--init-patches", "500", "--epochs", "1", "--out", str(ckpt), "--deterministic"])
    assert code == 0
    return ckpt


@pytest.mark.parametrize("factor", [2, 3])
def test_sr_apply_shape(capsys, tmp_path, sr_checkpoint, factor):
    src = tmp_path / "in.png"
    write_image(src, np.random.default_rng(1).integers(0, 256, (9, 13, 3), dtype=np.uint8))
    dst = tmp_path / "out.png"
    code, out, _ = _run(capsys, "sr-apply", "--checkpoint", str(sr_checkpoint), "--input", str(src),
                        "--output", str(dst), "--factor", str(factor))
    assert code == 0
    assert read_image(dst).shape == (9 * factor, 13 * factor, 3)
    assert _result(out)["height"] == str(9 * factor)


def test_sr_apply_rejects_classifier_checkpoint(capsys, tmp_path):
    ckpt = tmp_path / "c.sckn"
    assert _run(capsys, "train-unsup", *TINY_UNSUP, "--out", str(ckpt))[0] == 0
    src = tmp_path / "in.png"
    write_image(src, np.zeros((4, 4), dtype=np.uint8))
    code, _, _ = _run(capsys, "sr-apply", "--checkpoint", str(ckpt), "--input", str(src),
                      "--output", str(tmp_path / "o.png"))
    assert code == 1
