import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmunet import cli, data_io, models

TINY = """\
# desk-sized smoke run
variant=mm-unet
base_width=4
input_size=16
epochs=2
batch_size=4
base_lr=0.01
seed=3
"""


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_count_params_matches_library(capsys):
    code, out, _ = run(capsys, "count-params", "--variant", "mm-unet", "--base-width", "64", "--input-size", "256")
    report = models.count_params(models.ModelSpec("mm_unet", 64, 256))
    assert code == 0
    assert out.strip() == f"total={report.total} overhead={report.mmlp_overhead}"


def test_count_params_invalid_spec_exit_code(capsys):
    code, _, err = run(capsys, "count-params", "--variant", "mm-unet", "--input-size", "40")
    assert code == cli.EXIT_INVALID
    assert err.count("\n") == 1 and "error" in err


def test_usage_error_exit_code(capsys):
    code, _, _ = run(capsys, "train")
    assert code == cli.EXIT_USAGE
    code, _, _ = run(capsys, "no-such-command")
    assert code == cli.EXIT_USAGE


def test_config_defaults_roundtrip():
    text = cli.dump_config(cli.DEFAULTS)
    assert cli.parse_config(text) == cli.DEFAULTS
    assert cli.dump_config(cli.parse_config(text)) == text


@settings(max_examples=40, deadline=None)
@given(
    lr=st.floats(1e-6, 1.0, allow_nan=False),
    epochs=st.integers(1, 500),
    sigma=st.floats(0, 0.5, allow_nan=False),
    variant=st.sampled_from(["unet", "mm_unet", "mm_unet_global"]),
    ratios=st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 9)),
)
def test_config_roundtrip_property(lr, epochs, sigma, variant, ratios):
    s = dict(cli.DEFAULTS, base_lr=lr, epochs=epochs, phantom_noise_sigma=sigma,
             variant=variant, split_ratios=ratios)
    assert cli.parse_config(cli.dump_config(s)) == s


def test_config_rejects_unknown_and_malformed():
    with pytest.raises(cli.ParseError, match="unknown key"):
        cli.parse_config("learning_rate=0.1\n")
    with pytest.raises(cli.ParseError, match="key=value"):
        cli.parse_config("epochs 3\n")
    with pytest.raises(cli.ParseError, match="int"):
        cli.parse_config("epochs=three\n")
    with pytest.raises(cli.ParseError, match="duplicate"):
        cli.parse_config("epochs=1\nepochs=2\n")


def test_every_key_has_a_default():
    assert all(v is not None for v in cli.DEFAULTS.values())
    spec, cfg, phantom, ratios = cli.build_specs(cli.DEFAULTS)
    assert (spec.base_width, cfg.base_lr, phantom.noise_sigma, ratios) == (64, 0.015, 0.05, (4, 1, 0))


def test_missing_and_unparsable_files(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--config", str(tmp_path / "none.txt"), "--out", str(tmp_path / "o"))
    assert code == cli.EXIT_MISSING and "missing file" in err
    bad = tmp_path / "bad.txt"
    bad.write_text("colour=blue\n")
    code, _, err = run(capsys, "train", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert code == cli.EXIT_PARSE and "unknown key" in err
    ppm = tmp_path / "x.ppm"
    ppm.write_bytes(b"P3 1 1 255\n")
    ckpt = tmp_path / "m.ckpt"
    ckpt.write_bytes(b"garbage")
    (tmp_path / "config.txt").write_text(TINY)
    code, _, err = run(capsys, "predict", "--checkpoint", str(ckpt), "--image", str(ppm), "--out", str(tmp_path / "y.pgm"))
    assert code == cli.EXIT_PARSE and "offset 0" in err


def test_invalid_value_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("base_width=6\n")
    code, _, err = run(capsys, "train", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == cli.EXIT_INVALID and "base_width" in err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    assert cli.main(["gen-data", "--out", str(root / "data"), "--count", "12", "--size", "16", "--seed", "2"]) == 0
    (root / "tiny.txt").write_text(TINY)
    argv = ["train", "--config", str(root / "tiny.txt"), "--data", str(root / "data")]
    assert cli.main(argv + ["--out", str(root / "a")]) == 0
    assert cli.main(argv + ["--out", str(root / "b")]) == 0
    return root


def test_gen_data_layout(trained):
    names = sorted(p.name for p in (trained / "data").iterdir())
    assert names[0] == "img_00000.ppm" and "manifest.txt" in names and "msk_00011.pgm" in names


def test_train_outputs_and_determinism(trained):
    a = trained / "a"
    assert {p.name for p in a.iterdir()} == {"config.txt", "train.log", "model.ckpt"}
    log = (a / "train.log").read_text()
    assert re.fullmatch(
        r"(epoch=\d+ lr=\S+ loss=\d+\.\d{6} acc=\d\.\d{6} miou=\d\.\d{6}\n){2}", log
    )
    assert log == (trained / "b" / "train.log").read_text()
    assert (a / "model.ckpt").read_bytes() == (trained / "b" / "model.ckpt").read_bytes()
    echoed = cli.load_config(a / "config.txt")
    assert echoed == cli.parse_config(TINY)
    assert echoed["variant"] == "mm-unet" and echoed["epochs"] == 2


def test_eval_prints_metrics(trained, capsys):
    code, out, _ = run(capsys, "eval", "--checkpoint", str(trained / "a" / "model.ckpt"), "--data", str(trained / "data"))
    assert code == 0
    assert re.fullmatch(r"acc=\d\.\d{6} miou=\d\.\d{6} iou=\[.*\]\n", out)


def test_predict_writes_valid_mask(trained, capsys):
    out_path = trained / "pred.pgm"
    code, _, _ = run(
        capsys, "predict", "--checkpoint", str(trained / "a" / "model.ckpt"),
        "--image", str(trained / "data" / "img_00000.ppm"), "--out", str(out_path),
    )
    assert code == 0
    mask = data_io.read_mask(out_path)
    assert mask.shape == (16, 16) and set(np.unique(mask)) <= {0, 1, 2, 3}


def test_grad_check_single_op(capsys):
    code, out, _ = run(capsys, "grad-check", "--seed", "7", "--op", "layernorm")
    assert code == 0
    assert re.match(r"layernorm\s+max_rel_err=\S+ n=\d+\s+PASS", out)
    code, _, err = run(capsys, "grad-check", "--op", "nope")
    assert code == cli.EXIT_INVALID and "unknown op" in err
