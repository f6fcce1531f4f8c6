import numpy as np
import pytest

from ampgnn import cli
from ampgnn.bench import read_csv
from ampgnn.checkpoint import Checkpoint, save_checkpoint
from ampgnn.mpnn import init_params


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_snr_grid_parsing():
    assert cli.parse_snr("8:14:2") == (8.0, 10.0, 12.0, 14.0)
    assert cli.parse_snr("0:1:0.25") == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert cli.parse_snr("3,7") == (3.0, 7.0)
    assert cli.parse_mimo("16x8") == (16, 8)


def test_sweep_writes_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code, _, _ = run(["sweep", "--mimo", "4x4", "--snr", "6:10:4", "--trials", "256", "--max-trials", "256",
                      "--detectors", "mmse,map", "--out", str(out)], capsys)
    assert code == 0
    rows = read_csv(out.read_text())
    assert [r["detector"] for r in rows] == ["mmse", "map", "mmse", "map"]


def test_config_file_overridden_by_flags(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep settings\nmimo = 4x2\nsnr = 10\ntrials = 256\nmax-trials = 256\ndetectors = amp\n")
    code, out, _ = run(["sweep", "--config", str(cfg), "--mimo", "6x3"], capsys)
    assert code == 0
    rows = read_csv(out)
    assert (rows[0]["M"], rows[0]["N"], rows[0]["detector"]) == (6, 3, "amp")


@pytest.mark.parametrize("argv", [
    ["sweep", "--mimo", "4by4"],
    ["sweep", "--snr", "10:5:1"],
    ["sweep", "--detectors", "zf"],
    ["sweep", "--mimo", "2x4"],
    ["sweep", "--detectors", "ampgnn"],
    ["sweep", "--checkpoint", "/nonexistent", "--detectors", "ampgnn"],
    ["frobnicate"],
])
def test_bad_arguments_exit_2(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2 and err


def test_bad_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(["sweep", "--config", str(cfg)], capsys)
    assert code == 2 and "colour" in err


def test_numerical_failure_exit_3(monkeypatch, capsys):
    from ampgnn.amp import NumericalError

    def boom(spec):
        raise NumericalError("non-finite r", 4)

    monkeypatch.setattr(cli, "run_ser_sweep", boom)
    code, _, err = run(["sweep", "--mimo", "4x4"], capsys)
    assert code == 3 and "layer 4" in err


def test_complexity_table(capsys):
    code, out, _ = run(["complexity", "--mimo", "64x64"], capsys)
    assert code == 0
    totals = {line.split(",")[1]: int(line.split(",")[2]) for line in out.splitlines() if line.startswith("total")}
    assert set(totals) == {"amp", "ampgnn", "lmmse+gnn"}


def test_train_then_robustness_commands(tmp_path, capsys):
    ck = tmp_path / "m.ckpt"
    code, out, _ = run(["train", "--mimo", "4x4", "--layers", "2", "--gnn-rounds", "1", "--epochs", "1",
                        "--samples", "64", "--batch", "32", "--val-samples", "32", "--train-users", "2,4",
                        "--checkpoint", str(ck)], capsys)
    assert code == 0 and ck.exists()
    assert out.splitlines()[0] == "epoch,train_loss,val_loss,val_ser,seconds"
    common = ["--checkpoint", str(ck), "--layers", "2", "--gnn-rounds", "1", "--trials", "256",
              "--max-trials", "256", "--snr", "10"]
    code, out, _ = run(["robust-users", "--mimo", "4x4", "--test-users", "3"] + common, capsys)
    assert code == 0 and {r["N"] for r in read_csv(out)} == {3}
    code, out, _ = run(["robust-csi", "--mimo", "4x4", "--csi-error-var", "0.01"] + common, capsys)
    assert code == 0 and all("csi_error_var=0.01" in r["notes"] for r in read_csv(out))
    code, out, _ = run(["oracle-check", "--mimo", "3x2", "--trials", "20", "--snr", "8"] + common[:6], capsys)
    assert code == 0 and [l.split(",")[0] for l in out.splitlines()[1:]] == ["amp", "ampgnn"]


def test_modulation_mismatch_rejected(tmp_path, capsys):
    ck = tmp_path / "q.ckpt"
    save_checkpoint(Checkpoint(init_params(2)), ck)
    code, _, err = run(["sweep", "--mod", "16qam", "--detectors", "ampgnn", "--checkpoint", str(ck)], capsys)
    assert code == 2 and "modulation" in err


def test_plot_output(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    png = tmp_path / "ser.png"
    code, _, _ = run(["sweep", "--mimo", "4x4", "--snr", "4,8", "--trials", "256", "--max-trials", "256",
                      "--detectors", "mmse", "--plot", str(png)], capsys)
    assert code == 0 and png.read_bytes()[:4] == b"\x89PNG"
    png2 = tmp_path / "ops.png"
    assert cli.main(["complexity", "--mimo", "16x16", "--plot", str(png2)]) == 0 and png2.exists()
