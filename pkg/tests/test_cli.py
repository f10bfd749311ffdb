import socket
import subprocess
import sys
import threading
import time

import pytest

from mmgesture.cli import EXIT_DATA, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from mmgesture.recognize import BackboneNet
from mmgesture.scene import read_manifest


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["--out", str(out), "--seed", "4", "simulate", "--positions", "P1,P5",
                 "--repetitions", "5", "--participants", "1"]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def model(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert main(["--out", str(out), "train-classifier", "--data", str(dataset),
                 "--positions-train", "P1", "--epochs", "1"]) == EXIT_OK
    return out / "classifier.params"


def test_simulate_writes_manifest(dataset):
    recs = read_manifest(dataset)
    assert len(recs) == 2 * 5 * 5
    assert all((dataset / r["path"]).exists() for r in recs)


def test_simulate_random(tmp_path):
    assert main(["--out", str(tmp_path), "simulate", "--random", "5", "--noiseless"]) == EXIT_OK
    assert [r["label"] for r in read_manifest(tmp_path)] == [0, 1, 2, 3, 4]


def test_align_and_spectro(dataset, tmp_path, capsys):
    assert main(["--out", str(tmp_path / "al"), "align", "--data", str(dataset)]) == EXIT_OK
    assert len((tmp_path / "al" / "alignment.jsonl").read_text().splitlines()) == 50
    assert main(["--out", str(tmp_path / "sp"), "spectro", "dump", "--data", str(dataset),
                 "--id", "P1_c0_r000", "--aligned"]) == EXIT_OK
    assert "wrote 3 spectrogram files" in capsys.readouterr().out


def test_train_enhancer(dataset, tmp_path, capsys):
    assert main(["--out", str(tmp_path), "train-enhancer", "--data", str(dataset),
                 "--iterations", "2"]) == EXIT_OK
    assert (tmp_path / "enhancer.params").exists()
    assert "cycle_loss_final=" in capsys.readouterr().out


def test_train_and_eval(dataset, model, tmp_path, capsys):
    assert BackboneNet.load(model).meta == {"align": "1", "enhance": "0", "attention": "1"}
    assert main(["--out", str(tmp_path), "eval", "--data", str(dataset), "--model", str(model),
                 "--positions-train", "P1", "--positions-test", "P5"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "acc.P1=" in text and "acc.P5=" in text and "consistency.csi_like=" in text
    assert (tmp_path / "report.tsv").read_text().startswith("Method\tP1\tP5\tTrain-Mean")


def test_eval_ablation_trains(dataset, tmp_path, capsys):
    assert main(["--out", str(tmp_path), "eval", "--data", str(dataset), "--epochs", "1",
                 "--positions-train", "P1", "--positions-test", "P5", "--ablate", "align",
                 "--ablate", "attention"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "config.align=0" in out and "config.attention=0" in out


def test_serve_and_probe(dataset, model, capsys):
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    rc = {}
    probe = threading.Thread(target=lambda: rc.setdefault("probe", main(
        ["probe", "--port", str(port), "--count", "3", "--timeout", "5"])))
    probe.start()
    time.sleep(0.3)
    assert main(["serve", "--model", str(model), "--data", str(dataset), "--port", str(port),
                 "--id", "P1_c0_r000", "--id", "P1_c1_r000", "--window", "16", "--hop", "8",
                 "--max-messages", "3"]) == EXIT_OK
    probe.join()
    assert rc["probe"] == EXIT_OK
    out = capsys.readouterr().out
    assert [line.split()[0] for line in out.splitlines() if line.startswith("seq=")] == \
        ["seq=0", "seq=1", "seq=2"]
    assert "sent=3" in out


@pytest.mark.parametrize("argv", [[], ["bogus"], ["simulate", "--positions", "P9"],
                                  ["eval"], ["--seed", "x", "simulate"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_serve_bad_window_is_usage_error(dataset, model):
    assert main(["serve", "--model", str(model), "--data", str(dataset), "--window", "4",
                 "--port", "9"]) == EXIT_USAGE


def test_data_errors(dataset, tmp_path):
    assert main(["--out", str(tmp_path / "al"), "align", "--data", str(tmp_path / "missing")]) == EXIT_DATA
    assert not (tmp_path / "al").exists()
    assert main(["--config", str(tmp_path / "nope.cfg"), "simulate"]) == EXIT_DATA
    assert main(["--out", str(tmp_path), "eval", "--data", str(dataset),
                 "--model", str(tmp_path / "none.params")]) == EXIT_DATA
    assert main(["--out", str(tmp_path), "spectro", "dump", "--data", str(dataset),
                 "--id", "nope"]) == EXIT_DATA
    assert main(["--out", str(tmp_path), "train-classifier", "--data", str(dataset),
                 "--positions-train", "P3"]) == EXIT_DATA


def test_runtime_error(tmp_path):
    assert main(["probe", "--host", "256.0.0.1", "--timeout", "0.1"]) == EXIT_RUNTIME


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mmgesture", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
    r = subprocess.run([sys.executable, "-m", "mmgesture", "nope"], capture_output=True, text=True)
    assert r.returncode == EXIT_USAGE
