import csv

import pytest

from didfuse import data as D
from didfuse.cli import main


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    from didfuse import synthetic

    root = tmp_path_factory.mktemp("cli")
    ir, vis = synthetic.write_corpus(root, pairs=3, size=48, seed=5)
    return root, ir, vis


@pytest.fixture(scope="module")
def ckpt(corpus):
    root, ir, vis = corpus
    path = root / "m.ckpt"
    rc = main(
        ["train", "--ir-dir", str(ir), "--vis-dir", str(vis), "--epochs", "1", "--batch", "2", "--width", "4",
         "--crop", "16", "--loss-reduction", "mean", "--out", str(path)]
    )
    assert rc == 0
    return path


def test_train_outputs(ckpt):
    assert D.load_checkpoint(ckpt).params.width == 4
    loss_csv = ckpt.with_suffix(".loss.csv")
    with loss_csv.open() as fh:
        assert len(list(csv.DictReader(fh))) == 1
    assert loss_csv.with_suffix(".png").exists()


def test_fuse_and_decompose(tmp_path, corpus, ckpt, capsys):
    _, ir, vis = corpus
    rc = main(["fuse", "--ckpt", str(ckpt), "--ir", str(ir / "pair000.png"), "--vis", str(vis / "pair000.png"),
               "--sam", "average", "--gamma", "0.3,0.7,0.6,0.4", "--no-cam", "--out", str(tmp_path / "f.png")])
    assert rc == 0 and (tmp_path / "f.png").exists() and (tmp_path / "f.json").exists()
    rc = main(["decompose", "--ckpt", str(ckpt), "--image", str(ir / "pair001.png"), "--out-dir", str(tmp_path / "d")])
    assert rc == 0 and len(list((tmp_path / "d").iterdir())) == 2
    rc = main(["figure", "--ckpt", str(ckpt), "--ir", str(ir / "pair000.png"), "--vis", str(vis / "pair000.png"),
               "--out", str(tmp_path / "fig.png")])
    assert rc == 0 and (tmp_path / "fig.png").stat().st_size > 0


def test_eval_and_compare(tmp_path, corpus, ckpt):
    root, ir, vis = corpus
    for stem in ("pair000", "pair001", "pair002"):
        main(["fuse", "--ckpt", str(ckpt), "--ir", str(ir / f"{stem}.png"), "--vis", str(vis / f"{stem}.png"),
              "--out", str(tmp_path / "fused" / f"{stem}.png")])
    rc = main(["eval", "--fused-dir", str(tmp_path / "fused"), "--ir-dir", str(ir), "--vis-dir", str(vis),
               "--csv", str(tmp_path / "m.csv")])
    assert rc == 0 and (tmp_path / "m.png").exists()
    D.write_manifest_file(D.build_manifest(ir, vis), tmp_path / "val.tsv")
    rc = main(["compare-strategies", "--ckpt", str(ckpt), "--val-manifest", str(tmp_path / "val.tsv"),
               "--csv", str(tmp_path / "s.csv")])
    assert rc == 0 and (tmp_path / "s.png").exists()


def test_ablate_and_repro(tmp_path, corpus):
    _, ir, vis = corpus
    common = ["--ir-dir", str(ir), "--vis-dir", str(vis), "--epochs", "1", "--batch", "3", "--width", "3", "--crop", "16",
              "--loss-reduction", "mean"]
    rc = main(["ablate", "--variant", "no-skip", *common, "--val-ir-dir", str(ir), "--val-vis-dir", str(vis),
               "--out-dir", str(tmp_path / "ab")])
    assert rc == 0 and (tmp_path / "ab" / "no_skip_metrics.csv").exists()
    rc = main(["repro", "--runs", "2", *common, "--test-ir-dir", str(ir), "--test-vis-dir", str(vis),
               "--out-dir", str(tmp_path / "rp")])
    assert rc == 0
    assert (tmp_path / "rp" / "repro_dispersion.csv").exists() and (tmp_path / "rp" / "repro_runs.png").exists()


def test_errors_return_nonzero(tmp_path, corpus, ckpt, capsys):
    (tmp_path / "empty").mkdir()
    _, ir, vis = corpus
    rc = main(["eval", "--fused-dir", str(tmp_path / "empty"), "--ir-dir", str(ir), "--vis-dir", str(vis),
               "--csv", str(tmp_path / "m.csv")])
    assert rc == 2
    assert "no fused images" in capsys.readouterr().err
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    rc = main(["decompose", "--ckpt", str(tmp_path / "bad.ckpt"), "--image", str(ir / "pair000.png"), "--out-dir", str(tmp_path)])
    assert rc == 2
    with pytest.raises(SystemExit):
        main(["train", "--out", str(tmp_path / "x.ckpt")])
    with pytest.raises(SystemExit):
        main(["fuse", "--ckpt", str(ckpt), "--ir", "a", "--vis", "b", "--gamma", "1,0", "--out", "c.png"])
