import gzip
import io
import json

import numpy as np
import pytest

from prpnet import cli
from prpnet.data import gen_xor, write_idx
from prpnet.experiments import (
    EXPERIMENTS,
    SINGLE_RUN_NOTE,
    export_curves,
    load_result_checkpoint,
    load_results,
    load_spec_file,
    numeric_content,
    read_curves,
    read_pgm,
    reconstruct_samples,
    registry_self_check,
    report,
    resolve_spec,
    run_experiment,
)
from prpnet.fetch import FILES, fetch_dataset
from prpnet.training import aggregate


def linear_spec(tmp_path, **kw):
    args = dict(seeds=[0, 1], epochs=15, out_dir=str(tmp_path / "results"))
    args.update(kw)
    return resolve_spec("linear", **args)


class TestSpec:
    def test_registry_matches_protocol(self):
        assert registry_self_check() == []

    def test_defaults(self):
        s = resolve_spec("mnist_mlp")
        assert (s.epochs, s.batch_size, s.gamma) == (10, 256, 0.95)
        assert s.seeds == [0, 1, 2] and s.models == ["prp", "dense", "lowrank"]
        assert (s.lr_min, s.lr_max) == (1e-4, 10.0)

    def test_ci_profile(self):
        s = resolve_spec("mnist_mlp", profile="ci")
        assert s.epochs == 2 and s.train_subset == 10_000 and s.batch_size == 16

    def test_overrides(self):
        s = resolve_spec("xor", epochs=5, models=["PRP"], init_scheme="Ternary")
        assert s.epochs == 5 and s.models == ["prp"] and s.init_scheme == "ternary"

    def test_errors(self):
        with pytest.raises(ValueError, match="seed list"):
            resolve_spec("linear", seeds=[])
        with pytest.raises(ValueError, match="unknown experiment"):
            resolve_spec("cifar")
        with pytest.raises(ValueError, match="unknown spec field"):
            resolve_spec("linear", momentum=0.9)
        with pytest.raises(ValueError):
            resolve_spec("linear", init_scheme="hadamard")

    def test_yaml_file(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("experiment: xor\nepochs: 7\nseeds: [4, 5]\nmodels: [dense]\n")
        s = load_spec_file(path, epochs=9)
        assert s.epochs == 9 and s.seeds == [4, 5] and s.models == ["dense"]
        path.write_text("epochs: 7\n")
        with pytest.raises(ValueError, match="experiment"):
            load_spec_file(path)

    def test_hash_ignores_paths(self, tmp_path):
        a = resolve_spec("linear", out_dir="a", data_dir="x")
        b = resolve_spec("linear", out_dir="b")
        assert a.content_hash() == b.content_hash()
        assert a.content_hash() != resolve_spec("linear", epochs=3).content_hash()


class TestRun:
    def test_two_stage_result(self, tmp_path):
        results = run_experiment(linear_spec(tmp_path))
        assert [r["model_kind"] for r in results] == ["prp", "dense"]
        assert [r["param_count"] for r in results] == [4, 3]
        for r in results:
            assert r["range_test"]["chosen_lr"] == r["learning_rate"]
            assert len(r["per_seed"]) == 2
            assert len(r["per_seed"][0]["train_curve"]) == 15
            assert set(r["aggregate"]["mean"]) >= {"accuracy", "macro_f1", "test_loss", "best_test_loss"}
            assert r["bes"] is not None
            on_disk = json.loads(open(r["_path"]).read())
            assert on_disk["spec"]["epochs"] == 15

    def test_aggregate_matches_training_module(self, tmp_path):
        (r,) = run_experiment(linear_spec(tmp_path, models=["prp"], seeds=[0, 1, 2]))
        direct = aggregate([s["metrics"] for s in r["per_seed"]])
        assert r["aggregate"]["mean"] == direct["mean"] and r["aggregate"]["std"] == direct["std"]

    def test_deterministic(self, tmp_path):
        spec = linear_spec(tmp_path)
        a = [numeric_content(r) for r in run_experiment(spec, write=False)]
        b = [numeric_content(r) for r in run_experiment(spec, write=False)]
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_rerun_from_echoed_spec(self, tmp_path):
        (r,) = run_experiment(linear_spec(tmp_path, models=["dense"]))
        echo = dict(r["spec"])
        again = resolve_spec(echo.pop("experiment"), profile=echo.pop("profile"), **echo)
        (r2,) = run_experiment(again, write=False)
        assert numeric_content(r2)["per_seed"] == numeric_content(r)["per_seed"]

    def test_append_only(self, tmp_path):
        spec = linear_spec(tmp_path, models=["dense"], seeds=[0], lr=0.1)
        first = run_experiment(spec)[0]["_path"]
        second = run_experiment(spec)[0]["_path"]
        assert first != second

    def test_fixed_lr_skips_range_test(self, tmp_path):
        (r,) = run_experiment(linear_spec(tmp_path, models=["dense"], lr=0.05), write=False)
        assert r["range_test"] is None and r["learning_rate"] == 0.05

    def test_aborted_seed_recorded(self, tmp_path):
        spec = resolve_spec("polynomial", models=["dense"], seeds=[0], epochs=3, lr=1e308,
                            out_dir=str(tmp_path))
        with np.errstate(all="ignore"):
            (r,) = run_experiment(spec, write=False)
        assert r["failed_seeds"] == [0]
        assert r["per_seed"][0]["status"] == "aborted"

    def test_missing_image_data(self, tmp_path):
        spec = resolve_spec("mnist_mlp", data_dir=str(tmp_path / "nowhere"), seeds=[0], lr=0.01)
        with pytest.raises(FileNotFoundError):
            run_experiment(spec, write=False)


class TestReport:
    def test_tables_and_csv(self, tmp_path):
        run_experiment(linear_spec(tmp_path))
        csv_path = tmp_path / "t.csv"
        text = report(tmp_path / "results", csv_path=csv_path)
        assert "== linear ==" in text
        assert "Parameters" in text and "Bit Efficiency Score" in text
        assert "±" in text
        assert "linear,Parameters,4,3" in csv_path.read_text()

    def test_single_run_note(self, tmp_path):
        run_experiment(linear_spec(tmp_path, seeds=[0]))
        assert SINGLE_RUN_NOTE in report(tmp_path / "results")

    def test_corrupt_file_skipped(self, tmp_path):
        run_experiment(linear_spec(tmp_path, models=["dense"], seeds=[0]))
        bad = tmp_path / "results" / "broken.json"
        bad.write_text("{not json")
        results, skipped = load_results(tmp_path / "results")
        assert len(results) == 1 and str(bad) in skipped[0]
        assert "skipped corrupt result" in report(tmp_path / "results")

    def test_empty_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            report(tmp_path)


class TestCurves:
    def test_round_trip(self, tmp_path):
        (r,) = run_experiment(linear_spec(tmp_path, models=["prp"], seeds=[0]))
        path = export_curves(r, tmp_path / "c.csv")
        rows = read_curves(path)
        assert len(rows) == 15
        assert [t for _, t, _ in rows] == r["per_seed"][0]["train_curve"]
        assert [t for _, _, t in rows] == r["per_seed"][0]["test_curve"]
        assert path.read_text().splitlines()[0] == "epoch,train_loss,test_loss"

    def test_zero_epochs_header_only(self, tmp_path):
        (r,) = run_experiment(linear_spec(tmp_path, models=["dense"], seeds=[0], epochs=0, lr=0.1))
        path = export_curves(r, tmp_path / "c.csv")
        assert path.read_text() == "epoch,train_loss,test_loss\n"


def write_tiny_mnist(root, n_train=40, n_test=12):
    rng = np.random.default_rng(0)
    root.mkdir(parents=True, exist_ok=True)
    for split, n in (("train", n_train), ("t10k", n_test)):
        write_idx(root / f"{split}-images-idx3-ubyte", rng.integers(0, 256, (n, 28, 28), dtype=np.uint8))
        write_idx(root / f"{split}-labels-idx1-ubyte", rng.integers(0, 10, n, dtype=np.uint8))


class IdentityStub:
    def predict(self, x):
        return x * 0.5 + 0.5


class TestReconstruction:
    def test_identity_stub_reproduces_originals(self, tmp_path):
        write_tiny_mnist(tmp_path / "mnist")
        spec = resolve_spec("autoencoder", data_dir=str(tmp_path))
        from prpnet.experiments import load_data

        _, test_set = load_data(spec, 0)
        grid, mse = reconstruct_samples({"stub": IdentityStub(), "stub2": IdentityStub()}, test_set, 4,
                                        path=tmp_path / "g.pgm")
        assert grid.shape == (4 * 28, 3 * 28)
        np.testing.assert_array_equal(grid[:, :28], grid[:, 28:56])
        assert mse["stub"] <= 1e-30
        np.testing.assert_array_equal(read_pgm(tmp_path / "g.pgm"), grid)

    def test_checkpoint_from_result(self, tmp_path):
        write_tiny_mnist(tmp_path / "mnist")
        spec = resolve_spec("autoencoder", models=["prp"], seeds=[0], epochs=1, lr=1e-3,
                            data_dir=str(tmp_path), out_dir=str(tmp_path / "res"))
        (r,) = run_experiment(spec)
        model = load_result_checkpoint(r)
        assert model.tied == {2: 1, 3: 0}
        assert set(r["aggregate"]["mean"]) >= {"mse", "mae", "test_loss"}
        assert r["bes"] is None
        r["per_seed"][0].pop("checkpoint")
        with pytest.raises(FileNotFoundError):
            load_result_checkpoint(r)


def fake_opener(payloads):
    def opener(url):
        return io.BytesIO(gzip.compress(payloads[url.rsplit("/", 1)[1]]))
    return opener


def test_fetch_with_fake_opener(tmp_path):
    payloads = {f"{stem}.gz": stem.encode() for stem in FILES}
    written = fetch_dataset("mnist", tmp_path, base_url="http://mirror.invalid/", opener=fake_opener(payloads))
    assert [p.name for p in written] == FILES
    assert (tmp_path / "mnist" / FILES[0]).read_bytes() == FILES[0].encode()
    with pytest.raises(ValueError):
        fetch_dataset("cifar", tmp_path)


class TestCli:
    def test_run_report_curves(self, tmp_path, capsys):
        out = str(tmp_path / "r")
        assert cli.main(["run", "--experiment", "linear", "--seeds", "0", "--epochs", "5", "--out-dir", out]) == 0
        assert "linear/prp: params=4" in capsys.readouterr().out
        assert cli.main(["report", out, "--csv", str(tmp_path / "t.csv")]) == 0
        assert "== linear ==" in capsys.readouterr().out
        assert cli.main(["export-curves", out, "--output", str(tmp_path / "curves")]) == 0
        assert len(list((tmp_path / "curves").glob("*.csv"))) == 2

    def test_range_test(self, tmp_path, capsys):
        path = tmp_path / "sweep.json"
        assert cli.main(["range-test", "--experiment", "linear", "--models", "dense", "--output", str(path)]) == 0
        assert "chosen lr" in capsys.readouterr().out
        assert "dense" in json.loads(path.read_text())

    def test_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "x.yaml"
        cfg.write_text(f"experiment: linear\nmodels: [dense]\nseeds: [1]\nepochs: 3\nlr: 0.1\nout_dir: {tmp_path}\n")
        assert cli.main(["run", "--config", str(cfg)]) == 0
        assert "linear/dense" in capsys.readouterr().out

    def test_reconstruct(self, tmp_path, capsys):
        write_tiny_mnist(tmp_path / "mnist")
        out = str(tmp_path / "r")
        assert cli.main(["run", "--experiment", "autoencoder", "--models", "prp,lowrank", "--seeds", "0",
                         "--epochs", "1", "--lr", "0.001", "--data-dir", str(tmp_path), "--out-dir", out]) == 0
        pgm = tmp_path / "g.pgm"
        assert cli.main(["reconstruct", out, "--data-dir", str(tmp_path), "-n", "3", "--output", str(pgm)]) == 0
        assert read_pgm(pgm).shape == (3 * 28, 3 * 28)
        assert "reconstruction MSE" in capsys.readouterr().out

    def test_errors_exit_2(self, tmp_path, capsys):
        assert cli.main(["run", "--experiment", "linear", "--seeds", ",", "--out-dir", str(tmp_path)]) == 2
        assert "seed list" in capsys.readouterr().err
        assert cli.main(["report", str(tmp_path / "missing")]) == 2
        with pytest.raises(SystemExit):
            cli.main(["run", "--experiment", "imagenet"])

    def test_every_registered_experiment_resolves(self):
        for name in EXPERIMENTS:
            resolve_spec(name)


def test_synthetic_xor_is_per_seed_data():
    assert gen_xor(seed=0).inputs.tobytes() != gen_xor(seed=1).inputs.tobytes()
