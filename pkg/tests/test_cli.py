import csv
import hashlib
import io
import json

import pytest

from regimelab.cli import PROBS_HEADER, SENS_HEADER, main
from regimelab.corpus import cumulative_counts, load_corpus, sliding_proportions
from regimelab.estimation import FitConfig, fit_map
from regimelab.model import ModelParams, regime_probs
from regimelab.sensitivity import derivs_wrt_gap


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def synth_corpus(tmp_path, capsys):
    path = tmp_path / "corpus.json"
    code, _, _ = run(capsys, "synth", "--seed", 0, "--out", path)
    assert code == 0
    return path


class TestProbs:
    def test_no_capacity(self, capsys):
        code, out, _ = run(capsys, "probs", "--grid", "-5:5:11", "--beta", 1, "--kappa", 0)
        assert code == 0
        table = rows(out)
        assert len(table) == 11
        assert all(float(r["p_mn"]) == 1e-12 for r in table)

    def test_single_point_normalised(self, capsys):
        code, out, _ = run(capsys, "probs", "--grid", "0:0:1")
        (r,) = rows(out)
        assert abs(float(r["p_np"]) + float(r["p_fr"]) + float(r["p_mn"]) - 1) <= 4e-12

    def test_matches_library(self, capsys):
        _, out, _ = run(capsys, "probs", "--grid", "-3:3:13")
        for r in rows(out):
            p = regime_probs(float(r["gap"]), ModelParams())
            for key in PROBS_HEADER[1:]:
                assert r[key] == f"{getattr(p, key):.12g}"

    @pytest.mark.parametrize("grid", ["1:2", "a:b:3", "0:1:0", "0:1:x", "0:inf:2"])
    def test_malformed_grid(self, capsys, grid):
        code, _, err = run(capsys, "probs", "--grid", grid)
        assert code == 2 and "grid" in err

    def test_invalid_params(self, capsys):
        code, _, _ = run(capsys, "probs", "--grid", "0:1:2", "--beta", -1)
        assert code == 2


class TestDynamics:
    def test_focal(self, capsys, focal_path, focal):
        code, out, _ = run(capsys, "dynamics", focal_path)
        table = rows(out)
        assert code == 0 and len(table) == 18
        cum, win = cumulative_counts(focal), sliding_proportions(focal, 10)
        for i, r in enumerate(table):
            assert [int(r[k]) for k in ("cum_np", "cum_fr", "cum_mn")] == cum[i].tolist()
            assert float(r["win_mn"]) == pytest.approx(win[i, 2], abs=5e-7)

    def test_window_one(self, capsys, focal_path):
        _, out, _ = run(capsys, "dynamics", focal_path, "--window", 1)
        for r in rows(out):
            shares = [r["win_np"], r["win_fr"], r["win_mn"]]
            assert sorted(shares) == ["0.000000", "0.000000", "1.000000"]
            assert shares[("NP", "FR", "MN").index(r["label"])] == "1.000000"

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "dynamics", tmp_path / "nope.json")
        assert code == 1

    def test_schema_error_names_turn(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('[{"turn": 4, "label": "NP"}, {"turn": 9, "label": "OK"}]')
        code, _, err = run(capsys, "dynamics", bad)
        assert code == 3 and "turn 9" in err

    def test_order_and_parse_errors(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('[{"turn": 4, "label": "NP"}, {"turn": 2, "label": "NP"}]')
        assert run(capsys, "dynamics", bad)[0] == 3
        bad.write_text("[{")
        assert run(capsys, "dynamics", bad)[0] == 3

    def test_bad_window(self, capsys, focal_path):
        assert run(capsys, "dynamics", focal_path, "--window", 0)[0] == 2


class TestFit:
    def test_outputs(self, capsys, tmp_path, synth_corpus):
        out = tmp_path / "fit"
        code, _, _ = run(capsys, "fit", synth_corpus, "--lambda", 1.15, "--out-dir", out)
        assert code == 0
        doc = json.loads((out / "fit.json").read_text())
        o = doc["objective"]
        assert abs(o["neg_logpost"] - (o["neg_loglik"] + o["pen_rw"] + o["gauge_pen"]
                                       + o["pen_l2"])) <= 1e-9
        assert doc["config"]["lambda"] == 1.15 and len(doc["turns"]) == 86
        traj = (out / "trajectory.csv").read_text().splitlines()
        assert traj[0] == ("position,turn,label,G_hat,p_np,p_fr,p_mn,"
                           "d_p_np,d_p_fr,d_p_mn,d2_p_fr")
        assert len(traj) == 87

        lib = fit_map(load_corpus(synth_corpus.read_bytes()), FitConfig(lam=1.15))
        first = rows("\n".join(traj))[0]
        assert first["G_hat"] == f"{lib.params_hat.gap_trajectory[0]:.12g}"

        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest) == {"command", "config_digest", "input_digest", "tool_version",
                                 "timestamp"}
        assert manifest["input_digest"] == hashlib.sha256(synth_corpus.read_bytes()).hexdigest()
        assert manifest["timestamp"].endswith("Z")

    def test_byte_identical_repeat(self, capsys, tmp_path, synth_corpus):
        for name in ("a", "b"):
            assert run(capsys, "fit", synth_corpus, "--out-dir", tmp_path / name)[0] == 0
        for f in ("fit.json", "trajectory.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        ma.pop("timestamp"), mb.pop("timestamp")
        assert ma == mb

    def test_config_precedence(self, capsys, tmp_path, synth_corpus, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"lambda": 3.0, "gauge_w": 10.0, "seed": 4}))
        monkeypatch.setenv("REGIMELAB_SEED", "99")
        out = tmp_path / "p"
        run(capsys, "fit", synth_corpus, "--config", cfg, "--gauge-w", 20, "--out-dir", out)
        c = json.loads((out / "fit.json").read_text())["config"]
        assert (c["lambda"], c["gauge_w"], c["seed"]) == (3.0, 20.0, 4)

    def test_env_seed_is_lowest(self, capsys, tmp_path, synth_corpus, monkeypatch):
        monkeypatch.setenv("REGIMELAB_SEED", "99")
        run(capsys, "fit", synth_corpus, "--out-dir", tmp_path / "e")
        assert json.loads((tmp_path / "e" / "fit.json").read_text())["config"]["seed"] == 99
        run(capsys, "fit", synth_corpus, "--seed", 3, "--out-dir", tmp_path / "f")
        assert json.loads((tmp_path / "f" / "fit.json").read_text())["config"]["seed"] == 3

    def test_bad_config(self, capsys, tmp_path, synth_corpus):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"lambda": -1}))
        assert run(capsys, "fit", synth_corpus, "--config", cfg)[0] == 2
        cfg.write_text(json.dumps({"nope": 1}))
        assert run(capsys, "fit", synth_corpus, "--config", cfg)[0] == 2
        assert run(capsys, "fit", synth_corpus, "--config", tmp_path / "missing.json")[0] == 1


class TestSens:
    def test_from_fit_json(self, capsys, tmp_path, synth_corpus):
        run(capsys, "fit", synth_corpus, "--out-dir", tmp_path)
        code, out, _ = run(capsys, "sens", tmp_path / "fit.json")
        table = rows(out)
        assert code == 0 and len(table) == 86 and tuple(table[0]) == SENS_HEADER
        doc = json.loads((tmp_path / "fit.json").read_text())
        params = ModelParams(alpha=doc["alpha_hat"], gamma=doc["gamma_hat"],
                             kappa=doc["kappa_hat"])
        d = derivs_wrt_gap(doc["turns"][5]["G_hat"], params)
        assert table[5]["d_p_fr"] == f"{d.d_p_fr:.12g}"

    def test_not_a_fit(self, capsys, focal_path):
        assert run(capsys, "sens", focal_path)[0] == 3


class TestSweep:
    def test_ramp_grid(self, capsys, tmp_path, synth_corpus):
        code, out, _ = run(capsys, "sweep", synth_corpus, "--grid-log", "0.1:10:25",
                           "--out-dir", tmp_path)
        assert code == 0
        table = rows((tmp_path / "sweep.csv").read_text())
        assert len(table) == 25 and table[0]["adj_rmse_prev"] == ""
        printed = out.strip().splitlines()
        assert len(printed) == 1
        assert printed[0] in {r["lambda"] for r in table}

    def test_no_mn_needs_lambda(self, capsys, tmp_path):
        corpus = tmp_path / "c.json"
        corpus.write_text(json.dumps([{"turn": i, "label": "NP" if i % 2 else "FR"}
                                      for i in range(1, 11)]))
        code, _, err = run(capsys, "sweep", corpus, "--grid-log", "0.1:10:3",
                           "--out-dir", tmp_path)
        assert code == 4 and "lambda" in err
        code, out, _ = run(capsys, "sweep", corpus, "--grid-log", "0.1:10:3", "--lambda", 2,
                           "--out-dir", tmp_path)
        assert code == 0 and out.strip() == "2"
        assert all(r["mn_calibration"] == "" for r in rows((tmp_path / "sweep.csv").read_text()))

    def test_bad_log_grid(self, capsys, synth_corpus):
        assert run(capsys, "sweep", synth_corpus, "--grid-log", "-1:10:3")[0] == 2
        assert run(capsys, "sweep", synth_corpus, "--grid-log", "1:1:3")[0] == 2


class TestSynth:
    def test_deterministic_and_loadable(self, capsys, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run(capsys, "synth", "--seed", 2, "--out", a, "--truth", tmp_path / "t.csv")
        run(capsys, "synth", "--seed", 2, "--out", b)
        assert a.read_bytes() == b.read_bytes()
        assert len(load_corpus(a.read_bytes())) == 86
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 87

    def test_env_seed(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("REGIMELAB_SEED", "2")
        run(capsys, "synth", "--out", tmp_path / "env.json")
        monkeypatch.delenv("REGIMELAB_SEED")
        run(capsys, "synth", "--seed", 2, "--out", tmp_path / "flag.json")
        assert (tmp_path / "env.json").read_bytes() == (tmp_path / "flag.json").read_bytes()

    def test_invalid(self, capsys):
        assert run(capsys, "synth", "--sig-rw", 0)[0] == 2


class TestCheckgrad:
    def test_passes(self, capsys):
        code, out, _ = run(capsys, "checkgrad", "--draws", 1000, "--seed", 7)
        assert code == 0 and out.startswith("PASS")

    def test_fails_at_impossible_tolerance(self, capsys):
        code, out, _ = run(capsys, "checkgrad", "--draws", 20, "--tolerance", 1e-15)
        assert code == 5 and out.startswith("FAIL")


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["probs"])
    assert exc.value.code == 2
