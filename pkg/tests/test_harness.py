import csv
import io

import numpy as np
import pytest
from PIL import Image

from lrtc_csc import io as tio
from lrtc_csc.cli import main
from lrtc_csc.csc import ConvDictionary, save_dictionary
from lrtc_csc.harness import (
    METRIC_COLUMNS, SWEEP_COLUMNS, ExperimentSpec, build_config, env_overrides,
    generate_mask, parse_config_text, run_experiment, sweep,
)


@pytest.fixture
def rng():
    return np.random.default_rng(17)


@pytest.fixture
def low_rank_tns(tmp_path):
    r = np.random.default_rng(0)
    t = np.einsum("i,j,k->ijk", r.random(32), r.random(32), r.random(3))
    path = tmp_path / "t.tns"
    tio.write_tns(path, t)
    return str(path)


def read_rows(path):
    lines = [ln for ln in open(path, encoding="utf-8") if not ln.startswith("#")]
    return list(csv.DictReader(lines))


class TestMask:
    def test_count(self):
        assert generate_mask((10, 10, 3), 0.7, 0).sum() == 90

    def test_round_half_even(self):
        # 0.5 * 5 = 2.5 rounds to 2
        assert generate_mask((5, 1, 1), 0.5, 0).sum() == 2

    def test_zero_ratio(self):
        assert generate_mask((4, 5, 2), 0.0, 3).all()

    def test_deterministic_and_seeded(self):
        a = generate_mask((8, 9, 3), 0.5, 12)
        np.testing.assert_array_equal(a, generate_mask((8, 9, 3), 0.5, 12))
        assert not np.array_equal(a, generate_mask((8, 9, 3), 0.5, 13))

    def test_pinned_algorithm(self):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(4)))
        idx = rng.permutation(24)[:12]
        flat = np.zeros(24, bool)
        flat[idx] = True
        np.testing.assert_array_equal(generate_mask((2, 3, 4), 0.5, 4),
                                      flat.reshape((2, 3, 4), order="F"))

    def test_per_pixel(self):
        m = generate_mask((6, 5, 3), 0.4, 1, per_pixel=True)
        assert m[:, :, 0].sum() == 18
        assert (m == m[:, :, :1]).all()

    @pytest.mark.parametrize("ratio", [-0.1, 1.0, 1.5])
    def test_bad_ratio(self, ratio):
        with pytest.raises(ValueError):
            generate_mask((2, 2, 2), ratio, 0)


class TestImageIO:
    def test_white_pixel(self, tmp_path):
        Image.new("RGB", (1, 1), (255, 255, 255)).save(tmp_path / "w.png")
        x = tio.load_input(tmp_path / "w.png")
        assert x.shape == (1, 1, 3)
        np.testing.assert_array_equal(x, 1.0)

    def test_quantization_bound(self, tmp_path, rng):
        x = rng.random((7, 5, 3))
        tio.save_output(x, tmp_path / "x.png")
        y = tio.load_input(tmp_path / "x.png")
        assert np.max(np.abs(x - y)) <= 1 / 510 + 1e-15

    def test_tns_round_trip(self, tmp_path, rng):
        x = rng.random((3, 4, 2))
        tio.save_output(x, tmp_path / "x.tns")
        assert tio.load_input(tmp_path / "x.tns").tobytes() == x.tobytes()

    def test_unsupported(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"garbage!")
        with pytest.raises(tio.FormatError):
            tio.load_input(p)


class TestConfig:
    def test_parse_text(self):
        cfg = parse_config_text("# comment\nbeta1 = 0.2\n\nlambda = 5  # inline\n")
        assert cfg == {"beta1": "0.2", "lambda": "5"}

    def test_bad_line(self):
        with pytest.raises(ValueError):
            parse_config_text("beta1 0.2")

    def test_env(self):
        assert env_overrides({"LRTC_CSC_BETA2": "0.3", "OTHER": "1"}) == {"beta2": "0.3"}

    def test_build(self):
        cfg, peak = build_config("halrtc", {"beta1": "0.1, 0.2, 0.3", "max_iters": "7",
                                            "peak": "255"})
        assert cfg.beta1 == (0.1, 0.2, 0.3) and cfg.max_outer_iters == 7 and peak == 255.0

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            build_config("halrtc", {"bogus": "1"})


class TestRunExperiment:
    def test_zero_ratio(self, low_rank_tns):
        out = run_experiment(ExperimentSpec(low_rank_tns, "halrtc", 0.0))
        assert out.report.psnr_mean == np.inf and out.report.re == 0

    def test_artifacts(self, low_rank_tns, tmp_path):
        spec = ExperimentSpec(low_rank_tns, "tnn", 0.5, seed=2, out=str(tmp_path / "r.tns"),
                              metrics=str(tmp_path / "m.csv"), trace=str(tmp_path / "t.csv"),
                              overrides={"max_iters": "10"})
        outcome = run_experiment(spec)
        rows = read_rows(tmp_path / "m.csv")
        assert list(rows[0]) == METRIC_COLUMNS and rows[0]["method"] == "lrtc_tnn"
        trace = (tmp_path / "t.csv").read_text().splitlines()
        assert trace[0].startswith("# config: {") and trace[1] == "iter,re,psnr,residual,seconds"
        assert len(trace) == 2 + outcome.result.iterations
        rec = tio.read_tns(tmp_path / "r.tns")
        mask = generate_mask(rec.shape, 0.5, 2)
        np.testing.assert_array_equal(rec[mask], tio.read_tns(low_rank_tns)[mask])

    def test_deterministic_bytes(self, low_rank_tns, tmp_path):
        texts = []
        for i in range(2):
            m = tmp_path / f"m{i}.csv"
            run_experiment(ExperimentSpec(low_rank_tns, "halrtc", 0.6, seed=1, metrics=str(m),
                                          overrides={"max_iters": "15"}))
            rows = read_rows(m)
            for r in rows:
                r.pop("seconds")
            texts.append(rows)
        assert texts[0] == texts[1]


class TestSweep:
    def test_empty(self):
        assert sweep([]) == ",".join(SWEEP_COLUMNS) + "\n"

    def test_grid(self, low_rank_tns, tmp_path):
        specs = [ExperimentSpec(low_rank_tns, m, r, overrides={"max_iters": "10"})
                 for m in ("halrtc", "tnn", "halrtc") for r in (0.3, 0.5, 0.7)]
        rows = list(csv.DictReader(io.StringIO(sweep(specs, str(tmp_path / "s.csv")))))
        assert len(rows) == 9 and all(r["status"] == "ok" for r in rows)
        assert rows[0]["psnr"] == rows[6]["psnr"]

    def test_failure_recorded(self, low_rank_tns):
        specs = [ExperimentSpec("missing.tns"), ExperimentSpec(low_rank_tns, "halrtc", 0.5,
                                                                overrides={"max_iters": "3"})]
        rows = list(csv.DictReader(io.StringIO(sweep(specs, per_band=True))))
        assert rows[0]["status"].startswith("error") and rows[1]["status"] == "ok"
        assert rows[1]["psnr_b3"] != ""


class TestCli:
    def test_mask(self, tmp_path, capsys):
        assert main(["mask", "--dims", "10x10x3", "--missing-ratio", "0.7",
                     "--out", str(tmp_path / "m.tns")]) == 0
        assert tio.read_tns(tmp_path / "m.tns").sum() == 90

    def test_complete_and_eval(self, low_rank_tns, tmp_path):
        args = ["complete", "--input", low_rank_tns, "--method", "halrtc",
                "--missing-ratio", "0.5", "--seed", "3", "--set", "max_iters=20",
                "--out", str(tmp_path / "r.tns"), "--metrics", str(tmp_path / "m.csv"),
                "--trace", str(tmp_path / "t.csv")]
        assert main(args) == 0
        assert main(["eval", "--recovered", str(tmp_path / "r.tns"), "--truth", low_rank_tns,
                     "--metrics", str(tmp_path / "e.csv")]) == 0
        a, b = read_rows(tmp_path / "m.csv")[0], read_rows(tmp_path / "e.csv")[0]
        assert a["psnr"] == b["psnr"] and a["re"] == b["re"]

    def test_config_precedence(self, low_rank_tns, tmp_path, monkeypatch):
        (tmp_path / "c.cfg").write_text("max_iters = 4\nbeta2 = 0.5\n")
        monkeypatch.setenv("LRTC_CSC_MAX_ITERS", "6")
        base = ["complete", "--input", low_rank_tns, "--method", "halrtc", "--missing-ratio",
                "0.5", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "r.tns"),
                "--metrics", str(tmp_path / "m.csv"), "--trace", str(tmp_path / "t.csv"),
                "--set", "tol=0"]
        assert main(base) == 0
        assert read_rows(tmp_path / "m.csv")[0]["iters"] == "6"
        assert main(base + ["--set", "max_iters=2"]) == 0
        assert read_rows(tmp_path / "m.csv")[0]["iters"] == "2"

    def test_train_dict(self, tmp_path):
        r = np.random.default_rng(1)
        (tmp_path / "imgs").mkdir()
        for i in range(2):
            tio.write_tns(tmp_path / "imgs" / f"{i}.tns", r.random((16, 16, 1)))
        assert main(["train-dict", "--inputs", str(tmp_path / "imgs"), "--filters", "3",
                     "--size", "4", "--out", str(tmp_path / "d.tns"), "--iters", "2",
                     "--inner-iters", "5"]) == 0
        assert tio.read_tns(tmp_path / "d.tns").shape == (4, 4, 3)

    def test_csc_method_runs(self, low_rank_tns, tmp_path):
        save_dictionary(ConvDictionary.random(2, 4), tmp_path / "d.tns")
        args = ["complete", "--input", low_rank_tns, "--method", "csc2", "--missing-ratio",
                "0.5", "--dict", str(tmp_path / "d.tns"), "--set", "max_iters=3",
                "--set", "inner_iters=3", "--out", str(tmp_path / "r.tns"),
                "--metrics", str(tmp_path / "m.csv"), "--trace", str(tmp_path / "t.csv")]
        assert main(args) == 0

    @pytest.mark.parametrize("extra,code,category", [
        (["--input", "nope.tns"], 4, "io"),
        (["--set", "beta1"], 2, "config"),
        (["--set", "bogus=1"], 2, "input"),
        (["--method", "csc1"], 2, "config"),
    ])
    def test_exit_codes(self, low_rank_tns, tmp_path, capsys, extra, code, category):
        args = {"--input": low_rank_tns, "--method": "halrtc", "--missing-ratio": "0.5",
                "--out": str(tmp_path / "r.tns"), "--metrics": str(tmp_path / "m.csv"),
                "--trace": str(tmp_path / "t.csv")}
        sets = []
        for k, v in zip(extra[::2], extra[1::2]):
            if k == "--set":
                sets += [k, v]
            else:
                args[k] = v
        argv = ["complete"] + [s for kv in args.items() for s in kv] + sets
        assert main(argv) == code
        assert f"error[{category}]" in capsys.readouterr().err

    def test_bad_dictionary_is_format_error(self, low_rank_tns, tmp_path, capsys):
        (tmp_path / "d.tns").write_bytes(b"JUNKJUNKJUNK")
        argv = ["complete", "--input", low_rank_tns, "--method", "csc1", "--missing-ratio", "0.5",
                "--dict", str(tmp_path / "d.tns"), "--out", str(tmp_path / "r.tns"),
                "--metrics", str(tmp_path / "m.csv"), "--trace", str(tmp_path / "t.csv")]
        assert main(argv) == 3
        assert "error[format]" in capsys.readouterr().err
