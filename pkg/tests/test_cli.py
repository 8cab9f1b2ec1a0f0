import subprocess
import sys

import numpy as np
import pytest

from g2hf import cli, net, ops
from g2hf.net import NetConfig
from g2hf.netpbm import read_pnm, write_pgm, write_ppm
from g2hf.rng import Rng
from g2hf.tensor import Tensor
from g2hf.train import synthetic_pair


@pytest.fixture
def pair(tmp_path):
    image, mask = synthetic_pair()
    write_ppm(tmp_path / "img.ppm", image)
    write_pgm(tmp_path / "mask.pgm", mask)
    return tmp_path / "img.ppm", tmp_path / "mask.pgm"


def run(*argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------- forward

class TestForward:
    def test_writes_map_of_input_size(self, pair, tmp_path):
        out = tmp_path / "s1.pgm"
        assert run("--toy", "forward", "--image", pair[0], "--out", out) == 0
        s = read_pnm(out)
        assert s.shape == (1, 192, 192) and s.min() >= 0 and s.max() <= 1

    def test_all_heads(self, pair, tmp_path):
        assert run("forward", "--toy", "--image", pair[0], "--out", tmp_path / "s.pgm",
                   "--all-heads", tmp_path / "heads") == 0
        assert sorted(p.name for p in (tmp_path / "heads").iterdir()) == [f"s{i}.pgm" for i in range(1, 6)]
        assert (tmp_path / "heads" / "s1.pgm").read_bytes() == (tmp_path / "s.pgm").read_bytes()

    def test_byte_identical_reruns(self, pair, tmp_path):
        for name in ("a.pgm", "b.pgm"):
            assert run("--toy", "--seed", 7, "forward", "--image", pair[0], "--out", tmp_path / name) == 0
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_loaded_weights_match_seeded(self, pair, tmp_path):
        net.save_weights(net.init_weights(Rng(42), NetConfig.toy()), tmp_path / "w.g2hf")
        run("--toy", "forward", "--image", pair[0], "--out", tmp_path / "a.pgm")
        run("--toy", "forward", "--image", pair[0], "--weights", tmp_path / "w.g2hf", "--out", tmp_path / "b.pgm")
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_precondition_exit_4(self, tmp_path, capsys):
        write_ppm(tmp_path / "small.ppm", np.zeros((3, 100, 100)))
        assert run("--toy", "forward", "--image", tmp_path / "small.ppm", "--out", tmp_path / "o.pgm") == 4
        err = capsys.readouterr().err
        assert "divisibility" in err and err.count("\n") == 1
        assert not (tmp_path / "o.pgm").exists()

    def test_malformed_image_exit_2(self, pair, tmp_path):
        (tmp_path / "bad.ppm").write_bytes(b"P6\n4 4\n255\n\0\0")
        assert run("--toy", "forward", "--image", tmp_path / "bad.ppm", "--out", tmp_path / "o.pgm") == 2
        assert run("--toy", "forward", "--image", pair[1], "--out", tmp_path / "o.pgm") == 2
        assert run("--toy", "forward", "--image", tmp_path / "missing.ppm", "--out", tmp_path / "o.pgm") == 2

    @pytest.mark.parametrize("edit,code", [
        (lambda b: b"BAD!" + b[4:], "bad-magic"),
        (lambda b: b[:4] + b"\x07\0\0\0" + b[8:], "version-mismatch"),
        (lambda b: b[:100], "truncated"),
    ])
    def test_weight_errors_exit_3(self, pair, tmp_path, capsys, edit, code):
        path = tmp_path / "w.g2hf"
        net.save_weights(net.init_weights(Rng(1), NetConfig.toy()), path)
        path.write_bytes(edit(path.read_bytes()))
        assert run("--toy", "forward", "--image", pair[0], "--weights", path, "--out", tmp_path / "o.pgm") == 3
        assert code in capsys.readouterr().err

    def test_config_mismatch_exit_3(self, pair, tmp_path, capsys):
        net.save_weights(net.init_weights(Rng(1), NetConfig.toy()), tmp_path / "w.g2hf")
        assert run("forward", "--image", pair[0], "--weights", tmp_path / "w.g2hf", "--out", tmp_path / "o.pgm") == 3
        assert "missing-parameter" in capsys.readouterr().err


# ---------------------------------------------------------------- selftest / gradcheck

class TestSelftest:
    def test_full_suite_passes(self, capsys):
        assert run("selftest") == 0
        lines = capsys.readouterr().out.splitlines()
        results = [l for l in lines if l.startswith(("PASS", "FAIL"))]
        assert len(results) >= 30
        assert all(l.startswith("PASS") for l in results)

    def test_filter(self, capsys):
        assert run("selftest", "--filter", "unshuffle") == 0
        results = [l for l in capsys.readouterr().out.splitlines() if l.startswith(("PASS", "FAIL"))]
        assert results and all("unshuffle" in l.split(":")[0] for l in results)

    def test_unknown_filter_fails(self):
        assert run("selftest", "--filter", "no-such-check") == 1

    def test_corrupted_adjoint_is_caught(self, monkeypatch, capsys):
        honest = ops.pixel_unshuffle

        def broken(x, r):
            out = honest(x, r)
            # same forward value, wrong (doubled) adjoint
            return ops._finish("unshuffle", out.data, (x,), lambda g: (2.0 * ops._shuffle_array(g, r),))

        monkeypatch.setattr(ops, "pixel_unshuffle", broken)
        assert run("selftest", "--filter", "gradcheck.unshuffle") == 1
        assert "FAIL gradcheck.unshuffle" in capsys.readouterr().out


class TestGradcheck:
    def test_default_seed_passes_with_one_line_per_module(self, capsys):
        assert run("--toy", "gradcheck") == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) >= 8
        names = {l.split()[0] for l in lines}
        assert {"psa", "pca", "mde", "granular", "geometric", "interaction", "dgc", "dsp", "lgf",
                "net_end_to_end"} <= names

    def test_nan_reports_location_and_fails(self, monkeypatch, capsys):
        honest = ops.sigmoid

        def poisoned(x):
            out = honest(x)
            return ops._finish("sigmoid", np.full(out.shape, np.nan), (x,), lambda g: (g,))

        monkeypatch.setattr(ops, "sigmoid", poisoned)
        assert run("gradcheck") == 1
        out = capsys.readouterr().out
        assert "non-finite value at" in out


# ---------------------------------------------------------------- train-toy

class TestTrainToy:
    def test_zero_steps_writes_initial_weights(self, tmp_path, capsys):
        assert run("train-toy", "--steps", 0, "--out", tmp_path / "w.g2hf") == 0
        net.save_weights(net.init_weights(Rng(42), NetConfig.toy()), tmp_path / "init.g2hf")
        assert (tmp_path / "w.g2hf").read_bytes() == (tmp_path / "init.g2hf").read_bytes()
        assert capsys.readouterr().out == "step,bce,iou,fm,total\n"

    def test_csv_log_and_determinism(self, pair, tmp_path, capsys):
        outs = []
        for name in ("a", "b"):
            assert run("train-toy", "--seed", 3, "--image", pair[0], "--mask", pair[1], "--steps", 2,
                       "--out", tmp_path / f"{name}.g2hf") == 0
            outs.append(capsys.readouterr().out)
        assert outs[0] == outs[1]
        rows = outs[0].strip().splitlines()
        assert rows[0] == "step,bce,iou,fm,total" and len(rows) == 3
        step, bce, iou, fm, total = rows[1].split(",")
        assert step == "0" and float(total) == pytest.approx(float(bce) + float(iou) + float(fm), abs=1e-12)
        assert (tmp_path / "a.g2hf").read_bytes() == (tmp_path / "b.g2hf").read_bytes()

    def test_mask_size_mismatch_exit_2(self, pair, tmp_path):
        write_pgm(tmp_path / "m.pgm", np.zeros((1, 96, 96)))
        assert run("train-toy", "--image", pair[0], "--mask", tmp_path / "m.pgm", "--steps", 1,
                   "--out", tmp_path / "w") == 2

    def test_image_without_mask_exit_2(self, pair, tmp_path):
        assert run("train-toy", "--image", pair[0], "--steps", 1, "--out", tmp_path / "w") == 2

    def test_precondition_exit_4(self, tmp_path):
        write_ppm(tmp_path / "i.ppm", np.zeros((3, 96, 96)))
        write_pgm(tmp_path / "m.pgm", np.zeros((1, 96, 96)))
        assert run("train-toy", "--image", tmp_path / "i.ppm", "--mask", tmp_path / "m.pgm",
                   "--out", tmp_path / "w") == 4


# ---------------------------------------------------------------- eval

def _write_maps(directory, maps):
    directory.mkdir(exist_ok=True)
    for name, a in maps.items():
        write_pgm(directory / name, a)


class TestEval:
    def test_identical_directories(self, tmp_path):
        g = np.zeros((1, 6, 6))
        g[:, 1:4, 2:5] = 1.0
        _write_maps(tmp_path / "p", {"a.pgm": g, "b.pgm": 1 - g})
        _write_maps(tmp_path / "g", {"a.pgm": g, "b.pgm": 1 - g})
        assert run("eval", "--pred", tmp_path / "p", "--gt", tmp_path / "g", "--report", tmp_path / "r.csv") == 0
        assert (tmp_path / "r.csv").read_text().splitlines()[-1] == "mean,0.000000,1.000000"

    def test_black_against_white(self, tmp_path):
        _write_maps(tmp_path / "p", {"x.pgm": np.zeros((1, 4, 4))})
        _write_maps(tmp_path / "g", {"x.pgm": np.ones((1, 4, 4))})
        run("eval", "--pred", tmp_path / "p", "--gt", tmp_path / "g", "--report", tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text() == "name,mae,fbeta\nx.pgm,1.000000,0.000000\nmean,1.000000,0.000000\n"

    def test_three_pair_fixture_hand_computed(self, tmp_path):
        # 1x4 maps with byte values chosen to be exact in /255
        pred = {
            "p1.pgm": np.array([[[255, 255, 0, 0]]]) / 255,   # perfect
            "p2.pgm": np.array([[[255, 0, 255, 0]]]) / 255,   # half right
            "p3.pgm": np.array([[[51, 0, 0, 0]]]) / 255,      # mean 0.05 -> t 0.1, one hit
        }
        gt = {
            "p1.pgm": np.array([[[1.0, 1, 0, 0]]]),
            "p2.pgm": np.array([[[1.0, 1, 0, 0]]]),
            "p3.pgm": np.array([[[1.0, 1, 0, 0]]]),
        }
        _write_maps(tmp_path / "p", pred)
        _write_maps(tmp_path / "g", gt)
        assert run("eval", "--pred", tmp_path / "p", "--gt", tmp_path / "g", "--report", tmp_path / "r.csv") == 0
        # p2: P = R = 0.5 -> F = 0.5; p3: P = 1, R = 0.5 -> F = 0.65 / 0.8
        # p3 MAE: (0.8 + 1) / 4 = 0.45
        f3 = 1.3 * 0.5 / 0.8
        expected = [
            "name,mae,fbeta",
            "p1.pgm,0.000000,1.000000",
            "p2.pgm,0.500000,0.500000",
            f"p3.pgm,0.450000,{f3:.6f}",
            f"mean,{0.95 / 3:.6f},{(1.5 + f3) / 3:.6f}",
        ]
        assert (tmp_path / "r.csv").read_text().splitlines() == expected

    def test_unmatched_listed_and_skipped(self, tmp_path, capsys):
        _write_maps(tmp_path / "p", {"a.pgm": np.ones((1, 2, 2)), "extra.pgm": np.ones((1, 2, 2))})
        _write_maps(tmp_path / "g", {"a.pgm": np.ones((1, 2, 2)), "lonely.pgm": np.ones((1, 2, 2))})
        assert run("eval", "--pred", tmp_path / "p", "--gt", tmp_path / "g", "--report", tmp_path / "r.csv") == 0
        err = capsys.readouterr().err
        assert "extra.pgm" in err and "lonely.pgm" in err
        assert len((tmp_path / "r.csv").read_text().splitlines()) == 3

    def test_all_unmatched_exit_2(self, tmp_path):
        _write_maps(tmp_path / "p", {"a.pgm": np.ones((1, 2, 2))})
        _write_maps(tmp_path / "g", {"b.pgm": np.ones((1, 2, 2))})
        assert run("eval", "--pred", tmp_path / "p", "--gt", tmp_path / "g", "--report", tmp_path / "r.csv") == 2
        assert not (tmp_path / "r.csv").exists()


# ---------------------------------------------------------------- global flags

def test_threads_env_overrides_flag(monkeypatch):
    seen = []
    monkeypatch.setattr(cli, "threadpool_limits", lambda limits: seen.append(limits) or _Null())
    monkeypatch.setenv("G2HF_THREADS", "3")
    assert run("--threads", "1", "selftest", "--filter", "block_order") == 0
    monkeypatch.delenv("G2HF_THREADS")
    assert run("--threads", "2", "selftest", "--filter", "block_order") == 0
    assert run("selftest", "--filter", "block_order") == 0
    assert seen == [3, 2]


class _Null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def test_seed_must_be_u64():
    with pytest.raises(SystemExit):
        cli.main(["--seed", "-1", "selftest"])


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "g2hf", "selftest", "--filter", "block_order"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "1/1 checks passed" in proc.stdout


def test_forward_reads_what_the_library_computes(pair, tmp_path):
    run("--toy", "forward", "--image", pair[0], "--out", tmp_path / "s1.pgm")
    image = read_pnm(pair[0])
    s1 = net.forward(Tensor(image), net.init_weights(Rng(42), NetConfig.toy()), NetConfig.toy()).s1.data
    np.testing.assert_array_equal(read_pnm(tmp_path / "s1.pgm"), np.round(s1 * 255) / 255)
