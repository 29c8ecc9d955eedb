import math
import subprocess
import sys

import numpy as np
import pytest

from rldp import cli
from rldp.cli import Replication, emit_cdf, load_spec, main, mean_ci

SMALL = """
[experiment]
replications = 3
seed = 5

[simulation]
n = 30
a_hat = 4.0
sources = 4
duration = 3.0
payload_len = 16
rho = 0.1
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def simulate(tmp_path, text, out="out", *extra):
    cfg = write(tmp_path, text, f"{out}.ini")
    code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


# -- schema -------------------------------------------------------------------


def test_golden_headers(tmp_path):
    code, out = simulate(tmp_path, SMALL + "\n[sweep]\nomega = 0.5,1.0\npolicy = probabilistic\n")
    assert code == 0
    assert (out / "summary.csv").read_text().splitlines()[0] == (
        "point,omega,policy,replications,pdr_mean,pdr_ci95,"
        "forwards_per_native_mean,forwards_per_native_ci95,status"
    )
    assert (out / "cdf.csv").read_text().splitlines()[0] == (
        "point,delay_bound_seconds,cumulative_pdr_mean,ci_halfwidth"
    )
    assert main(["analyze", "--out", str(tmp_path / "an")]) == 0
    assert (tmp_path / "an" / "analysis.csv").read_text().splitlines()[0] == "phi,omega,rho,n,g,D_R,D_X"
    vcfg = write(tmp_path, "[validate]\ntrials = 50\nn_nodes = 30\n", "v.ini")
    assert main(["validate-pmf", "--config", str(vcfg), "--out", str(tmp_path / "vp")]) == 0
    assert (tmp_path / "vp" / "copy_fit.csv").read_text().splitlines()[0] == "omega,a_hat,H,n,samples,phi,d_TV"


def test_sweep_is_cartesian_and_ordered(tmp_path):
    code, out = simulate(tmp_path, SMALL + "\n[sweep]\nrho = 0.0,0.2\nomega = 0.5,1.0\npolicy = probabilistic\n")
    rows = [r.split(",")[:4] for r in (out / "summary.csv").read_text().splitlines()[1:]]
    assert [r[1:3] for r in rows] == [
        ["0.0", "0.5"], ["0.0", "1.0"], ["0.2", "0.5"], ["0.2", "1.0"],
    ]


# -- determinism and manifest -------------------------------------------------


def test_rerun_and_manifest_reproduce_bytes(tmp_path):
    text = SMALL + "\n[sweep]\nomega = 0.6,0.9\npolicy = probabilistic\n"
    _, a = simulate(tmp_path, text, "a")
    _, b = simulate(tmp_path, text, "b")
    _, c = simulate(tmp_path, text, "c", "--jobs", "2")
    _, d = simulate(tmp_path, (a / "manifest.ini").read_text(), "d")
    for name in ("summary.csv", "cdf.csv", "manifest.ini"):
        ref = (a / name).read_bytes()
        assert ref == (b / name).read_bytes() == (c / name).read_bytes() == (d / name).read_bytes()


def test_seed_flag_overrides_and_changes_output(tmp_path):
    _, a = simulate(tmp_path, SMALL, "a")
    _, b = simulate(tmp_path, SMALL, "b", "--seed", "99")
    assert "seed = 99" in (b / "manifest.ini").read_text()
    assert (a / "summary.csv").read_bytes() != (b / "summary.csv").read_bytes()


def test_replication_seeds_are_base_plus_index(tmp_path, monkeypatch):
    seen = []
    real = cli._replicate
    monkeypatch.setattr(cli, "_replicate", lambda cfg: seen.append(cfg.seed) or real(cfg))
    simulate(tmp_path, SMALL + "\n[sweep]\nrho = 0.0,0.3\n")
    assert seen == [5, 6, 7, 5, 6, 7]


def test_single_replication_has_zero_width(tmp_path):
    code, out = simulate(tmp_path, SMALL.replace("replications = 3", "replications = 1"))
    row = (out / "summary.csv").read_text().splitlines()[1].split(",")
    assert code == 0 and row[3] == "0.0" and row[5] == "0.0"


def test_student_t_interval():
    m, h = mean_ci([1.0, 2.0, 4.0])
    s = np.std([1.0, 2.0, 4.0], ddof=1)
    assert m == pytest.approx(7 / 3)
    assert h == pytest.approx(4.302652729911275 * s / math.sqrt(3))


# -- cdf ----------------------------------------------------------------------


def test_cdf_empty_metrics_header_only(tmp_path):
    code, out = simulate(tmp_path, SMALL.replace("rho = 0.1", "rho = 1.0"))
    assert code == 0
    assert (out / "cdf.csv").read_text() == "point,delay_bound_seconds,cumulative_pdr_mean,ci_halfwidth\n"
    assert emit_cdf([]) == []


def test_cdf_single_delivery_step():
    rep = Replication(0.25, 1.0, 4, np.array([0.01]))
    rows = emit_cdf([rep], points=5)
    assert len(rows) == 1 and rows[0][1:3] == [0.01, 0.25]
    two = emit_cdf([rep, Replication(0.0, 1.0, 4, np.array([1e-3, 1e-3]) * 0 + 0.02)], points=6)
    bounds = [r[1] for r in two]
    assert bounds == sorted(bounds) and bounds[0] == 0.01 and bounds[-1] == 0.02
    assert all(r[2] == pytest.approx((0.25 + (0.5 if r[1] >= 0.02 else 0.0)) / 2) for r in two)


def test_cdf_matches_pooled_recount():
    rng = np.random.default_rng(0)
    reps = []
    for _ in range(4):
        d = np.sort(rng.exponential(0.01, int(rng.integers(5, 40))))
        reps.append(Replication(len(d) / 50, 1.0, 50, d))
    rows = emit_cdf(reps, points=12)
    grid = [r[1] for r in rows]
    assert np.allclose(np.diff(np.log(grid)), np.log(grid[1] / grid[0]))
    for _, b, m, _h in rows:
        hand = np.mean([sum(x <= b for x in r.delays) / 50 for r in reps])
        assert m == pytest.approx(hand)
    assert rows[-1][2] == pytest.approx(np.mean([r.pdr for r in reps]))


def test_cdf_final_row_equals_summary_pdr(tmp_path):
    _, out = simulate(tmp_path, SMALL)
    pdr = float((out / "summary.csv").read_text().splitlines()[1].split(",")[2])
    last = float((out / "cdf.csv").read_text().splitlines()[-1].split(",")[2])
    assert last == pytest.approx(pdr)


# -- trend ----------------------------------------------------------------------


def test_gossip_pdr_nondecreasing_in_omega(tmp_path):
    # default 20 replications, base seed 0
    text = """
[simulation]
n = 100
density = sparse
policy = probabilistic
sources = 5
duration = 2.0
payload_len = 8
[sweep]
omega = 0.3,0.5,0.7,0.9
"""
    code, out = simulate(tmp_path, text)
    pdr = [float(r.split(",")[3]) for r in (out / "summary.csv").read_text().splitlines()[1:]]
    assert code == 0 and pdr == sorted(pdr)


# -- errors ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "text",
    [
        "[simulation]\nrho = 2\n",
        "[simulation]\nwarp = 9\n",
        "[nonsense]\na = 1\n",
        "[sweep]\nbogus = 1,2\n",
        "[sweep]\nomega = 0.5,abc\n",
        "[experiment]\nreplications = 0\n",
        "no section header\n",
        "[mobility]\nmodel = random-waypoint\nv_min = 0\n",
        "[sweep]\nmobility.v_max = 0.5\n[mobility]\nmodel = random-waypoint\nv_min = 1\nwarm_up = 1\n",
    ],
)
def test_config_errors_exit_2(tmp_path, text, capsys):
    code, _ = simulate(tmp_path, text)
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exit_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 2


def test_bad_analysis_and_validate_values(tmp_path):
    a = write(tmp_path, "[analysis]\nphi = 1.5\n", "a.ini")
    assert main(["analyze", "--config", str(a), "--out", str(tmp_path / "o")]) == 2
    v = write(tmp_path, "[validate]\ntrials = 0\n", "v.ini")
    assert main(["validate-pmf", "--config", str(v), "--out", str(tmp_path / "o")]) == 2


def test_runtime_failure_recorded_and_exit_3(tmp_path, monkeypatch):
    real = cli._replicate

    def flaky(cfg):
        if cfg.omega == 0.5:
            raise RuntimeError("boom")
        return real(cfg)

    monkeypatch.setattr(cli, "_replicate", flaky)
    code, out = simulate(tmp_path, SMALL + "\n[sweep]\nomega = 0.5,0.9\npolicy = probabilistic\n")
    assert code == 3
    rows = (out / "summary.csv").read_text().splitlines()[1:]
    assert rows[0].endswith("failed: RuntimeError: boom") and rows[1].endswith(",ok")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    _, out = simulate(tmp_path, SMALL)
    assert sorted(p.name for p in out.iterdir()) == ["cdf.csv", "manifest.ini", "summary.csv"]


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "rldp", "analyze", "--out", str(tmp_path / "m")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "m" / "analysis.csv").exists()


def test_analyze_rows_match_library(tmp_path):
    cfg = write(tmp_path, "[analysis]\nphi = 0.1\nomega = 1.0\nrho = 0.2\nn = 4\ng = 30\n")
    main(["analyze", "--config", str(cfg), "--out", str(tmp_path / "o")])
    row = (tmp_path / "o" / "analysis.csv").read_text().splitlines()[1].split(",")
    from rldp.analysis import delivery_rates

    d_r, d_x = delivery_rates(0.1, 1.0, 0.2, 4, 30)
    assert float(row[5]) == d_r and float(row[6]) == d_x


def test_spec_defaults_without_config():
    spec = load_spec("", "simulate")
    assert spec.replications == 20 and spec.base.n == 100 and spec.points() == [{}]
