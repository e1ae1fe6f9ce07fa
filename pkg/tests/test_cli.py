import json

import numpy as np
import pytest

from factordta import cli
from factordta.copulas import CopulaFamily
from factordta.likelihood import EvaluationError, ModelSpec, ParamSet
from factordta.margins import MarginKind
from factordta.simulation import SimDesign, replicate_rng, simulate_dataset
from factordta.dataio import write_dataset

BVN = CopulaFamily.BVN
FRANK = CopulaFamily.FRANK
CLN0 = CopulaFamily.CLAYTON0
CLN90 = CopulaFamily.CLAYTON90
CLN180 = CopulaFamily.CLAYTON180
CLN270 = CopulaFamily.CLAYTON270


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    """A moderate synthetic dataset the fast fits converge on."""
    design = SimDesign(
        N=12,
        spec=ModelSpec(T=2, margin_kind=MarginKind.NORMAL_LOGIT,
                       linking_copulas=(CLN0, CLN0, CLN270, CLN270)),
        truth=ParamSet(pi1=(0.75, 0.7), pi0=(0.8, 0.9),
                       delta1=(0.7, 0.7), delta0=(0.9, 0.8),
                       tau=(0.5, 0.5, -0.3, -0.3)),
        replicates=2, seed=9,
    )
    d = simulate_dataset(design, replicate_rng(design.seed, 0))
    path = tmp_path_factory.mktemp("data") / "dataset.csv"
    write_dataset(d, path)
    return path


@pytest.fixture()
def design_json(tmp_path):
    cfg = {
        "N": 10, "margin": "normal",
        "copulas": ["cln0", "cln0", "cln270", "cln270"],
        "pi1": [0.75, 0.7], "pi0": [0.8, 0.9],
        "delta1": [0.7, 0.7], "delta0": [0.9, 0.8],
        "tau": [0.5, 0.5, -0.3, -0.3],
        "replicates": 3, "seed": 17,
    }
    path = tmp_path / "design.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


# --- copula shorthand grammar ---------------------------------------------------

def test_shorthand_single_family():
    assert cli._parse_copulas("bvn", 2) == (BVN,) * 4
    assert cli._parse_copulas("frank", 3) == (FRANK,) * 6
    assert cli._parse_copulas("cln90", 1) == (CLN90, CLN90)


def test_shorthand_blockwise_pair():
    assert cli._parse_copulas("cln0-270", 2) == (CLN0, CLN0, CLN270, CLN270)
    assert cli._parse_copulas("cln180-270", 2) == (CLN180, CLN180, CLN270, CLN270)
    assert cli._parse_copulas("cln0-90", 1) == (CLN0, CLN90)
    assert cli._parse_copulas("frank-bvn", 2) == (FRANK, FRANK, BVN, BVN)


def test_explicit_slot_list():
    got = cli._parse_copulas("cln0, bvn, cln270, frank", 2)
    assert got == (CLN0, BVN, CLN270, FRANK)


def test_shorthand_rejects_bad_tokens():
    with pytest.raises(ValueError, match="unknown copula family"):
        cli._parse_copulas("gumbel", 2)
    with pytest.raises(ValueError, match="unknown copula family"):
        cli._parse_copulas("cln0-45", 2)
    with pytest.raises(ValueError, match="one shorthand token or 4"):
        cli._parse_copulas("cln0,cln270", 2)


def test_grid_specs_cross_product():
    specs = cli._grid_specs("normal,beta", "bvn,cln0-270", 2)
    assert len(specs) == 4
    assert specs[0].margin_kind is MarginKind.NORMAL_LOGIT
    assert specs[0].linking_copulas == (BVN,) * 4
    assert specs[3].margin_kind is MarginKind.BETA_IDENTITY
    assert specs[3].linking_copulas == (CLN0, CLN0, CLN270, CLN270)
    with pytest.raises(ValueError, match="unknown margin"):
        cli._grid_specs("cauchy", "bvn", 2)


# --- validate -------------------------------------------------------------------

def test_validate_ok(data_csv, capsys):
    assert cli.main(["validate", "--data", str(data_csv)]) == 0
    assert capsys.readouterr().out.strip() == "ok: 12 studies, 2 tests"


def test_validate_rejects_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(
        "study,test,tp,n_diseased,tn,n_nondiseased\n1,1,12,10,5,20\n",
        encoding="utf-8",
    )
    assert cli.main(["validate", "--data", str(bad)]) == 2
    assert "tp=12 exceeds" in capsys.readouterr().err


# --- fit ------------------------------------------------------------------------

def test_fit_writes_csv_outputs(data_csv, tmp_path, capsys):
    out = tmp_path / "fit"
    code = cli.main([
        "fit", "--data", str(data_csv), "--nq", "7", "--out", str(out),
    ])
    assert code == 0
    assert (out / "fit.csv").exists()
    assert (out / "convergence.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert manifest["config"]["nq"] == 7
    assert "loglik:" in capsys.readouterr().out


def test_fit_json_format(data_csv, tmp_path):
    out = tmp_path / "fitj"
    code = cli.main([
        "fit", "--data", str(data_csv), "--nq", "7",
        "--format", "json", "--out", str(out),
    ])
    assert code == 0
    payload = json.loads((out / "fit.json").read_text())
    assert len(payload["parameters"]) == 12


def test_fit_explicit_slots_and_margin(data_csv, tmp_path):
    out = tmp_path / "fitx"
    code = cli.main([
        "fit", "--data", str(data_csv), "--nq", "7",
        "--margin", "normal", "--copulas", "cln0,cln0,cln270,cln270",
        "--out", str(out),
    ])
    assert code == 0


def test_fit_strict_nonconvergence_exit_4(data_csv, tmp_path, capsys):
    out = tmp_path / "strict"
    code = cli.main([
        "fit", "--data", str(data_csv), "--nq", "7",
        "--max-iter", "2", "--strict", "--out", str(out),
    ])
    assert code == 4
    assert "did not converge" in capsys.readouterr().err
    # without --strict the same run reports but exits clean
    assert cli.main([
        "fit", "--data", str(data_csv), "--nq", "7",
        "--max-iter", "2", "--out", str(out),
    ]) == 0


def test_fit_unknown_tokens_exit_2(data_csv, tmp_path, capsys):
    assert cli.main([
        "fit", "--data", str(data_csv), "--margin", "weibull",
        "--out", str(tmp_path / "x"),
    ]) == 2
    assert "unknown margin" in capsys.readouterr().err
    assert cli.main([
        "fit", "--data", str(data_csv), "--copulas", "gaussian",
        "--out", str(tmp_path / "x"),
    ]) == 2


def test_numerical_failure_exit_3(data_csv, tmp_path, capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise EvaluationError("pmf underflow")

    monkeypatch.setattr(cli, "fit", boom)
    code = cli.main([
        "fit", "--data", str(data_csv), "--out", str(tmp_path / "x"),
    ])
    assert code == 3
    assert "numerical error" in capsys.readouterr().err

    def singular(*args, **kwargs):
        raise np.linalg.LinAlgError("singular matrix")

    monkeypatch.setattr(cli, "fit", singular)
    assert cli.main([
        "fit", "--data", str(data_csv), "--out", str(tmp_path / "x"),
    ]) == 3


# --- fit-grid -------------------------------------------------------------------

def test_fit_grid_outputs(data_csv, tmp_path, capsys):
    out = tmp_path / "grid"
    code = cli.main([
        "fit-grid", "--data", str(data_csv), "--nq", "7",
        "--margin", "normal", "--copulas", "bvn,cln0-270",
        "--out", str(out),
    ])
    assert code == 0
    lines = (out / "fit_grid.csv").read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[1].split(",")[0] == "1"
    assert (out / "fit.csv").exists()  # best spec's parameter table
    assert "best:" in capsys.readouterr().out


# --- sroc -----------------------------------------------------------------------

def test_sroc_outputs(data_csv, tmp_path):
    out = tmp_path / "sroc"
    code = cli.main([
        "sroc", "--data", str(data_csv), "--nq", "7",
        "--quantiles", "0.5", "--grid-size", "11", "--out", str(out),
    ])
    assert code == 0
    for t in (1, 2):
        for d in ("x1_on_x0", "x0_on_x1"):
            assert (out / f"sroc_test{t}_q0.5_{d}.csv").exists()
        assert (out / f"contour_test{t}.csv").exists()
    assert (out / "fit.csv").exists()
    curve = (out / "sroc_test1_q0.5_x1_on_x0.csv").read_text().splitlines()
    assert len(curve) == 1 + 11


def test_sroc_pair_copula_override(data_csv, tmp_path):
    out = tmp_path / "sroc2"
    code = cli.main([
        "sroc", "--data", str(data_csv), "--nq", "7",
        "--quantiles", "0.25,0.75", "--grid-size", "9",
        "--pair-copula", "bvn", "--out", str(out),
    ])
    assert code == 0
    assert (out / "sroc_test2_q0.75_x0_on_x1.csv").exists()


def test_sroc_rejects_bad_quantiles(data_csv, tmp_path, capsys):
    assert cli.main([
        "sroc", "--data", str(data_csv), "--quantiles", " , ",
        "--out", str(tmp_path / "x"),
    ]) == 2
    assert "at least one" in capsys.readouterr().err


# --- simulate -------------------------------------------------------------------

def test_simulate_reproducible(design_json, tmp_path):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert cli.main(["simulate", "--truth", str(design_json),
                     "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--truth", str(design_json),
                     "--out", str(out2)]) == 0
    assert (out1 / "dataset.csv").read_bytes() == (out2 / "dataset.csv").read_bytes()
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["seed"] == 17


def test_simulate_seed_and_replicate_vary_output(design_json, tmp_path):
    base, seeded, rep = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    cli.main(["simulate", "--truth", str(design_json), "--out", str(base)])
    cli.main(["simulate", "--truth", str(design_json), "--seed", "99",
              "--out", str(seeded)])
    cli.main(["simulate", "--truth", str(design_json), "--replicate", "5",
              "--out", str(rep)])
    a = (base / "dataset.csv").read_bytes()
    assert a != (seeded / "dataset.csv").read_bytes()
    assert a != (rep / "dataset.csv").read_bytes()
    assert json.loads((seeded / "manifest.json").read_text())["seed"] == 99


def test_simulate_missing_config_exit_2(tmp_path, capsys):
    assert cli.main(["simulate", "--truth", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "x")]) == 2


# --- sim-study ------------------------------------------------------------------

def test_sim_study_outputs(design_json, tmp_path, capsys):
    out = tmp_path / "study"
    code = cli.main([
        "sim-study", "--truth", str(design_json), "--nq", "7",
        "--no-se", "--out", str(out),
    ])
    assert code == 0
    csv_path = out / "sim_report_normal_cln0-cln0-cln270-cln270.csv"
    lines = csv_path.read_text().strip().splitlines()
    assert [ln.split(",")[0] for ln in lines] == [
        "stat", "bias", "sd", "sqrt_mean_var", "rmse",
    ]
    meta = json.loads(
        (out / "sim_report_normal_cln0-cln0-cln270-cln270.json").read_text()
    )
    assert meta["replicates"] == 3
    assert "converged" in capsys.readouterr().out


def test_sim_study_overrides_and_fit_spec(design_json, tmp_path):
    out = tmp_path / "study2"
    code = cli.main([
        "sim-study", "--truth", str(design_json), "--nq", "7",
        "--replicates", "2", "--seed", "23", "--copulas", "bvn",
        "--no-se", "--out", str(out),
    ])
    assert code == 0
    assert (out / "sim_report_normal_bvn-bvn-bvn-bvn.csv").exists()
    meta = json.loads((out / "sim_report_normal_bvn-bvn-bvn-bvn.json").read_text())
    assert meta["replicates"] == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 23


def test_sim_study_margin_only_override(design_json, tmp_path):
    out = tmp_path / "study3"
    code = cli.main([
        "sim-study", "--truth", str(design_json), "--nq", "7",
        "--replicates", "2", "--margin", "beta", "--no-se",
        "--out", str(out),
    ])
    assert code == 0
    # generating slot families kept, margin swapped
    assert (out / "sim_report_beta_cln0-cln0-cln270-cln270.csv").exists()


# --- parser ---------------------------------------------------------------------

def test_missing_subcommand_raises_system_exit():
    with pytest.raises(SystemExit):
        cli.main([])


def test_entry_point_installed():
    import shutil

    assert shutil.which("factordta") is not None
