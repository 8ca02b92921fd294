"""CLI subcommands: smoke runs, provenance files and determinism."""

import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from hestoncal.cli import main

THETA = "0.25,-0.5,0.10,0.4,0.10"


def _run(args):
    rc = main(args)
    assert rc == 0


def test_mesh_info(capsys):
    _run(["mesh-info", "--n-nu", "8", "--n-x", "8"])
    out = capsys.readouterr().out
    assert "nodes" in out and "triangles" in out


def test_price_detailed_american(tmp_path, capsys):
    _run(
        [
            "price",
            "--backend",
            "DetailedAm",
            "--theta",
            THETA,
            "--strike",
            "1.0",
            "--maturity",
            "0.5",
            "--n-nu",
            "12",
            "--n-x",
            "12",
            "--steps",
            "24",
            "--horizon",
            "1.0",
            "--out-dir",
            str(tmp_path),
        ]
    )
    out = capsys.readouterr().out
    price = float(out.strip().split()[-1])
    assert 0.0 < price < 1.0


def test_price_closed_form(tmp_path, capsys):
    _run(
        [
            "price",
            "--backend",
            "DasClosedForm",
            "--theta",
            THETA,
            "--strike",
            "1.0",
            "--maturity",
            "0.5",
            "--out-dir",
            str(tmp_path),
        ]
    )
    price = float(capsys.readouterr().out.strip().split()[-1])
    assert 0.0 < price < 1.0


def test_synth_writes_csv_and_runconfig(tmp_path):
    _run(
        [
            "synth",
            "--backend",
            "DasClosedForm",
            "--theta",
            THETA,
            "--output",
            "ladder.csv",
            "--out-dir",
            str(tmp_path),
        ]
    )
    csv_path = tmp_path / "ladder.csv"
    assert csv_path.exists()
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "maturity_years,strike,bid,ask,price,style"
    assert len(lines) == 66  # header + 65 quotes
    cfg = json.loads((tmp_path / "ladder_runconfig.json").read_text())
    assert cfg["command"] == "synth"
    assert tuple(cfg["x0"] or ()) == ()


def _make_ladder(tmp_path, style="european"):
    backend = "DasClosedForm"
    out = f"ladder_{style}.csv"
    _run(
        [
            "synth",
            "--backend",
            backend,
            "--theta",
            THETA,
            "--output",
            out,
            "--out-dir",
            str(tmp_path),
        ]
    )
    return tmp_path / out


def test_calibrate_closed_form_round_trip(tmp_path):
    quotes = _make_ladder(tmp_path)
    _run(
        [
            "calibrate",
            "--backend",
            "DasClosedForm",
            "--quotes",
            str(quotes),
            "--x0",
            "0.3,-0.4,0.15,0.8,0.15",
            "--max-iter",
            "60",
            "--stem",
            "cf",
            "--out-dir",
            str(tmp_path),
        ]
    )
    summary = (tmp_path / "cf_summary.txt").read_text()
    assert "xi" in summary and "status" in summary
    res = (tmp_path / "cf_residuals.csv").read_text().splitlines()
    assert res[0] == "maturity_years,strike,observed,model,abs_rel_err"
    assert len(res) == 66
    cfg = json.loads((tmp_path / "cf_runconfig.json").read_text())
    assert cfg["backend"] == "DasClosedForm"


def test_deamericanize_subcommand(tmp_path):
    # synthesize American-looking quotes via the closed form plus a premium
    quotes = _make_ladder(tmp_path)
    text = quotes.read_text().splitlines()
    fixed = [text[0]]
    for line in text[1:]:
        parts = line.split(",")
        parts[-1] = "american"
        fixed.append(",".join(parts))
    am = tmp_path / "am.csv"
    am.write_text("\n".join(fixed) + "\n")
    _run(
        [
            "deamericanize",
            "--quotes",
            str(am),
            "--tree-steps",
            "100",
            "--output",
            "pseudo.csv",
            "--out-dir",
            str(tmp_path),
        ]
    )
    pseudo = (tmp_path / "pseudo.csv").read_text().splitlines()
    assert pseudo[0] == (
        "maturity_years,strike,observed_price,sigma_star,pseudo_price,invertible"
    )
    assert 1 < len(pseudo) <= 66
    for line in pseudo[1:]:
        row = line.split(",")
        assert float(row[4]) <= float(row[2]) + 1e-12  # pseudo <= observed


def test_build_basis_and_reduced_price(tmp_path, capsys):
    common = [
        "--n-nu",
        "10",
        "--n-x",
        "10",
        "--steps",
        "10",
        "--horizon",
        "1.0",
        "--out-dir",
        str(tmp_path),
    ]
    _run(
        [
            "build-basis",
            "--style",
            "american",
            "--n-max",
            "8",
            "--train-counts",
            "2",
            "1",
            "1",
            "2",
            "1",
            "--output",
            "model.npz",
        ]
        + common
    )
    model = tmp_path / "model.npz"
    assert model.exists()
    _run(
        [
            "price",
            "--backend",
            "ReducedAm",
            "--basis",
            str(model),
            "--theta",
            THETA,
            "--strike",
            "1.0",
            "--maturity",
            "0.5",
        ]
        + common
    )
    price = float(capsys.readouterr().out.strip().split()[-1])
    assert 0.0 < price < 1.0


def test_report_subcommand(tmp_path, capsys):
    res = tmp_path / "r.csv"
    res.write_text(
        "maturity_years,strike,observed,model,abs_rel_err\n"
        "0.5,1.0,0.1,0.101,0.01\n"
        "1.0,0.9,0.05,0.049,0.02\n"
    )
    _run(["report", "--residuals", str(res)])
    out = capsys.readouterr().out
    assert "max" in out


def test_determinism_bit_identical_outputs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        d.mkdir()
        _run(
            [
                "synth",
                "--backend",
                "DasClosedForm",
                "--theta",
                THETA,
                "--output",
                "ladder.csv",
                "--out-dir",
                str(d),
            ]
        )
        _run(
            [
                "calibrate",
                "--backend",
                "DasClosedForm",
                "--quotes",
                str(d / "ladder.csv"),
                "--x0",
                "0.3,-0.4,0.15,0.8,0.15",
                "--max-iter",
                "25",
                "--stem",
                "cf",
                "--out-dir",
                str(d),
            ]
        )
    assert filecmp.cmp(a / "ladder.csv", b / "ladder.csv", shallow=False)
    assert filecmp.cmp(a / "cf_residuals.csv", b / "cf_residuals.csv", shallow=False)
    assert filecmp.cmp(a / "cf_error_surface.csv", b / "cf_error_surface.csv", shallow=False)


def test_unknown_backend_rejected():
    with pytest.raises(SystemExit):
        main(["calibrate", "--backend", "Nonsense", "--quotes", "x.csv"])
