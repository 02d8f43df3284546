import hashlib
from pathlib import Path

import numpy as np
import pytest

from levelcurves.cli import (
    RunConfig,
    StudyResult,
    build_parser,
    emit_plot_data,
    main,
    parse_config,
    render_config,
    replay,
    run_study,
)

SPEC_BLOCK = """
[multipole]
ell = 0
c0 = 1.0
beta = 1.0
alpha = 2.0

[multipole]
ell = 2
c0 = 0.8
beta = 0.4
"""

MEAN_CFG = """
study = mean-length
seed = 7
replicates = 60
mesh_level = 3
level = 0.5
""" + SPEC_BLOCK

BERRY_CFG = """
study = berry-profile
seed = 11
replicates = 120
dt = 0.5
horizon = 60
u_grid = 0.0, 0.4, 0.8
[multipole]
ell = 0
c0 = 1.0
beta = 1.0
alpha = 2.2
[multipole]
ell = 1
c0 = 1.5
beta = 0.2
"""


# ----------------------------------------------------------------------
# Config parsing
# ----------------------------------------------------------------------

def test_parse_and_round_trip():
    cfg = parse_config(MEAN_CFG)
    assert cfg.study == "mean-length"
    assert cfg.seed == 7
    assert cfg.spectrum.ells == (0, 2)
    assert parse_config(render_config(cfg)) == cfg


def test_parse_errors_name_key_and_line():
    with pytest.raises(ValueError, match=r"beta.*\(0, 1\]"):
        parse_config("study = mean-length\nlevel = 0\n[multipole]\n"
                     "ell = 0\nc0 = 1\nbeta = 1.5\nalpha = 2\n")
    with pytest.raises(ValueError, match="line 2.*'frobnicate'"):
        parse_config("study = mean-length\nfrobnicate = 3\n")
    with pytest.raises(ValueError, match="'replicates' expects int"):
        parse_config("study = mean-length\nreplicates = soon\n" + SPEC_BLOCK)
    with pytest.raises(ValueError, match="missing the 'study'"):
        parse_config(SPEC_BLOCK)
    with pytest.raises(ValueError, match="no \\[multipole\\]"):
        parse_config("study = mean-length\nlevel = 0.5\n")
    with pytest.raises(ValueError, match="requires key 'horizon'"):
        parse_config("study = limit-law\nlevel = 0.0\n" + SPEC_BLOCK)
    with pytest.raises(ValueError, match="t_ladder"):
        parse_config("study = variance-scaling\nlevel = 0.0\n" + SPEC_BLOCK)


def test_validation_bounds():
    with pytest.raises(ValueError, match="mesh_level"):
        parse_config("study = mean-length\nlevel = 0\nmesh_level = 9\n"
                     + SPEC_BLOCK)
    with pytest.raises(ValueError, match="ks_alpha"):
        parse_config("study = mean-length\nlevel = 0\nks_alpha = 2\n"
                     + SPEC_BLOCK)


# ----------------------------------------------------------------------
# Studies through run_study
# ----------------------------------------------------------------------

def test_mean_length_study_and_manifest(tmp_path):
    cfg = parse_config(MEAN_CFG)
    res = run_study(cfg, out_dir=tmp_path)
    assert res.passed
    table = (tmp_path / "tables" / "mean_length.csv").read_text()
    lines = table.splitlines()
    assert lines[0].startswith("# levelcurves")
    assert "config sha256:" in lines[0]
    assert lines[1] == "u,replicates,empirical_mean,se,kac_rice,z_score"
    manifest = (tmp_path / "manifest.txt").read_text()
    assert manifest.splitlines()[0] == "levelcurves-manifest v1"
    assert "table: mean_length.csv sha256:" in manifest
    digest = hashlib.sha256(table.encode()).hexdigest()
    assert digest in manifest


def test_study_reruns_are_byte_identical(tmp_path):
    cfg = parse_config(BERRY_CFG)
    r1 = run_study(cfg)
    r2 = run_study(cfg)
    assert r1.tables == r2.tables


def test_workers_do_not_change_bytes():
    cfg = parse_config(BERRY_CFG)
    serial = run_study(cfg)
    parallel = run_study(cfg, workers=2)
    assert serial.tables == parallel.tables


def test_replay_round_trip(tmp_path):
    cfg = parse_config(BERRY_CFG)
    run_study(cfg, out_dir=tmp_path / "orig")
    result, mismatches = replay(tmp_path / "orig" / "manifest.txt",
                                tmp_path / "redo")
    assert mismatches == []
    orig = (tmp_path / "orig" / "tables" / "berry_profile.csv").read_bytes()
    redo = (tmp_path / "redo" / "tables" / "berry_profile.csv").read_bytes()
    assert orig == redo


def test_replay_detects_tampering(tmp_path):
    cfg = parse_config(MEAN_CFG)
    run_study(cfg, out_dir=tmp_path)
    manifest_path = tmp_path / "manifest.txt"
    text = manifest_path.read_text().replace(
        "mean_length.csv sha256:", "mean_length.csv sha256:0")
    manifest_path.write_text(text)
    _, mismatches = replay(manifest_path, tmp_path / "redo")
    assert mismatches == ["mean_length.csv"]
    with pytest.raises(ValueError):
        replay(tmp_path / "tables" / "mean_length.csv", tmp_path / "x")


def test_emit_plot_data(tmp_path):
    cfg = parse_config(BERRY_CFG)
    res = run_study(cfg)
    written = emit_plot_data(res, tmp_path)
    names = sorted(p.name for p in written)
    assert names == ["fig_berry.csv"]
    text = (tmp_path / "fig_berry.csv").read_text()
    assert "# predicted_cancellation" in text
    assert text.splitlines()[2] == "u,variance,long_constant"


def test_scaling_study_emits_fit(tmp_path):
    cfg_text = """
study = variance-scaling
seed = 3
replicates = 600
dt = 0.5
functional = chaos1
level = 1.0
t_ladder = 250, 500, 1000, 2000
[multipole]
ell = 0
c0 = 1.0
beta = 0.4
[multipole]
ell = 2
c0 = 0.4
beta = 0.9
"""
    cfg = parse_config(cfg_text)
    res = run_study(cfg, out_dir=tmp_path)
    assert "scaling_fit.csv" in res.tables
    assert "fig_scaling.csv" in res.tables
    fig = res.tables["fig_scaling.csv"]
    assert fig.splitlines()[1].startswith("# fitted_slope = ")
    assert res.checks.get("exponent_within_0.1") is True


# ----------------------------------------------------------------------
# Entry point + exit codes
# ----------------------------------------------------------------------

def test_main_success_and_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.txt"
    cfg_path.write_text(MEAN_CFG)
    code = main(["mean-length", "--config", str(cfg_path), "--out",
                 str(tmp_path / "out"), "--replicates", "40"])
    out = capsys.readouterr().out
    assert code == 0
    assert "check kac_rice_z_u=0.5: pass" in out

    # invalid config -> exit 1
    bad = tmp_path / "bad.txt"
    bad.write_text("study = mean-length\nlevel = 0.5\n")
    assert main(["mean-length", "--config", str(bad),
                 "--out", str(tmp_path / "o2")]) == 1

    # a level-0 icosahedron cannot resolve the level curves: the Kac-Rice
    # z-check fails decisively -> exit 2
    coarse = tmp_path / "coarse.txt"
    coarse.write_text(MEAN_CFG.replace("mesh_level = 3", "mesh_level = 0")
                      .replace("replicates = 60", "replicates = 1200"))
    assert main(["mean-length", "--config", str(coarse),
                 "--out", str(tmp_path / "o3")]) == 2


def test_main_replay(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.txt"
    cfg_path.write_text(MEAN_CFG)
    assert main(["mean-length", "--config", str(cfg_path),
                 "--out", str(tmp_path / "out")]) == 0
    assert main(["replay", "--manifest", str(tmp_path / "out" / "manifest.txt"),
                 "--out", str(tmp_path / "redo")]) == 0
    out = capsys.readouterr().out
    assert "replay: byte-identical" in out


def test_parser_rejects_unknown_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["frobnicate"])
