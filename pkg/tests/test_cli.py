"""Command line behaviour: help text, exit codes, config precedence, replay."""

import argparse
import json
from pathlib import Path

import numpy as np
import pytest

from helpers import static_video, translating_video
from mvsense import cli
from mvsense.codec import CodecConfig, encode
from mvsense.formats import read_mvf, read_pnm, write_rgb

SNAPSHOTS = Path(__file__).parent / "snapshots"
COMMANDS = sorted(cli.COMMANDS)


def _subparsers():
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return parser, sub.choices


def _help(argv, capsys, monkeypatch) -> str:
    monkeypatch.setenv("COLUMNS", "80")
    assert cli.main(argv) == 0
    return capsys.readouterr().out


@pytest.fixture
def run_cli(capsys):
    """Run ``mvsense`` in-process; returns (exit code, stdout, stderr)."""
    def run(*argv):
        code = cli.main([str(a) for a in argv])
        out = capsys.readouterr()
        return code, out.out, out.err
    return run


@pytest.fixture
def mvb(tmp_path):
    path = tmp_path / "in.mvb"
    video = translating_video(np.random.default_rng(7), (2, 0), n=12, w=48, h=32)
    path.write_bytes(encode(video, CodecConfig(gop_length=30, q=4, s=4)).data)
    return path


# --- help ------------------------------------------------------------------

@pytest.mark.parametrize("command", [None] + COMMANDS)
def test_help_matches_snapshot(command, capsys, monkeypatch):
    argv = ["--help"] if command is None else [command, "--help"]
    text = _help(argv, capsys, monkeypatch)
    expected = (SNAPSHOTS / f"{command or 'mvsense'}.txt").read_text()
    assert text == expected


@pytest.mark.parametrize("command", COMMANDS)
def test_help_documents_every_flag(command, capsys, monkeypatch):
    text = _help([command, "--help"], capsys, monkeypatch)
    _, subs = _subparsers()
    for act in subs[command]._actions:
        for opt in act.option_strings:
            assert opt in text
        assert act.help, f"{command}: {act.dest} has no help text"


def test_help_covers_every_subcommand():
    _, subs = _subparsers()
    assert set(subs) == {"gen", "encode", "decode", "extract-mv", "render", "activity", "bench",
                         "ssim-curve", "train", "eval", "fuse-eval", "cost", "report"}


# --- exit codes ------------------------------------------------------------

def test_missing_subcommand_is_usage_error(run_cli):
    code, _, err = run_cli()
    assert code == cli.EXIT_USAGE and "subcommand is required" in err


def test_unknown_flag_is_usage_error(run_cli, mvb, tmp_path):
    code, _, err = run_cli("render", mvb, tmp_path / "o", "--bogus", "1")
    assert code == cli.EXIT_USAGE and "--bogus" in err


def test_bad_interval_is_usage_error(run_cli, mvb, tmp_path):
    code, _, err = run_cli("render", mvb, tmp_path / "o", "--x", "0")
    assert code == cli.EXIT_USAGE and "interval must be >= 1" in err


def test_missing_input_is_data_error(run_cli, tmp_path):
    code, _, err = run_cli("decode", tmp_path / "absent.mvb", tmp_path / "out.rgb")
    assert code == cli.EXIT_DATA
    assert len(err.strip().splitlines()) == 1 and "does not exist" in err


def test_corrupt_stream_is_data_error(run_cli, mvb, tmp_path):
    bad = tmp_path / "bad.mvb"
    bad.write_bytes(mvb.read_bytes()[:40])
    code, _, err = run_cli("decode", bad, tmp_path / "out.rgb")
    assert code == cli.EXIT_DATA and len(err.strip().splitlines()) == 1


def test_render_interval_above_decode_interval_is_config_error(run_cli, mvb, tmp_path):
    code, _, err = run_cli("render", mvb, tmp_path / "o", "--x", "5", "--r", "10")
    assert code == cli.EXIT_CONFIG and "R=10 exceeds X=5" in err


def test_unknown_config_key_is_config_error(run_cli, mvb, tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("x = 5\nspeed = 3\n")
    code, _, err = run_cli("render", mvb, tmp_path / "o", "--config", conf)
    assert code == cli.EXIT_CONFIG and "speed" in err


def test_encode_without_size_is_config_error(run_cli, tmp_path):
    raw = tmp_path / "v.rgb"
    write_rgb(raw, static_video(n=2, w=16, h=16))
    code, _, err = run_cli("encode", raw, tmp_path / "v.mvb")
    assert code == cli.EXIT_CONFIG and "--width" in err


# --- config precedence and manifest ------------------------------------------

def test_flags_beat_config_file_beat_preset(run_cli, tmp_path):
    raw = tmp_path / "v.rgb"
    write_rgb(raw, translating_video(np.random.default_rng(7), (1, 0), n=4, w=32, h=32))
    conf = tmp_path / "enc.conf"
    conf.write_text("# codec settings\nq = 2\ngop = 7\n")
    code, _, _ = run_cli("encode", raw, tmp_path / "v.mvb", "--width", 32, "--height", 32,
                         "--config", conf, "--gop", 3)
    assert code == 0
    m = json.loads((tmp_path / "v.mvb.run.json").read_text())
    assert (m["config"]["gop"], m["config_sources"]["gop"]) == (3, "flag")
    assert (m["config"]["q"], m["config_sources"]["q"]) == (2, "config")
    assert (m["config"]["s"], m["config_sources"]["s"]) == (8, "preset")
    assert m["status"] == "ok" and m["seed"] == 0
    assert str(raw) in m["inputs"] and str(tmp_path / "v.mvb") in m["output_hashes"]


def test_run_manifest_path_flag(run_cli, mvb, tmp_path):
    where = tmp_path / "elsewhere" / "run.json"
    code, _, _ = run_cli("extract-mv", mvb, "--out", tmp_path / "f.mvf", "--run-manifest", where)
    assert code == 0
    assert json.loads(where.read_text())["subcommand"] == "extract-mv"


def test_predictions_disagreeing_on_truth_are_data_error(run_cli, tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("video_id,rater,predicted,truth,score_0,score_1\nv0,temporal,0,0,0.9,0.1\n")
    q = tmp_path / "b.csv"
    q.write_text("video_id,rater,predicted,truth,score_0,score_1\nv0,spatial,0,1,0.9,0.1\n")
    code, _, err = run_cli("fuse-eval", p, q, "--out-dir", tmp_path / "o")
    assert code == cli.EXIT_DATA and "ground truth" in err


# --- outputs -----------------------------------------------------------------

def test_extract_mv_on_static_stream_writes_all_zero_fields(run_cli, tmp_path):
    path = tmp_path / "static.mvb"
    path.write_bytes(encode(static_video(n=6, w=48, h=32), CodecConfig(gop_length=30, q=4, s=4)).data)
    code, out, _ = run_cli("extract-mv", path, "--out", tmp_path / "f.mvf")
    assert code == 0 and "residual bytes read 0" in out
    fields = read_mvf(tmp_path / "f.mvf")
    assert len(fields) == 5
    assert all(not np.any(f) for f in fields)


def test_render_with_sparse_full_decodes(run_cli, tmp_path):
    path = tmp_path / "in.mvb"
    video = translating_video(np.random.default_rng(7), (1, 0), n=60, w=32, h=32)
    path.write_bytes(encode(video, CodecConfig(gop_length=30, q=4, s=4)).data)
    code, _, _ = run_cli("render", "--x", 50, "--r", 10, "--a", 0, path, tmp_path / "out")
    assert code == 0
    names = sorted(p.name for p in (tmp_path / "out").glob("*.ppm"))
    assert names == [f"frame_{k:05d}.ppm" for k in (0, 10, 20, 30, 40, 50)]
    assert read_pnm(tmp_path / "out" / "frame_00010.ppm").shape == (3, 32, 32)
    m = json.loads((tmp_path / "out" / "render.run.json").read_text())
    assert m["config"] == {"x": 50, "r": 10, "a": 0.0, "seed": 0, "jobs": 1}


def test_cost_prints_the_table(run_cli, tmp_path):
    code, out, _ = run_cli("cost", "--preset", "table7", "--out", tmp_path / "cost.csv")
    assert code == 0
    assert out == (tmp_path / "cost.csv").read_text().replace("\r\n", "\n")
    assert (tmp_path / "cost.svg").is_file()


def test_decode_roundtrip_through_files(run_cli, tmp_path):
    video = translating_video(np.random.default_rng(7), (1, 0), n=3, w=32, h=16)
    raw = tmp_path / "v.rgb"
    write_rgb(raw, video)
    assert run_cli("encode", raw, tmp_path / "v.mvb", "--width", 32, "--height", 16, "--q", 1)[0] == 0
    assert run_cli("decode", tmp_path / "v.mvb", tmp_path / "back.rgb")[0] == 0
    assert (tmp_path / "back.rgb").read_bytes() == raw.read_bytes()


# --- replay ------------------------------------------------------------------

def test_replay_reproduces_outputs(run_cli, mvb, tmp_path):
    assert run_cli("activity", mvb, tmp_path / "act", "--scale", 1)[0] == 0
    manifest = tmp_path / "act" / "activity.run.json"
    code, out, _ = run_cli("--replay", manifest)
    assert code == 0 and "bit-exactly" in out


def test_replay_reports_changed_output(run_cli, mvb, tmp_path, monkeypatch):
    assert run_cli("extract-mv", mvb, "--out", tmp_path / "f.mvf")[0] == 0
    manifest = json.loads((tmp_path / "f.mvf.run.json").read_text())
    manifest["output_hashes"][str(tmp_path / "f.mvf")] = "0" * 64
    (tmp_path / "edited.json").write_text(json.dumps(manifest))
    code, _, err = run_cli("--replay", tmp_path / "edited.json")
    assert code == cli.EXIT_DATA and "replay differs" in err


def test_replay_of_garbage_is_data_error(run_cli, tmp_path):
    (tmp_path / "m.json").write_text("not json")
    assert run_cli("--replay", tmp_path / "m.json")[0] == cli.EXIT_DATA


def test_replay_takes_no_subcommand(run_cli, tmp_path):
    assert run_cli("--replay", tmp_path / "m.json", "cost")[0] == cli.EXIT_USAGE
