import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steermac.airsim import DEFAULT_PREAMBLE, MODES, random_packet, random_scenario
from steermac.cli import EXIT_DECODE, EXIT_INPUT, EXIT_OK, EXIT_OUTPUT, main
from steermac.config import ConfigError, format_config, parse_config, scenario_config

DEMO = """\
[scenario]
mode = aligned_t0
P = 24
seed = 3
extra_slots = 5
K = 8

[assignment]
M = 32

[noise]
sigma2 = 1e-6
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_run_demo(tmp_path, capsys):
    assert main(["run", "--config", _write(tmp_path, "demo.ini", DEMO)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "detected 8/8, SER 0" in out
    assert "slot  13: rank 8" in out
    assert "unit-circle roots:" in out


def test_run_verbose_prints_singular_values(tmp_path, capsys):
    assert main(["run", "--config", _write(tmp_path, "demo.ini", DEMO), "--verbose", "--seed", "4"]) == EXIT_OK
    assert "sv [" in capsys.readouterr().out


def test_missing_packet_length(tmp_path, capsys):
    text = DEMO.replace("P = 24\n", "")
    assert main(["run", "--config", _write(tmp_path, "bad.ini", text)]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "'P'" in err and "line 1, column 1" in err


def test_bad_value_location(tmp_path, capsys):
    text = DEMO.replace("P = 24", "P = twenty")
    assert main(["run", "--config", _write(tmp_path, "bad.ini", text)]) == EXIT_INPUT
    assert "line 3, column 5" in capsys.readouterr().err


def _packet_line(rng, P):
    return " ".join(str(int(x)) for x in random_packet(rng, P, DEFAULT_PREAMBLE).real)


def _ambiguous_config(factor2):
    rng = np.random.default_rng(1)
    txs = [(3, 2, 0), (9, 2, 7), (20, 1, 0)]
    parts = [f"[scenario]\nmode = misaligned\nP = 24\nfactor2 = {factor2}\nextra_slots = 2\n",
             "[assignment]\nM = 32\n", "[noise]\nsigma2 = 0\n"]
    for i, (k, slot, p) in enumerate(txs):
        parts.append(f"[transmitter.{i}]\nid = {k}\npacket = {_packet_line(rng, 24)}\n"
                     f"arrival_slot = {slot}\nsymbol_offset = {p}\n")
    return "\n".join(parts)


def test_run_ambiguity_without_factor2(tmp_path, capsys):
    assert main(["run", "--config", _write(tmp_path, "amb.ini", _ambiguous_config("false"))]) == EXIT_DECODE
    out = capsys.readouterr().out
    assert "ambiguous" in out.lower()
    assert "hypothesis 0:" in out and "hypothesis 1:" in out


def test_run_factor2_resolves(tmp_path, capsys):
    assert main(["run", "--config", _write(tmp_path, "amb.ini", _ambiguous_config("true"))]) == EXIT_OK
    assert "detected 3/3, SER 0" in capsys.readouterr().out


SWEEP = """\
[scenario]
mode = aligned_t0
P = 24
seed = 5

[assignment]
M = 32

[sweep]
K = 8
trials = {trials}
sigma2_grid = {grid}
extra_slots_grid = {extra}
workers = {workers}
"""


def test_sweep_noiseless_single_point(tmp_path, capsys):
    cfg = _write(tmp_path, "s.ini", SWEEP.format(trials=1, grid="0", extra="1", workers=1))
    out = str(tmp_path / "s.csv")
    assert main(["sweep", "--config", cfg, "--out", out]) == EXIT_OK
    lines = open(out).read().splitlines()
    assert lines[0] == "snr_db,sigma2,extra_slots,mode,trials,mean_detected,mean_ser,mean_n_used"
    assert lines[1] == "inf,0,1,aligned_t0,1,8,0,9"
    assert os.path.exists(tmp_path / "s.gp")
    assert "mean_detected:8" in capsys.readouterr().out


def test_sweep_byte_identical(tmp_path):
    text = SWEEP.format(trials=4, grid="1e-2, 1", extra="1, 3", workers=1)
    cfg = _write(tmp_path, "s.ini", text)
    par = _write(tmp_path, "p.ini", text.replace("workers = 1", "workers = 2"))
    paths = [str(tmp_path / f"{i}.csv") for i in range(3)]
    assert main(["sweep", "--config", cfg, "--out", paths[0]]) == EXIT_OK
    assert main(["sweep", "--config", cfg, "--out", paths[1]]) == EXIT_OK
    assert main(["sweep", "--config", par, "--out", paths[2]]) == EXIT_OK
    data = [open(p, "rb").read() for p in paths]
    assert data[0] == data[1] == data[2]
    assert len(data[0].splitlines()) == 5


def test_sweep_unwritable_output(tmp_path):
    cfg = _write(tmp_path, "s.ini", SWEEP.format(trials=1, grid="0", extra="1", workers=1))
    out = str(tmp_path / "missing" / "s.csv")
    assert main(["sweep", "--config", cfg, "--out", out]) == EXIT_OUTPUT


REPLAY = """\
[scenario]
mode = slot_aligned
P = 24
seed = {seed}
extra_slots = 2
K = 3

[assignment]
M = {M}

[noise]
sigma2 = 0
"""


@pytest.fixture
def stored(tmp_path):
    # seed 2 draws ids containing odd indices, which the 16-point dictionary lacks
    cfg = _write(tmp_path, "r.ini", REPLAY.format(seed=2, M=32))
    mat = str(tmp_path / "y.bin")
    assert main(["run", "--config", cfg, "--out", mat]) == EXIT_OK
    ids = {t.id for t in parse_config(open(mat + ".ini").read()).transmitters}
    assert any(k % 2 for k in ids)
    return mat


def test_replay_noiseless(stored, capsys):
    capsys.readouterr()
    assert main(["replay", stored, "--truth", stored + ".ini"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "detected 3/3, SER 0" in out
    assert "n_used=" in out and "match.0=" in out


def test_replay_truncated(stored, tmp_path):
    data = open(stored, "rb").read()
    bad = tmp_path / "cut.bin"
    bad.write_bytes(data[:-5])
    assert main(["replay", str(bad), "--truth", stored + ".ini"]) == EXIT_INPUT


def test_replay_wrong_dictionary(stored, tmp_path, capsys):
    cfg = _write(tmp_path, "m16.ini", REPLAY.format(seed=2, M=16))
    capsys.readouterr()
    assert main(["replay", stored, "--config", cfg, "--truth", stored + ".ini"]) == EXIT_DECODE


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError) as info:
        parse_config(DEMO + "colour = red\n")
    assert info.value.line == 13


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), mode=st.sampled_from(MODES), K=st.integers(1, 8),
       sigma2=st.sampled_from([0.0, 1e-6, 0.37]))
def test_config_roundtrip(seed, mode, K, sigma2):
    sc = random_scenario(mode, K=K, P=40, sigma2=sigma2, seed=seed)
    cfg = scenario_config(sc, mode, extra_slots=3)
    again = parse_config(format_config(cfg))
    assert again == cfg
    assert again.scenario() == sc


def test_sweep_config_roundtrip():
    cfg = parse_config(SWEEP.format(trials=7, grid="1e-6, 0.5", extra="1, 5", workers=2))
    assert parse_config(format_config(cfg)) == cfg
    sc = cfg.sweep_config()
    assert sc.trials == 7 and sc.sigma2_grid == (1e-6, 0.5) and sc.extra_slots_grid == (1, 5)
