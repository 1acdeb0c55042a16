import numpy as np

from cforan import cli, mappo


TINY_SCENARIO = """\
name: tiny
network:
  num_orus: 3
  num_users: 2
  area_side_m: 600.0
  n_tx: 2
  n_rx: 1
  n_streams: 1
  l_max: 3
  topology_seed: 1
  channel_seed: 1
precoder:
  rate_tol_mbps: 0.1
  patience: 2
  max_iters: 30
agents:
  patience: 2
  loop_cap: 10
initial_intent: "Maximize the sum of rates. No minimum rate requirements."
total_loops: 4
"""


def write_scenario(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_SCENARIO)
    return str(path)


def test_accounting_prints_table(capsys):
    assert cli.main(["accounting"]) == 0
    out = capsys.readouterr().out
    assert "3x FP16" in out
    assert "92 %" in out


def test_train_then_run(tmp_path, capsys):
    scenario = write_scenario(tmp_path)
    ckpt = str(tmp_path / "policy.npz")
    assert cli.main(["train", "--scenario", scenario, "--checkpoint", ckpt,
                     "--episodes", "8", "--floor", "1.0"]) == 0
    params, num_users = mappo.load_checkpoint(ckpt)
    assert num_users == 2
    assert params.num_agents == 3

    outdir = str(tmp_path / "out")
    memory = str(tmp_path / "store.npz")
    assert cli.main(["run", "--scenario", scenario, "--mode", "proposed",
                     "--checkpoint", ckpt, "--memory", memory,
                     "--outdir", outdir]) == 0
    out = capsys.readouterr().out
    assert "final_active_count" in out
    series = (tmp_path / "out" / "proposed_series.csv").read_text()
    assert series.count("\n") == 1 + 4          # header + total_loops rows


def test_compare_runs_all_modes(tmp_path, capsys):
    scenario = write_scenario(tmp_path)
    ckpt = str(tmp_path / "policy.npz")
    cli.main(["train", "--scenario", scenario, "--checkpoint", ckpt,
              "--episodes", "5", "--floor", "1.0"])
    capsys.readouterr()
    assert cli.main(["compare", "--scenario", scenario, "--checkpoint", ckpt,
                     "--outdir", str(tmp_path / "cmp")]) == 0
    out = capsys.readouterr().out
    for mode in ("proposed", "drl_ga", "greedy", "full_power"):
        assert mode in out
        assert (tmp_path / "cmp" / f"{mode}_series.csv").exists()
