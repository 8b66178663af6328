import json

import numpy as np
import pytest

from advwm.cli import main
from advwm.config import ArmConfig, ConfigError, dump_config, load_config, parse_config_text


class TestConfig:
    def test_defaults_round_trip(self, tmp_path):
        cfg = ArmConfig()
        p = tmp_path / "arm.cfg"
        p.write_text(dump_config(cfg))
        assert load_config(p) == cfg

    def test_table_keys_and_comments(self):
        cfg = parse_config_text(
            """
            # one adversarial arm
            mode = prowl
            c_kl = 1.5          # anchor weight
            lambda_afs = 0.25
            rho_stale = 0.1
            t_wm = 24
            episodes_per_update = 16
            mixture_r = 0.5
            pat_epochs = 7
            buffer_capacity = 64
            run_seed = 3
            trunk_hidden = 128,128
            """
        )
        assert cfg.c_kl == 1.5 and cfg.t_wm == 24 and cfg.run_seed == 3
        assert cfg.trunk_hidden == (128, 128)

    def test_unknown_keys_listed(self):
        with pytest.raises(ConfigError, match="unknown config keys: c_lk, zeta"):
            parse_config_text("c_lk = 1.0\nzeta = 2\nmode = prowl\n")

    def test_bad_value_reported(self):
        with pytest.raises(ConfigError, match="bad value for c_kl"):
            parse_config_text("c_kl = strong\n")

    def test_bad_mode_rejected(self):
        with pytest.raises(ConfigError, match="mode"):
            parse_config_text("mode = phase3\n")

    def test_bad_line_rejected(self):
        with pytest.raises(ConfigError, match="expected"):
            parse_config_text("just some words\n")

    def test_arm_id_derived(self):
        cfg = parse_config_text("mode = frozen_ref\nc_kl = 0.5\nrun_seed = 2\n")
        assert cfg.arm_id == "frozen_ref-kl0.5-lam0.25-s2"


class TestCli:
    def test_gen_demos_deterministic(self, tmp_path, capsys):
        for d in ("a", "b"):
            rc = main(["gen-demos", "--kind", "walker", "--episodes", "2",
                       "--base-seed", "5", "--out", str(tmp_path / d)])
            assert rc == 0
        fa = sorted((tmp_path / "a").glob("*.jsonl"))
        fb = sorted((tmp_path / "b").glob("*.jsonl"))
        assert [f.read_bytes() for f in fa] == [f.read_bytes() for f in fb]

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("no_such_key = 5\n")
        rc = main(["run", "--config", str(cfg), "--phase1", str(tmp_path),
                   "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_runtime_fault_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "arm.cfg"
        cfg.write_text("mode = prowl\n")
        rc = main(["run", "--config", str(cfg), "--phase1", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "out")])
        assert rc == 3
        assert "runtime fault" in capsys.readouterr().err

    def test_report_over_two_arms(self, tmp_path, capsys):
        header = "run_id,arm,dataset,traj_id,l_regret,l_afs,pixel_mse,horizon,subset_tag"
        rows_a = [f"r,a,d,t{i},{1.0 + i!r},{10.0!r},{0.5!r},2,all" for i in range(4)]
        rows_b = [f"r,b,d,t{i},{(1.0 + i) * 0.8!r},{9.0!r},{0.4!r},2,all" for i in range(4)]
        (tmp_path / "a.csv").write_text("\n".join([header] + rows_a) + "\n")
        (tmp_path / "b.csv").write_text("\n".join([header] + rows_b) + "\n")
        out = tmp_path / "report.csv"
        rc = main(["report", "--arm", f"phase1:{tmp_path / 'a.csv'}",
                   "--arm", f"prowl:{tmp_path / 'b.csv'}", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().split("\n")
        mean_delta = [l for l in lines if l.startswith("mean,delta_pct prowl vs phase1")][0]
        assert abs(float(mean_delta.split(",")[2]) + 20.0) < 1e-9  # 100*(b-a)/a

    def test_fingerprint_command(self, tmp_path):
        from advwm.env import gen_passive_dataset, save_dataset

        save_dataset(gen_passive_dataset("builder", 3, 12, 400), tmp_path / "cand")
        save_dataset(gen_passive_dataset("walker", 3, 12, 500), tmp_path / "ref")
        out = tmp_path / "modes.csv"
        rc = main(["fingerprint", "--candidate", f"armx:{tmp_path / 'cand'}",
                   "--reference", str(tmp_path / "ref"), "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "label,source,count"

    def test_full_chain_pretrain_run_eval_report(self, tmp_path):
        # the whole documented surface at miniature scale
        cfg = tmp_path / "arm.cfg"
        cfg.write_text(
            "mode = prowl\nrun_seed = 1\ntotal_iterations = 6\nt_wm = 3\n"
            "episodes_per_update = 3\nwm_steps_per_cycle = 3\npat_epochs = 2\n"
            "buffer_capacity = 4\nphase1_steps = 20\nphase1_episodes = 4\n"
            "phase1_eval_episodes = 2\nphase1_eval_every = 10\nbc_epochs = 2\n"
            "trunk_hidden = 16\ncond_hidden = 8\npolicy_hidden = 16\n"
        )
        p1cfg = tmp_path / "p1.cfg"
        p1cfg.write_text(cfg.read_text().replace("mode = prowl", "mode = phase1"))
        assert main(["pretrain", "--config", str(p1cfg), "--out", str(tmp_path / "p1")]) == 0
        assert main(["run", "--config", str(cfg), "--phase1", str(tmp_path / "p1"),
                     "--out", str(tmp_path / "arm")]) == 0
        assert (tmp_path / "arm" / "wm_final.ckpt").exists()
        assert (tmp_path / "arm" / "buffer" / "index.json").exists()
        assert (tmp_path / "arm" / "metrics.csv").exists()

        assert main(["gen-demos", "--kind", "climber", "--episodes", "3",
                     "--base-seed", "700500", "--out", str(tmp_path / "held")]) == 0
        for label, ckpt in (("phase1", tmp_path / "p1" / "wm_phase1.ckpt"),
                            ("prowl", tmp_path / "arm" / "wm_final.ckpt")):
            assert main(["eval", "--checkpoint", str(ckpt),
                         "--codec", str(tmp_path / "p1" / "codec.json"),
                         "--dataset", str(tmp_path / "held"), "--arm-label", label,
                         "--out", str(tmp_path / f"eval_{label}.csv")]) == 0
        assert main(["report", "--arm", f"phase1:{tmp_path / 'eval_phase1.csv'}",
                     "--arm", f"prowl:{tmp_path / 'eval_prowl.csv'}",
                     "--out", str(tmp_path / "report.csv")]) == 0
        assert main(["fingerprint", "--candidate", f"prowl:{tmp_path / 'arm' / 'buffer'}",
                     "--reference", str(tmp_path / "held"),
                     "--out", str(tmp_path / "modes.csv")]) == 0
        report = (tmp_path / "report.csv").read_text()
        assert "delta_pct prowl vs phase1" in report
