from __future__ import annotations

import json

from mhqagen.cli import main

from conftest import TOY_CORPUS


def _write_config(tmp_path, **overrides):
    config = {
        "corpus_path": str(TOY_CORPUS),
        "output_dir": str(tmp_path / "out"),
        "mode": "semantic",
        "seed": 7,
        "k_sections": 2,
        "cluster_size": 8,
        "test_size": 2,
        "eval": {"split": "all", "corpus_hit_ks": [1, 5], "corpus_mrr_k": 5},
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def test_stage_subcommands_run_and_skip(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    assert main(["--config", str(cfg), "ingest"]) == 0
    out = capsys.readouterr().out
    assert "[ingest] done" in out and "kept=12" in out
    assert main(["--config", str(cfg), "ingest"]) == 0
    assert "skipped" in capsys.readouterr().out


def test_force_flag(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    main(["--config", str(cfg), "ingest"])
    assert main(["--config", str(cfg), "--force", "ingest"]) == 0
    assert "done" in capsys.readouterr().out.splitlines()[-1]


def test_missing_upstream_gives_stage_qualified_error(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    assert main(["--config", str(cfg), "relate"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("[relate] error:")


def test_bad_config_nonzero(tmp_path, capsys):
    cfg = _write_config(tmp_path, mode="wrong")
    assert main(["--config", str(cfg), "ingest"]) == 2
    assert "error" in capsys.readouterr().err


def test_report_subcommand(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    for stage in ("ingest", "shqa", "relate", "cluster", "mhqa", "split",
                  "eval-retrieval", "eval-qa", "stats"):
        assert main(["--config", str(cfg), stage]) == 0
    capsys.readouterr()
    assert main(["--config", str(cfg), "report"]) == 0
    out = capsys.readouterr().out
    assert "conservation:" in out and "(holds)" in out


def test_seed_override_changes_outputs(tmp_path):
    cfg_a = _write_config(tmp_path, output_dir=str(tmp_path / "a"))
    main(["--config", str(cfg_a), "ingest"])
    main(["--config", str(cfg_a), "shqa"])
    cfg_b = _write_config(tmp_path, output_dir=str(tmp_path / "b"))
    main(["--config", str(cfg_b), "--seed", "8", "ingest"])
    main(["--config", str(cfg_b), "--seed", "8", "shqa"])
    a = (tmp_path / "a" / "shqa.jsonl").read_text(encoding="utf-8")
    b = (tmp_path / "b" / "shqa.jsonl").read_text(encoding="utf-8")
    assert a != b


def test_mock_providers_flag(tmp_path, capsys):
    cfg = _write_config(
        tmp_path,
        providers={"generation_backend": "remote", "embedding_backend": "remote",
                   "base_url": "https://unreachable.invalid"})
    assert main(["--config", str(cfg), "--mock-providers", "ingest"]) == 0
    assert main(["--config", str(cfg), "--mock-providers", "shqa"]) == 0
    assert "done" in capsys.readouterr().out
