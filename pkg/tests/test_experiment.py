"""Experiment drivers: config handling, result tables, commands, CLI."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from seqrefine import sudoku
from seqrefine.checkpoint import load_checkpoint
from seqrefine.cli import main
from seqrefine.evenpixels import gen_even_pixels, save_even_pixels
from seqrefine.experiment import (_GEN, ResultTable, apply_overrides,
                                  cmd_ablate, cmd_corrupt_recover, cmd_eval,
                                  cmd_generate, cmd_refine, cmd_report,
                                  cmd_train, default_config, load_config,
                                  save_config, stream)
from seqrefine.refine import expected_iteration_calls
from seqrefine.tasks import get_task


def small_cfg(out_dir, **kw):
    cfg = default_config("sudoku4")
    cfg.out_dir = str(out_dir)
    cfg.seeds = (0,)
    cfg.sample_count = 4
    cfg.iteration = 2
    cfg.train_steps = 10
    cfg.batch_size = 16
    for key, value in kw.items():
        setattr(cfg, key, value)
    cfg.__post_init__()
    return cfg


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    cfg = small_cfg(out)
    ckpt, loss_path = cmd_train(cfg)
    return ckpt, loss_path, cfg


# --- config ------------------------------------------------------------------


def test_default_config_sudoku():
    cfg = default_config("sudoku4")
    assert (cfg.init_steps_per_patch, cfg.init_overlap_ratio) == (3, 0.0)
    assert (cfg.ipr_steps_per_patch, cfg.ipr_overlap_ratio) == (10, 0.8)
    assert cfg.stochasticity == 0.5
    assert (cfg.resampling_ratio, cfg.iteration) == (0.25, 20)
    assert cfg.sample_count == 300
    assert cfg.seeds == (0, 1, 2)
    assert cfg.selection == "sequential"
    assert cfg.noise_mode == "fresh"
    assert cfg.region_mode == "random_each_iteration"
    assert (cfg.train_steps, cfg.learning_rate, cfg.batch_size) == (15000, 0.05, 64)


def test_default_config_even_pixels_and_unknown():
    cfg = default_config("even_pixels")
    assert cfg.sample_count == 200
    assert (cfg.init_steps_per_patch, cfg.init_overlap_ratio) == (10, 0.9)
    assert (cfg.ipr_steps_per_patch, cfg.ipr_overlap_ratio) == (10, 0.9)
    assert cfg.iteration == 50
    assert (cfg.train_steps, cfg.learning_rate, cfg.batch_size) == (12000, 0.03, 32)
    with pytest.raises(ValueError):
        default_config("checkers")


def test_config_save_load_roundtrip(tmp_path):
    cfg = default_config("even_pixels")
    cfg.seeds = (4, 5)
    cfg.checkpoint = "some/model.ckpt"
    cfg.resampling_ratio = 0.1
    cfg.iteration = 7
    cfg.save_artifacts = 3
    path = tmp_path / "run.cfg"
    save_config(cfg, path)
    loaded = load_config(path)
    assert dataclasses.asdict(loaded) == dataclasses.asdict(cfg)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.cfg")


def test_load_config_duplicate_key(tmp_path):
    path = tmp_path / "dup.cfg"
    path.write_text("[a]\niteration = 3\n[b]\niteration = 4\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_config(path)


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[experiment]\ntask = sudoku4\niteration = 9\nseeds = 1 2\n")
    cfg = load_config(path, {"iteration": "4"})
    assert cfg.iteration == 4
    assert cfg.seeds == (1, 2)


def test_apply_overrides_types_and_unknown():
    cfg = default_config("sudoku4")
    apply_overrides(cfg, {"seeds": "3,4 5", "learning_rate": "0.1",
                          "sample_count": "7", "selection": "confidence"})
    assert cfg.seeds == (3, 4, 5)
    assert cfg.learning_rate == 0.1
    assert cfg.sample_count == 7
    assert cfg.selection == "confidence"
    with pytest.raises(KeyError, match="mystery"):
        apply_overrides(cfg, {"mystery": "1"})


def test_config_validation():
    cfg = default_config("sudoku4")
    with pytest.raises(ValueError, match="sample_count"):
        apply_overrides(cfg, {"sample_count": "0"})
    cfg = default_config("sudoku4")
    with pytest.raises(ValueError, match="seeds"):
        apply_overrides(cfg, {"seeds": ""})


def test_scheduler_and_refinement_builders():
    cfg = default_config("sudoku4")
    init = cfg.init_scheduler()
    assert (init.steps_per_patch, init.overlap_ratio) == (3, 0.0)
    assert init.stochasticity == 0.5
    ipr = cfg.ipr_scheduler()
    assert (ipr.steps_per_patch, ipr.overlap_ratio) == (10, 0.8)

    rc = cfg.refinement(condition_set=frozenset({2}))
    assert rc.resampling_ratio == 0.25
    assert rc.iterations == 20
    assert rc.noise_mode == "fresh"
    assert rc.region_mode == "random_each_iteration"
    assert rc.condition_set == frozenset({2})
    assert rc.refine_scheduler.steps_per_patch == 10

    rc2 = cfg.refinement(resampling_ratio=0.5, noise_mode="fixed_initial")
    assert rc2.resampling_ratio == 0.5
    assert rc2.noise_mode == "fixed_initial"


# --- result tables -----------------------------------------------------------


def test_table_sorting_and_values():
    table = ResultTable()
    table.add(1, 0, "b", 2.0, 5)
    table.add(0, 1, "a", 1.0, 5)
    table.add(0, 0, "a", 0.5, 5)
    assert table.sorted_rows() == [(0, 0, "a", 0.5, 5), (0, 1, "a", 1.0, 5),
                                   (1, 0, "b", 2.0, 5)]
    assert table.values("a") == [(0, 0, 0.5, 5), (0, 1, 1.0, 5)]
    assert table.values("a", r=1) == [(0, 1, 1.0, 5)]


def test_table_roundtrip_is_byte_deterministic(tmp_path):
    rows = [(0, 0, "m", 1 / 3, 4), (1, 2, "k", 0.1, 4), (0, 1, "m", 2 / 3, 4)]
    a = ResultTable()
    b = ResultTable()
    for row in rows:
        a.add(*row)
    for row in reversed(rows):
        b.add(*row)
    pa = a.write_csv(tmp_path / "a.csv")
    pb = b.write_csv(tmp_path / "b.csv")
    assert pa.read_bytes() == pb.read_bytes()

    back = ResultTable.read_csv(pa)
    assert back.version == a.version
    assert back.sorted_rows() == a.sorted_rows()


def test_table_rejects_malformed_files(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("hello\n")
    with pytest.raises(ValueError, match="not a result table"):
        ResultTable.read_csv(p)
    p.write_text("# format=1\nwrong,header,entirely\n")
    with pytest.raises(ValueError, match="not a result table"):
        ResultTable.read_csv(p)


# --- train -------------------------------------------------------------------


def test_train_writes_checkpoint_and_loss_curve(trained):
    ckpt, loss_path, cfg = trained
    model = load_checkpoint(ckpt)
    task = get_task("sudoku4")
    assert (model.n_regions, model.dim) == (task.n_regions, task.dim)
    assert (model.hidden, model.layers) == (task.hidden, task.layers)
    losses = [float(v) for v in loss_path.read_text().split()]
    assert len(losses) == cfg.train_steps
    assert all(np.isfinite(losses))


def test_train_is_deterministic(trained, tmp_path):
    ckpt, loss_path, cfg = trained
    rerun = small_cfg(tmp_path)
    ckpt2, loss2 = cmd_train(rerun)
    assert ckpt2.read_bytes() == ckpt.read_bytes()
    assert loss2.read_text() == loss_path.read_text()


# --- generate ----------------------------------------------------------------


def test_generate_rows_and_artifacts(trained, tmp_path):
    ckpt, _, _ = trained
    cfg = small_cfg(tmp_path, checkpoint=str(ckpt), seeds=(0, 1), save_artifacts=2)
    table = cmd_generate(cfg)
    assert (tmp_path / "generate.csv").exists()
    assert len(table.rows) == 6
    for seed in (0, 1):
        (r0,) = table.values("valid_rate")[seed:seed + 1]
        assert r0[3] == cfg.sample_count
        (calls,) = [v for s, _, v, _ in table.values("denoiser_calls") if s == seed]
        assert calls == 0.0
        (base,) = [v for s, _, v, _ in table.values("baseline_calls") if s == seed]
        assert base > 0
    for i in range(2):
        text = (tmp_path / "samples" / f"gen_s0_i{i}.txt").read_text()
        grid = sudoku.grid_from_text(text)
        assert grid.shape == (4, 4)


def test_generate_is_deterministic(trained, tmp_path):
    ckpt, _, _ = trained
    cfg1 = small_cfg(tmp_path / "r1", checkpoint=str(ckpt), sample_count=3)
    cfg2 = small_cfg(tmp_path / "r2", checkpoint=str(ckpt), sample_count=3)
    cmd_generate(cfg1)
    cmd_generate(cfg2)
    assert ((tmp_path / "r1" / "generate.csv").read_bytes()
            == (tmp_path / "r2" / "generate.csv").read_bytes())


def test_generate_requires_checkpoint(tmp_path):
    cfg = small_cfg(tmp_path, checkpoint=str(tmp_path / "absent.ckpt"))
    with pytest.raises(FileNotFoundError):
        cmd_generate(cfg)


# --- refine ------------------------------------------------------------------


def hint_sizes(task, seed, count):
    # replay the per-sample instance streams used by the drivers
    sizes = []
    for i in range(count):
        rng = stream(seed, i, _GEN)
        grid = sudoku.gen_sudoku(task.order, rng)
        cells, _ = sudoku.make_hint_condition(grid, rng)
        sizes.append(len(cells))
    return sizes


def test_refine_rows_ledger_and_r0(trained, tmp_path):
    ckpt, _, _ = trained
    cfg = small_cfg(tmp_path / "refine", checkpoint=str(ckpt))
    table = cmd_refine(cfg)
    # 3 metrics x (iterations + 1) rows for the single seed
    assert len(table.rows) == 3 * (cfg.iteration + 1)

    gen = cmd_generate(small_cfg(tmp_path / "gen", checkpoint=str(ckpt)))
    assert table.values("valid_rate", r=0) == gen.values("valid_rate", r=0)

    task = get_task("sudoku4")
    per_iter = [expected_iteration_calls(task.n_regions, c, cfg.refinement())
                for c in hint_sizes(task, 0, cfg.sample_count)]
    for r in range(cfg.iteration + 1):
        ((_, _, calls, _),) = table.values("denoiser_calls", r=r)
        assert calls == pytest.approx(r * np.mean(per_iter), abs=1e-12)
    base_rows = table.values("baseline_calls")
    assert len(base_rows) == cfg.iteration + 1
    assert len({v for _, _, v, _ in base_rows}) == 1


def test_refine_zero_iterations_matches_generate(trained, tmp_path):
    ckpt, _, _ = trained
    cfg = small_cfg(tmp_path / "r0", checkpoint=str(ckpt), iteration=0)
    table = cmd_refine(cfg)
    gen = cmd_generate(small_cfg(tmp_path / "gen", checkpoint=str(ckpt)))
    assert table.values("valid_rate") == gen.values("valid_rate")


# --- corrupt-recover ---------------------------------------------------------


def test_corrupt_recover_rates(trained, tmp_path):
    ckpt, _, _ = trained
    cfg = small_cfg(tmp_path, checkpoint=str(ckpt), sample_count=2, iteration=1)
    table = cmd_corrupt_recover(cfg, k_list=(0, 1))
    assert (tmp_path / "corrupt_recover.csv").exists()
    metrics = {m for _, _, m, _, _ in table.rows}
    assert metrics == {"k0/recovery_rate", "k0/denoiser_calls",
                       "k1/recovery_rate", "k1/denoiser_calls"}
    ((_, _, v0, n0),) = table.values("k0/recovery_rate", r=0)
    assert (v0, n0) == (1.0, 2)
    ((_, _, v1, _),) = table.values("k1/recovery_rate", r=0)
    assert v1 == 0.0


def test_corrupt_recover_rejects_non_grid_task(tmp_path):
    cfg = default_config("even_pixels")
    cfg.out_dir = str(tmp_path)
    with pytest.raises(ValueError, match="sudoku"):
        cmd_corrupt_recover(cfg)


# --- ablate ------------------------------------------------------------------


def test_ablate_grid_and_canonical_match(trained, tmp_path):
    ckpt, _, _ = trained
    cfg = small_cfg(tmp_path / "ab", checkpoint=str(ckpt), sample_count=3, iteration=1)
    table = cmd_ablate(cfg)

    labels = {m.split("/")[0] + "/" for _, _, m, _, _ in table.rows if "/" in m}
    expected = {f"a{a:.2f}_{n}_{g}/" for a in (0.10, 0.25, 0.50)
                for n in ("fresh", "fixednoise") for g in ("random", "fixedregion")}
    assert labels == expected
    # per seed: 1 baseline row + 12 variants x 2 metrics x (iterations + 1)
    assert len(table.rows) == 1 + 12 * 2 * (cfg.iteration + 1)

    ref = cmd_refine(small_cfg(tmp_path / "rf", checkpoint=str(ckpt),
                               sample_count=3, iteration=1))
    canon = "a0.25_fresh_random/"
    assert table.values(canon + "valid_rate") == ref.values("valid_rate")
    assert table.values(canon + "denoiser_calls") == ref.values("denoiser_calls")


# --- report ------------------------------------------------------------------


def test_report_aggregates_across_seeds(tmp_path):
    paths = []
    for seed, value in zip((0, 1, 2), (0.2, 0.5, 0.8)):
        t = ResultTable()
        t.add(seed, 0, "valid_rate", value, 10)
        paths.append(t.write_csv(tmp_path / f"t{seed}.csv"))
    (out,) = cmd_report(paths, tmp_path / "rep")
    assert out.name == "report_valid_rate.csv"
    header, row = out.read_text().splitlines()
    assert header == "r,mean,stderr,seeds,total_n"
    r, mean, err, seeds, total = row.split(",")
    assert (int(r), int(seeds), int(total)) == (0, 3, 30)
    assert float(mean) == pytest.approx(0.5, abs=1e-15)
    assert float(err) == pytest.approx(0.17320508075688773, abs=1e-15)


def test_report_slash_metrics_and_errors(tmp_path):
    t = ResultTable()
    t.add(0, 0, "k1/recovery_rate", 1.0, 3)
    p = t.write_csv(tmp_path / "t.csv")
    (out,) = cmd_report([p], tmp_path / "rep")
    assert out.name == "report_k1__recovery_rate.csv"

    with pytest.raises(ValueError, match="no tables"):
        cmd_report([], tmp_path / "rep")
    other = ResultTable(version=2)
    other.add(0, 0, "m", 0.0, 1)
    p2 = other.write_csv(tmp_path / "v2.csv")
    with pytest.raises(ValueError, match="format"):
        cmd_report([p, p2], tmp_path / "rep")


# --- eval --------------------------------------------------------------------


def test_eval_grid_files(tmp_path):
    good = sudoku.enumerate_grids(2)[0]
    bad = good.copy()
    bad[0, 0] = bad[0, 1]
    (tmp_path / "good.txt").write_text(sudoku.grid_to_text(good))
    (tmp_path / "bad.txt").write_text(sudoku.grid_to_text(bad))
    cfg = small_cfg(tmp_path)
    table = cmd_eval(cfg, [tmp_path / "good.txt", tmp_path / "bad.txt"])
    assert table.values("valid_rate") == [(0, 0, 0.5, 2)]
    assert (tmp_path / "eval.csv").exists()


def test_eval_image_files(tmp_path):
    hsv = gen_even_pixels(np.random.default_rng(0))
    save_even_pixels(hsv, tmp_path / "img")
    cfg = default_config("even_pixels")
    cfg.out_dir = str(tmp_path)
    table = cmd_eval(cfg, [tmp_path / "img.ppm"])
    assert table.values("balance_rate") == [(0, 0, 1.0, 1)]
    assert table.values("pixel_error") == [(0, 0, 0.0, 1)]


def test_eval_requires_paths(tmp_path):
    with pytest.raises(ValueError, match="nothing"):
        cmd_eval(small_cfg(tmp_path), [])


# --- command line ------------------------------------------------------------


def test_cli_train_generate_roundtrip(tmp_path, capsys):
    out = str(tmp_path)
    rc = main(["train", "--task", "sudoku4", "--train-steps", "5",
               "--batch-size", "8", "--seeds", "0", "--out-dir", out])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "checkpoint:" in printed and "loss curve:" in printed

    rc = main(["generate", "--checkpoint", f"{out}/sudoku4.ckpt",
               "--sample-count", "2", "--seeds", "0", "--out-dir", out])
    assert rc == 0
    assert "rows" in capsys.readouterr().out
    assert (tmp_path / "generate.csv").exists()


def test_cli_config_file_with_flag_override(tmp_path, capsys):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("[experiment]\ntask = sudoku4\ntrain_steps = 3\n"
                        f"batch_size = 8\nseeds = 0\nout_dir = {tmp_path}\n")
    rc = main(["train", "--config", str(cfg_path), "--train-steps", "4"])
    assert rc == 0
    capsys.readouterr()
    losses = (tmp_path / "sudoku4_loss.txt").read_text().split()
    assert len(losses) == 4


def test_cli_errors(tmp_path, capsys):
    rc = main(["generate", "--checkpoint", str(tmp_path / "missing.ckpt"),
               "--seeds", "0", "--sample-count", "1", "--out-dir", str(tmp_path)])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")

    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_cli_report_and_eval(tmp_path, capsys):
    t = ResultTable()
    t.add(0, 0, "valid_rate", 1.0, 2)
    p = t.write_csv(tmp_path / "t.csv")
    rc = main(["report", str(p), "--out-dir", str(tmp_path / "rep")])
    assert rc == 0
    assert "wrote" in capsys.readouterr().out

    grid_path = tmp_path / "g.txt"
    grid_path.write_text(sudoku.grid_to_text(sudoku.enumerate_grids(2)[5]))
    rc = main(["eval", "--task", "sudoku4", "--out-dir", str(tmp_path),
               str(grid_path)])
    assert rc == 0
    assert "valid_rate: 1" in capsys.readouterr().out
