"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s`. The long-running pieces
(the canonical training run and the ablation sweeps) execute once via
module fixtures. Everything is single-threaded (VT_THREADS=1).
"""

import math
import os
import time

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

import vthead as vt
from vthead.attention import flatten_params, set_flat_params, vt_forward_cached
from vthead.cli import main as cli_main
from vthead.errors import BadMagicError, TruncatedFileError, VersionError
from vthead.ops import normalize_rows
from vthead.trainer import _add_params


def announce(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)


@pytest.fixture(scope="module", autouse=True)
def single_threaded():
    saved = os.environ.get("VT_THREADS")
    os.environ["VT_THREADS"] = "1"
    yield
    if saved is None:
        os.environ.pop("VT_THREADS", None)
    else:
        os.environ["VT_THREADS"] = saved


@pytest.fixture(scope="module")
def canonical():
    """The desk-scale dataset: K=10, D=32, D_s=48, S=16, m=4, sigma=0.1, seed 7."""
    cfg = vt.SynthConfig(seed=7)
    train_bank, test_bank, texts = vt.synth_bank(cfg)
    return cfg, train_bank, test_bank, texts


@pytest.fixture(scope="module")
def trained(canonical):
    """16-shot training run at defaults (H=8, L=1), seed 7."""
    _, train_bank, test_bank, texts = canonical
    started = time.perf_counter()
    params, report = vt.train(
        train_bank, texts, vt.TrainConfig(n_shots=16, seed=7), test_bank=test_bank
    )
    return params, report, time.perf_counter() - started


def test_criterion_1_gradient_suite():
    # every parameter, finite differences, step 1e-5, 64-bit, rel error < 1e-4
    started = time.perf_counter()
    k, s, d, d_s, h = 3, 4, 8, 6, 2
    rng = np.random.Generator(np.random.Philox(key=4242))
    worst = 0.0
    for layers in (1, 2):
        params = vt.init_params(d, d_s, h, layers, seed=layers)
        theta0 = rng.standard_normal(vt.n_parameters(params)) * 0.3
        set_flat_params(params, theta0)
        t_c = rng.standard_normal((k, d))
        v_c = rng.standard_normal((2, d))
        v_s = rng.standard_normal((2, s, d_s))
        labels = np.array([0, 2])
        # objective magnitudes are kept small so the finite-difference
        # oracle's float64 roundoff stays below the relative-error floor on
        # coordinates whose exact gradient is zero (softmax key biases)
        loss_scale = 0.02

        def f_loss(theta, params=params, t_c=t_c, v_c=v_c, v_s=v_s, labels=labels):
            set_flat_params(params, theta)
            rows = np.stack(
                [vt_forward_cached(t_c, v_s[i], params)[0] for i in range(2)]
            )
            loss, _ = vt.cross_entropy(vt.vt_logits(v_c, rows, 1.0), labels)
            return loss_scale * loss

        def g_loss(theta, params=params, t_c=t_c, v_c=v_c, v_s=v_s, labels=labels):
            set_flat_params(params, theta)
            forwards = [vt_forward_cached(t_c, v_s[i], params) for i in range(2)]
            rows = np.stack([fw[0] for fw in forwards])
            _, dscores = vt.cross_entropy(vt.vt_logits(v_c, rows, 1.0), labels)
            u = normalize_rows(v_c)
            total = vt.init_params(d, d_s, h, params.num_layers, seed=0)
            set_flat_params(total, np.zeros(vt.n_parameters(total)))
            for i in range(2):
                rows_i = forwards[i][0]
                norms = np.linalg.norm(rows_i, axis=1, keepdims=True)
                w = rows_i / norms
                proj = w @ u[i]
                d_vt = dscores[i][:, None] * (u[i] - proj[:, None] * w) / norms
                g, _ = vt.vt_backward(d_vt, forwards[i][2], params)
                _add_params(total, g)
            return loss_scale * flatten_params(total)

        worst = max(worst, vt.grad_check(f_loss, g_loss, theta0, step=1e-5))

        probe = rng.standard_normal((k, d)) * 0.005

        def f_lin(theta, params=params, t_c=t_c, v_s=v_s, probe=probe):
            set_flat_params(params, theta)
            out, _, _ = vt_forward_cached(t_c, v_s[0], params)
            return float((probe * out).sum())

        def g_lin(theta, params=params, t_c=t_c, v_s=v_s, probe=probe):
            set_flat_params(params, theta)
            _, _, cache = vt_forward_cached(t_c, v_s[0], params)
            g, _ = vt.vt_backward(probe, cache, params)
            return flatten_params(g)

        worst = max(worst, vt.grad_check(f_lin, g_lin, theta0, step=1e-5))

    elapsed = time.perf_counter() - started
    ok = worst < 1e-4 and elapsed < 10.0
    announce("gradient-suite", ok, f"max rel error {worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 10.0


def test_criterion_2_residual_identity(tmp_path, capsys):
    started = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(key=777))
    worst = 0.0
    params = vt.init_params(8, 6, 2, 1, seed=0)
    for _ in range(100):
        t_c = rng.standard_normal((4, 8))
        v_c = rng.standard_normal((3, 8))
        v_s = rng.standard_normal((5, 6))
        rows = np.stack([vt.vt_forward(t_c, v_s, params)[0] for _ in range(3)])
        a = vt.vt_logits(v_c, rows, 100.0).scores
        b = vt.zero_shot_logits(v_c, t_c, 100.0).scores
        worst = max(worst, float(np.max(np.abs(a - b))))

    data = tmp_path / "data"
    assert cli_main([
        "synth", "--out", str(data), "--k", "5", "--d", "16", "--ds", "12",
        "--grid-h", "2", "--grid-w", "4", "--train-per-class", "4",
        "--test-per-class", "10", "--m", "2", "--seed", "7",
    ]) == 0
    capsys.readouterr()
    assert cli_main([
        "train", "--bank", str(data / "train.vtfb"), "--test", str(data / "test.vtfb"),
        "--texts", str(data / "texts.vtte"), "--shots", "2", "--lr", "0",
        "--epochs", "3", "--seed", "7",
    ]) == 0
    train_out = capsys.readouterr().out
    trained_acc = dict(l.split("=", 1) for l in train_out.splitlines())["test_accuracy"]
    assert cli_main([
        "zeroshot", "--bank", str(data / "test.vtfb"), "--texts", str(data / "texts.vtte"),
    ]) == 0
    zs_acc = capsys.readouterr().out.strip().split("=")[1]

    elapsed = time.perf_counter() - started
    ok = worst <= 1e-12 and trained_acc == zs_acc and elapsed < 5.0
    announce(
        "residual-identity", ok,
        f"max |score delta| {worst:.1e}; lr=0 acc {trained_acc} vs zeroshot {zs_acc}; {elapsed:.1f}s",
    )
    assert worst <= 1e-12
    assert trained_acc == zs_acc
    assert elapsed < 5.0


def test_criterion_3_invariance_suite():
    started = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(key=555))
    params = vt.init_params(8, 6, 2, 2, seed=1)
    set_flat_params(params, rng.standard_normal(vt.n_parameters(params)) * 0.3)

    t_c = rng.standard_normal((4, 8))
    v_s = rng.standard_normal((6, 6))
    out, trace = vt.vt_forward(t_c, v_s, params)

    perm_tokens = rng.permutation(6)
    out_tok, _ = vt.vt_forward(t_c, v_s[perm_tokens], params)
    token_delta = float(np.max(np.abs(out - out_tok)))

    perm_rows = rng.permutation(4)
    out_rows, _ = vt.vt_forward(t_c[perm_rows], v_s, params)
    row_delta = float(np.max(np.abs(out_rows - out[perm_rows])))

    row_sum_err = max(
        float(np.max(np.abs(w.sum(axis=-1) - 1.0)))
        for w in trace.cross + trace.self_attn
    )

    v_c = rng.standard_normal((5, 8))
    rows = np.stack([vt.vt_forward(t_c, rng.standard_normal((6, 6)), params)[0]
                     for _ in range(5)])
    preds = [tuple(vt.predict(vt.vt_logits(v_c, rows, s))) for s in (1.0, 50.0, 100.0)]
    argmax_stable = preds[0] == preds[1] == preds[2]

    elapsed = time.perf_counter() - started
    ok = (token_delta <= 1e-12 and row_delta <= 1e-12
          and row_sum_err <= 1e-9 and argmax_stable and elapsed < 5.0)
    announce(
        "invariance-suite", ok,
        f"token perm {token_delta:.1e}, row perm {row_delta:.1e}, "
        f"row sums {row_sum_err:.1e}, argmax stable {argmax_stable}, {elapsed:.1f}s",
    )
    assert token_delta <= 1e-12
    assert row_delta <= 1e-12
    assert row_sum_err <= 1e-9
    assert argmax_stable
    assert elapsed < 5.0


def test_criterion_4_learning_acceptance(canonical, trained):
    cfg, train_bank, test_bank, texts = canonical
    params, report, train_seconds = trained

    probe = LogisticRegression(max_iter=2000)
    probe.fit(train_bank.spatial_features.mean(axis=1), train_bank.labels)
    probe_acc = probe.score(test_bank.spatial_features.mean(axis=1), test_bank.labels)

    zs_logits = vt.zero_shot_logits(test_bank.global_features, texts.rows)
    zs = vt.accuracy(vt.predict(zs_logits), test_bank.labels)

    ok = (probe_acc >= 0.99 and abs(zs - 0.10) <= 0.05
          and report.test_accuracy >= 0.90 and train_seconds < 120.0)
    announce(
        "learning-acceptance", ok,
        f"probe {probe_acc:.3f} (>=0.99), zero-shot {zs:.3f} (0.10±0.05), "
        f"trained {report.test_accuracy:.3f} (>=0.90), train {train_seconds:.0f}s (<120s)",
    )
    assert probe_acc >= 0.99
    assert abs(zs - 0.10) <= 0.05
    assert report.test_accuracy >= 0.90
    assert train_seconds < 120.0


def test_criterion_5_ablation_harness(canonical, tmp_path):
    cfg, train_bank, test_bank, texts = canonical
    base = vt.TrainConfig(n_shots=16, seed=7)
    started = time.perf_counter()

    heads_a = vt.ablate(train_bank, test_bank, texts, "heads", [4, 8, 16, 32], base)
    heads_b = vt.ablate(train_bank, test_bank, texts, "heads", [4, 8, 16, 32], base)
    layer_cells = vt.ablate(train_bank, test_bank, texts, "layers", [1, 2, 3, 4], base)

    path_a, path_b, path_l = (tmp_path / n for n in ("ha.csv", "hb.csv", "l.csv"))
    vt.write_sweep_csv(heads_a, path_a)
    vt.write_sweep_csv(heads_b, path_b)
    vt.write_sweep_csv(layer_cells, path_l)

    deterministic = path_a.read_bytes() == path_b.read_bytes()
    all_cells = heads_a + layer_cells
    completed = all(c.error is None for c in all_cells)
    losses_drop = all(c.final_epoch_loss < c.first_epoch_loss for c in all_cells)

    schema_ok = True
    for p in (path_a, path_l):
        lines = p.read_text().strip().splitlines()
        schema_ok &= lines[0] == "axis_value,test_accuracy" and len(lines) == 5
        for line in lines[1:]:
            v, a = line.split(",")
            int(v), float(a)

    elapsed = time.perf_counter() - started
    ok = deterministic and completed and losses_drop and schema_ok and elapsed < 600.0
    announce(
        "ablation-harness", ok,
        f"8 cells complete={completed}, losses drop={losses_drop}, "
        f"repeat identical={deterministic}, schema ok={schema_ok}, {elapsed:.0f}s (<600s)",
    )
    assert completed
    assert losses_drop
    assert deterministic
    assert schema_ok
    assert elapsed < 600.0


def test_criterion_6_figure1_analogue(canonical, trained):
    cfg, _, test_bank, texts = canonical
    params, _, _ = trained
    m = cfg.informative_tokens
    wins = 0
    for i in range(test_bank.num_images):
        _, trace = vt.vt_forward(texts.rows, test_bank.spatial_features[i], params)
        amap = vt.attention_map(
            trace, int(test_bank.labels[i]), trace.num_layers - 1,
            test_bank.grid_h, test_bank.grid_w,
        ).ravel()
        if amap[:m].mean() > amap[m:].mean():
            wins += 1
    fraction = wins / test_bank.num_images
    ok = fraction >= 0.90
    announce(
        "figure1-analogue", ok,
        f"planted>background for true class on {fraction:.3f} of test images (>=0.90)",
    )
    assert fraction >= 0.90


def test_criterion_7_format_suite(canonical, tmp_path):
    _, train_bank, _, texts = canonical

    bank_path = tmp_path / "bank.vtfb"
    vt.write_bank(train_bank, bank_path)
    round1 = bank_path.read_bytes()
    vt.write_bank(vt.read_bank(bank_path), bank_path)
    bank_exact = bank_path.read_bytes() == round1

    text_path = tmp_path / "texts.vtte"
    vt.write_class_embeddings(texts, text_path)
    round1 = text_path.read_bytes()
    vt.write_class_embeddings(vt.read_class_embeddings(text_path), text_path)
    texts_exact = text_path.read_bytes() == round1

    params_path = tmp_path / "head.vtpm"
    vt.write_params(vt.init_params(16, 12, 4, 2, seed=1), params_path)
    round1 = params_path.read_bytes()
    vt.write_params(vt.read_params(params_path), params_path)
    params_exact = params_path.read_bytes() == round1

    errors_ok = True
    corrupt = tmp_path / "corrupt.bin"
    for reader, good in (
        (vt.read_bank, bank_path),
        (vt.read_class_embeddings, text_path),
        (vt.read_params, params_path),
    ):
        data = good.read_bytes()
        corrupt.write_bytes(b"XXXX" + data[4:])
        try:
            reader(corrupt)
            errors_ok = False
        except BadMagicError:
            pass
        corrupt.write_bytes(data[:4] + (42).to_bytes(4, "little") + data[8:])
        try:
            reader(corrupt)
            errors_ok = False
        except VersionError:
            pass
        corrupt.write_bytes(data[: len(data) // 2])
        try:
            reader(corrupt)
            errors_ok = False
        except TruncatedFileError:
            pass

    ok = bank_exact and texts_exact and params_exact and errors_ok
    announce(
        "format-suite", ok,
        f"bank exact={bank_exact}, texts exact={texts_exact}, "
        f"params exact={params_exact}, error variants={errors_ok}",
    )
    assert bank_exact and texts_exact and params_exact
    assert errors_ok
