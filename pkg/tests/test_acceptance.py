"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criterion 1 is expected to fail on exactly one datum: the published ensemble
row 21.5 is internally inconsistent (see tests/table_data.py); the criterion
is asserted as stated rather than patched around.
"""

import math
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from ctbodycomp.fusion import (
    MuscleMask,
    ProbabilityStack,
    area_difference_pct,
    fuse_mean_threshold,
    metrics_from_counts,
    parse_pmap,
    serialize_pmap,
    sma_from_mask,
)
from ctbodycomp.dicom import parse_dicom_file, serialize_dicom
from ctbodycomp.errors import CtBodyCompError
from ctbodycomp.nifti import parse_nifti_labels, serialize_nifti_labels
from ctbodycomp.phantom import (
    PhantomSpec,
    annulus_distance_px,
    generate_prob_maps,
    generate_study,
    reference_mask,
    write_study,
)
from ctbodycomp.pipeline import RunConfig, run_pipeline
from ctbodycomp.predictor import (
    MlpSpec,
    bce_loss_and_gradients,
    evaluate,
    mlp_train,
    smote,
)
from ctbodycomp.stats import (
    build_design_matrix,
    concordance_index,
    corr_significance,
    fit_coxph,
    pearson_r,
)
from ctbodycomp.uncertainty import CalibrationModel, apply_platt, compute_report, fit_platt
from ctbodycomp.vertebra import averaging_window, mid_slice_index

from table_data import DROPOUT_ROWS, ENSEMBLE_ROWS, NOISY_CASES
from test_stats import brute_force_concordance, brute_force_efron_loglik, make_row

RESULTS: dict[int, tuple[str, str]] = {}


@contextmanager
def criterion(number: int, description: str):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        RESULTS[number] = ("FAIL", description)
        raise
    finally:
        elapsed = time.perf_counter() - started
        status, _ = RESULTS.get(number, ("PASS", description))
        RESULTS[number] = (status, f"{description} [{elapsed:.2f}s]")


@pytest.fixture(scope="module", autouse=True)
def _print_summary():
    yield
    print("\nacceptance criteria:", file=sys.__stdout__)
    for number in sorted(RESULTS):
        status, description = RESULTS[number]
        print(f"  [{status}] criterion {number}: {description}", file=sys.__stdout__)


def check_table_rows(rows):
    failures = []
    for case, pred, ref, diff, jaccard, dice, fp, fn in rows:
        if pred - fp + fn != ref:
            failures.append(f"{case}: pred-FP+FN = {pred - fp + fn} != ref {ref}")
        report = metrics_from_counts(pred, pred - fp + fn, fp, fn)
        if abs(report.dice_pct - dice) > 0.01:
            failures.append(f"{case}: dice {report.dice_pct:.4f} vs printed {dice}")
        if abs(report.jaccard_pct - jaccard) > 0.01:
            failures.append(f"{case}: jaccard {report.jaccard_pct:.4f} vs printed {jaccard}")
        recomputed_diff = area_difference_pct(pred, ref)
        if abs(recomputed_diff - diff) > 0.01:
            failures.append(f"{case}: diff {recomputed_diff:.4f} vs printed {diff}")
    return failures


def test_criterion_1_ensemble_table_oracle():
    with criterion(1, "ensemble per-case oracle, 25 rows"):
        start = time.perf_counter()
        failures = check_table_rows(ENSEMBLE_ROWS)
        assert time.perf_counter() - start < 1.0
        assert not failures, (
            "published ensemble table is internally inconsistent: "
            + "; ".join(failures)
            + " (unique consistent correction: row 21.5 FP=593, a duplication "
            "of the FN value in print)"
        )


def test_criterion_2_dropout_table_oracle():
    with criterion(2, "dropout per-case oracle, 25 rows"):
        start = time.perf_counter()
        failures = check_table_rows(DROPOUT_ROWS)
        assert time.perf_counter() - start < 1.0
        assert not failures, "; ".join(failures)


def test_criterion_3_aggregate_reproduction():
    with criterion(3, "clean-set aggregates: Dice 97.80, Jaccard 95.71, |diff| 0.90, std 0.93"):
        clean = [row for row in ENSEMBLE_ROWS if row[0] not in NOISY_CASES]
        assert len(clean) == 21
        dices = np.array([row[5] for row in clean])
        jaccards = np.array([row[4] for row in clean])
        diffs = np.array([abs(row[3]) for row in clean])
        assert dices.mean() == pytest.approx(97.80, abs=0.01)
        assert jaccards.mean() == pytest.approx(95.71, abs=0.01)
        assert diffs.mean() == pytest.approx(0.90, abs=0.01)
        assert dices.std() == pytest.approx(0.93, abs=0.02)


def test_criterion_4_phantom_end_to_end(tmp_path):
    with criterion(4, "phantom pipeline accuracy and variance-error correlation"):
        start = time.perf_counter()
        spec = PhantomSpec()  # 0.8 mm spacing, zero noise
        study = generate_study(spec)
        write_study(study, tmp_path / "studies")
        result = run_pipeline(
            RunConfig(input_root=tmp_path / "studies", output_root=tmp_path / "out")
        )
        assert not result.errors
        (row,) = result.manifest
        relative_error = abs(row.sma_cm2 - study.analytic_sma_cm2) / study.analytic_sma_cm2
        assert relative_error < 0.01

        # 40 distinct noisy phantoms (geometry and ensemble draws both vary)
        rng = np.random.default_rng(1000)
        variances, errors = [], []
        seed = 1000
        for sigma in (0.05, 0.1, 0.2, 0.3):
            for _ in range(10):
                r_out = float(rng.uniform(55, 65))
                noisy_spec = PhantomSpec(
                    r_outer_mm=r_out,
                    r_inner_mm=r_out - float(rng.uniform(18, 22)),
                    perturb_sigma=sigma,
                    seed=seed,
                )
                ref = reference_mask(noisy_spec)
                ref_sma = sma_from_mask(
                    MuscleMask.from_pixels(ref, spacing=noisy_spec.pixel_spacing_mm)
                )
                stack = generate_prob_maps(
                    ref, 5, sigma, seed=seed,
                    distance_px=annulus_distance_px(noisy_spec),
                )
                seed += 1
                _, mask = fuse_mean_threshold(stack, spacing=noisy_spec.pixel_spacing_mm)
                per_member = [
                    sma_from_mask(
                        MuscleMask.from_pixels(m > 0.5, noisy_spec.pixel_spacing_mm)
                    )
                    for m in stack.maps
                ]
                report = compute_report(stack, mask, per_member)
                variances.append(report.avg_variance)
                errors.append(100 * abs(sma_from_mask(mask) - ref_sma) / ref_sma)
        assert len(variances) == 40
        assert pearson_r(variances, errors) >= 0.7
        assert time.perf_counter() - start < 120


def test_criterion_5_uncertainty_metric_properties():
    with criterion(5, "entropy Jensen bound, variance range, permutation invariance"):
        start = time.perf_counter()
        rng = np.random.default_rng(55)
        for _ in range(1000):
            members = int(rng.integers(1, 7))
            stack = ProbabilityStack.flat(rng.random((members, 6, 6)))
            _, mask = fuse_mean_threshold(stack)
            report = compute_report(stack, mask, list(rng.random(members)))
            assert report.expected_entropy <= report.avg_entropy + 1e-12
            assert 0.0 <= report.avg_variance <= 0.25
            if report.avg_variance_sm is not None:
                assert 0.0 <= report.avg_variance_sm <= 0.25

        maps = rng.random((6, 5, 5))
        smas = list(rng.random(6) * 100)
        _, mask = fuse_mean_threshold(ProbabilityStack.flat(maps))
        base = compute_report(ProbabilityStack.flat(maps), mask, smas)
        for _ in range(5):
            perm = rng.permutation(6)
            shuffled = compute_report(
                ProbabilityStack.flat(maps[perm]), mask, [smas[i] for i in perm]
            )
            assert shuffled.avg_variance == pytest.approx(base.avg_variance, abs=1e-12)
            assert shuffled.avg_entropy == pytest.approx(base.avg_entropy, abs=1e-12)
            assert shuffled.expected_entropy == pytest.approx(
                base.expected_entropy, abs=1e-12
            )
            assert shuffled.cov_sma_pct == pytest.approx(base.cov_sma_pct, abs=1e-12)

        single = ProbabilityStack.flat(rng.random((1, 6, 6)))
        _, mask = fuse_mean_threshold(single)
        r = compute_report(single, mask, [42.0])
        assert r.avg_variance == 0.0 and r.cov_pixelwise_pct == 0.0 and r.cov_sma_pct == 0.0
        assert r.avg_entropy == pytest.approx(r.expected_entropy, abs=1e-15)
        assert time.perf_counter() - start < 30


def test_criterion_6_mid_slice_rules_exhaustive():
    with criterion(6, "mid-slice and window rules, counts 1..100"):
        start = time.perf_counter()
        for count in range(1, 101):
            if count <= 12:
                raw = count // 2 - 1
            elif count <= 32:
                raw = count // 2 - 2
            else:
                raw = count // 2 - 3
            expected_mid = min(max(raw, 0), count - 1)
            assert mid_slice_index(count) == expected_mid
            reach = 2 if count > 12 else 1
            expected_window = sorted(
                {min(max(i, 0), count - 1)
                 for i in range(expected_mid - reach, expected_mid + reach + 1)}
            )
            assert averaging_window(count, expected_mid) == expected_window
        assert time.perf_counter() - start < 1.0


def test_criterion_7_cox_and_concordance():
    with criterion(7, "Cox brute-force oracle, beta recovery, concordance enumeration"):
        start = time.perf_counter()
        # (a) five-subject brute-force partial-likelihood agreement
        ages = [50.0, 61.0, 44.0, 70.0, 57.0]
        times = [5.0, 8.0, 11.0, 3.0, 14.0]
        events = [True, True, False, True, True]
        rows = [make_row(a, t, e) for a, t, e in zip(ages, times, events)]
        model = fit_coxph(rows, penalizer=0.0, include=("age",))
        design = build_design_matrix(rows, include=("age",))
        tv = np.array(times)
        ev = np.array(events)

        def loglik(beta):
            return brute_force_efron_loglik(design.values, tv, ev, np.array([beta]))

        lo, hi = -10.0, 10.0
        golden = (math.sqrt(5) - 1) / 2
        a, b = lo, hi
        c, d = b - golden * (b - a), a + golden * (b - a)
        for _ in range(200):
            if loglik(c) > loglik(d):
                b, d = d, c
                c = b - golden * (b - a)
            else:
                a, c = c, d
                d = a + golden * (b - a)
        assert model.coefficients["age"] == pytest.approx((a + b) / 2, abs=1e-4)

        # (b) synthetic recovery at n = 500
        rng = np.random.default_rng(42)
        z = rng.normal(0.0, 1.0, 500)
        hazards = 0.05 * np.exp(0.7 * z)
        event_times = rng.exponential(1.0 / hazards)
        censor_times = rng.exponential(50.0, 500)
        observed = np.minimum(event_times, censor_times)
        flags = event_times <= censor_times
        sim_rows = [
            make_row(50.0 + 10.0 * zi, float(t), bool(e))
            for zi, t, e in zip(z, observed, flags)
        ]
        sim_model = fit_coxph(sim_rows, penalizer=0.0, include=("age",))
        assert sim_model.coefficients["age"] == pytest.approx(0.7 * z.std(), abs=0.1)

        # (c) exact agreement with pair enumeration on 200 random datasets
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 200:
            n = int(rng.integers(2, 41))
            t = rng.integers(1, 15, n).astype(float)
            e = rng.random(n) < 0.65
            risk = np.round(rng.normal(size=n), 1)
            expected = brute_force_concordance(t, e, risk)
            if expected is None:
                continue
            assert concordance_index(t, e, risk) == pytest.approx(expected, abs=1e-13)
            checked += 1
        assert time.perf_counter() - start < 60


def test_criterion_8_mlp_and_smote():
    with criterion(8, "gradient check, retrain bit-identity, SMOTE convexity, evaluate oracle"):
        start = time.perf_counter()
        # finite-difference gradient check on a fixed tiny network
        rng = np.random.default_rng(88)
        x = rng.normal(size=(5, 3))
        y = (rng.random(5) > 0.5).astype(float)
        spec = MlpSpec((4, 2), (0.0, 0.0), epochs=1, learning_rate=0.1, seed=8)
        model, _ = mlp_train(spec, x, y)
        xz = (x - model.feature_means) / model.feature_stds
        weights = [w.copy() for w in model.weights]
        biases = [b.copy() for b in model.biases]
        _, grad_w, grad_b = bce_loss_and_gradients(weights, biases, xz, y)
        eps = 1e-5
        for params, grads in ((weights, grad_w), (biases, grad_b)):
            for layer, grid in enumerate(params):
                it = np.nditer(grid, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    keep = grid[idx]
                    grid[idx] = keep + eps
                    up, _, _ = bce_loss_and_gradients(weights, biases, xz, y)
                    grid[idx] = keep - eps
                    down, _, _ = bce_loss_and_gradients(weights, biases, xz, y)
                    grid[idx] = keep
                    numeric = (up - down) / (2 * eps)
                    analytic = grads[layer][idx]
                    denom = max(abs(numeric), abs(analytic), 1e-8)
                    assert abs(numeric - analytic) / denom < 1e-4

        # deterministic retraining bit-identity
        xb = np.vstack([rng.normal(-2, 1, (30, 2)), rng.normal(2, 1, (30, 2))])
        yb = np.concatenate([np.zeros(30), np.ones(30)])
        spec = MlpSpec((8, 4), (0.2, 0.1), epochs=25, learning_rate=1e-3, seed=99)
        first, _ = mlp_train(spec, xb, yb)
        second, _ = mlp_train(spec, xb, yb)
        for wa, wb in zip(first.weights, second.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(first.biases, second.biases):
            assert np.array_equal(ba, bb)

        # SMOTE convexity on 1000 draws
        minority = rng.normal(size=(10, 3))
        synthetic = smote(minority, k=5, n_synthetic=1000, seed=3)
        for s in synthetic:
            on_segment = False
            for i in range(10):
                seg_found = False
                for j in range(10):
                    if i == j:
                        continue
                    seg = minority[j] - minority[i]
                    u = float((s - minority[i]) @ seg) / float(seg @ seg)
                    if -1e-9 <= u <= 1 + 1e-9 and np.allclose(
                        minority[i] + u * seg, s, atol=1e-9
                    ):
                        seg_found = True
                        break
                if seg_found:
                    on_segment = True
                    break
            assert on_segment

        # evaluate() against a brute-force counting oracle
        probs = rng.random(500)
        labels = (rng.random(500) > 0.5).astype(int)
        report = evaluate(probs, labels)
        tp = sum(1 for p, t in zip(probs, labels) if p > 0.5 and t == 1)
        fp = sum(1 for p, t in zip(probs, labels) if p > 0.5 and t == 0)
        fn = sum(1 for p, t in zip(probs, labels) if p <= 0.5 and t == 1)
        tn = sum(1 for p, t in zip(probs, labels) if p <= 0.5 and t == 0)
        assert (report.tp, report.fp, report.fn, report.tn) == (tp, fp, fn, tn)
        assert time.perf_counter() - start < 60


def test_criterion_9_calibration():
    with criterion(9, "Platt recovery within 0.1; identity model exact"):
        start = time.perf_counter()
        rng = np.random.default_rng(99)
        p_true = rng.uniform(0.02, 0.98, 10_000)
        labels = (rng.random(10_000) < p_true).astype(int)
        logit = np.log(p_true / (1 - p_true))
        scores = 1.0 / (1.0 + np.exp(-(0.5 * logit - 1.0)))
        model = fit_platt(scores, labels)
        assert model.a == pytest.approx(2.0, abs=0.1)
        assert model.b == pytest.approx(2.0, abs=0.1)

        identity = CalibrationModel(a=1.0, b=0.0, fitted=True)
        for p in np.linspace(0.01, 0.99, 99):
            assert apply_platt(identity, float(p)) == pytest.approx(float(p), abs=1e-12)
        assert time.perf_counter() - start < 10


def test_criterion_10_statistical_significance():
    with criterion(10, "t statistic 8.31, p < 1e-7, quadrature agreement 1e-6"):
        start = time.perf_counter()
        t, p, significant = corr_significance(0.866, 25)
        assert abs(t) == pytest.approx(8.31, abs=0.01)
        assert p < 1e-7 and significant

        from test_stats import t_tail_quadrature

        rng = np.random.default_rng(10)
        for n in (5, 25, 100):
            for r in rng.uniform(-0.9, 0.9, 6):
                t, p, _ = corr_significance(float(r), n)
                assert p == pytest.approx(t_tail_quadrature(t, n - 2), abs=1e-6)
        assert time.perf_counter() - start < 10


def test_criterion_11_parser_round_trips_and_fuzz(tmp_path):
    with criterion(11, "round-trip identity on phantom outputs; 10,000-case truncation fuzz"):
        start = time.perf_counter()
        spec = PhantomSpec(rows=48, cols=48, slice_count=6, l3_range=(2, 4),
                           r_inner_mm=8.0, r_outer_mm=12.0, noise_sigma_hu=7.0,
                           perturb_sigma=0.2, seed=11)
        study = generate_study(spec)
        for ct in study.slices:
            assert parse_dicom_file(serialize_dicom(ct)) == ct
        for gz in (False, True):
            back = parse_nifti_labels(serialize_nifti_labels(study.labels, gzipped=gz))
            assert np.array_equal(back.voxels, study.labels.voxels)
            assert back.dims == study.labels.dims

        dicom_blob = serialize_dicom(study.slices[0])
        nifti_blob = serialize_nifti_labels(study.labels)
        nifti_gz_blob = serialize_nifti_labels(study.labels, gzipped=True)
        pmap_blob = serialize_pmap(
            generate_prob_maps(study.reference_mask, 1, 0.0, seed=0).maps[0], 0
        )
        corpora = [
            (dicom_blob, parse_dicom_file, 4000),
            (nifti_blob, parse_nifti_labels, 2000),
            (nifti_gz_blob, parse_nifti_labels, 2000),
            (pmap_blob, lambda b: parse_pmap(b), 2000),
        ]
        rng = np.random.default_rng(1111)
        fuzz_cases = 0
        for blob, parser, cases in corpora:
            cuts = rng.integers(0, len(blob), cases)
            for cut in cuts:
                try:
                    parser(blob[: int(cut)])
                except CtBodyCompError:
                    pass
                # Any other exception type is a crash and fails the criterion.
                fuzz_cases += 1
        assert fuzz_cases == 10_000
        assert time.perf_counter() - start < 120
