"""Count-based fitting: targets, permutation invariance, NLL, diagnostics."""

import math

import numpy as np
import pytest

from boxcast.boxes import (
    BoxParams,
    Normalizer,
    Quantizer,
    SymmetryMode,
    default_ranges,
)
from boxcast.distributions import Context, OrderedAnalytic, log_prob, sample
from boxcast.fitting import (
    FitConfig,
    TrainingExample,
    build_targets,
    evaluate_nll,
    expected_iou_loss,
    fit_gaussian,
    fit_report,
    fit_tabular,
)
from boxcast.inference import BeamConfig, beam_search
from boxcast.boxes import BoxCodec

UNIT_NORM = Normalizer((1, 1, 1), (0, 0, 0))
CTX = Context(0)


def example(box, ctx=0, symmetry=SymmetryMode.NONE):
    return TrainingExample(Context(ctx), box, UNIT_NORM, symmetry)


BOX_A = BoxParams((0.4, 0.5, 0.6), (0.1, 0.0, -0.1), (0.3, 0.0, 0.0))
BOX_B = BoxParams((0.4, 0.5, 0.3), (0.1, 0.0, -0.1), (0.3, 0.0, 0.0))  # height differs


# ------------------------------------------------------------------- targets


def test_targets_none_mode():
    q = Quantizer(512)
    targets = build_targets(example(BOX_A), q)
    assert len(targets) == 1 and targets[0][1] == 1.0


def test_targets_full_so3():
    q = Quantizer(512)
    targets = build_targets(example(BOX_A, symmetry=SymmetryMode.FULL_SO3), q)
    assert len(targets) == 24
    assert all(w == pytest.approx(1 / 24) for _, w in targets)


def test_targets_yaw():
    q = Quantizer(512)
    box = BoxParams((0.4, 0.5, 0.6), (0, 0, 0), (0.3, 0, 0))
    targets = build_targets(example(box, symmetry=SymmetryMode.YAW), q)
    assert len(targets) == 4
    assert all(w == pytest.approx(0.25) for _, w in targets)


# ------------------------------------------------------------------- fitting


def test_point_mass_fit_beam_recovers():
    data = [example(BOX_A)] * 20
    model = fit_tabular(data, FitConfig(alpha=1e-6, auto_ranges=False))
    out, _ = beam_search(model, CTX, BeamConfig(4))
    assert out.indices == model.codec.encode(BOX_A).indices


def test_two_box_height_split_counts():
    data = [example(BOX_A), example(BOX_B)] * 10
    cfg = FitConfig(alpha=0.1, auto_ranges=False)
    model = fit_tabular(data, cfg)
    qa = model.codec.encode(BOX_A)
    qb = model.codec.encode(BOX_B)
    # Same dx, dy bins; heights differ at step 2 (dz).
    assert qa.indices[0:2] == qb.indices[0:2] and qa.indices[2] != qb.indices[2]
    counts = model.raw_counts(0, 2, tuple(qa.indices[0:2]))
    assert counts[qa.indices[2]] == pytest.approx(10.0)
    assert counts[qb.indices[2]] == pytest.approx(10.0)
    assert counts.sum() == pytest.approx(20.0)


def test_symmetry_averaging_equalizes_yaw_bins():
    box = BoxParams((0.4, 0.4, 0.6), (0, 0, 0), (0.3, 0, 0))
    data = [example(box, symmetry=SymmetryMode.YAW)] * 8
    model = fit_tabular(data, FitConfig(auto_ranges=False))
    members = build_targets(example(box, symmetry=SymmetryMode.YAW), model.codec.quantizer)
    yaw_step = 6
    bins = [qb.indices[yaw_step] for qb, _ in members]
    prefix = members[0][0].indices[:yaw_step]
    counts = model.raw_counts(0, yaw_step, tuple(prefix))
    # theta and theta+pi bins receive equal mass (square footprint: all four).
    assert counts[bins[0]] == pytest.approx(counts[bins[1]])


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    boxes = [
        BoxParams(tuple(rng.uniform(0.2, 0.9, 3)), tuple(rng.uniform(-0.5, 0.5, 3)), (0, 0, 0))
        for _ in range(30)
    ]
    data = [example(b, ctx=i % 3) for i, b in enumerate(boxes)]
    shuffled = list(data)
    rng.shuffle(shuffled)
    m1 = fit_tabular(data, FitConfig(auto_ranges=False))
    m2 = fit_tabular(shuffled, FitConfig(auto_ranges=False))
    assert set(m1._tables) == set(m2._tables)
    for key in m1._tables:
        assert np.array_equal(m1._tables[key], m2._tables[key])


def test_smoothing_positive_probs():
    model = fit_tabular([example(BOX_A)], FitConfig(alpha=0.1, auto_ranges=False))
    probs = model.conditional_probs((), CTX)
    assert probs.min() > 0.0
    assert probs.min() >= 0.1 / (1.0 + 0.1 * model.bins) - 1e-12


def test_symmetry_consistent_log_prob():
    box = BoxParams((0.4, 0.4, 0.6), (0, 0, 0), (0.3, 0, 0))
    data = [example(box, symmetry=SymmetryMode.YAW)] * 8
    model = fit_tabular(data, FitConfig(auto_ranges=False))
    targets = build_targets(example(box, symmetry=SymmetryMode.YAW), model.codec.quantizer)
    lps = [log_prob(model, qb, CTX) for qb, _ in targets]
    assert max(lps) - min(lps) < 1e-9


def test_empty_dataset_errors():
    with pytest.raises(ValueError, match="empty dataset"):
        fit_tabular([])
    with pytest.raises(ValueError, match="empty dataset"):
        fit_gaussian([])


# ----------------------------------------------------------------------- NLL


def test_point_mass_nll_near_zero():
    data = [example(BOX_A)] * 50
    model = fit_tabular(data, FitConfig(alpha=1e-9, auto_ranges=False))
    nll = evaluate_nll(model, data)
    # Bounded by the smoothing floor: -9 log(count / (count + alpha * bins)).
    floor = -9 * math.log(50.0 / (50.0 + 1e-9 * 512))
    assert nll <= floor + 1e-9
    assert nll < 1e-6


def test_uniform_nll_nine_log_two():
    from test_distributions import make_uniform_chain

    chain = make_uniform_chain(bins=2)
    chain.codec = BoxCodec(UNIT_NORM, Quantizer(2))
    data = [example(BOX_A)]
    assert evaluate_nll(chain, data) == pytest.approx(9 * math.log(2), abs=1e-9)


def test_train_nll_not_above_heldout_in_expectation():
    gaps = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pool = [
            BoxParams(
                tuple(rng.uniform(0.3, 0.9, 3)), tuple(rng.uniform(-0.3, 0.3, 3)), (0, 0, 0)
            )
            for _ in range(40)
        ]
        data = [example(b) for b in pool]
        train, held = data[:20], data[20:]
        model = fit_tabular(train, FitConfig(auto_ranges=False))
        gaps.append(evaluate_nll(model, held) - evaluate_nll(model, train))
    assert np.mean(gaps) >= 0.0


# ------------------------------------------------------------ expected IoU


def test_expected_iou_point_mass():
    data = [example(BOX_A)] * 30
    model = fit_tabular(data, FitConfig(alpha=1e-9, auto_ranges=False))
    rng = np.random.default_rng(0)
    # Against the bin-centered ground truth the loss is quantization-free.
    binned = model.codec.decode(model.codec.encode(BOX_A))
    assert expected_iou_loss(model, CTX, binned, 50, rng) <= 0.01
    # Against the raw box it is quantization-limited: half-bin error per param.
    assert expected_iou_loss(model, CTX, BOX_A, 50, rng) <= 0.02


def test_expected_iou_zero_overlap():
    far = BoxParams((0.2, 0.2, 0.2), (0.9, 0.9, 0.9), (0, 0, 0))
    data = [example(far)] * 30
    model = fit_tabular(data, FitConfig(alpha=1e-9, auto_ranges=False))
    rng = np.random.default_rng(0)
    gt = BoxParams((0.2, 0.2, 0.2), (-0.9, -0.9, -0.9), (0, 0, 0))
    assert expected_iou_loss(model, CTX, gt, 20, rng) == pytest.approx(1.0)


def test_expected_iou_two_outcome_matches_enumeration():
    codec = BoxCodec(UNIT_NORM, Quantizer(512))
    a = BoxParams((0.5, 0.5, 0.2), (0, 0, -0.1), (0, 0, 0))
    b = BoxParams((0.5, 0.5, 0.6), (0, 0, -0.3), (0, 0, 0))
    dist = OrderedAnalytic([a, b], [0.3, 0.7], codec)
    from boxcast.geometry import iou
    from boxcast.distributions import expectation_refine

    # Exact enumeration over the two outcomes (refined through the codec).
    exact = 0.0
    for seq, p, _ in dist._atoms:
        refined = expectation_refine(dist, seq, CTX)
        exact += p * (1.0 - iou(refined, b))
    n = 4000
    rng = np.random.default_rng(1)
    mc = expected_iou_loss(dist, CTX, b, n, rng)
    # 3-sigma MC bound on a Bernoulli-like spread.
    spread = abs(
        (1.0 - iou(expectation_refine(dist, dist._atoms[0][0], CTX), b))
        - (1.0 - iou(expectation_refine(dist, dist._atoms[1][0], CTX), b))
    )
    sigma = spread * math.sqrt(0.3 * 0.7 / n)
    assert abs(mc - exact) <= 3 * sigma + 1e-9


# ----------------------------------------------------------------- reporting


def test_fit_report_fields():
    data = [example(BOX_A), example(BOX_B)] * 5
    model = fit_tabular(data, FitConfig(auto_ranges=False))
    report = fit_report(model, data)
    assert report.dataset_size == 10
    assert report.overflow_rate == 0.0
    assert len(report.per_step_entropy) == 9
    assert report.nll == pytest.approx(evaluate_nll(model, data))


def test_gaussian_fit_moments():
    data = [example(BOX_A), example(BOX_B)] * 10
    g = fit_gaussian(data, FitConfig(auto_ranges=False))
    mu, sigma = g.dims_moments(CTX)
    assert mu[2] == pytest.approx((0.6 + 0.3) / 2)
    assert sigma[2] == pytest.approx(0.15, rel=1e-6)
    assert mu[0] == pytest.approx(0.4)


def test_auto_ranges_cover_training_values():
    big = BoxParams((0.4, 0.5, 2.5), (0, 0, -1.2), (0, 0, 0))  # outside default [0,1]
    data = [example(big)] * 5
    model = fit_tabular(data, FitConfig(auto_ranges=True))
    qb = model.codec.encode(big)
    assert not qb.overflowed()
    decoded = model.codec.decode(qb)
    assert decoded.dims[2] == pytest.approx(2.5, rel=0.01)
