"""Synthetic ambiguous-scene generation and its analytic latent distribution."""

import math

import numpy as np
import pytest

from boxcast.boxes import BoxParams
from boxcast.distributions import Context
from boxcast.geometry import iog
from boxcast.synthgen import (
    ScenarioKind,
    ScenarioSpec,
    SceneRecord,
    generate,
    latent_distribution,
    read_jsonl,
    write_jsonl,
)

STACKED = ScenarioSpec(ScenarioKind.STACKED_BIN, context_id=1, n_levels=4, seed=7)


# ----------------------------------------------------------------- generation


def test_stacked_height_histogram_uniform():
    n = 4000
    records = generate(STACKED, n)
    counts = np.bincount([r.latent_index for r in records], minlength=4)
    sigma = math.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) <= 3 * sigma)
    heights = {round(r.gt_box.dims[2], 9) for r in records}
    assert heights == {round(0.3 / i, 9) for i in range(1, 5)}


def test_unambiguous_gt_fixed_up_to_noise():
    spec = ScenarioSpec(ScenarioKind.UNAMBIGUOUS, noise_sigma=0.01, seed=3)
    records = generate(spec, 200)
    dims = np.array([r.gt_box.dims for r in records])
    assert np.all(np.abs(dims - (0.3, 0.3, 0.3)) < 6 * 0.01)
    assert dims.std(axis=0).max() < 0.02
    noiseless = generate(ScenarioSpec(ScenarioKind.UNAMBIGUOUS), 20)
    assert all(r.gt_box == noiseless[0].gt_box for r in noiseless)


def test_fixed_seed_bit_identical():
    a = generate(STACKED, 50)
    b = generate(STACKED, 50)
    for ra, rb in zip(a, b):
        assert ra.latent_index == rb.latent_index
        assert np.array_equal(ra.points, rb.points)
        assert ra.gt_box == rb.gt_box


def test_explicit_probs_respected():
    spec = ScenarioSpec(
        ScenarioKind.NESTED_ORDERED, nesting_ratios=(0.5, 1.0), probs=(0.9, 0.1), seed=0
    )
    records = generate(spec, 2000)
    frac = np.mean([r.latent_index == 0 for r in records])
    assert abs(frac - 0.9) < 0.03


def test_invalid_spec_errors():
    with pytest.raises(ValueError):
        ScenarioSpec(ScenarioKind.STACKED_BIN, height=-1.0)
    with pytest.raises(ValueError):
        ScenarioSpec(ScenarioKind.STACKED_BIN, probs=(0.5, 0.2))
    with pytest.raises(ValueError):
        generate(STACKED, 0)


def test_stub_never_encodes_latent_height():
    """Stubs from different latent heights are identical: context has no leak."""
    spec = ScenarioSpec(ScenarioKind.STACKED_BIN, n_levels=4)
    boxes, _ = spec.outcome_boxes()
    from boxcast.synthgen import _visible_stub

    rng = np.random.default_rng(0)
    stubs = [_visible_stub(spec, b, rng) for b in boxes]
    for s in stubs[1:]:
        assert np.allclose(s, stubs[0], atol=1e-12)


def test_stub_points_on_gt_surface():
    records = generate(STACKED, 20)
    for r in records:
        grown = BoxParams(
            tuple(np.asarray(r.gt_box.dims) + 1e-6), r.gt_box.center, r.gt_box.rot
        )
        from boxcast.geometry import contains_points

        assert contains_points(grown, r.points).all()


# ----------------------------------------------------- analytic distribution


def test_latent_distribution_stacked_atoms():
    dist = latent_distribution(STACKED)
    assert len(dist._atoms) == 4
    for _, p, box in dist._atoms:
        assert p == pytest.approx(0.25)
    # Volume-sorted nesting: every atom is contained in the next larger one.
    vols = [box.volume() for _, _, box in dist._atoms]
    assert vols == sorted(vols)
    for (_, _, small), (_, _, big) in zip(dist._atoms, dist._atoms[1:]):
        assert iog(big, small) >= 1.0 - 1e-9


def test_latent_distribution_nested_probs():
    spec = ScenarioSpec(
        ScenarioKind.NESTED_ORDERED, nesting_ratios=(0.5, 1.0), probs=(0.5, 0.5)
    )
    dist = latent_distribution(spec)
    assert len(dist._atoms) == 2
    assert [p for _, p, _ in dist._atoms] == pytest.approx([0.5, 0.5])


def test_latent_distribution_matches_generation_chi2():
    """Sampled heights from the analytic chain match generated frequencies."""
    n = 2000
    records = generate(STACKED, n)
    gen_counts = np.bincount([r.latent_index for r in records], minlength=4)

    dist = latent_distribution(STACKED)
    rng = np.random.default_rng(11)
    heights = sorted({round(b.dims[2], 9) for _, _, b in dist._atoms}, reverse=True)
    samp_counts = np.zeros(4, dtype=int)
    for _ in range(n):
        box = dist.sample_box(Context(STACKED.context_id), rng)
        samp_counts[heights.index(round(box.dims[2], 9))] += 1
    # Two-sample chi-square against the pooled expectation, alpha = 0.001.
    pooled = (gen_counts + samp_counts) / 2.0
    stat = ((gen_counts - pooled) ** 2 / pooled).sum() + (
        (samp_counts - pooled) ** 2 / pooled
    ).sum()
    from scipy.stats import chi2

    assert stat < chi2.ppf(0.999, df=3)


def test_latent_distribution_rejects_unordered():
    with pytest.raises(ValueError, match="no analytic form"):
        latent_distribution(ScenarioSpec(ScenarioKind.ROT_SYMMETRIC))
    with pytest.raises(ValueError, match="no analytic form"):
        latent_distribution(ScenarioSpec(ScenarioKind.UNAMBIGUOUS))


# -------------------------------------------------------------- serialization


def test_jsonl_round_trip(tmp_path):
    records = generate(STACKED, 25)
    path = tmp_path / "scenes.jsonl"
    write_jsonl(records, path)
    back = read_jsonl(path)
    assert len(back) == 25
    for a, b in zip(records, back):
        assert a.context_id == b.context_id
        assert a.latent_index == b.latent_index
        assert a.scenario_kind == b.scenario_kind
        assert np.allclose(a.points, b.points, atol=1e-8)
        assert np.allclose(a.gt_box.params_vector(), b.gt_box.params_vector(), atol=1e-9)


def test_spec_json_round_trip():
    spec = ScenarioSpec(
        ScenarioKind.NESTED_ORDERED,
        context_id=5,
        footprint=(0.2, 0.4),
        nesting_ratios=(0.3, 0.7, 1.0),
        probs=(0.2, 0.3, 0.5),
        stub_jitter=0.01,
        seed=9,
    )
    assert ScenarioSpec.from_json_dict(spec.to_json_dict()) == spec


def test_record_schema_version_checked():
    rec = generate(STACKED, 1)[0].to_json_dict()
    rec["schema_version"] = 99
    with pytest.raises(ValueError, match="schema_version"):
        SceneRecord.from_json_dict(rec)
