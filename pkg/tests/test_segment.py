import numpy as np
import pytest

from camprompt.cam import PointPrompt
from camprompt.errors import ContractViolation, EmptyProposal
from camprompt.segmenter import (
    FloodFillBackend,
    MaskProposalSet,
    SegmenterConfig,
    load_proposal_manifest,
    run_segmentation,
    save_proposal_manifest,
    segment_multi,
    segment_single,
)


class StubBackend:
    """Returns canned proposals; records the images it was queried with."""

    def __init__(self, proposals):
        self.proposals = proposals
        self.seen_images = []

    def propose(self, image, point, want_multi, k):
        self.seen_images.append(image)
        return list(self.proposals)


def _prompt(x=2, y=2, cid=1):
    return PointPrompt(class_id=cid, x=x, y=y, activation=1.0)


def _img(h=8, w=8):
    return np.zeros((h, w, 3), dtype=np.uint8)


def test_config_validation():
    with pytest.raises(ContractViolation):
        SegmenterConfig(input_mode="nope")
    with pytest.raises(ContractViolation):
        SegmenterConfig(mask_strategy="both")
    with pytest.raises(ContractViolation):
        SegmenterConfig(k_proposals=0)
    with pytest.raises(ContractViolation):
        SegmenterConfig(input_mode="smoothed", blur_sigma=0.0)
    SegmenterConfig(input_mode="smoothed", blur_sigma=10.0)  # valid


def test_single_unanimous():
    region = np.zeros((8, 8), bool)
    region[2:5, 2:5] = True
    backend = StubBackend([(region, 0.9), (region, 0.8), (region, 0.7)])
    out = segment_single(_img(), _prompt(), backend)
    assert len(out.masks) == 1
    assert np.array_equal(out.masks[0], region)
    assert out.scores[0] == pytest.approx((0.9 + 0.8 + 0.7) / 3)


def test_single_majority_two_of_three():
    ones = np.ones((8, 8), bool)
    zeros = np.zeros((8, 8), bool)
    backend = StubBackend([(ones, 0.9), (zeros, 0.8), (ones, 0.7)])
    out = segment_single(_img(), _prompt(), backend)
    assert np.array_equal(out.masks[0], ones)  # mean 2/3 >= 0.5


def test_single_exact_half_counts_as_foreground():
    ones = np.ones((4, 4), bool)
    zeros = np.zeros((4, 4), bool)
    backend = StubBackend([(ones, 0.5), (zeros, 0.5)])
    out = segment_single(_img(4, 4), _prompt(), backend)
    assert np.array_equal(out.masks[0], ones)  # mean exactly 0.5


def test_single_idempotent_on_unanimous_output():
    region = np.zeros((8, 8), bool)
    region[1:3, 4:7] = True
    backend = StubBackend([(region, 1.0)] * 3)
    once = segment_single(_img(), _prompt(), backend)
    again = segment_single(
        _img(), _prompt(), StubBackend([(once.masks[0], 1.0)] * 3)
    )
    assert np.array_equal(once.masks[0], again.masks[0])


def test_prompt_out_of_bounds():
    backend = StubBackend([(np.zeros((8, 8), bool), 1.0)])
    with pytest.raises(ContractViolation):
        segment_single(_img(), _prompt(x=8, y=0), backend)
    with pytest.raises(ContractViolation):
        segment_multi(_img(), _prompt(x=0, y=-1), backend, k=3)


def test_empty_proposals_signal():
    with pytest.raises(EmptyProposal):
        segment_single(_img(), _prompt(), StubBackend([]))


def test_multi_passthrough_sorted():
    a = np.zeros((8, 8), bool); a[0] = True
    b = np.zeros((8, 8), bool); b[1] = True
    c = np.zeros((8, 8), bool); c[2] = True
    backend = StubBackend([(a, 0.2), (b, 0.9), (c, 0.5)])
    out = segment_multi(_img(), _prompt(), backend, k=3)
    assert out.scores == [0.9, 0.5, 0.2]
    assert np.array_equal(out.masks[0], b)
    assert np.array_equal(out.masks[1], c)
    assert np.array_equal(out.masks[2], a)


def test_multi_short_set_no_padding():
    a = np.zeros((8, 8), bool)
    backend = StubBackend([(a, 0.2), (a, 0.9)])
    out = segment_multi(_img(), _prompt(), backend, k=3)
    assert len(out.masks) == 2


def test_multi_never_exceeds_k():
    a = np.zeros((8, 8), bool)
    backend = StubBackend([(a, s / 10) for s in range(8)])
    out = segment_multi(_img(), _prompt(), backend, k=3)
    assert len(out.masks) == 3
    assert out.scores == sorted(out.scores, reverse=True)


def test_multi_k1_top_mask():
    a = np.zeros((8, 8), bool); a[0] = True
    b = np.zeros((8, 8), bool); b[1] = True
    backend = StubBackend([(a, 0.3), (b, 0.8)])
    out = segment_multi(_img(), _prompt(), backend, k=1)
    assert len(out.masks) == 1
    assert np.array_equal(out.masks[0], b)


def test_run_segmentation_zero_prompts():
    cfg = SegmenterConfig()
    out, skipped = run_segmentation(_img(), [], cfg, StubBackend([]))
    assert out == [] and skipped == []


def test_run_segmentation_cardinality_single():
    region = np.zeros((8, 8), bool)
    backend = StubBackend([(region, 1.0)] * 3)
    cfg = SegmenterConfig(mask_strategy="single")
    out, skipped = run_segmentation(
        _img(), [_prompt(1, 1, cid=1), _prompt(2, 2, cid=2)], cfg, backend, image_id="im"
    )
    assert len(out) == 2 and not skipped
    assert all(len(s.masks) == 1 for s in out)
    assert all(s.image_id == "im" for s in out)


def test_run_segmentation_blur_once_and_only_for_backend():
    rng = np.random.default_rng(17)
    img = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
    region = np.zeros((16, 16), bool)
    backend = StubBackend([(region, 1.0)])
    cfg = SegmenterConfig(input_mode="smoothed", blur_sigma=2.0, mask_strategy="multi",
                          k_proposals=1)
    run_segmentation(img, [_prompt(1, 1), _prompt(3, 3), _prompt(5, 5)], cfg, backend)
    assert len(backend.seen_images) == 3
    first = backend.seen_images[0]
    assert all(seen is first for seen in backend.seen_images)  # blurred once
    assert not np.array_equal(first, img)  # backend sees the smoothed image


def test_run_segmentation_aggregates_empty_proposals():
    class FlakyBackend:
        def __init__(self):
            self.calls = 0

        def propose(self, image, point, want_multi, k):
            self.calls += 1
            if self.calls == 1:
                return []
            return [(np.zeros(image.shape[:2], bool), 0.5)]

    cfg = SegmenterConfig(mask_strategy="multi", k_proposals=2)
    out, skipped = run_segmentation(
        _img(), [_prompt(1, 1, cid=1), _prompt(2, 2, cid=2)], cfg, FlakyBackend()
    )
    assert len(out) == 1 and len(skipped) == 1
    assert skipped[0][0].class_id == 1


def test_manifest_roundtrip(tmp_path):
    masks = [np.zeros((6, 7), bool), np.ones((6, 7), bool)]
    masks[0][2, 3] = True
    proposals = MaskProposalSet(
        image_id="img01", class_id=4, prompt=_prompt(3, 2, cid=4),
        masks=masks, scores=[0.75, 0.5],
    )
    path = save_proposal_manifest(proposals, tmp_path)
    assert path.name == "img01.4.json"
    loaded = load_proposal_manifest(path)
    assert loaded.image_id == "img01"
    assert loaded.class_id == 4
    assert (loaded.prompt.x, loaded.prompt.y) == (3, 2)
    assert loaded.scores == [0.75, 0.5]
    for original, decoded in zip(masks, loaded.masks):
        assert np.array_equal(original, decoded)


def test_flood_fill_backend_recovers_solid_region():
    img = np.full((20, 20, 3), 120, dtype=np.uint8)
    img[4:12, 5:15] = (200, 30, 30)
    backend = FloodFillBackend()
    proposals = backend.propose(img, (7, 6), want_multi=True, k=3)
    expected = np.zeros((20, 20), bool)
    expected[4:12, 5:15] = True
    assert len(proposals) == 3
    for mask, score in proposals:
        assert np.array_equal(mask, expected)
        assert 0 < score <= 1
    scores = [s for _, s in proposals]
    assert scores == sorted(scores, reverse=True)


def test_flood_fill_separates_disconnected_same_color():
    img = np.full((20, 20, 3), 120, dtype=np.uint8)
    img[2:6, 2:6] = (200, 30, 30)
    img[12:16, 12:16] = (200, 30, 30)
    backend = FloodFillBackend()
    (mask, _), = backend.propose(img, (3, 3), want_multi=False, k=1)
    assert mask[3, 3]
    assert not mask[13, 13]
