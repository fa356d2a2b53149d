"""Tests for cst_seld.objective module."""

import itertools

import numpy as np
import pandas as pd
import pytest

from cst_seld.doa import azel_to_unit, normalize
from cst_seld.enums import LossKind, MaskGradient
from cst_seld.errors import DataError, LabelError
from cst_seld.objective import (
    LABEL_COLUMNS,
    AdpitTargetSet,
    EventLabelFrame,
    adpit_loss,
    assemble_adpit_targets,
    assignment_patterns,
    best_candidates,
    count_weak_active,
    loss_for,
    read_label_csv,
    stack_targets,
    vtm_loss,
    vtm_mask,
    write_label_csv,
)
from cst_seld.tensor import Tensor

A = (1.0, 0.0, 0.0)
B = (0.0, 1.0, 0.0)
C = (0.0, 0.0, 1.0)


def single_cell(*doas):
    """Targets for B = T = N_cls = 1 with the given active DoAs."""
    labels = [EventLabelFrame(0, 0, i, d) for i, d in enumerate(doas)]
    return assemble_adpit_targets(labels, n_frames=1, n_classes=1)


def label_table(rows):
    return pd.DataFrame(rows, columns=LABEL_COLUMNS)


def brute_force_adpit(pred_tracks, cells):
    """Mean over cells of the best surjective track assignment, by full enumeration."""
    total = 0.0
    n_tracks = pred_tracks.shape[-2]
    for (t, c), doas in cells.items():
        p = pred_tracks[t, c]
        if not doas:
            total += float(np.mean(np.sum(p**2, axis=-1)))
            continue
        best = np.inf
        for mapping in itertools.product(range(len(doas)), repeat=n_tracks):
            if set(mapping) != set(range(len(doas))):
                continue
            target = np.array([doas[m] for m in mapping])
            best = min(best, float(np.mean(np.sum((p - target) ** 2, axis=-1))))
        total += best
    return total / len(cells)


class TestAssignmentPatterns:

    def test_candidate_counts(self):
        """Three tracks give 1, 1, 6 and 6 candidates for 0..3 events."""
        assert [len(assignment_patterns(k, 3)) for k in range(4)] == [1, 1, 6, 6]

    def test_patterns_are_surjective(self):
        for k in (1, 2, 3):
            for row in assignment_patterns(k, 3):
                assert set(row) == set(range(k))

    def test_patterns_are_read_only(self):
        with pytest.raises(ValueError):
            assignment_patterns(2, 3)[0, 0] = 1


class TestTargets:

    def test_assemble_from_table(self):
        table = label_table(
            [
                [2, 1, 0, 90.0, 0.0],
                [0, 0, 0, 0.0, 0.0],
                [2, 1, 1, 0.0, 90.0],
            ]
        )

        targets = assemble_adpit_targets(table, n_frames=4, n_classes=2)

        assert targets.shape == (1, 4, 2)
        assert targets.counts[0, 2, 1] == 2
        np.testing.assert_allclose(targets.events[0, 2, 1, 0], B, atol=1e-12)
        np.testing.assert_allclose(targets.events[0, 2, 1, 1], C, atol=1e-12)
        np.testing.assert_array_equal(targets.events[0, 2, 1, 2], 0.0)

    def test_events_beyond_clip_are_ignored(self):
        targets = assemble_adpit_targets([EventLabelFrame(9, 0, 0, A)], 4, 1)

        assert targets.counts.sum() == 0

    def test_too_many_events(self):
        labels = [EventLabelFrame(0, 0, i, A) for i in range(4)]

        with pytest.raises(LabelError, match="more than 3"):
            assemble_adpit_targets(labels, 1, 1)

    def test_class_out_of_range(self):
        with pytest.raises(LabelError, match="out of range"):
            assemble_adpit_targets([EventLabelFrame(0, 5, 0, A)], 1, 4)

    def test_non_unit_doa(self):
        with pytest.raises(LabelError, match="unit"):
            EventLabelFrame(0, 0, 0, (0.5, 0.0, 0.0))

    def test_candidates_layout(self):
        """Dense candidates are padded to the largest count and flagged."""
        targets, valid = single_cell(A, B).candidates()

        assert targets.shape == (1, 1, 1, 6, 3, 3)
        assert valid.sum() == 6
        for cand in targets[0, 0, 0]:
            rows = {tuple(r) for r in cand}
            assert rows == {A, B}

    def test_candidate_list_single_event(self):
        """One event fills every track."""
        (only,) = single_cell(A).candidate_list(0, 0, 0)

        np.testing.assert_array_equal(only, [A, A, A])

    def test_stack_and_select(self):
        stacked = stack_targets([single_cell(A), single_cell(A, B), single_cell()])

        assert stacked.shape == (3, 1, 1)
        assert list(stacked[np.array([2, 1])].counts.ravel()) == [0, 2]

    def test_counts_must_fit_tracks(self):
        with pytest.raises(LabelError):
            AdpitTargetSet(np.zeros((1, 1, 1, 3, 3)), np.full((1, 1, 1), 4))


class TestLabelFiles:

    def test_write_then_read(self, tmp_path):
        table = label_table([[3, 1, 0, -45.0, 10.0], [1, 0, 2, 170.0, -5.0]])
        write_label_csv(table, tmp_path / "clip.csv")

        back = read_label_csv(tmp_path / "clip.csv")

        assert list(back["frame_index"]) == [1, 3]
        assert back["azimuth_deg"].dtype == float

    def test_schema_is_checked(self, tmp_path):
        (tmp_path / "bad.csv").write_text("frame,class\n0,1\n")

        with pytest.raises(DataError, match="expected columns"):
            read_label_csv(tmp_path / "bad.csv")

    def test_negative_index(self, tmp_path):
        write_label_csv(label_table([[-1, 0, 0, 0.0, 0.0]]), tmp_path / "neg.csv")

        with pytest.raises(DataError, match="negative"):
            read_label_csv(tmp_path / "neg.csv")


class TestAdpitLoss:

    def test_zero_for_any_candidate(self, float64):
        """Any candidate assignment is a perfect prediction."""
        targets = single_cell(A, B)
        for cand in targets.candidate_list(0, 0, 0):
            assert adpit_loss(Tensor(cand.reshape(1, 1, 9)), targets).item() == 0.0

    def test_silent_prediction_costs_active_cells(self, float64):
        """Zero output costs 1 per active class-frame, averaged over all of them."""
        labels = [EventLabelFrame(0, 0, 0, A), EventLabelFrame(1, 2, 0, B)]
        targets = assemble_adpit_targets(labels, n_frames=2, n_classes=4)

        loss = adpit_loss(Tensor(np.zeros((1, 2, 36))), targets)

        assert loss.item() == pytest.approx(2 / 8)

    def test_picks_minimum_candidate(self, float64):
        """The cheapest assignment decides the loss."""
        targets = single_cell(A, B)
        pred = np.array([A, B, (0.9, 0.1, 0.0)])

        loss = adpit_loss(Tensor(pred.reshape(1, 1, 9)), targets).item()

        assert loss == pytest.approx((0.01 + 0.01) / 3)

    def test_matches_brute_force_enumeration(self, float64, rng):
        """500 random small scenes agree with an exhaustive search over assignments."""
        for _ in range(500):
            n_frames, n_classes = rng.integers(1, 5), rng.integers(1, 4)
            cells, labels = {}, []
            for t in range(n_frames):
                for c in range(n_classes):
                    k = int(rng.integers(0, 4))
                    az, el = rng.uniform(-180, 180, k), rng.uniform(-90, 90, k)
                    doas = [tuple(d) for d in azel_to_unit(az, el).reshape(k, 3)]
                    cells[(t, c)] = doas
                    labels += [EventLabelFrame(t, c, i, d) for i, d in enumerate(doas)]
            targets = assemble_adpit_targets(labels, int(n_frames), int(n_classes))
            pred = rng.normal(size=(1, n_frames, n_classes * 9))

            loss = adpit_loss(Tensor(pred), targets).item()

            expected = brute_force_adpit(pred.reshape(n_frames, n_classes, 3, 3), cells)
            assert loss == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_gradient(self, gradcheck, rng):
        labels = [
            EventLabelFrame(0, 1, 0, A),
            EventLabelFrame(0, 1, 1, B),
            EventLabelFrame(1, 0, 0, C),
        ]
        targets = assemble_adpit_targets(labels, n_frames=2, n_classes=2)

        gradcheck(lambda p: adpit_loss(p, targets), rng.normal(size=(1, 2, 18)) * 0.5)

    def test_size_mismatch(self, float64):
        with pytest.raises(DataError, match="does not match"):
            adpit_loss(Tensor(np.zeros((1, 1, 8))), single_cell(A))


class TestVtmLoss:

    def test_masking_happens_before_the_minimum(self, float64):
        """A short track is treated as silent when choosing the candidate."""
        targets = single_cell(A, B)
        pred = Tensor(np.array([A, B, (0.3, 0.0, 0.0)]).reshape(1, 1, 9))

        assert adpit_loss(pred, targets).item() == pytest.approx(0.49 / 3)
        assert vtm_loss(pred, targets).item() == pytest.approx(1 / 3)

    def test_matches_adpit_for_long_vectors(self, float64, rng):
        targets = single_cell(A, B, C)
        pred = azel_to_unit(rng.uniform(-180, 180, 3), rng.uniform(-60, 60, 3))

        a = adpit_loss(Tensor(pred.reshape(1, 1, 9)), targets).item()
        v = vtm_loss(Tensor(pred.reshape(1, 1, 9)), targets).item()

        assert v == pytest.approx(a)

    def test_hard_mask_blocks_gradient(self, float64):
        targets = single_cell(A)
        pred = Tensor(np.array([A, A, (0.2, 0.0, 0.0)]).reshape(1, 1, 9), requires_grad=True)
        vtm_loss(pred, targets, mask_gradient=MaskGradient.HARD).backward()

        np.testing.assert_array_equal(pred.grad.reshape(3, 3)[2], 0.0)

    def test_straight_through_passes_gradient(self, float64):
        """The masked value is used forward, the unmasked gradient backward."""
        targets = single_cell(A)
        pred = Tensor(np.array([A, A, (0.2, 0.0, 0.0)]).reshape(1, 1, 9), requires_grad=True)
        loss = vtm_loss(pred, targets, mask_gradient=MaskGradient.STRAIGHT_THROUGH)
        loss.backward()

        assert loss.item() == pytest.approx(1 / 3)
        np.testing.assert_allclose(pred.grad.reshape(3, 3)[2], [-1.6 / 3, 0.0, 0.0])

    @staticmethod
    def mixed_scene(rng):
        """Two frames, two classes; a third of the tracks are clearly short."""
        labels = [
            EventLabelFrame(0, 0, 0, A),
            EventLabelFrame(0, 0, 1, B),
            EventLabelFrame(1, 0, 0, C),
            EventLabelFrame(1, 1, 0, A),
            EventLabelFrame(1, 1, 1, B),
            EventLabelFrame(1, 1, 2, C),
        ]
        targets = assemble_adpit_targets(labels, n_frames=2, n_classes=2)
        directions = normalize(rng.normal(size=(1, 2, 2, 3, 3)))
        short = np.zeros((1, 2, 2, 3, 1), dtype=bool)
        short[..., 2, :] = True
        short[0, 1, 1, 0] = True
        lengths = np.where(short, 0.2, 0.9) + rng.uniform(-0.05, 0.05, size=short.shape)
        return targets, (directions * lengths).reshape(1, 2, 18)

    def test_gradient(self, gradcheck, rng):
        """With the hard mask the gradient is that of the masked forward value."""
        targets, pred = self.mixed_scene(rng)

        gradcheck(lambda p: vtm_loss(p, targets, mask_gradient=MaskGradient.HARD), pred)

    def test_straight_through_gradient(self, numgrad, rng):
        """Straight-through follows the unmasked error to the candidate picked on masked tracks."""
        targets, pred = self.mixed_scene(rng)
        tracks = pred.reshape(1, 2, 2, 3, 3)
        chosen = best_candidates(tracks * vtm_mask(tracks), targets)
        p = Tensor(pred.copy(), requires_grad=True)
        vtm_loss(p, targets, mask_gradient=MaskGradient.STRAIGHT_THROUGH).backward()

        def unmasked(values):
            diff = values.reshape(tracks.shape) - chosen
            return float(np.mean(np.sum(diff * diff, axis=-1)))

        np.testing.assert_allclose(p.grad, numgrad(unmasked, pred.copy()), atol=1e-6, rtol=1e-5)

    @pytest.mark.parametrize("mode", list(MaskGradient))
    def test_gradient_without_short_tracks(self, mode, gradcheck, rng):
        """When nothing is masked both modes reduce to the ADPIT gradient."""
        targets = single_cell(A, B, C)
        pred = azel_to_unit(rng.uniform(-180, 180, 3), rng.uniform(-60, 60, 3)) * 0.8

        gradcheck(lambda p: vtm_loss(p, targets, mask_gradient=mode), pred.reshape(1, 1, 9))

    def test_weak_active_count(self):
        targets = single_cell(A, B)
        pred = np.array([A, B, (0.3, 0.0, 0.0)]).reshape(1, 1, 1, 3, 3)

        assert count_weak_active(pred, targets) == 1
        assert count_weak_active(pred, targets, threshold=0.2) == 0

    def test_loss_for_dispatch(self, float64):
        targets = single_cell(A, B)
        pred = Tensor(np.array([A, B, (0.3, 0.0, 0.0)]).reshape(1, 1, 9))

        assert loss_for(LossKind.ADPIT, pred, targets).item() == pytest.approx(0.49 / 3)
        assert loss_for("vtm", pred, targets).item() == pytest.approx(1 / 3)
