import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from dnbp.errors import DataError, DNBPError
from dnbp.evaluation import avg_euclidean_error, euclidean_errors_px, histogram_entropy
from dnbp.evaluation.analysis import (
    CSV_FIELDS, build_occluder_sequence, center_predictor, evaluate_dataset, hist2d,
    inspect_pairwise, occluder_masks, oracle_predictor, training_translations,
    uniform_baseline_px,
)
from dnbp.evaluation.metrics import MAX_ENTROPY, marginal_entropy, to_pixels
from dnbp.graph import Potentials, pendulum_graph
from dnbp.simulators.dataset import SequenceDataset

# mean distance from the center of a square of side 2 to a uniform point in it
CENTER_MEAN = (math.sqrt(2) + math.asinh(1)) / 3


def test_pixel_conversion():
    assert to_pixels([-1.0, 0.0, 1.0]).tolist() == [0.0, 64.0, 128.0]


def test_euclidean_error_examples():
    assert euclidean_errors_px([[0.0, 0.0]], [[0.0, 0.0]]).tolist() == [0.0]
    # a 3-4-5 triangle in pixels
    assert euclidean_errors_px([[3 / 64, 4 / 64]], [[0.0, 0.0]])[0] == pytest.approx(5.0)
    with pytest.raises(DNBPError):
        euclidean_errors_px(np.zeros((2, 2)), np.zeros((3, 2)))


def test_average_error_grouping():
    pred = np.zeros((4, 2, 2))
    truth = np.zeros((4, 2, 2))
    truth[:, 1, 0] = [1 / 64, 1 / 64, 3 / 64, 3 / 64]
    rep = avg_euclidean_error(pred, truth, bins=[0, 0, 1, 1])
    assert rep.mean == pytest.approx(1.0)
    assert rep.by_bin_node[(0, 1)] == pytest.approx(1.0) and rep.by_bin_node[(1, 1)] == pytest.approx(3.0)
    assert rep.bin_means() == pytest.approx({0: 0.5, 1: 1.5})
    with pytest.raises(DNBPError):
        avg_euclidean_error(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(DNBPError):
        avg_euclidean_error(pred, truth, bins=[0, 1])


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=20),
       st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=20))
def test_error_is_symmetric_and_non_negative(a, b):
    n = min(len(a), len(b))
    a, b = np.array(a[:n]), np.array(b[:n])
    e = euclidean_errors_px(a, b)
    assert np.all(e >= 0)
    np.testing.assert_array_equal(e, euclidean_errors_px(b, a))


def test_entropy_of_uniform_bins_is_log_1600():
    c = (np.arange(40) + 0.5) / 40 * 2 - 1
    pts = np.stack(np.meshgrid(c, c), -1).reshape(-1, 2)
    assert histogram_entropy(pts) == pytest.approx(math.log(1600), abs=1e-12)
    assert MAX_ENTROPY == pytest.approx(math.log(1600))


def test_entropy_of_two_bins_is_log_two():
    pts = np.array([[0.01, 0.01]] * 5 + [[-0.5, 0.7]] * 5)
    assert histogram_entropy(pts) == pytest.approx(math.log(2), abs=1e-12)
    assert histogram_entropy(np.array([[0.2, 0.2]] * 7)) == 0.0
    with pytest.raises(DNBPError):
        histogram_entropy(np.zeros((0, 2)))


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=200))
def test_entropy_bounds(points):
    h = histogram_entropy(np.array(points))
    assert 0.0 <= h <= math.log(min(len(points), 1600)) + 1e-9


def test_marginal_entropy_respects_weights(gen):
    particles = torch.tensor([[0.01, 0.01], [0.5, 0.5]])
    assert marginal_entropy(particles, torch.tensor([1.0, 0.0]), gen) == 0.0
    h = marginal_entropy(particles, torch.tensor([1.0, 1.0]), gen, n=20_000)
    assert h == pytest.approx(math.log(2), abs=1e-3)
    with pytest.raises(DNBPError):
        marginal_entropy(particles, torch.zeros(2), gen)


def test_uniform_baseline_analytic_values():
    assert uniform_baseline_px([[0.0, 0.0]]) == pytest.approx(64 * CENTER_MEAN, rel=1e-4)
    # from a corner the square looks like a side-2 quadrant: twice the center value
    assert uniform_baseline_px([[1.0, 1.0]]) == pytest.approx(128 * CENTER_MEAN, rel=1e-4)


def test_uniform_baseline_matches_monte_carlo(rng):
    labels = rng.uniform(-0.8, 0.8, size=(5, 2))
    u = rng.uniform(-1, 1, size=(200_000, 2))
    mc = np.mean([np.linalg.norm(u - p, axis=1).mean() for p in labels]) * 64
    assert uniform_baseline_px(labels) == pytest.approx(mc, rel=5e-3)


# --- occlusion ---------------------------------------------------------------

def test_occluder_sweeps_left_to_right():
    m = occluder_masks(5)
    assert not m[0].any() and not m[-1].any()
    cols = [np.nonzero(m[t].any(0))[0] for t in (1, 2, 3)]
    assert cols[0].mean() < cols[1].mean() < cols[2].mean()
    assert m[2].any(1).sum() == 60


def test_occluder_coverage_extremes():
    clear = build_occluder_sequence(6, seed=1, masks=np.zeros((6, 128, 128), bool))
    assert np.all(clear.coverage == 0)
    full = build_occluder_sequence(6, seed=1, masks=np.ones((6, 128, 128), bool))
    assert np.all(full.coverage == 1)
    assert np.all(full.frames == (255, 140, 0))
    np.testing.assert_array_equal(clear.keypoints, full.keypoints)


# --- dataset evaluation ------------------------------------------------------

def test_oracle_and_center_predictors(tiny_pendulum_data):
    test = SequenceDataset(tiny_pendulum_data / "test")
    exact = evaluate_dataset(None, test, predictor=oracle_predictor)
    assert exact.report.mean == 0.0
    centered = evaluate_dataset(None, test, predictor=center_predictor)
    labels = np.concatenate([np.asarray(test[i][1]["keypoints"]) for i in range(len(test))])
    assert centered.report.mean == pytest.approx(np.linalg.norm(labels, axis=-1).mean() * 64)
    assert centered.baseline_px == pytest.approx(uniform_baseline_px(labels))
    assert set(centered.decile_means) == set(range(10))


def test_csv_is_byte_deterministic(tmp_path, tiny_pendulum_data):
    test = SequenceDataset(tiny_pendulum_data / "test")
    a = evaluate_dataset(None, test, predictor=center_predictor, out_dir=tmp_path / "a")
    b = evaluate_dataset(None, test, predictor=center_predictor, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "errors.csv").read_bytes() == (tmp_path / "b" / "errors.csv").read_bytes()
    assert (tmp_path / "a" / "error_vs_clutter.png").read_bytes() == \
        (tmp_path / "b" / "error_vs_clutter.png").read_bytes()
    lines = a.csv_text.splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert len(lines) == 1 + 10 * 6 * 3
    assert a.csv_text == b.csv_text


def test_model_evaluation_runs_and_rejects_wrong_graph(tiny_pendulum_data):
    from dnbp.graph import spider_graph

    test = SequenceDataset(tiny_pendulum_data / "test")
    torch.manual_seed(0)
    res = evaluate_dataset(Potentials(pendulum_graph()), test, particles=20, u_samples=2,
                           max_frames=2, entropy_samples=200)
    assert res.report.count == 10 * 2 * 3 and np.isfinite(res.report.mean)
    with pytest.raises(DataError):
        evaluate_dataset(Potentials(spider_graph()), test)


# --- pairwise inspection -----------------------------------------------------

class ReplayPotentials(Potentials):
    """Pairwise sampler that replays the training translations."""

    def __init__(self, graph, deltas):
        super().__init__(graph)
        self.deltas = torch.as_tensor(deltas, dtype=torch.float32)

    def pairwise_translation(self, edge, eps):
        idx = torch.randint(len(self.deltas), eps.shape[:-1],
                            generator=torch.Generator().manual_seed(0))
        return self.deltas[idx]


def test_inspection_distinguishes_matching_and_random_samplers(tiny_pendulum_data):
    train = SequenceDataset(tiny_pendulum_data / "train")
    torch.manual_seed(0)
    random = inspect_pairwise(Potentials(pendulum_graph()), (0, 1), train, n_samples=20_000)
    assert not random.sampler_matches
    deltas = training_translations(train, (0, 1))
    replay = inspect_pairwise(ReplayPotentials(pendulum_graph(), deltas), (0, 1), train,
                              n_samples=20_000)
    assert replay.tv_distance < 0.05 and replay.sampler_matches
    # the middle joint sits one link length from the fixed base
    assert replay.train_modal_radius == pytest.approx(0.8 / 1.8, abs=0.02)
    with pytest.raises(DataError):
        inspect_pairwise(Potentials(pendulum_graph()), (0, 2), train)


def test_inspection_artifacts(tmp_path, tiny_pendulum_data):
    train = SequenceDataset(tiny_pendulum_data / "train")
    ins = inspect_pairwise(Potentials(pendulum_graph()), (1, 2), train, n_samples=2000, grid=20)
    ins.save(tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["density_grid_1-2.png", "pairwise_1-2.npz", "sampler_hist_1-2.png",
                     "train_hist_1-2.png"]
    assert ins.density_grid.shape == (20, 20)
    assert ins.train_hist.sum() == pytest.approx(1.0)


def test_hist2d_rows_are_y():
    h = hist2d(np.array([[0.5, -0.5]]), 2, 1.0)
    assert h[0, 1] == 1.0 and h.sum() == 1.0
