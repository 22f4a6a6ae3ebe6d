import math

import pytest
import torch

from dnbp.beliefprop import Belief, run_frame
from dnbp.diffcore import AdamState
from dnbp.errors import ConfigError, DataError
from dnbp.graph import Potentials, pendulum_graph, spider_graph
from dnbp.simulators.dataset import SequenceDataset
from dnbp.training import (
    TrainConfig, augment, check_dataset, frame_loss, load_potentials, partial_belief_loss,
    train, train_step,
)


def _belief(particles, weights):
    p = torch.tensor(particles, dtype=torch.float64)[None]
    w = torch.tensor(weights, dtype=torch.float64)[None]
    return Belief(0, p, w, w.clone(), w.clone(), w.clone())


def _log_norm(sigma):
    return math.log(2 * math.pi * sigma ** 2)


def test_single_particle_at_truth():
    sigma = 0.05
    loss = partial_belief_loss(_belief([[0.1, -0.2]], [1.0]), torch.tensor([[0.1, -0.2]],
                               dtype=torch.float64), sigma).loss
    # three identical kernel terms, each -log N(0; 0, sigma^2 I)
    assert loss.item() == pytest.approx(3 * _log_norm(sigma), abs=1e-9)
    assert loss.item() == pytest.approx(-12.4607, abs=1e-3)


def test_doubling_sigma_adds_three_log_four():
    b = _belief([[0.0, 0.0]], [1.0])
    truth = torch.zeros(1, 2, dtype=torch.float64)
    a = partial_belief_loss(b, truth, 0.05).loss.item()
    c = partial_belief_loss(b, truth, 0.10).loss.item()
    assert c - a == pytest.approx(3 * math.log(4), abs=1e-9)


def test_far_particle_quadratic_penalty():
    sigma = 0.05
    b = _belief([[0.3, 0.4]], [1.0])
    loss = partial_belief_loss(b, torch.zeros(1, 2, dtype=torch.float64), sigma).loss.item()
    assert loss == pytest.approx(3 * (_log_norm(sigma) + 0.25 / (2 * sigma ** 2)), rel=1e-9)


def test_weights_are_normalized_within_each_term():
    sigma = 0.05
    # equal weights, one particle on the truth and one far away: mixture = k(0) / 2
    b = _belief([[0.0, 0.0], [5.0, 5.0]], [3.0, 3.0])
    loss = partial_belief_loss(b, torch.zeros(1, 2, dtype=torch.float64), sigma).loss.item()
    assert loss == pytest.approx(3 * (_log_norm(sigma) + math.log(2)), abs=1e-9)


def test_terms_use_their_own_weights():
    sigma = 0.05
    p = torch.tensor([[[0.0, 0.0], [5.0, 5.0]]], dtype=torch.float64)
    on, off = torch.tensor([[1.0, 1e-300]]), torch.tensor([[1e-300, 1.0]])
    b = Belief(0, p, on.double(), on.double(), off.double(), on.double())
    nl = partial_belief_loss(b, torch.zeros(1, 2, dtype=torch.float64), sigma)
    assert -nl.log_unary_d.item() == pytest.approx(_log_norm(sigma), abs=1e-6)
    assert -nl.log_neigh_rho.item() == pytest.approx(_log_norm(sigma), abs=1e-6)
    assert -nl.log_unary_rho.item() > 1e3


def _frame0(seed=0):
    torch.manual_seed(seed)
    pot = Potentials(pendulum_graph())
    gen = torch.Generator().manual_seed(seed)
    images = torch.rand(2, 128, 128, 3, generator=gen) * 255
    truth = torch.rand(2, 3, 2, generator=gen) - 0.5
    return pot, gen, images, truth


def test_partial_terms_decouple_at_first_frame():
    pot, gen, images, truth = _frame0()
    cfg = TrainConfig(particles=20, u_samples=3)
    state = run_frame(pot, images, None, cfg.inference("train"), gen, truth)
    losses = frame_loss(state, truth, cfg.kernel_sigma)
    expected = {"log_unary_d": "unary", "log_unary_rho": "pair_sampler",
                "log_neigh_rho": "pair_density"}
    for term, family in expected.items():
        total = sum(getattr(n, term).sum() for n in losses.nodes.values())
        for name, module in pot.groups().items():
            grads = torch.autograd.grad(total, list(module.parameters()), allow_unused=True,
                                        retain_graph=True)
            nonzero = any(g is not None and bool(g.abs().sum() > 0) for g in grads)
            assert nonzero == name.startswith(family + "."), (term, name)


def test_zero_learning_rate_leaves_parameters_bit_identical():
    pot, gen, images, truth = _frame0(1)
    before = {k: v.clone() for k, v in pot.state_dict().items()}
    cfg = TrainConfig(particles=10, u_samples=2, lr=0.0)
    state, losses = train_step(pot, images, truth, None, cfg, AdamState(lr=0.0), gen)
    assert losses is not None
    train_step(pot, images, truth, state, cfg, AdamState(lr=0.0), gen)
    for k, v in pot.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_repeated_steps_reduce_loss_on_a_fixed_frame():
    pot, gen, images, truth = _frame0(2)
    cfg = TrainConfig(particles=30, u_samples=2, lr=3e-3, noise_sigma=0.0)
    opt = AdamState(lr=cfg.lr)
    totals = []
    for _ in range(40):
        _, losses = train_step(pot, images, truth, None, cfg, opt, gen)
        totals.append(float(losses.total.detach()))
    assert sum(totals[-5:]) / 5 < sum(totals[:5]) / 5 - 1.0


def test_augment_adds_noise_to_inputs_only(gen):
    images = torch.full((1, 4, 4, 3), 100, dtype=torch.uint8)
    assert torch.equal(augment(images, 0.0, gen), images.float())
    noisy = augment(images, 20.0, gen)
    assert 5 < float((noisy - 100).std()) < 40


def test_train_step_does_not_touch_labels():
    pot, gen, images, truth = _frame0(3)
    kept = truth.clone()
    train_step(pot, images, truth, None, TrainConfig(particles=10, u_samples=2), AdamState(), gen)
    assert torch.equal(truth, kept)


@pytest.mark.parametrize("kwargs", [dict(particles=1), dict(gamma=1.5), dict(lr=-1.0),
                                    dict(kernel_sigma=0.0), dict(batch=0)])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_dataset_checks(tmp_path, tiny_pendulum_data):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DataError, match="empty"):
        check_dataset(SequenceDataset(empty), pendulum_graph())
    with pytest.raises(DataError, match="7 nodes"):
        check_dataset(SequenceDataset(tiny_pendulum_data / "train"), spider_graph())
    with pytest.raises(DataError):
        SequenceDataset(tmp_path / "missing")


def test_train_writes_reloadable_checkpoint(tmp_path, tiny_pendulum_data):
    cfg = TrainConfig(particles=10, u_samples=2, max_epochs=2, batch=4)
    tr = SequenceDataset(tiny_pendulum_data / "train")
    va = SequenceDataset(tiny_pendulum_data / "val")
    pot, result = train(tr, va, cfg, out=tmp_path / "ck.bin")
    assert len(result["history"]) == 2
    assert all(math.isfinite(r["val_loss"]) for r in result["history"])
    loaded, header = load_potentials(tmp_path / "ck.bin")
    assert header["meta"]["best_epoch"] == result["best_epoch"]
    for (k, a), (_, b) in zip(pot.named_parameters(), loaded.named_parameters()):
        assert torch.equal(a, b), k
    _, again = train(tr, va, cfg)
    assert [r["val_loss"] for r in again["history"]] == [r["val_loss"] for r in result["history"]]
