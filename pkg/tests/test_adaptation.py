import numpy as np
import pytest
from hypothesis import given, strategies as st

from szadapt import nn
from szadapt.adaptation import (AdaptationConfig, AdaptationModel, build_decoder,
                                build_discriminator, build_encoder,
                                discriminator_objective, discriminator_step, encode,
                                encoder_decoder_step, encoder_objective,
                                estimate_latent_divergence, reconstruction_mse,
                                train_adaptation)
from szadapt.errors import ConfigError, DataError, LabelError, UnknownSubjectError
from szadapt.features import FeatureMatrix, Normalizer
from szadapt.modelio import model_bytes

TINY = dict(latent_dim=16, hidden_dim=24, disc_hidden=(20, 12))


def tiny_nets(rng, n_subjects=3, F=8):
    cfg = AdaptationConfig(n_subjects=n_subjects, **TINY)
    return cfg, build_encoder(F, cfg, rng), build_decoder(F, cfg, rng), build_discriminator(cfg, rng)


@pytest.mark.parametrize("kind", ["minimax", "confusion"])
def test_encoder_objective_gradient(rng, kind):
    cfg, E, D, SD = tiny_nets(rng)
    X = rng.standard_normal((8, 8))

    def f():
        rep, gE, gD = encoder_objective(E, D, SD, X, 1, alpha=0.5, lam=3e-5, adversarial=kind)
        return rep.total, gE + gD

    assert nn.finite_diff_check(f, E.params() + D.params()) < 1e-4


def test_discriminator_gradient(rng):
    cfg, E, D, SD = tiny_nets(rng)
    Z = [rng.standard_normal((8, 16)) for _ in range(3)]
    assert nn.finite_diff_check(lambda: discriminator_objective(SD, Z, [0, 1, 2]),
                                SD.params()) < 1e-4


def test_discriminator_label_error(rng):
    cfg, E, D, SD = tiny_nets(rng)
    with pytest.raises(LabelError):
        discriminator_objective(SD, [np.zeros((2, 16))], [3])


def test_zero_rate_step_leaves_discriminator(rng):
    cfg, E, D, SD = tiny_nets(rng)
    before = [p.copy() for p in SD.params()]
    Z = [rng.standard_normal((8, 16)) for _ in range(3)]
    discriminator_step(SD, Z, [0, 1, 2], nn.AdamState(SD.params(), lr=0.0))
    assert all(np.array_equal(a, b) for a, b in zip(before, SD.params()))


def _sd_accuracy(SD, groups):
    logits = SD(np.vstack(groups))
    y = np.concatenate([np.full(len(g), i) for i, g in enumerate(groups)])
    return np.mean(np.argmax(logits, axis=1) == y)


def test_discriminator_on_identical_latents_is_at_chance(rng):
    cfg = AdaptationConfig(n_subjects=2, **TINY)
    SD = build_discriminator(cfg, rng)
    Z = rng.standard_normal((400, 16))
    adam = nn.AdamState(SD.params(), lr=1e-3)
    for _ in range(200):
        idx = rng.integers(0, 300, 32)
        discriminator_step(SD, [Z[idx], Z[idx]], [0, 1], adam)
    held = Z[300:]
    assert abs(_sd_accuracy(SD, [held, held]) - 0.5) <= 0.05


def test_discriminator_on_separable_latents(rng):
    cfg = AdaptationConfig(n_subjects=2, **TINY)
    SD = build_discriminator(cfg, rng)
    A = rng.standard_normal((200, 16)) + 2.0
    B = rng.standard_normal((200, 16)) - 2.0
    adam = nn.AdamState(SD.params(), lr=1e-3)
    for _ in range(300):
        i = rng.integers(0, 150, 32)
        discriminator_step(SD, [A[i], B[i]], [0, 1], adam)
    assert _sd_accuracy(SD, [A[150:], B[150:]]) > 0.95


def test_uniform_discriminator_gives_no_adversarial_gradient(rng):
    cfg, E, D, SD = tiny_nets(rng)
    for layer in SD.layers:
        layer.W[:] = 0.0
        layer.b[:] = 0.0
    X = rng.standard_normal((8, 8))
    before = [p.copy() for p in E.params()]
    rep, gE, gD = encoder_objective(E, D, SD, X, 0, alpha=0.0, lam=3e-5)
    assert max(np.abs(g).max() for g in gE) <= 1e-12
    encoder_decoder_step(E, D, SD, X, 0, nn.AdamState(E.params() + D.params(), lr=1e-3),
                         alpha=0.0, lam=3e-5)
    assert all(np.allclose(a, b, atol=1e-12) for a, b in zip(before, E.params()))


def test_large_alpha_reduces_reconstruction(rng):
    cfg, E, D, SD = tiny_nets(rng)
    X = rng.standard_normal((32, 8))
    adam = nn.AdamState(E.params() + D.params(), lr=1e-3)
    first = encoder_objective(E, D, SD, X, 0, 1e3, 3e-5)[0].rec
    for _ in range(200):
        encoder_decoder_step(E, D, SD, X, 0, adam, 1e3, 3e-5)
    assert encoder_objective(E, D, SD, X, 0, 1e3, 3e-5)[0].rec < first


def test_each_step_touches_only_its_own_networks(rng):
    cfg = AdaptationConfig(n_subjects=2, **TINY)
    Es = [build_encoder(8, cfg, rng) for _ in range(2)]
    Ds = [build_decoder(8, cfg, rng) for _ in range(2)]
    SD = build_discriminator(cfg, rng)
    X = [rng.standard_normal((8, 8)) for _ in range(2)]
    snap = lambda nets: [p.copy() for n in nets for p in n.params()]  # noqa: E731
    same = lambda a, b: all(np.array_equal(x, y) for x, y in zip(a, b))  # noqa: E731

    ed_before = snap(Es + Ds)
    discriminator_step(SD, [E(x) for E, x in zip(Es, X)], [0, 1],
                       nn.AdamState(SD.params(), lr=1e-3))
    assert same(ed_before, snap(Es + Ds))

    sd_before, other_before = snap([SD]), snap([Es[1], Ds[1]])
    mine_before = snap([Es[0], Ds[0]])
    encoder_decoder_step(Es[0], Ds[0], SD, X[0], 0,
                         nn.AdamState(Es[0].params() + Ds[0].params(), lr=1e-3), 0.01, 3e-5)
    assert same(sd_before, snap([SD]))
    assert same(other_before, snap([Es[1], Ds[1]]))
    assert not same(mine_before, snap([Es[0], Ds[0]]))


def test_divergence_of_identical_sets(rng):
    Z = rng.standard_normal((200, 6))
    assert estimate_latent_divergence([Z, Z.copy(), Z.copy()]) <= 0.02


def test_divergence_of_disjoint_sets():
    a = np.zeros((1000, 4))
    b = np.full((1000, 4), 100.0)
    assert estimate_latent_divergence([a, b]) >= 0.9 * np.log(2)


@given(st.permutations([0, 1, 2]))
def test_divergence_ignores_subject_order(perm):
    rng = np.random.default_rng(1)
    Z = [rng.standard_normal((60, 5)) + k for k in range(3)]
    base = estimate_latent_divergence(Z)
    assert abs(estimate_latent_divergence([Z[i] for i in perm]) - base) <= 1e-12


def test_divergence_needs_rows():
    with pytest.raises(DataError):
        estimate_latent_divergence([np.zeros((10, 2)), np.zeros((60, 2))])


def _hand_model(W, b):
    E = nn.DenseNet([nn.Layer(np.array(W, float), np.array(b, float), "identity")])
    cfg = AdaptationConfig(n_subjects=2, latent_dim=1)
    norm = Normalizer(np.zeros(1), np.ones(1))
    return AdaptationModel(["A", "B"], [E, E], [E, E], E, [norm, norm], cfg)


def test_encode_hand_example():
    m = _hand_model([[3.0]], [-1.0])
    assert encode(m, "A", np.array([[2.0]]))[0, 0] == 5.0


def test_encode_zero_encoder_and_row_count(rng):
    m = _hand_model([[0.0]], [0.0])
    Z = encode(m, "B", rng.standard_normal((17, 1)))
    assert Z.shape == (17, 1) and np.all(Z == 0)


def test_encode_unknown_subject():
    with pytest.raises(UnknownSubjectError):
        encode(_hand_model([[1.0]], [0.0]), "Z", np.zeros((1, 1)))
    with pytest.raises(LookupError):
        encode(_hand_model([[1.0]], [0.0]), "Z", np.zeros((1, 1)))


def _pair(rng, n=300, F=6, shift=0.0, same_seed=False):
    A = rng.standard_normal((F, F)) * 0.5 + np.eye(F)
    r1 = np.random.default_rng(7)
    r2 = np.random.default_rng(7) if same_seed else np.random.default_rng(8)
    X1 = r1.standard_normal((n, F)) @ A
    X2 = r2.standard_normal((n, F)) @ A + shift
    return [FeatureMatrix("A", X1, np.zeros(n)), FeatureMatrix("B", X2, np.zeros(n))]


def test_identical_subjects_leave_discriminator_at_chance(rng):
    mats = _pair(rng, same_seed=True)
    cfg = AdaptationConfig(n_subjects=2, epochs=5, lr=1e-4, **TINY)
    m = train_adaptation(mats, cfg)
    assert m.history[-1].sd_holdout_acc <= 0.55


def test_training_is_deterministic(rng):
    mats = _pair(rng, shift=1.0)
    cfg = AdaptationConfig(n_subjects=2, epochs=2, seed=4, **TINY)
    assert model_bytes(train_adaptation(mats, cfg)) == model_bytes(train_adaptation(mats, cfg))


def test_training_records_history(rng):
    mats = _pair(rng, shift=1.0)
    m = train_adaptation(mats, AdaptationConfig(n_subjects=2, epochs=3, **TINY))
    assert [r.epoch for r in m.history] == [1, 2, 3]
    assert m.initial.epoch == 0
    assert reconstruction_mse(m, "A", mats[0].X) > 0


def test_training_input_errors(rng):
    mats = _pair(rng)
    with pytest.raises(ConfigError):
        train_adaptation(mats, AdaptationConfig(n_subjects=3, **TINY))
    short = [mats[0], mats[1].take(np.arange(3))]
    with pytest.raises(DataError, match="B"):
        train_adaptation(short, AdaptationConfig(n_subjects=2, **TINY))


@pytest.mark.parametrize("field, value", [("latent_dim", 0), ("adversarial", "wgan"),
                                          ("holdout_fraction", 1.0), ("batch_size", 0)])
def test_config_validation(field, value):
    with pytest.raises(ConfigError) as info:
        AdaptationConfig(**{field: value})
    assert info.value.field == field
