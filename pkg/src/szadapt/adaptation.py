"""Adversarial multi-subject domain adaptation.

Every subject ``i`` owns an autoencoder ``(E_i, D_i)``; one shared
subject discriminator ``SD`` predicts which subject a latent vector came
from.  Each iteration draws an equal-sized mini-batch from every subject,
takes one Adam step on ``SD`` (cross-entropy over the pooled batch), then
one Adam step on each ``(E_i, D_i)`` in subject order minimising::

    mean log SD_i(E_i(X)) + alpha * (mean ||X - D_i(E_i(X))||^2
                                     + lam * (|E_i|_1 + |D_i|_1))

Inputs are z-scored per subject before encoding.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DataError, LabelError, UnknownSubjectError
from .features import FeatureMatrix, Normalizer, fit_normalizer
from .gbtree import GbtConfig, fit_one_vs_rest, predict_one_vs_rest
from .nn import AdamState, DenseNet, LossReport

log = logging.getLogger(__name__)

ADVERSARIAL_OBJECTIVES = ("minimax", "confusion")
MIN_ROWS = 4


@dataclass(frozen=True)
class AdaptationConfig:
    n_subjects: int = 9
    latent_dim: int = 2048
    hidden_dim: int = 512
    disc_hidden: tuple = (512, 128)
    batch_size: int = 32
    epochs: int = 100
    lr: float = 1e-5
    disc_lr: float | None = None
    disc_steps: int = 1
    instance_noise: float = 0.0
    alpha: float = 0.01
    lam: float = 3e-5
    seed: int = 0
    holdout_fraction: float = 0.2
    shared_init: bool = True
    adversarial: str = "minimax"
    n_projections: int = 8
    bins: int = 32

    def __post_init__(self):
        object.__setattr__(self, "disc_hidden", tuple(int(d) for d in self.disc_hidden))
        checks = [
            ("n_subjects", self.n_subjects >= 2),
            ("latent_dim", self.latent_dim >= 1),
            ("hidden_dim", self.hidden_dim >= 1),
            ("disc_hidden", all(d >= 1 for d in self.disc_hidden)),
            ("batch_size", self.batch_size >= 1),
            ("epochs", self.epochs >= 1),
            ("lr", self.lr >= 0),
            ("alpha", self.alpha >= 0),
            ("lam", self.lam >= 0),
            ("holdout_fraction", 0 < self.holdout_fraction < 1),
            ("disc_steps", self.disc_steps >= 1),
            ("n_projections", self.n_projections >= 1),
            ("bins", self.bins >= 2),
            ("adversarial", self.adversarial in ADVERSARIAL_OBJECTIVES),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(
                    f"invalid adaptation setting {name}={getattr(self, name)!r}", name)


@dataclass
class EpochRecord:
    epoch: int
    adv_loss: float
    rec_loss: float
    l1: float
    total: float
    sd_holdout_acc: float
    sd_holdout_ce: float
    jsd_estimate: float


@dataclass
class AdaptationModel:
    subjects: list
    encoders: list
    decoders: list
    discriminator: DenseNet
    normalizers: list
    config: AdaptationConfig
    history: list = field(default_factory=list)
    initial: EpochRecord | None = None

    def index_of(self, subject_id):
        try:
            return self.subjects.index(subject_id)
        except ValueError:
            raise UnknownSubjectError(
                f"no encoder for subject {subject_id!r}; known: {self.subjects}") from None


# -- networks -------------------------------------------------------------

def build_encoder(n_in, cfg, rng):
    return nn.init_dense([n_in, cfg.hidden_dim, cfg.latent_dim],
                         ["relu", "identity"], rng, "encoder")


def build_decoder(n_out, cfg, rng):
    return nn.init_dense([cfg.latent_dim, cfg.hidden_dim, n_out],
                         ["relu", "identity"], rng, "decoder")


def build_discriminator(cfg, rng):
    sizes = [cfg.latent_dim, *cfg.disc_hidden, cfg.n_subjects]
    acts = ["relu"] * len(cfg.disc_hidden) + ["identity"]
    return nn.init_dense(sizes, acts, rng, "discriminator")


# -- objectives -----------------------------------------------------------

def discriminator_objective(SD, latents, subject_ids):
    """Pooled cross-entropy of SD over all subjects' latents, with gradients."""
    Z = np.vstack(latents)
    labels = np.concatenate([np.full(len(z), i, dtype=np.int64)
                             for z, i in zip(latents, subject_ids)])
    if labels.size and labels.max() >= SD.out_dim:
        raise LabelError(f"subject index {labels.max()} outside discriminator "
                         f"width {SD.out_dim}")
    tr = nn.trace(SD, Z)
    loss, d_logits = nn.softmax_cross_entropy(tr.out, labels)
    grads, _ = nn.backward(SD, tr, d_logits)
    return loss, grads


def discriminator_step(SD, latents, subject_ids, adam: AdamState) -> LossReport:
    """One Adam step on the discriminator; encoders are not touched."""
    loss, grads = discriminator_objective(SD, latents, subject_ids)
    nn.adam_step(adam, SD.params(), grads)
    return LossReport(adv=loss, rec=0.0, l1=0.0, total=loss)


def adversarial_term(logits, subject, kind="minimax"):
    """Encoder-side adversarial loss and its gradient w.r.t. the logits.

    ``minimax`` is the batch mean of ``log SD_subject``; ``confusion`` is
    the cross-entropy against the uniform distribution over subjects,
    which is minimised (at ``ln K``) when the discriminator cannot tell
    subjects apart and does not saturate when the discriminator wins.
    """
    n, k = logits.shape
    if kind == "minimax":
        ce, d_logits = nn.softmax_cross_entropy(logits, np.full(n, subject))
        # d(mean log p)/d logits is the negated cross-entropy gradient.
        return -ce, -d_logits
    if kind == "confusion":
        logp = nn.log_softmax(logits)
        loss = float(-logp.mean(axis=1).mean())
        return loss, (np.exp(logp) - 1.0 / k) / n
    raise ConfigError(f"unknown adversarial objective {kind!r}", "adversarial")


def encoder_objective(E, D, SD, X, subject, alpha, lam, adversarial="minimax",
                      noise=None):
    """Value and gradients of the per-subject encoder/decoder objective.

    ``adv`` in the report is the adversarial term (see
    :func:`adversarial_term`), ``rec`` the mean squared reconstruction norm and ``l1`` the weighted
    penalty ``lam * (|E|_1 + |D|_1)``.  Returns ``(report, gE, gD)``.
    """
    if subject >= SD.out_dim:
        raise LabelError(f"subject index {subject} outside discriminator width "
                         f"{SD.out_dim}")
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    te = nn.trace(E, X)
    Z = te.out
    td = nn.trace(D, Z)
    ts = nn.trace(SD, Z if noise is None else Z + noise)
    adv, d_logits = adversarial_term(ts.out, subject, adversarial)
    _, dZ_adv = nn.backward(SD, ts, d_logits)
    diff = td.out - X
    rec = float((diff * diff).sum() / n)
    gD, dZ_rec = nn.backward(D, td, alpha * 2.0 * diff / n)
    gE, _ = nn.backward(E, te, dZ_adv + dZ_rec)
    l1 = lam * nn.l1_norm([E, D])
    if alpha * lam:
        for grads, net in ((gE, E), (gD, D)):
            for g, p in zip(grads, net.params()):
                g += alpha * lam * np.sign(p)
    report = LossReport(adv=adv, rec=rec, l1=l1, total=adv + alpha * (rec + l1))
    return report, gE, gD


def encoder_decoder_step(E, D, SD, X, subject, adam: AdamState, alpha, lam,
                         adversarial="minimax", noise=None) -> LossReport:
    """One Adam step on ``(E, D)`` with the discriminator frozen."""
    report, gE, gD = encoder_objective(E, D, SD, X, subject, alpha, lam, adversarial,
                                       noise)
    nn.adam_step(adam, E.params() + D.params(), gE + gD)
    return report


# -- diagnostics ----------------------------------------------------------

def _entropy(p):
    return -(p * np.log(p)).sum(axis=-1)


def estimate_latent_divergence(latents, n_projections=8, bins=32, seed=0):
    """Projected-histogram estimate of the multi-distribution JS divergence.

    Each random unit direction projects every subject's latents to 1-D;
    histograms share bin edges over the pooled range and get one pseudo
    count per bin.  The result is the mean over directions of
    ``H(mean P_i) - mean H(P_i)``, which lies in ``[0, ln n_subjects]``.
    """
    latents = [np.asarray(z, dtype=np.float64) for z in latents]
    if len(latents) < 2:
        raise DataError("divergence needs at least two subjects")
    for i, z in enumerate(latents):
        if z.ndim != 2 or z.shape[0] < 50:
            raise DataError(f"subject {i} has {z.shape[0]} rows, need at least 50")
    dim = latents[0].shape[1]
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    total = 0.0
    for u in dirs:
        proj = [z @ u for z in latents]
        lo = min(p.min() for p in proj)
        hi = max(p.max() for p in proj)
        if hi <= lo:
            continue  # every subject collapsed to one point: identical histograms
        edges = np.linspace(lo, hi, bins + 1)
        P = np.array([np.histogram(p, bins=edges)[0] for p in proj], dtype=np.float64)
        P += 1.0
        P /= P.sum(axis=1, keepdims=True)
        total += _entropy(P.mean(axis=0)) - _entropy(P).mean()
    return float(total / n_projections)


def _split_groups(groups, rng, test_fraction):
    train_X, train_y, test_X, test_y = [], [], [], []
    for label, Z in enumerate(groups):
        Z = np.asarray(Z, dtype=np.float64)
        perm = rng.permutation(len(Z))
        n_test = max(1, int(round(test_fraction * len(Z))))
        test_X.append(Z[perm[:n_test]])
        train_X.append(Z[perm[n_test:]])
        test_y.append(np.full(n_test, label))
        train_y.append(np.full(len(Z) - n_test, label))
    return (np.vstack(train_X), np.concatenate(train_y),
            np.vstack(test_X), np.concatenate(test_y))


def probe_accuracy(groups, seed=0, test_fraction=0.3, kind="mlp", steps=300,
                   lr=1e-3, hidden=(512, 128)):
    """Held-out accuracy of a fresh classifier predicting group membership.

    ``groups`` holds one row matrix per subject.  ``kind="mlp"`` trains a
    freshly initialised network shaped like the subject discriminator
    (inputs z-scored on the training split, full-batch Adam);
    ``kind="gbt"`` fits one-vs-rest boosted trees instead.
    """
    rng = np.random.default_rng(seed)
    Xtr, ytr, Xte, yte = _split_groups(groups, rng, test_fraction)
    if kind == "gbt":
        classes, models = fit_one_vs_rest(Xtr, ytr, GbtConfig(n_trees=30))
        pred = predict_one_vs_rest(classes, models, Xte)
        return float(np.mean(pred == yte))
    if kind != "mlp":
        raise ConfigError(f"unknown probe kind {kind!r}", "kind")
    norm = fit_normalizer(Xtr)
    Xtr, Xte = norm.apply(Xtr), norm.apply(Xte)
    k = len(groups)
    net = nn.init_dense([Xtr.shape[1], *hidden, k],
                        ["relu"] * len(hidden) + ["identity"], rng, "probe")
    adam = AdamState(net.params(), lr=lr)
    for _ in range(steps):
        tr = nn.trace(net, Xtr)
        _, d = nn.softmax_cross_entropy(tr.out, ytr)
        grads, _ = nn.backward(net, tr, d)
        nn.adam_step(adam, net.params(), grads)
    pred = np.argmax(net(Xte), axis=1)
    return float(np.mean(pred == yte))


# -- training -------------------------------------------------------------

def _subject_matrices(features):
    mats = list(features.values()) if isinstance(features, dict) else list(features)
    out = []
    for m in mats:
        if isinstance(m, FeatureMatrix):
            out.append(m)
        else:
            out.append(FeatureMatrix(str(len(out)), np.asarray(m), np.zeros(len(m))))
    return out


def _split_holdout(rng, n, fraction):
    perm = rng.permutation(n)
    n_hold = max(1, int(round(fraction * n)))
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def _diagnostics(model, Xn, holdouts, epoch, cfg, sums=None, count=1):
    latents = [nn.forward(E, x)[-1] for E, x in zip(model.encoders, Xn)]
    held = [z[h] for z, h in zip(latents, holdouts)]
    labels = np.concatenate([np.full(len(z), i) for i, z in enumerate(held)])
    logits = nn.forward(model.discriminator, np.vstack(held))[-1]
    ce, _ = nn.softmax_cross_entropy(logits, labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    try:
        jsd = estimate_latent_divergence(latents, cfg.n_projections, cfg.bins,
                                         seed=cfg.seed)
    except DataError:
        jsd = float("nan")
    adv, rec, l1, total = sums if sums is not None else (0.0, 0.0, 0.0, 0.0)
    return EpochRecord(epoch=epoch, adv_loss=adv / count, rec_loss=rec / count,
                       l1=l1 / count, total=total / count, sd_holdout_acc=acc,
                       sd_holdout_ce=float(ce), jsd_estimate=jsd)


def train_adaptation(features, cfg: AdaptationConfig, subjects=None) -> AdaptationModel:
    """Alternating minimax training over all subjects' unlabeled features.

    ``features`` is a list (or dict) of :class:`FeatureMatrix`, one per
    subject, in subject-index order.  One epoch holds as many iterations
    as the smallest subject has full training batches.
    """
    mats = _subject_matrices(features)
    if len(mats) < 2:
        raise DataError("adaptation needs at least two subjects")
    if len(mats) != cfg.n_subjects:
        raise ConfigError(
            f"config expects {cfg.n_subjects} subjects, got {len(mats)}", "n_subjects")
    subjects = list(subjects) if subjects is not None else [m.subject_id for m in mats]
    dims = {m.dim for m in mats}
    if len(dims) != 1:
        raise DataError(f"subjects disagree on feature dimension: {sorted(dims)}")
    F = dims.pop()
    # Subjects with fewer rows than a batch are cycled through within it.
    for sid, m in zip(subjects, mats):
        if len(m) < MIN_ROWS:
            raise DataError(f"subject {sid} has {len(m)} rows; adaptation needs "
                            f"at least {MIN_ROWS}")

    root = np.random.SeedSequence(int(cfg.seed))
    init_seq, batch_seq, hold_seq = root.spawn(3)
    init_rng = np.random.default_rng(init_seq)
    batch_rng = np.random.default_rng(batch_seq)
    hold_rng = np.random.default_rng(hold_seq)

    if cfg.shared_init:
        E0 = build_encoder(F, cfg, init_rng)
        D0 = build_decoder(F, cfg, init_rng)
        encoders = [E0.copy() for _ in mats]
        decoders = [D0.copy() for _ in mats]
    else:
        encoders, decoders = [], []
        for _ in mats:
            encoders.append(build_encoder(F, cfg, init_rng))
            decoders.append(build_decoder(F, cfg, init_rng))
    SD = build_discriminator(cfg, init_rng)

    normalizers = [fit_normalizer(m.X) for m in mats]
    Xn = [norm.apply(m.X) for norm, m in zip(normalizers, mats)]
    model = AdaptationModel(subjects=subjects, encoders=encoders, decoders=decoders,
                            discriminator=SD, normalizers=normalizers, config=cfg)

    sd_adam = AdamState(SD.params(), lr=cfg.lr if cfg.disc_lr is None else cfg.disc_lr)
    ed_adam = [AdamState(E.params() + D.params(), lr=cfg.lr)
               for E, D in zip(encoders, decoders)]
    N = cfg.batch_size
    ids = list(range(len(mats)))

    splits = [_split_holdout(hold_rng, len(x), cfg.holdout_fraction) for x in Xn]
    model.initial = _diagnostics(model, Xn, [h for _, h in splits], 0, cfg)
    for epoch in range(1, cfg.epochs + 1):
        if epoch > 1:
            splits = [_split_holdout(hold_rng, len(x), cfg.holdout_fraction) for x in Xn]
        train_rows = [t for t, _ in splits]
        n_batches = max(1, min(len(t) // N for t in train_rows))
        orders = [t[batch_rng.permutation(len(t))] for t in train_rows]
        sums = np.zeros(4)
        for b in range(n_batches):
            batches = [x[o[np.arange(b * N, (b + 1) * N) % len(o)]]
                       for x, o in zip(Xn, orders)]
            latents = [nn.forward(E, xb)[-1] for E, xb in zip(encoders, batches)]
            if cfg.instance_noise:
                noises = [cfg.instance_noise * batch_rng.standard_normal(z.shape)
                          for z in latents]
                latents = [z + e for z, e in zip(latents, noises)]
            else:
                noises = [None] * len(latents)
            for _ in range(cfg.disc_steps):
                d_rep = discriminator_step(SD, latents, ids, sd_adam)
            reps = [encoder_decoder_step(encoders[i], decoders[i], SD, batches[i], i,
                                         ed_adam[i], cfg.alpha, cfg.lam,
                                         cfg.adversarial, noises[i])
                    for i in ids]
            sums += [d_rep.adv,
                     np.mean([r.rec for r in reps]),
                     np.mean([r.l1 for r in reps]),
                     np.mean([r.total for r in reps])]
        rec = _diagnostics(model, Xn, [h for _, h in splits], epoch, cfg,
                           tuple(sums), n_batches)
        model.history.append(rec)
        log.debug("epoch %d: %s", epoch, rec)
    return model


def encode(model: AdaptationModel, subject_id, M) -> np.ndarray:
    """Latent rows for ``M`` through the subject's normalizer and encoder."""
    i = subject_id if isinstance(subject_id, (int, np.integer)) else model.index_of(subject_id)
    if not 0 <= i < len(model.encoders):
        raise UnknownSubjectError(f"no encoder with index {i}")
    X = M.X if isinstance(M, FeatureMatrix) else np.asarray(M, dtype=np.float64)
    return nn.forward(model.encoders[i], model.normalizers[i].apply(X))[-1]


def reconstruction_mse(model: AdaptationModel, subject, X):
    """Mean squared reconstruction norm of normalised ``X``."""
    i = subject if isinstance(subject, (int, np.integer)) else model.index_of(subject)
    Xn = model.normalizers[i].apply(X)
    Z = nn.forward(model.encoders[i], Xn)[-1]
    R = nn.forward(model.decoders[i], Z)[-1]
    return float(((R - Xn) ** 2).sum() / len(Xn))


def config_dict(cfg: AdaptationConfig):
    d = asdict(cfg)
    d["disc_hidden"] = list(cfg.disc_hidden)
    return d
