"""Training regimes, run directories and checkpoints.

Two regimes are supported:

* ``adversarial``: a reconstruction phase (L1 reconstruction from clipped
  encodings plus the L2 clipping penalty), then an adversarial phase that
  alternates discriminator updates with network updates on the encoder hinge
  loss plus the reconstruction terms.
* ``ot``: per-minibatch exact optimal transport between each class's
  encodings and a same-size sample of that class's learnable Gaussian, plus
  the perturbation loss; network and class priors are updated together.

Everything random is drawn from named :class:`~revgen.tensor.Rng` streams whose
states are saved in checkpoints, so a resumed run continues exactly where the
interrupted one stopped.
"""

import csv
import datetime
import logging
import os
import time

import attr
import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import array_to_text, read_arrays, take_prefixed, text_to_array, write_arrays
from .config import config_hash, dump_config, parse_config
from .data import batch_iterator
from .digests import array_digest
from .discriminator import Discriminator, disc_forward, disc_step
from .evaluation import (
    build_feature_fn,
    decode_batched,
    effective_dims,
    frechet_feature_distance,
    generate_samples,
)
from .exceptions import CheckpointError, ConfigError, DataError
from .latent import (
    ClassPrior,
    PriorSpec,
    class_prior_backward,
    init_class_priors,
    sample_class_prior,
    sample_prior,
    select_active_dims,
)
from .losses import COMPONENTS, LossReport, hinge_enc_from_scores, perturbation_loss, recon_loss
from .optim import AdamState, adam_step
from .ot import ot_loss_and_grad
from .presets import build_preset
from .tensor import Rng

_logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "phase", "steps") + COMPONENTS + ("total", "frechet", "effective_dims")


############################################################################
# Run directories


@attr.s
class RunDir:
    """Directory holding a run's config snapshot, manifest, log, metrics and checkpoints."""

    path = attr.ib(converter=str)

    config_path = property(lambda self: os.path.join(self.path, "config.ini"))
    manifest_path = property(lambda self: os.path.join(self.path, "run.txt"))
    metrics_path = property(lambda self: os.path.join(self.path, "metrics.csv"))
    log_path = property(lambda self: os.path.join(self.path, "train.log"))
    final_path = property(lambda self: os.path.join(self.path, "final.rgck"))

    def checkpoint_path(self, epoch):
        return os.path.join(self.path, f"ckpt-epoch-{epoch:04d}.rgck")

    def create(self, cfg):
        """Creates the directory and writes the config snapshot and manifest.

        Raises:
            ConfigError: If the directory already holds a different configuration.
        """

        os.makedirs(self.path, exist_ok=True)
        text = dump_config(cfg)
        if os.path.exists(self.config_path):
            with open(self.config_path, encoding="UTF-8") as fh:
                if fh.read() != text:
                    raise ConfigError(f"{self.path} already holds a run with a different configuration")
        else:
            with open(self.config_path, "w", encoding="UTF-8") as fh:
                fh.write(text)
        with open(self.manifest_path, "a", encoding="UTF-8") as fh:
            now = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
            fh.write(f"{now} config_hash={config_hash(cfg)}\n")
        return self

    def start_metrics(self, keep_through_epoch=0):
        """Writes the metrics header, keeping existing rows up to an epoch (for resumes)."""
        rows = []
        if os.path.exists(self.metrics_path):
            with open(self.metrics_path, newline="", encoding="UTF-8") as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["epoch"]) <= keep_through_epoch]
        with open(self.metrics_path, "w", newline="", encoding="UTF-8") as fh:
            writer = csv.DictWriter(fh, METRIC_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)

    def append_metrics(self, row):
        with open(self.metrics_path, "a", newline="", encoding="UTF-8") as fh:
            csv.DictWriter(fh, METRIC_COLUMNS, lineterminator="\n").writerow(
                {k: _fmt_metric(row.get(k)) for k in METRIC_COLUMNS}
            )

    def read_metrics(self):
        with open(self.metrics_path, newline="", encoding="UTF-8") as fh:
            return list(csv.DictReader(fh))


def _fmt_metric(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


############################################################################
# Training state


@attr.s(eq=False)
class TrainingState:
    """Everything a run needs to continue: models, optimizers, random streams and counters."""

    cfg = attr.ib()
    net = attr.ib()
    prior = attr.ib(default=None)
    class_prior = attr.ib(default=None)
    disc = attr.ib(default=None)
    adam_net = attr.ib(default=None)
    adam_disc = attr.ib(default=None)
    adam_prior = attr.ib(default=None)
    rng_data = attr.ib(default=None)
    rng_noise = attr.ib(default=None)
    rng_adversary = attr.ib(default=None)
    epoch = attr.ib(default=0)
    step = attr.ib(default=0)

    @property
    def rngs(self):
        return {"data": self.rng_data, "noise": self.rng_noise, "adversary": self.rng_adversary}


def _adam(cfg, lr):
    return AdamState(lr=lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)


def _input_shape(cfg, dataset_shape=None):
    return tuple(dataset_shape) if cfg.data_kind == "mixture" and dataset_shape is not None else None


def _new_disc(cfg, k, warmup):
    return Discriminator(
        k,
        cfg.hidden1,
        cfg.hidden2,
        rng=Rng(cfg.seed_adversary, "adversary-init"),
        spectral_norm=cfg.spectral_norm,
        power_warmup=warmup,
        dtype=cfg.dtype,
    )


def _skeleton(cfg, input_shape, init):
    rng = Rng(cfg.seed_net, "net") if init else None
    net = build_preset(cfg.preset, rng=rng, dtype=cfg.dtype, input_shape=input_shape)
    return TrainingState(
        cfg=cfg,
        net=net,
        adam_net=_adam(cfg, cfg.net_lr),
        rng_data=Rng(cfg.seed_data, "data"),
        rng_noise=Rng(cfg.seed_noise, "noise"),
        rng_adversary=Rng(cfg.seed_adversary, "adversary"),
    )


def init_state(cfg, dataset):
    """Builds freshly initialized models for cfg, using dataset for the data-dependent parts.

    The adversarial regime selects the active prior dims from the untrained
    network's encodings; the OT regime initializes the class priors from them.
    """

    state = _skeleton(cfg, _input_shape(cfg, dataset.shape), init=True)
    sample = dataset.images[: cfg.select_samples]
    if cfg.regime == "adversarial":
        if cfg.k > state.net.latent_dim:
            raise ConfigError(f"prior.k = {cfg.k} exceeds the latent dimensionality {state.net.latent_dim}")
        dims = select_active_dims(state.net, sample, cfg.k)
        state.prior = PriorSpec(state.net.latent_dim, dims, cfg.family, cfg.clip_bound)
        state.disc = _new_disc(cfg, cfg.k, cfg.power_warmup)
        state.adam_disc = _adam(cfg, cfg.disc_lr)
    else:
        if dataset.labels is None:
            raise DataError("the ot regime needs a labeled dataset")
        state.class_prior = init_class_priors(
            state.net, sample, dataset.labels[: cfg.select_samples], dataset.num_classes, dtype=cfg.dtype
        )
        state.adam_prior = _adam(cfg, cfg.prior_lr)
    return state


############################################################################
# Checkpoints


def state_arrays(state):
    """Named arrays of a training state, in checkpoint order."""
    arrays = {
        "config": text_to_array(dump_config(state.cfg)),
        "config_hash": text_to_array(config_hash(state.cfg)),
        "epoch": np.array([state.epoch], dtype=np.int64),
        "step": np.array([state.step], dtype=np.int64),
        "net.input_shape": np.array(state.net.input_shape, dtype=np.int64),
    }
    arrays.update(state.net.state_dict("net."))
    arrays.update(state.adam_net.state_dict("adam.net."))
    if state.prior is not None:
        arrays["prior.active_dims"] = np.array(state.prior.active_dims, dtype=np.int64)
        arrays.update(state.disc.state_dict("disc."))
        arrays.update(state.adam_disc.state_dict("adam.disc."))
    if state.class_prior is not None:
        arrays.update(state.class_prior.state_dict("class_prior."))
        arrays.update(state.adam_prior.state_dict("adam.prior."))
    for name, rng in state.rngs.items():
        arrays.update({f"rng.{name}.{k}": v for k, v in rng.get_state().items()})
    return arrays


def save_checkpoint(path, state):
    write_arrays(path, state_arrays(state))
    _logger.info("Saved checkpoint %s at epoch %d (net %s)", path, state.epoch, array_digest(state.net.named_params()))


def load_checkpoint(path):
    """Restores a :class:`TrainingState` from a checkpoint file.

    Raises:
        CheckpointError: On a corrupt or incompatible file; nothing is restored.
    """

    arrays = read_arrays(path)
    try:
        cfg = parse_config(array_to_text(arrays["config"]))
        if config_hash(cfg) != array_to_text(arrays["config_hash"]):
            raise CheckpointError(f"{path}: embedded configuration does not match its hash")
        shape = tuple(int(s) for s in arrays["net.input_shape"])
        state = _skeleton(cfg, shape, init=False)
        state.net.load_state_dict(arrays, "net.")
        state.adam_net.load_state_dict(arrays, "adam.net.")
        if "prior.active_dims" in arrays:
            dims = [int(i) for i in arrays["prior.active_dims"]]
            state.prior = PriorSpec(state.net.latent_dim, dims, cfg.family, cfg.clip_bound)
            state.disc = _new_disc(cfg, len(dims), 0)
            state.disc.load_state_dict(arrays, "disc.")
            state.adam_disc = _adam(cfg, cfg.disc_lr)
            state.adam_disc.load_state_dict(arrays, "adam.disc.")
        if "class_prior.means" in arrays:
            means = arrays["class_prior.means"]
            state.class_prior = ClassPrior(np.zeros(means.shape), np.ones(means.shape), dtype=cfg.dtype)
            state.class_prior.load_state_dict(arrays, "class_prior.")
            state.adam_prior = _adam(cfg, cfg.prior_lr)
            state.adam_prior.load_state_dict(arrays, "adam.prior.")
        for name, rng in state.rngs.items():
            rng.set_state(take_prefixed(arrays, f"rng.{name}."))
        state.epoch = int(arrays["epoch"][0])
        state.step = int(arrays["step"][0])
    except (KeyError, ValueError, ConfigError) as e:
        raise CheckpointError(f"{path}: incompatible checkpoint contents ({e})") from e
    _logger.info("Loaded checkpoint %s at epoch %d (net %s)", path, state.epoch, array_digest(state.net.named_params()))
    return state


############################################################################
# Steps


def _net_update(state, z, dz):
    net = state.net
    net.backward_recompute(z.reshape((len(z),) + net.latent_shape), dz.reshape((len(z),) + net.latent_shape))
    adam_step(state.adam_net, net.named_params(), net.named_grads())


def adversarial_step(state, x, adversarial):
    """One network update (and, in the adversarial phase, the discriminator updates before it)."""
    cfg, net, prior = state.cfg, state.net, state.prior
    net.zero_grad()
    z = net.encode(x)
    report, dz = recon_loss(net, prior, x, cfg.l1_weight, cfg.l2_weight, z=z, propagate=False)
    if cfg.perturb_in_adversarial:
        rep, dzp = perturbation_loss(
            net, x, cfg.perturb_std, state.rng_noise, cfg.perturb_weight, z=z, propagate=False
        )
        report, dz = report + rep, dz + dzp
    if adversarial:
        idx = prior.index
        z_enc = z[:, idx]
        for _ in range(cfg.disc_steps):
            z_prior = sample_prior(prior, state.rng_adversary, len(x), dtype=cfg.dtype)[:, idx]
            report = report + disc_step(state.disc, z_prior, z_enc, state.adam_disc)
        loss, ds = hinge_enc_from_scores(disc_forward(state.disc, z_enc))
        dz[:, idx] += state.disc.backward(z_enc, ds, accumulate=False)
        report = report + LossReport({"adv_enc": loss})
    report.check_finite()
    _net_update(state, z, dz)
    return report


def ot_step(state, x, labels):
    """One joint update of the network and the class priors."""
    cfg, net, cp = state.cfg, state.net, state.class_prior
    net.zero_grad()
    cp.zero_grad()
    z = net.encode(x)
    dz = np.zeros_like(z)
    if cfg.ot_per_class:
        ot_total = 0.0
        for cls in range(cp.num_classes):
            mask = labels == cls
            if not mask.any():
                _logger.warning("Class %d absent from batch at step %d; skipped", cls, state.step)
                continue
            samples, eps = sample_class_prior(cp, cls, state.rng_adversary, int(mask.sum()))
            loss, dzc, dsamples, _ = ot_loss_and_grad(z[mask], samples, cfg.ot_cost)
            dz[mask] += dzc
            class_prior_backward(cp, cls, eps, dsamples)
            ot_total += loss
    else:
        draws = [sample_class_prior(cp, int(c), state.rng_adversary, 1) for c in labels]
        samples = np.concatenate([s for s, _ in draws])
        ot_total, dz, dsamples, _ = ot_loss_and_grad(z, samples, cfg.ot_cost)
        for i, c in enumerate(labels):
            class_prior_backward(cp, int(c), draws[i][1], dsamples[i : i + 1])
    report = LossReport({"ot": ot_total})
    rep, dzp = perturbation_loss(net, x, cfg.perturb_std, state.rng_noise, cfg.perturb_weight, z=z, propagate=False)
    report = (report + rep).check_finite()
    _net_update(state, z, dz + dzp)
    adam_step(state.adam_prior, cp.named_params(), cp.named_grads())
    return report


############################################################################
# Epoch loop


def _phase(cfg, epoch):
    if cfg.regime == "ot":
        return "ot"
    return "recon" if epoch < cfg.recon_epochs else "adversarial"


def _mean_reports(reports):
    sums, counts = {}, {}
    for r in reports:
        for k, v in r.components.items():
            sums[k] = sums.get(k, 0.0) + v
            counts[k] = counts.get(k, 0) + 1
    means = {k: sums[k] / counts[k] for k in sums}
    totals = [r.total for r in reports]
    return means, (float(np.mean(totals)) if totals else None)


class _Evaluator:
    """Per-epoch Fréchet feature distance; the feature map is built on first use."""

    def __init__(self, cfg, dataset):
        self.cfg, self.dataset = cfg, dataset
        self.feature_fn = None

    def _features(self):
        if self.feature_fn is None:
            kind = self.cfg.feature
            if kind == "classifier" and self.dataset.labels is None:
                _logger.warning("Unlabeled data; using the identity feature map for evaluation")
                kind = "identity"
            self.feature_fn, _ = build_feature_fn(kind, self.dataset, self.cfg.classifier_epochs, self.cfg.eval_seed)
        return self.feature_fn

    def __call__(self, state, epoch):
        cfg = self.cfg
        rng = Rng(cfg.eval_seed, "eval").spawn(f"epoch-{epoch}")
        n = min(cfg.eval_n_samples, len(self.dataset))
        out = {}
        if state.class_prior is not None:
            cp = state.class_prior
            per_class = max(1, n // cp.num_classes)
            z = np.concatenate([sample_class_prior(cp, c, rng, per_class)[0] for c in range(cp.num_classes)])
            fake = decode_batched(state.net, z)
            out["effective_dims"] = float(np.mean(effective_dims(cp, cfg.effective_threshold)))
        else:
            fake = generate_samples(state.net, state.prior, rng, n)
        real = self.dataset.images[: len(fake)]
        if len(fake) >= 2:
            out["frechet"] = frechet_feature_distance(real, fake, self._features())
        return out


def run_training(state, dataset, run_dir):
    """Trains state on dataset until the configured epoch count, writing artifacts to run_dir.

    Returns:
        TrainingState: The final state (also saved as ``final.rgck``).
    """

    cfg = state.cfg
    run_dir.start_metrics(keep_through_epoch=state.epoch)
    if state.epoch == 0:
        save_checkpoint(run_dir.checkpoint_path(0), state)
    evaluator = _Evaluator(cfg, dataset)
    stratified = cfg.regime == "ot"
    t0 = time.monotonic()
    with threadpool_limits(limits=1 if cfg.single_threaded else None):
        while state.epoch < cfg.total_epochs:
            epoch = state.epoch
            phase = _phase(cfg, epoch)
            reports = []
            for idx in batch_iterator(dataset, cfg.batch_size, state.rng_data, stratified=stratified):
                x = dataset.images[idx]
                if phase == "ot":
                    report = ot_step(state, x, dataset.labels[idx])
                else:
                    report = adversarial_step(state, x, adversarial=phase == "adversarial")
                state.step += 1
                reports.append(report)
                _logger.debug("step=%d %s", state.step, " ".join(f"{k}={v:.6g}" for k, v in report.components.items()))
            state.epoch += 1
            means, total = _mean_reports(reports)
            row = {"epoch": state.epoch, "phase": phase, "steps": len(reports), "total": total, **means}
            if cfg.eval_every and state.epoch % cfg.eval_every == 0:
                row.update(evaluator(state, state.epoch))
            run_dir.append_metrics(row)
            _logger.info(
                "epoch=%d step=%d phase=%s %s wall=%.1f",
                state.epoch,
                state.step,
                phase,
                " ".join(f"{k}={_fmt_metric(row[k])}" for k in METRIC_COLUMNS[3:] if row.get(k) is not None),
                time.monotonic() - t0,
            )
            if cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(run_dir.checkpoint_path(state.epoch), state)
    save_checkpoint(run_dir.final_path, state)
    return state


def _prepare(cfg, dataset, out_dir, resume, regime):
    if cfg.regime != regime:
        raise ConfigError(f"training.regime is {cfg.regime!r}, but the {regime} trainer was requested")
    if resume:
        state = load_checkpoint(resume)
        if config_hash(state.cfg) != config_hash(cfg):
            raise CheckpointError(f"{resume} was written with a different configuration")
    else:
        state = init_state(cfg, dataset)
    return state, RunDir(out_dir).create(cfg)


def train_adversarial(cfg, dataset, out_dir, resume=None):
    """Reconstruction phase followed by the adversarial phase."""
    state, run_dir = _prepare(cfg, dataset, out_dir, resume, "adversarial")
    return run_training(state, dataset, run_dir)


def train_ot(cfg, dataset, out_dir, resume=None):
    """Class-conditional optimal-transport training."""
    state, run_dir = _prepare(cfg, dataset, out_dir, resume, "ot")
    return run_training(state, dataset, run_dir)
