"""Fully-connected WGAN-GP: networks, penalised critic loss, training, gallery generation."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, InputError, NumericalError
from .imaging import ImageBuffer, gray_square, load_image, save_image
from .numerics import autodiff as ad
from .numerics.autodiff import Tensor, grad
from .numerics.optim import AdamState, adam_step

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "roadaug-wgan-gp/1"


@dataclass(frozen=True)
class MlpSpec:
    sizes: tuple
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"
    leaky_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 3:
            raise ContractError("an MLP needs input, at least one hidden layer, and output sizes")
        if any(s < 1 for s in self.sizes):
            raise ContractError(f"layer sizes must be positive, got {self.sizes}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ad.ACTIVATIONS:
                raise ContractError(f"unknown activation {act!r}")


class Mlp:
    def __init__(self, spec, weights, biases):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for i, (a, b) in enumerate(zip(spec.sizes[:-1], spec.sizes[1:])):
            if self.weights[i].shape != (a, b) or self.biases[i].shape != (b,):
                raise ContractError(f"layer {i}: expected weight {(a, b)} and bias {(b,)}")

    @classmethod
    def init(cls, spec, rng):
        # He-normal weights for the leaky-rectifier gain, zero biases
        gain = np.sqrt(2.0 / (1.0 + spec.leaky_slope ** 2))
        ws, bs = [], []
        for a, b in zip(spec.sizes[:-1], spec.sizes[1:]):
            ws.append(rng.standard_normal((a, b)) * (gain / np.sqrt(a)))
            bs.append(np.zeros(b))
        return cls(spec, ws, bs)

    @property
    def params(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def with_params(self, params):
        return Mlp(self.spec, params[0::2], params[1::2])

    def leaves(self):
        return [Tensor(p, requires_grad=True) for p in self.params]

    def forward(self, x, params=None):
        """``x`` is a (batch, features) Tensor; ``params`` defaults to constant copies."""
        params = params if params is not None else [Tensor(p) for p in self.params]
        hidden = ad.ACTIVATIONS[self.spec.hidden_activation]
        last = len(self.weights) - 1
        h = ad.as_tensor(x)
        for i in range(len(self.weights)):
            h = h @ params[2 * i] + params[2 * i + 1]
            if i < last:
                h = hidden(h, self.spec.leaky_slope) if self.spec.hidden_activation == "leaky_relu" else hidden(h)
        return ad.ACTIVATIONS[self.spec.output_activation](h)

    def __call__(self, x):
        return self.forward(ad.as_tensor(x)).value

    def as_dict(self):
        return {
            "spec": {**asdict(self.spec), "sizes": list(self.spec.sizes)},
            "layers": [{"weight": w.ravel().tolist(), "bias": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, data):
        spec = MlpSpec(**data["spec"])
        ws, bs = [], []
        for (a, b), layer in zip(zip(spec.sizes[:-1], spec.sizes[1:]), data["layers"]):
            ws.append(np.asarray(layer["weight"], dtype=np.float64).reshape(a, b))
            bs.append(np.asarray(layer["bias"], dtype=np.float64))
        return cls(spec, ws, bs)


@dataclass(frozen=True)
class GanConfig:
    noise_dim: int = 64
    roi_side: int = 32
    hidden: tuple = (256, 512)
    leaky_slope: float = 0.2
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    total_steps: int = 10000
    batch_size: int = 64
    gp_lambda: float = 10.0
    n_critic: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("noise_dim", "roi_side", "batch_size", "n_critic"):
            if getattr(self, name) < 1:
                raise ContractError(f"gan.{name} must be positive")
        if self.total_steps < 0:
            raise ContractError("gan.total_steps must be >= 0")
        if not self.learning_rate > 0 or not self.gp_lambda > 0:
            raise ContractError("gan.learning_rate and gan.gp_lambda must be > 0")
        if not self.hidden:
            raise ContractError("gan.hidden needs at least one layer")

    @property
    def pixels(self):
        return self.roi_side * self.roi_side

    def generator_spec(self):
        sizes = (self.noise_dim,) + self.hidden + (self.pixels,)
        return MlpSpec(sizes, "leaky_relu", "sigmoid", self.leaky_slope)

    def critic_spec(self):
        sizes = (self.pixels,) + tuple(reversed(self.hidden)) + (1,)
        return MlpSpec(sizes, "leaky_relu", "identity", self.leaky_slope)


# --- losses ---------------------------------------------------------------

def sample_interpolates(real, fake, eps):
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64).reshape(-1)
    if real.shape != fake.shape:
        raise ContractError(f"real batch {real.shape} and fake batch {fake.shape} differ")
    if eps.shape[0] != real.shape[0]:
        raise ContractError(f"need one epsilon per sample ({real.shape[0]}), got {eps.shape[0]}")
    e = eps.reshape((-1,) + (1,) * (real.ndim - 1))
    return e * real + (1.0 - e) * fake


def _as_critic(critic):
    if isinstance(critic, Mlp):
        return critic.forward
    return critic


def gradient_penalty(critic, xhat, lam):
    """``lam * mean_i (||dD/dx(xhat_i)||_2 - 1)^2`` as a differentiable scalar.

    ``critic`` maps a (batch, features) Tensor to per-sample scores; pass a
    closure over parameter leaves to differentiate the penalty w.r.t. them.
    """
    D = _as_critic(critic)
    xhat = np.asarray(xhat.value if isinstance(xhat, Tensor) else xhat, dtype=np.float64)
    if xhat.ndim != 2 or xhat.shape[0] == 0:
        raise ContractError(f"xhat must be a non-empty (batch, features) array, got {xhat.shape}")
    x = Tensor(xhat, requires_grad=True)
    (gx,) = grad(ad.tsum(D(x)), [x], create_graph=True)
    norms = ad.norm(gx, axis=1)
    return lam * ad.mean(ad.square(norms - 1.0))


def critic_loss(critic, real, fake, xhat, lam):
    """Mean-based estimate of ``E[D(fake)] - E[D(real)] + lam * GP``."""
    D = _as_critic(critic)
    return ad.mean(D(ad.as_tensor(fake))) - ad.mean(D(ad.as_tensor(real))) + gradient_penalty(D, xhat, lam)


def generator_loss(critic, fake):
    return -ad.mean(_as_critic(critic)(ad.as_tensor(fake)))


# --- training -------------------------------------------------------------

@dataclass
class Checkpoint:
    generator: Mlp
    critic: Mlp
    config: GanConfig
    steps: int = 0
    log: list = field(default_factory=list, repr=False)

    def as_dict(self):
        cfg = asdict(self.config)
        cfg["hidden"] = list(self.config.hidden)
        body = {
            "format": CHECKPOINT_FORMAT,
            "config": cfg,
            "steps": self.steps,
            "generator": self.generator.as_dict(),
            "critic": self.critic.as_dict(),
        }
        body["digest"] = _digest(body)
        return body

    @property
    def digest(self):
        return self.as_dict()["digest"]

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read checkpoint {path}: {exc}") from None
        if data.get("format") != CHECKPOINT_FORMAT:
            raise InputError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        digest = data.pop("digest", None)
        if digest != _digest(data):
            raise InputError(f"{path}: checkpoint digest mismatch")
        cfg = GanConfig(**data["config"])
        return cls(Mlp.from_dict(data["generator"]), Mlp.from_dict(data["critic"]), cfg, data["steps"])


def _digest(body):
    payload = json.dumps({k: v for k, v in body.items() if k != "digest"}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def prepare_rois(rois, side):
    """Grayscale, resize to side x side and flatten each ROI into a row."""
    return np.stack([gray_square(r, side).ravel() for r in rois]) if rois else np.zeros((0, side * side))


def init_checkpoint(config):
    rng = np.random.default_rng(config.seed)
    gen = Mlp.init(config.generator_spec(), rng)
    crit = Mlp.init(config.critic_spec(), rng)
    return Checkpoint(gen, crit, config, 0)


def train(rois, config, progress=None):
    """Train from a list of ImageBuffers (or an (n, side*side) array). Deterministic in ``config.seed``.

    Each entry of ``Checkpoint.log`` is ``(step, critic_loss, wasserstein_estimate)``
    for one critic update; a generator update follows every ``n_critic`` of them.
    """
    data = rois if isinstance(rois, np.ndarray) else prepare_rois(list(rois), config.roi_side)
    if data.ndim != 2 or data.shape[1] != config.pixels:
        raise ContractError(f"training data must have {config.pixels} features per row")
    if data.shape[0] < config.batch_size:
        raise InputError(f"need at least batch_size={config.batch_size} ROIs, got {data.shape[0]}")

    ckpt = init_checkpoint(config)
    gen, crit = ckpt.generator, ckpt.critic
    # separate streams so the init above is unaffected by how many steps run
    rng = np.random.default_rng([config.seed, 1])
    hyper = dict(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    opt_d = AdamState.for_params(crit.params, **hyper)
    opt_g = AdamState.for_params(gen.params, **hyper)
    n, bs = data.shape[0], config.batch_size
    history = []
    for step in range(config.total_steps):
        real = data[rng.choice(n, size=bs, replace=False)]
        z = rng.standard_normal((bs, config.noise_dim))
        eps = rng.uniform(0.0, 1.0, size=bs)
        fake = gen(z)
        xhat = sample_interpolates(real, fake, eps)

        leaves = crit.leaves()
        D = lambda x, leaves=leaves: crit.forward(x, leaves)  # noqa: E731
        d_real = ad.mean(D(Tensor(real)))
        d_fake = ad.mean(D(Tensor(fake)))
        loss = d_fake - d_real + gradient_penalty(D, xhat, config.gp_lambda)
        lval = float(loss.value)
        if not np.isfinite(lval):
            raise NumericalError(f"critic loss is not finite at step {step}")
        grads = grad(loss, leaves)
        params, opt_d = adam_step(crit.params, [g.value for g in grads], opt_d)
        crit = crit.with_params(params)
        west = float(d_real.value - d_fake.value)
        history.append((step, lval, west))

        if (step + 1) % config.n_critic == 0:
            z = rng.standard_normal((bs, config.noise_dim))
            gleaves = gen.leaves()
            g_loss = generator_loss(crit, gen.forward(Tensor(z), gleaves))
            if not np.isfinite(float(g_loss.value)):
                raise NumericalError(f"generator loss is not finite at step {step}")
            ggrads = grad(g_loss, gleaves)
            params, opt_g = adam_step(gen.params, [g.value for g in ggrads], opt_g)
            gen = gen.with_params(params)
        if progress is not None:
            progress(step, lval, west)
    return Checkpoint(gen, crit, config, config.total_steps, history)


def sample(checkpoint, count, seed):
    """Generator output for ``count`` per-index noise draws, clamped to [0, 1]."""
    cfg = checkpoint.config
    z = np.stack([np.random.default_rng([seed, k]).standard_normal(cfg.noise_dim) for k in range(count)])
    out = checkpoint.generator(z)
    return np.clip(out, 0.0, 1.0).reshape(count, cfg.roi_side, cfg.roi_side)


# --- gallery --------------------------------------------------------------

@dataclass(frozen=True)
class GalleryEntry:
    roi_id: str
    file: str
    seed: list
    checkpoint_digest: str


@dataclass(frozen=True)
class GalleryManifest:
    root: str
    roi_side: int
    entries: tuple = ()

    def __len__(self):
        return len(self.entries)

    def path(self, entry):
        return os.path.join(self.root, entry.file)

    def as_dict(self):
        return {"roi_side": self.roi_side,
                "entries": [asdict(e) for e in self.entries]}


def generate_gallery(checkpoint, count, seed, out_dir):
    if count < 1:
        raise ContractError("gallery count must be >= 1")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create gallery directory {out_dir}: {exc}") from None
    digest = checkpoint.digest
    images = sample(checkpoint, count, seed)
    entries = []
    for k, img in enumerate(images):
        fname = f"roi_{k}.png"
        try:
            save_image(ImageBuffer(img), os.path.join(out_dir, fname))
        except OSError as exc:
            raise InputError(f"cannot write {os.path.join(out_dir, fname)}: {exc}") from None
        entries.append(GalleryEntry(f"roi_{k}", fname, [int(seed), k], digest))
    manifest = GalleryManifest(os.fspath(out_dir), checkpoint.config.roi_side, tuple(entries))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_gallery(directory):
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise InputError(f"gallery manifest not found: {path}")
    try:
        with open(path) as fh:
            data = json.load(fh)
        entries = tuple(GalleryEntry(**e) for e in data["entries"])
        manifest = GalleryManifest(os.fspath(directory), int(data["roi_side"]), entries)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"malformed gallery manifest {path}: {exc}") from None
    ids = [e.roi_id for e in entries]
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate roi ids")
    return manifest


def load_gallery_images(manifest):
    out = []
    for e in manifest.entries:
        try:
            out.append(load_image(manifest.path(e)))
        except InputError as exc:
            raise InputError(f"unreadable gallery file {manifest.path(e)}: {exc}") from None
    return out
