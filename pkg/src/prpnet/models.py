"""Feed-forward compositions of layers and the registered architectures."""
from __future__ import annotations

import enum
import io
import json
from dataclasses import dataclass

import numpy as np

from .layers import BackwardBeforeForward, DenseLayer, PRPLayer
from .linalg import ShapeError, derive_seed
from .projections import InitScheme, from_descriptor, make_projection


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        if self is Activation.SIGMOID:
            return sigmoid(z)
        return z

    def backward(self, z: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the pre-activation ``z`` given output ``a``.

        The ReLU subgradient at exactly 0 is 0.
        """
        if self is Activation.RELU:
            return da * (z > 0.0)
        if self is Activation.SIGMOID:
            return da * a * (1.0 - a)
        return da


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ModelKind(str, enum.Enum):
    PRP = "prp"
    DENSE = "dense"
    LOWRANK = "lowrank"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("-", "").replace("_", "")
        aliases = {"lowrankdense": "lowrank", "fc": "dense", "standard": "dense"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise ValueError(f"unknown model kind {value!r}; expected prp, dense or lowrank") from None


class Sequential:
    """Ordered ``(layer, activation)`` stages."""

    def __init__(self, stages, name: str = "custom"):
        self.stages = [(layer, Activation(act)) for layer, act in stages]
        if not self.stages:
            raise ValueError("a model needs at least one stage")
        for k in range(len(self.stages) - 1):
            out_dim = self.stages[k][0].d_out
            in_dim = self.stages[k + 1][0].d_in
            if out_dim != in_dim:
                raise ShapeError(f"stage {k} outputs {out_dim} features but stage {k + 1} expects {in_dim}")
        self.name = name
        self._cache = None
        # stage index -> index of the stage whose projection this stage transposes
        self.tied = {}

    @property
    def d_in(self) -> int:
        return self.stages[0][0].d_in

    @property
    def d_out(self) -> int:
        return self.stages[-1][0].d_out

    @property
    def widths(self) -> list[int]:
        return [self.d_in] + [layer.d_out for layer, _ in self.stages]

    def forward(self, x) -> np.ndarray:
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.d_in:
            raise ShapeError(f"model expects a batch of width {self.d_in}, got shape {a.shape}")
        cache = []
        for layer, act in self.stages:
            z = layer.forward(a)
            a = act(z)
            cache.append((z, a))
        self._cache = cache
        return a

    def predict(self, x, batch_size: int = 2048) -> np.ndarray:
        """Forward in chunks without keeping anything for backward."""
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[i:i + batch_size]) for i in range(0, x.shape[0], batch_size)]
        self._cache = None
        for layer, _ in self.stages:
            layer._cache = None
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.d_out))

    def backward(self, dloss_dy) -> list[dict]:
        if self._cache is None:
            raise BackwardBeforeForward("model backward called before forward")
        grad = np.asarray(dloss_dy, dtype=np.float64)
        grads = [None] * len(self.stages)
        for k in range(len(self.stages) - 1, -1, -1):
            layer, act = self.stages[k]
            z, a = self._cache[k]
            if grad.shape != a.shape:
                raise ShapeError(f"stage {k}: gradient shape {grad.shape} != output {a.shape}")
            dz = act.backward(z, a, grad)
            grads[k], grad = layer.backward(dz)
        return grads

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {
            f"{k}.{name}": arr
            for k, (layer, _) in enumerate(self.stages)
            for name, arr in layer.params.items()
        }

    @staticmethod
    def flatten_grads(grads: list[dict]) -> dict[str, np.ndarray]:
        return {f"{k}.{name}": g for k, gs in enumerate(grads) for name, g in gs.items()}

    def param_count(self) -> int:
        return sum(layer.param_count() for layer, _ in self.stages)

    def projections(self):
        return [layer.proj for layer, _ in self.stages if isinstance(layer, PRPLayer)]

    def describe(self) -> dict:
        stages = []
        for k, (layer, act) in enumerate(self.stages):
            entry = {"kind": layer.kind, "d_in": layer.d_in, "d_out": layer.d_out, "activation": act.value}
            if isinstance(layer, PRPLayer):
                entry["projection"] = layer.proj.descriptor()
                if k in self.tied:
                    entry["tied_to"] = self.tied[k]
            stages.append(entry)
        return {"name": self.name, "stages": stages}


class TiedAutoencoder(Sequential):
    """PRP autoencoder whose decoder projections are transposed views of the encoder's.

    With ``m`` encoder stages, decoder stage ``j`` (model stage ``m + j``) uses
    encoder projection ``m - 1 - j`` transposed.
    """

    def __init__(self, stages, n_encoder: int, name: str = "autoencoder"):
        super().__init__(stages, name=name)
        self.n_encoder = n_encoder
        for j in range(len(self.stages) - n_encoder):
            self.tied[n_encoder + j] = n_encoder - 1 - j

    def encode(self, x) -> np.ndarray:
        a = np.asarray(x, dtype=np.float64)
        for layer, act in self.stages[: self.n_encoder]:
            a = act(layer.forward(a))
        return a


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, ...]
    activations: tuple[str, ...]
    lowrank_widths: tuple[int, ...] | None = None


_SYNTH_2_16_1 = Architecture((2, 16, 1), ("relu", "identity"))
_MNIST_MLP = Architecture((784, 512, 256, 10), ("relu", "relu", "identity"), (784, 4, 256, 10))

ARCHITECTURES: dict[str, Architecture] = {
    "linear": Architecture((2, 1), ("identity",)),
    "xor": _SYNTH_2_16_1,
    "circles": _SYNTH_2_16_1,
    "checkerboard": _SYNTH_2_16_1,
    "polynomial": Architecture((1, 64, 64, 1), ("relu", "relu", "identity")),
    "mnist_mlp": _MNIST_MLP,
    "fmnist_mlp": _MNIST_MLP,
    "autoencoder": Architecture(
        (784, 512, 512, 512, 784),
        ("relu", "relu", "relu", "sigmoid"),
        (784, 10, 256, 10, 784),
    ),
}


def _resolve(spec) -> Architecture:
    if isinstance(spec, Architecture):
        return spec
    if isinstance(spec, str):
        try:
            return ARCHITECTURES[spec]
        except KeyError:
            names = ", ".join(sorted(ARCHITECTURES))
            raise ValueError(f"unknown architecture {spec!r}; registered: {names}") from None
    widths = tuple(int(d) for d in spec["dims"])
    acts = spec.get("activations")
    if acts is None:
        acts = ["relu"] * (len(widths) - 2) + ["identity"]
    lowrank = spec.get("lowrank_dims")
    return Architecture(widths, tuple(acts), tuple(lowrank) if lowrank else None)


def build_from_widths(widths, activations, kind, master_seed: int, scheme=InitScheme.GAUSSIAN, name="custom"):
    kind = ModelKind.parse(kind)
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ShapeError(f"invalid widths {widths}")
    if len(activations) != len(widths) - 1:
        raise ShapeError(f"{len(widths) - 1} stages but {len(activations)} activations")
    stages = []
    for k, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
        seed = derive_seed(master_seed, k)
        if kind is ModelKind.PRP:
            layer = PRPLayer(make_projection(scheme, d_in, d_out, seed))
        else:
            layer = DenseLayer.init(d_in, d_out, seed)
        stages.append((layer, activations[k]))
    return Sequential(stages, name=name)


def build_architecture(spec, kind, master_seed: int, scheme=InitScheme.GAUSSIAN) -> Sequential:
    """Build a registered (or explicit ``{"dims": [...]}``) architecture.

    ``prp`` replaces every linear layer by a PRP layer; ``lowrank`` swaps in
    the narrow-bottleneck widths, which only some architectures define.
    """
    name = spec if isinstance(spec, str) else "custom"
    if name == "autoencoder":
        return build_tied_autoencoder(kind, master_seed)
    arch = _resolve(spec)
    kind = ModelKind.parse(kind)
    widths = arch.widths
    if kind is ModelKind.LOWRANK:
        if arch.lowrank_widths is None:
            raise ValueError(f"architecture {name!r} has no low-rank variant")
        widths = arch.lowrank_widths
    return build_from_widths(widths, arch.activations, kind, master_seed, scheme, name=name)


def build_tied_autoencoder(kind, master_seed: int, activations=None) -> Sequential:
    """784-512-512 encoder with a mirrored decoder.

    The PRP variant uses orthogonal encoder projections and transposed views
    of them in the decoder. Dense and low-rank variants are untied.
    """
    kind = ModelKind.parse(kind)
    arch = ARCHITECTURES["autoencoder"]
    acts = tuple(activations) if activations is not None else arch.activations
    if kind is not ModelKind.PRP:
        widths = arch.widths if kind is ModelKind.DENSE else arch.lowrank_widths
        return build_from_widths(widths, acts, ModelKind.DENSE, master_seed, name="autoencoder")
    enc_widths = arch.widths[:3]
    enc = [
        make_projection(InitScheme.ORTHOGONAL, d_in, d_out, derive_seed(master_seed, k))
        for k, (d_in, d_out) in enumerate(zip(enc_widths[:-1], enc_widths[1:]))
    ]
    projs = enc + [p.T() for p in reversed(enc)]
    stages = [(PRPLayer(p), a) for p, a in zip(projs, acts)]
    return TiedAutoencoder(stages, n_encoder=len(enc))


def model_forward(model: Sequential, x_batch) -> np.ndarray:
    return model.forward(x_batch)


def model_backward(model: Sequential, dloss_dy) -> list[dict]:
    return model.backward(dloss_dy)


def model_from_description(desc: dict) -> Sequential:
    """Rebuild a model skeleton; PRP projections are regenerated from their seeds."""
    stages = []
    projs = {}
    for k, entry in enumerate(desc["stages"]):
        if entry["kind"] == "prp":
            if "tied_to" in entry:
                proj = projs[entry["tied_to"]].T()
                if proj.checksum != entry["projection"]["checksum"]:
                    raise ValueError(f"stage {k}: tied projection checksum mismatch")
            else:
                proj = from_descriptor(entry["projection"])
            projs[k] = proj
            layer = PRPLayer(proj)
        elif entry["kind"] == "dense":
            layer = DenseLayer(np.zeros((entry["d_out"], entry["d_in"])), np.zeros(entry["d_out"]))
        else:
            raise ValueError(f"stage {k}: unknown layer kind {entry['kind']!r}")
        stages.append((layer, entry["activation"]))
    tied = [k for k, e in enumerate(desc["stages"]) if "tied_to" in e]
    if tied:
        return TiedAutoencoder(stages, n_encoder=tied[0], name=desc.get("name", "autoencoder"))
    return Sequential(stages, name=desc.get("name", "custom"))


def save_checkpoint(model: Sequential, path) -> None:
    """Write learnable parameters plus projection descriptors (never P itself) to ``.npz``."""
    meta = json.dumps(model.describe(), sort_keys=True).encode()
    arrays = {f"param/{k}": v for k, v in model.named_parameters().items()}
    arrays["meta"] = np.frombuffer(meta, dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Sequential:
    with open(path, "rb") as fh:
        data = np.load(io.BytesIO(fh.read()))
    desc = json.loads(bytes(data["meta"]).decode())
    model = model_from_description(desc)
    params = model.named_parameters()
    for name, arr in params.items():
        key = f"param/{name}"
        if key not in data:
            raise ValueError(f"checkpoint {path} lacks parameter {name}")
        stored = data[key]
        if stored.shape != arr.shape:
            raise ValueError(f"checkpoint parameter {name} has shape {stored.shape}, expected {arr.shape}")
        arr[...] = stored
    return model
