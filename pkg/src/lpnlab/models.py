"""Fully connected tanh classifiers with an optional lp projection applied
to the penultimate representation, plus flat binary checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .lpnorm import LpNormLayer, NormOrder, RadiusParam, lp_normalize, normalize_rows

__all__ = [
    "NormConfig",
    "ClassifierSpec",
    "Classifier",
    "build_poc",
    "build_probe",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"LPN1"


@dataclass(frozen=True)
class NormConfig:
    """Declarative projection settings: p and alpha accept a number, "inf",
    or "learnable"."""

    enabled: bool = True
    p: object = "2"
    alpha: object = 1.0

    def build_layer(self) -> LpNormLayer | None:
        if not self.enabled:
            return None
        return LpNormLayer(
            NormOrder.from_config(self.p), RadiusParam.from_config(self.alpha)
        )


@dataclass(frozen=True)
class ClassifierSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    num_classes: int
    norm: NormConfig
    init_seed: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")


def _glorot_uniform(rng: np.random.Generator, fan_in: int,
                    fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Classifier:
    """Dense tanh network; the lp projection (when present) sits between the
    last hidden activation and the linear output layer."""

    def __init__(self, spec: ClassifierSpec):
        self.spec = spec
        self.norm_layer = spec.norm.build_layer()
        rng = np.random.default_rng(spec.init_seed)

        self.hidden: list[tuple[Parameter, Parameter]] = []
        width_in = spec.input_dim
        for i, width_out in enumerate(spec.hidden_widths):
            w = Parameter(_glorot_uniform(rng, width_in, width_out),
                          f"hidden.{i}.W")
            b = Parameter(np.zeros(width_out), f"hidden.{i}.b")
            self.hidden.append((w, b))
            width_in = width_out

        self.out_w = Parameter(
            _glorot_uniform(rng, width_in, spec.num_classes), "out.W")
        self.out_b = Parameter(np.zeros(spec.num_classes), "out.b")

    @property
    def penultimate_dim(self) -> int:
        if self.spec.hidden_widths:
            return self.spec.hidden_widths[-1]
        return self.spec.input_dim

    def parameters(self) -> list[Parameter]:
        params = []
        for w, b in self.hidden:
            params.extend((w, b))
        params.extend((self.out_w, self.out_b))
        if self.norm_layer is not None:
            params.extend(self.norm_layer.parameters())
        return params

    def num_parameters(self) -> int:
        return sum(p.values.size for p in self.parameters())

    def forward(self, batch, tape: Tape | None = None):
        """Run a batch through the network.

        Returns (logits, penultimate, normalized penultimate) as tensors;
        with the projection disabled the last two are the same tensor.
        """
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.spec.input_dim:
            raise ad.DimensionError(
                f"batch shape {batch.shape} does not match input dim "
                f"{self.spec.input_dim}"
            )
        if tape is not None:
            for param in self.parameters():
                tape.watch(param.tensor)

        h = Tensor(batch)
        for w, b in self.hidden:
            h = ad.tanh(ad.add_bias(ad.matmul(h, w.tensor), b.tensor))
        penultimate = h
        if self.norm_layer is not None:
            normalized = lp_normalize(penultimate, self.norm_layer)
        else:
            normalized = penultimate
        logits = ad.add_bias(
            ad.matmul(normalized, self.out_w.tensor), self.out_b.tensor)
        return logits, penultimate, normalized

    def head_logits(self, penultimate_values: np.ndarray) -> np.ndarray:
        """Logits from given penultimate activations (projection + linear
        head only); inference-only helper for diagnostics."""
        pen = np.asarray(penultimate_values, dtype=np.float64)
        if self.norm_layer is not None:
            pen = normalize_rows(
                pen,
                self.norm_layer.order.decode(),
                self.norm_layer.radius.decode(),
                self.norm_layer.epsilon,
            )
        return pen @ self.out_w.values + self.out_b.values[None, :]

    def predict(self, batch) -> np.ndarray:
        """Row-wise argmax of the logits; ties go to the lowest class."""
        logits, _, _ = self.forward(batch)
        return np.argmax(logits.values, axis=1)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Everything needed to rebuild the classifier, as named arrays."""
        state = {p.name: p.values for p in self.parameters()}
        norm = self.spec.norm
        state["meta.input_dim"] = np.asarray(float(self.spec.input_dim))
        state["meta.hidden_widths"] = np.asarray(
            [float(w) for w in self.spec.hidden_widths])
        state["meta.num_classes"] = np.asarray(float(self.spec.num_classes))
        state["meta.init_seed"] = np.asarray(float(self.spec.init_seed))
        state["meta.norm_enabled"] = np.asarray(1.0 if norm.enabled else 0.0)
        if norm.enabled:
            learn_p = norm.p == "learnable"
            learn_a = norm.alpha == "learnable"
            state["meta.norm_learn_p"] = np.asarray(1.0 if learn_p else 0.0)
            state["meta.norm_learn_alpha"] = np.asarray(1.0 if learn_a else 0.0)
            if not learn_p:
                p = float("inf") if norm.p == "inf" else float(norm.p)
                state["meta.norm_p"] = np.asarray(p)
            if not learn_a:
                state["meta.norm_alpha"] = np.asarray(float(norm.alpha))
        return state


def build_poc(d: int, norm: NormConfig, seed: int) -> Classifier:
    """The 2 -> 128 -> d proof-of-concept classifier with a binary head."""
    spec = ClassifierSpec(
        input_dim=2,
        hidden_widths=(128, d),
        num_classes=2,
        norm=norm,
        init_seed=seed,
    )
    return Classifier(spec)


def build_probe(hidden: int, encoder_dim: int, norm: NormConfig,
                seed: int, num_classes: int = 2) -> Classifier:
    """Representation-size probe: optional single hidden layer, projection,
    linear head. hidden = 0 projects the encoder output directly."""
    spec = ClassifierSpec(
        input_dim=encoder_dim,
        hidden_widths=(hidden,) if hidden > 0 else (),
        num_classes=num_classes,
        norm=norm,
        init_seed=seed,
    )
    return Classifier(spec)


# --- checkpoint wire format ------------------------------------------------
# magic "LPN1", little-endian u32 tensor count, then per tensor:
# u32 name length, utf-8 name, u32 rank, u32 dims, float64 row-major payload


def save_checkpoint(classifier: Classifier, path) -> None:
    tensors = classifier.state_tensors()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, values in tensors.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(values, dtype=np.float64)
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"truncated checkpoint while reading {what}")
    return data


def read_checkpoint_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic)")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(
                f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(fh, 8 * size, f"payload of {name}")
            tensors[name] = np.frombuffer(
                payload, dtype="<f8").astype(np.float64).reshape(dims)
    return tensors


def load_checkpoint(path) -> Classifier:
    """Rebuild a classifier (architecture and weights) from a checkpoint."""
    tensors = read_checkpoint_tensors(path)
    enabled = bool(tensors["meta.norm_enabled"])
    if enabled:
        if bool(tensors["meta.norm_learn_p"]):
            p = "learnable"
        else:
            raw_p = float(tensors["meta.norm_p"])
            p = "inf" if np.isinf(raw_p) else raw_p
        if bool(tensors["meta.norm_learn_alpha"]):
            alpha = "learnable"
        else:
            alpha = float(tensors["meta.norm_alpha"])
        norm = NormConfig(enabled=True, p=p, alpha=alpha)
    else:
        norm = NormConfig(enabled=False)

    spec = ClassifierSpec(
        input_dim=int(tensors["meta.input_dim"]),
        hidden_widths=tuple(
            int(w) for w in np.atleast_1d(tensors["meta.hidden_widths"])),
        num_classes=int(tensors["meta.num_classes"]),
        norm=norm,
        init_seed=int(tensors["meta.init_seed"]),
    )
    classifier = Classifier(spec)
    for param in classifier.parameters():
        if param.name not in tensors:
            raise ValueError(f"checkpoint is missing tensor {param.name!r}")
        stored = tensors[param.name]
        if stored.shape != param.values.shape:
            raise ValueError(
                f"checkpoint tensor {param.name!r} has shape {stored.shape}, "
                f"expected {param.values.shape}"
            )
        param.tensor.values[...] = stored
    return classifier
