"""Network structure: levels, weights, initialization, serialization.

Weight layout conventions:

* inter-layer weights: ``(prev_width + 1, width)`` with row 0 the bias row,
  row k >= 1 the outgoing weights of node k of the previous level.
* clique weights: ``(width + 1, width)`` with row 0 the clique bias row and
  the square node block in rows 1..width; entry ``(k, j)`` couples node k
  into node j, and the diagonal ties a node's pre-coupling value to its
  coupled value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import DTYPE, ActivationKind, spawn_rngs, uniform_matrix


class ModelFormatError(ValueError):
    """Model payload cannot be parsed."""


class ModelVersionError(ModelFormatError):
    """Unsupported format_version."""


class ModelShapeError(ModelFormatError):
    """Weight shapes do not chain with the declared level widths."""


class ModelValueError(ModelFormatError):
    """Non-finite or non-numeric weight value."""


@dataclass
class LevelSpec:
    width: int
    activation: ActivationKind = ActivationKind.TANH
    has_clique: bool = True

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"level width must be >= 1, got {self.width}")


@dataclass
class Network:
    """Immutable-by-convention container; training replaces it wholesale."""

    input_width: int
    specs: list[LevelSpec]
    inter: list[np.ndarray] = field(repr=False)
    cliques: list[np.ndarray | None] = field(repr=False)

    @property
    def depth(self) -> int:
        return len(self.specs)

    @property
    def output_width(self) -> int:
        return self.specs[-1].width

    def copy(self) -> "Network":
        return Network(
            input_width=self.input_width,
            specs=[LevelSpec(s.width, s.activation, s.has_clique) for s in self.specs],
            inter=[w.copy() for w in self.inter],
            cliques=[None if c is None else c.copy() for c in self.cliques],
        )

    def validate(self) -> None:
        if len(self.inter) != self.depth or len(self.cliques) != self.depth:
            raise ModelShapeError("per-level weight lists do not match level count")
        prev = self.input_width
        for i, spec in enumerate(self.specs):
            w = self.inter[i]
            if w.shape != (prev + 1, spec.width):
                raise ModelShapeError(
                    f"level {i}: inter-layer weights {w.shape} != {(prev + 1, spec.width)}")
            cw = self.cliques[i]
            if spec.has_clique:
                if cw is None or cw.shape != (spec.width + 1, spec.width):
                    got = None if cw is None else cw.shape
                    raise ModelShapeError(
                        f"level {i}: clique weights {got} != {(spec.width + 1, spec.width)}")
            elif cw is not None:
                raise ModelShapeError(f"level {i}: clique weights present on clique-free level")
            prev = spec.width
        for w in self.inter:
            if not np.all(np.isfinite(w)):
                raise ModelValueError("non-finite inter-layer weight")
        for cw in self.cliques:
            if cw is not None and not np.all(np.isfinite(cw)):
                raise ModelValueError("non-finite clique weight")


def init_network(specs: list[LevelSpec], input_width: int, seed: int,
                 init_scale: float = 1.0, zero_input_bias: bool = False) -> Network:
    """Seeded initialization.

    Inter-layer weights are uniform in [-s, s) with s = init_scale / sqrt(fan_in).
    Clique node blocks are uniform with per-column off-diagonal absolute sums
    bounded by 0.5, the diagonal is set to 1 and the bias row to 0, so the
    initial model is a small perturbation of its tree-equivalent configuration
    and the fixed-point solve is contractive from the start.
    """
    if not specs:
        raise ValueError("network needs at least one level")
    if input_width < 1:
        raise ValueError(f"input_width must be >= 1, got {input_width}")
    if init_scale < 0:
        raise ValueError(f"init_scale must be >= 0, got {init_scale}")

    rngs = spawn_rngs(seed, 2 * len(specs))
    inter: list[np.ndarray] = []
    cliques: list[np.ndarray | None] = []
    prev = input_width
    for i, spec in enumerate(specs):
        m = spec.width
        s1 = init_scale / math.sqrt(prev)
        w = uniform_matrix(rngs[2 * i], prev + 1, m, -s1, s1)
        if zero_input_bias and i == 0:
            w[0, :] = 0.0
        inter.append(w)
        if spec.has_clique:
            s2 = 0.5 / (m - 1) if m > 1 else 0.0
            cw = np.zeros((m + 1, m), dtype=DTYPE)
            cw[1:, :] = uniform_matrix(rngs[2 * i + 1], m, m, -s2, s2)
            cw[np.arange(1, m + 1), np.arange(m)] = 1.0
            cliques.append(cw)
        else:
            cliques.append(None)
        prev = m
    net = Network(input_width=input_width, specs=specs, inter=inter, cliques=cliques)
    net.validate()
    return net


def tree_equivalent_config(net: Network) -> Network:
    """Zero clique biases and couplings, unit diagonal.

    With identity coupling activation this makes every coupled value equal
    its pre-coupling value, so the network collapses to a plain feedforward
    chain. (Literally zeroing the whole clique, diagonal included, would pin
    every node to its bias instead.)
    """
    out = net.copy()
    for i, cw in enumerate(out.cliques):
        if cw is None:
            continue
        m = cw.shape[1]
        fresh = np.zeros_like(cw)
        fresh[np.arange(1, m + 1), np.arange(m)] = 1.0
        out.cliques[i] = fresh
    return out


def clique_rho(cw: np.ndarray) -> float:
    """Max over columns of the off-diagonal absolute column sum of the node block."""
    block = np.abs(cw[1:, :])
    m = block.shape[1]
    col_sums = block.sum(axis=0) - block[np.arange(m), np.arange(m)]
    return float(col_sums.max()) if m else 0.0


def contraction_report(net: Network) -> list[float]:
    """Per-level contraction bound; 0.0 for clique-free levels."""
    return [0.0 if cw is None else clique_rho(cw) for cw in net.cliques]


FORMAT_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _weights_to_strings(w: np.ndarray) -> list[list[str]]:
    return [[_fmt(v) for v in row] for row in w]


def _weights_from_strings(rows, shape, what: str) -> np.ndarray:
    try:
        w = np.array([[float(v) for v in row] for row in rows], dtype=DTYPE)
    except (TypeError, ValueError) as exc:
        raise ModelValueError(f"{what}: non-numeric weight value ({exc})") from None
    if w.shape != shape:
        raise ModelShapeError(f"{what}: weight shape {w.shape} != expected {shape}")
    if not np.all(np.isfinite(w)):
        raise ModelValueError(f"{what}: non-finite weight value")
    return w


def serialize(net: Network) -> bytes:
    """Self-describing UTF-8 text; 17-significant-digit decimals round-trip
    64-bit floats exactly. Key order is fixed, so output is byte-deterministic."""
    doc = {
        "format_version": FORMAT_VERSION,
        "input_width": net.input_width,
        "levels": [
            {"width": s.width, "activation": s.activation.value, "has_clique": s.has_clique}
            for s in net.specs
        ],
        "inter_weights": [_weights_to_strings(w) for w in net.inter],
        "clique_weights": [
            None if cw is None else _weights_to_strings(cw) for cw in net.cliques
        ],
    }
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def deserialize(payload: bytes) -> Network:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unparseable model payload: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model payload is not an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported format_version {version!r}")
    try:
        input_width = int(doc["input_width"])
        specs = [
            LevelSpec(int(lv["width"]),
                      ActivationKind.from_name(lv["activation"]),
                      bool(lv["has_clique"]))
            for lv in doc["levels"]
        ]
        raw_inter = doc["inter_weights"]
        raw_clique = doc["clique_weights"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model payload: {exc}") from None
    if len(raw_inter) != len(specs) or len(raw_clique) != len(specs):
        raise ModelShapeError("weight lists do not match level count")

    inter, cliques = [], []
    prev = input_width
    for i, spec in enumerate(specs):
        inter.append(_weights_from_strings(
            raw_inter[i], (prev + 1, spec.width), f"level {i} inter"))
        if spec.has_clique:
            if raw_clique[i] is None:
                raise ModelShapeError(f"level {i}: missing clique weights")
            cliques.append(_weights_from_strings(
                raw_clique[i], (spec.width + 1, spec.width), f"level {i} clique"))
        else:
            if raw_clique[i] is not None:
                raise ModelShapeError(f"level {i}: unexpected clique weights")
            cliques.append(None)
        prev = spec.width
    net = Network(input_width=input_width, specs=specs, inter=inter, cliques=cliques)
    net.validate()
    return net


def save(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(net))


def load(path) -> Network:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
