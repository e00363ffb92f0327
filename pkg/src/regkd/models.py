"""Teacher and student MLP builders."""

import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import StateError
from .nn import BatchNorm, Dense, Dropout, Network, ReLU, load_checkpoint, save_checkpoint
from .variants import as_variant

BLOCKS = ("relu", "batchnorm", "dropout")
TEACHER_HIDDEN = 150
STUDENT_HIDDEN = 40
# an input block (1 -> width) plus one hidden block (width -> width)
DEPTH = 2


@dataclass(frozen=True)
class MlpSpec:
    input_width: int = 1
    hidden: tuple = (STUDENT_HIDDEN,) * DEPTH
    heads: tuple = ("out",)
    dropout: float = 0.5
    block_order: tuple = BLOCKS
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        object.__setattr__(self, "heads", tuple(self.heads))
        object.__setattr__(self, "block_order", tuple(self.block_order))
        if self.input_width < 1:
            raise ValueError("input width must be positive")
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be positive")
        if not 1 <= len(self.heads) <= 2 or len(set(self.heads)) != len(self.heads):
            raise ValueError("an MLP has one or two distinctly named heads")
        if sorted(self.block_order) != sorted(set(self.block_order)) or not set(self.block_order) <= set(BLOCKS):
            raise ValueError(f"block_order must be distinct entries from {BLOCKS}")

    def n_parameters(self):
        total = 0
        width = self.input_width
        for w in self.hidden:
            total += width * w + w
            if "batchnorm" in self.block_order:
                total += 2 * w
            width = w
        return total + len(self.heads) * (width + 1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _block(name, width, spec):
    if name == "relu":
        return ReLU()
    if name == "batchnorm":
        return BatchNorm(width, momentum=spec.bn_momentum, eps=spec.bn_eps)
    return Dropout(spec.dropout)


def build_network(spec, seed=0):
    """Instantiate ``spec`` with reproducible initial weights.

    Each layer draws from its own generator keyed by position (trunk) or
    head name, so a head called ``"d"`` starts from the same weights whether
    it sits in a one-head or a two-head network built with the same seed.
    """
    trunk = []
    width = spec.input_width
    for i, w in enumerate(spec.hidden):
        dense = Dense(width, w)
        dense.reset_parameters(np.random.default_rng([seed, 0, i]))
        trunk.append(dense)
        trunk.extend(_block(b, w, spec) for b in spec.block_order)
        width = w
    heads = {}
    for name in spec.heads:
        head = Dense(width, 1)
        head.reset_parameters(np.random.default_rng([seed, 1, zlib.crc32(name.encode())]))
        heads[name] = head
    return Network(trunk, heads, seed=np.random.SeedSequence([seed, 2]).generate_state(1)[0], spec=spec)


def teacher_spec(hidden=TEACHER_HIDDEN, dropout=0.5, block_order=BLOCKS, depth=DEPTH):
    return MlpSpec(hidden=(hidden,) * depth, heads=("out",), dropout=dropout, block_order=block_order)


def student_spec(variant, hidden=STUDENT_HIDDEN, dropout=0.5, block_order=BLOCKS, depth=DEPTH):
    return MlpSpec(
        hidden=(hidden,) * depth, heads=as_variant(variant).heads, dropout=dropout, block_order=block_order
    )


def build_teacher(seed=0, hidden=TEACHER_HIDDEN, dropout=0.5, block_order=BLOCKS, depth=DEPTH):
    """Single-head MLP, 150 units per block.

    Every dense block (the 1 -> 150 input layer and the 150 -> 150 hidden
    layer) is followed by the ``block_order`` sequence of ReLU, batch-norm
    and dropout.
    """
    return build_network(teacher_spec(hidden, dropout, block_order, depth), seed)


def build_student(variant, seed=0, hidden=STUDENT_HIDDEN, dropout=0.5, block_order=BLOCKS, depth=DEPTH):
    """40-unit MLP; ``ours-full`` gets two heads on a shared trunk."""
    return build_network(student_spec(variant, hidden, dropout, block_order, depth), seed)


@dataclass(frozen=True)
class MultiTaskOutput:
    head_tor: np.ndarray
    head_d: np.ndarray
    combined: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "combined", combined_prediction(self))

    @classmethod
    def from_network(cls, output, head_names):
        if tuple(head_names) != ("tor", "d"):
            raise StateError(f"multi-task output needs heads ('tor', 'd'), got {tuple(head_names)}")
        return cls(output[:, 0], output[:, 1])


def combined_prediction(output):
    """Average of the two heads.

    Accepts a ``MultiTaskOutput`` or a raw ``(n, 2)`` network output.
    """
    if isinstance(output, MultiTaskOutput):
        return (np.asarray(output.head_tor) + np.asarray(output.head_d)) / 2.0
    out = np.asarray(output)
    if out.ndim != 2 or out.shape[1] != 2:
        raise StateError(f"combined prediction needs a two-head output, got shape {out.shape}")
    return (out[:, 0] + out[:, 1]) / 2.0


def point_prediction(network, x):
    """Scalar prediction per sample: the single head, or the head average."""
    out = network.predict(x)
    if out.shape[1] == 1:
        return out[:, 0]
    return combined_prediction(out)


def save_network(path, network, **metadata):
    meta = dict(metadata)
    if network.spec is not None:
        meta["mlp_spec"] = network.spec.to_dict()
    return save_checkpoint(path, network.state_dict(), meta)


def load_network(path):
    """Rebuild a network saved by ``save_network``; returns ``(network, metadata)``."""
    tensors, meta = load_checkpoint(path)
    if "mlp_spec" not in meta:
        raise ValueError(f"{path}: checkpoint carries no mlp_spec metadata")
    network = build_network(MlpSpec.from_dict(meta["mlp_spec"]))
    network.load_state_dict(tensors)
    return network, meta
