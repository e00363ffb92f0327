import numpy as np

from ..errors import DimensionError, StateError
from .layers import Dense

_MODES = ("train", "infer")


class Network:
    """A shared trunk of layers followed by one or more scalar dense heads.

    All trainable arrays are views into one flat buffer (``theta``) and all
    gradients into a second (``grad``), so an optimiser can update the whole
    model with a single vectorised call.

    Parameters
    ----------
    trunk : list of Layer
        Applied in order to the input batch.
    heads : dict of str -> Dense
        Output heads, each mapping the trunk features to one column. Dict
        order fixes the column order of ``forward``.
    seed : int
        Seeds the generator used for dropout masks.
    spec : object, optional
        Builder description kept for checkpoint metadata.
    """

    def __init__(self, trunk, heads, seed=0, spec=None):
        if not heads:
            raise ValueError("network needs at least one head")
        for name, head in heads.items():
            if not isinstance(head, Dense) or head.n_out != 1:
                raise ValueError(f"head {name!r} must be a Dense layer with one output")
        self.trunk = list(trunk)
        self.heads = dict(heads)
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self._cached = False
        self.features = None
        if self.trunk and isinstance(self.trunk[0], Dense):
            self.trunk[0].needs_input_grad = False
        self._bind()

    def _named_layers(self):
        for i, layer in enumerate(self.trunk):
            yield f"trunk.{i}", layer
        for name, head in self.heads.items():
            yield f"heads.{name}", head

    def _bind(self):
        entries = []
        for prefix, layer in self._named_layers():
            for key, arr in layer.params.items():
                entries.append((prefix, layer, key, arr))
        size = sum(arr.size for *_, arr in entries)
        self.theta = np.zeros(size)
        self.grad = np.zeros(size)
        self._slices = {}
        offset = 0
        for prefix, layer, key, arr in entries:
            stop = offset + arr.size
            self.theta[offset:stop] = arr.ravel()
            layer.params[key] = self.theta[offset:stop].reshape(arr.shape)
            layer.grads[key] = self.grad[offset:stop].reshape(arr.shape)
            self._slices[f"{prefix}.{key}"] = slice(offset, stop)
            offset = stop

    @property
    def input_width(self):
        for layer in self.trunk:
            if isinstance(layer, Dense):
                return layer.n_in
        return next(iter(self.heads.values())).n_in

    @property
    def head_names(self):
        return tuple(self.heads)

    @property
    def n_parameters(self):
        return self.theta.size

    def parameter_slice(self, name):
        """Slice of ``theta``/``grad`` holding the parameter ``name``."""
        return self._slices[name]

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, batch, mode="infer"):
        """Run the network; returns an array with one column per head.

        ``mode="train"`` uses batch statistics and live dropout and caches
        what ``backward`` needs. ``mode="infer"`` is deterministic and
        leaves any cached train-mode state untouched.
        """
        if mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise DimensionError(
                f"expected batch of shape (n, {self.input_width}), got {x.shape}"
            )
        train = mode == "train"
        h = x
        for layer in self.trunk:
            h = layer.forward(h, train, self.rng)
        self.features = h
        out = np.empty((x.shape[0], len(self.heads)))
        for j, head in enumerate(self.heads.values()):
            out[:, j] = head.forward(h, train, self.rng)[:, 0]
        if train:
            self._cached = True
        return out

    def backward(self, output_gradient):
        """Fill ``grad`` from d(loss)/d(output).

        Returns d(loss)/d(input), or None when the first layer is a dense
        layer (whose input gradient is skipped).
        """
        if not self._cached:
            raise StateError("backward requires a preceding forward(..., mode='train')")
        g = np.asarray(output_gradient, dtype=np.float64)
        n_heads = len(self.heads)
        if g.ndim == 1 and n_heads == 1:
            g = g[:, None]
        if g.ndim != 2 or g.shape[1] != n_heads:
            raise DimensionError(f"output gradient must have {n_heads} column(s), got {g.shape}")
        self.grad[...] = 0.0
        dh = None
        for j, head in enumerate(self.heads.values()):
            part = head.backward(np.ascontiguousarray(g[:, j : j + 1]))
            dh = part if dh is None else dh + part
        for layer in reversed(self.trunk):
            dh = layer.backward(dh)
        return dh

    def predict(self, x, chunk=65536):
        """Inference-mode forward of a 1-D input vector, chunked."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.input_width)
        parts = [self.forward(x[i : i + chunk], mode="infer") for i in range(0, len(x), chunk)]
        if not parts:
            return np.empty((0, len(self.heads)))
        return np.concatenate(parts, axis=0)

    def state_dict(self):
        """Copies of every parameter and buffer keyed by dotted path."""
        state = {}
        for prefix, layer in self._named_layers():
            for key, arr in layer.params.items():
                state[f"{prefix}.{key}"] = arr.copy()
            for key, arr in layer.buffers.items():
                state[f"{prefix}.{key}"] = arr.copy()
        return state

    def load_state_dict(self, state):
        expected = set()
        for prefix, layer in self._named_layers():
            for group in (layer.params, layer.buffers):
                for key, arr in group.items():
                    name = f"{prefix}.{key}"
                    expected.add(name)
                    if name not in state:
                        raise KeyError(f"missing tensor {name!r}")
                    value = np.asarray(state[name], dtype=np.float64)
                    if value.shape != arr.shape:
                        raise DimensionError(f"{name}: expected shape {arr.shape}, got {value.shape}")
                    arr[...] = value
        extra = set(state) - expected
        if extra:
            raise KeyError(f"unexpected tensors: {sorted(extra)}")
