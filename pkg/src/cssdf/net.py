"""Learnable C-space distance field: MLP, composite loss, and training loop.

The network is implemented directly on numpy arrays. Besides the usual value
backpropagation it supports two second-order paths needed by the composite
loss, whose eikonal and direction terms depend on the input gradient
``g = d(d_hat)/dq``:

* a reverse sweep that computes per-sample input gradients, and
* a forward(tangent)-then-reverse sweep that accumulates the parameter
  gradient of ``sum_i u_i . g_i`` for arbitrary cotangents ``u_i``.

For a ReLU network with detached normalization statistics the tangent pass is
linear in the weights, so this double-backpropagation is exact almost
everywhere; biases and batch-norm shifts receive no second-order contribution.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SchemaError, VersionError
from .robot import RobotModel, workspace_bounds

CHECKPOINT_MAGIC = b"CSN1"
CHECKPOINT_VERSION = 1

_BN_EPS = 1e-5
_GRAD_EPS = 1e-12


@dataclass
class LossWeights:
    """Composite loss weights: total = w_dist*L_dist + w_eik*L_eik + w_dir*L_dir."""

    w_dist: float = 5.0
    w_eik: float = 0.1
    w_dir: float = 0.2

    def __post_init__(self):
        if min(self.w_dist, self.w_eik, self.w_dir) < 0:
            raise InvalidInputError("loss weights must be non-negative")


@dataclass
class NetConfig:
    hidden_layers: int = 5
    width: int = 216
    frequencies: int = 4  # positional encoding bands per input dimension
    dropout: float = 0.2
    batchnorm: bool = True
    seed: int = 0


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    batch_size: int = 256
    epochs: int = 100
    patience: int = 10
    factor: float = 0.5
    min_lr: float = 1e-5
    val_fraction: float = 0.2
    seed: int = 0
    grad_mode: str = "analytic"  # or "fd": central-difference input gradients
    fd_step: float = 1e-4  # in normalized input units, grad_mode="fd" only

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidInputError("lr must be >= 0")
        if not (0 < self.factor < 1):
            raise InvalidInputError("scheduler factor must lie in (0, 1)")
        if self.grad_mode not in ("analytic", "fd"):
            raise InvalidInputError("grad_mode must be 'analytic' or 'fd'")


class FieldModel:
    """MLP distance field with positional encoding and residual hidden blocks."""

    def __init__(self, dof: int, point_dim: int, q_bounds, p_bounds, config: NetConfig = None):
        self.dof = dof
        self.point_dim = point_dim
        self.config = config or NetConfig()
        q_bounds = np.asarray(q_bounds, dtype=float).reshape(dof, 2)
        p_bounds = np.asarray(p_bounds, dtype=float).reshape(point_dim, 2)
        bounds = np.vstack([q_bounds, p_bounds])
        self.lo = bounds[:, 0].copy()
        self.hi = bounds[:, 1].copy()
        if np.any(self.hi <= self.lo):
            raise InvalidInputError("normalization bounds must satisfy lo < hi")
        self.scale = 2.0 / (self.hi - self.lo)
        self.training = False
        self.oob_count = 0
        self._init_params()

    # -- construction -------------------------------------------------------

    @classmethod
    def for_robot(cls, robot: RobotModel, config: NetConfig = None, workspace_extension=1.5):
        lo, hi = workspace_bounds(robot, workspace_extension)
        return cls(
            robot.dof,
            robot.point_dim,
            robot.extended_limits(),
            np.stack([lo, hi], axis=1),
            config,
        )

    @property
    def input_dim(self) -> int:
        return self.dof + self.point_dim

    @property
    def encoded_dim(self) -> int:
        return self.input_dim * (1 + 2 * self.config.frequencies)

    def _init_params(self):
        rng = np.random.default_rng(self.config.seed)
        cfg = self.config
        self.layers = []
        fan_in = self.encoded_dim
        for _ in range(cfg.hidden_layers):
            layer = {
                "W": rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cfg.width, fan_in)),
                "b": np.zeros(cfg.width),
            }
            if cfg.batchnorm:
                layer["gamma"] = np.ones(cfg.width)
                layer["beta"] = np.zeros(cfg.width)
                layer["rmean"] = np.zeros(cfg.width)
                layer["rvar"] = np.ones(cfg.width)
            self.layers.append(layer)
            fan_in = cfg.width
        self.head = {
            "W": rng.normal(0.0, np.sqrt(1.0 / cfg.width), size=(1, cfg.width)),
            "b": np.zeros(1),
        }

    def named_params(self):
        """Trainable parameters as (name, array) pairs; running stats excluded."""
        for i, layer in enumerate(self.layers):
            yield f"layers.{i}.W", layer["W"]
            yield f"layers.{i}.b", layer["b"]
            if self.config.batchnorm:
                yield f"layers.{i}.gamma", layer["gamma"]
                yield f"layers.{i}.beta", layer["beta"]
        yield "head.W", self.head["W"]
        yield "head.b", self.head["b"]

    def get_param(self, name: str) -> np.ndarray:
        obj, key = name.rsplit(".", 1)
        if obj == "head":
            return self.head[key]
        _, idx = obj.split(".")
        return self.layers[int(idx)][key]

    def zero_grads(self) -> dict:
        return {name: np.zeros_like(arr) for name, arr in self.named_params()}

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    # -- encoding -----------------------------------------------------------

    def _normalize(self, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise InvalidInputError(f"expected inputs of width {self.input_dim}")
        clipped = np.clip(X, self.lo, self.hi)
        self.oob_count += int(np.sum(np.any(clipped != X, axis=1)))
        return (clipped - self.lo) * self.scale - 1.0

    def _encode(self, Xt: np.ndarray) -> np.ndarray:
        parts = [Xt]
        for k in range(self.config.frequencies):
            f = (2.0**k) * np.pi
            parts.append(np.sin(f * Xt))
            parts.append(np.cos(f * Xt))
        return np.concatenate(parts, axis=1)

    def _encode_tangent(self, Xt: np.ndarray, T: np.ndarray) -> np.ndarray:
        parts = [T]
        for k in range(self.config.frequencies):
            f = (2.0**k) * np.pi
            parts.append(f * np.cos(f * Xt) * T)
            parts.append(-f * np.sin(f * Xt) * T)
        return np.concatenate(parts, axis=1)

    def _encode_backward(self, Xt: np.ndarray, dE: np.ndarray) -> np.ndarray:
        d = self.input_dim
        out = dE[:, :d].copy()
        for k in range(self.config.frequencies):
            f = (2.0**k) * np.pi
            s = d * (1 + 2 * k)
            out += dE[:, s : s + d] * (f * np.cos(f * Xt))
            out += dE[:, s + d : s + 2 * d] * (-f * np.sin(f * Xt))
        return out

    # -- forward / backward machinery ---------------------------------------

    def _forward(self, X: np.ndarray, train: bool, rng: np.random.Generator = None):
        """Runs the network, returning predictions and the per-layer caches
        needed by the reverse and tangent sweeps."""
        cfg = self.config
        Xt = self._normalize(X)
        E = self._encode(Xt)
        h = E
        caches = []
        keep = 1.0 - cfg.dropout
        for li, layer in enumerate(self.layers):
            # identity skip on every equal-width block; the stem projects the
            # encoding and never skips
            skip = li > 0 and h.shape[1] == layer["W"].shape[0]
            z = h @ layer["W"].T + layer["b"]
            if cfg.batchnorm:
                if train:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    layer["rmean"] = 0.9 * layer["rmean"] + 0.1 * mu
                    layer["rvar"] = 0.9 * layer["rvar"] + 0.1 * var
                else:
                    mu, var = layer["rmean"], layer["rvar"]
                sig = np.sqrt(var + _BN_EPS)
                zhat = (z - mu) / sig
                y = layer["gamma"] * zhat + layer["beta"]
            else:
                sig = None
                zhat = z
                y = z
            mask = y > 0
            a = np.where(mask, y, 0.0)
            if train and cfg.dropout > 0:
                drop = (rng.random(a.shape) < keep).astype(float)
                o = a * drop / keep
            else:
                drop = None
                o = a
            out = o + h if skip else o
            caches.append(
                {"x": h, "zhat": zhat, "sig": sig, "mask": mask, "drop": drop,
                 "skip": skip, "batch_stats": train}
            )
            h = out
        d = (h @ self.head["W"].T + self.head["b"]).ravel()
        return d, h, caches

    def _reverse(self, h_last, caches, cot, grads: dict = None, detach_stats: bool = False):
        """Backpropagate per-sample output cotangents `cot` (B,).

        Accumulates parameter gradients into `grads` when given and returns the
        cotangent at the encoded input. With `detach_stats` the batch-norm
        statistics are treated as constants (used for per-sample input
        gradients, which must not couple across the batch).
        """
        cfg = self.config
        keep = 1.0 - cfg.dropout
        if grads is not None:
            grads["head.W"] += (cot[None, :] @ h_last)
            grads["head.b"] += np.array([cot.sum()])
        delta = cot[:, None] * self.head["W"]
        for i in range(len(self.layers) - 1, -1, -1):
            layer, cache = self.layers[i], caches[i]
            carry = delta if cache["skip"] else 0.0
            d_a = delta if cache["drop"] is None else delta * cache["drop"] / keep
            d_y = d_a * cache["mask"]
            if cfg.batchnorm:
                if grads is not None:
                    grads[f"layers.{i}.gamma"] += (d_y * cache["zhat"]).sum(axis=0)
                    grads[f"layers.{i}.beta"] += d_y.sum(axis=0)
                d_zhat = d_y * layer["gamma"]
                if cache["batch_stats"] and not detach_stats:
                    # full batch-norm backprop through the batch statistics
                    zhat = cache["zhat"]
                    d_z = (
                        d_zhat
                        - d_zhat.mean(axis=0)
                        - zhat * (d_zhat * zhat).mean(axis=0)
                    ) / cache["sig"]
                else:
                    d_z = d_zhat / cache["sig"]
            else:
                d_z = d_y
            if grads is not None:
                grads[f"layers.{i}.W"] += d_z.T @ cache["x"]
                grads[f"layers.{i}.b"] += d_z.sum(axis=0)
            delta = d_z @ layer["W"] + carry
        return delta

    def _tangent_forward(self, Xt, caches, T_raw):
        """Forward-mode sweep: input tangents T_raw (B, input_dim) in raw units.

        Returns the output tangent (B,) and per-layer tangent caches.
        """
        cfg = self.config
        keep = 1.0 - cfg.dropout
        t = self._encode_tangent(Xt, T_raw * self.scale)
        tcaches = []
        for layer, cache in zip(self.layers, caches):
            t_in = t
            tz = t_in @ layer["W"].T
            if cfg.batchnorm:
                tzhat = tz / cache["sig"]
                ty = layer["gamma"] * tzhat
            else:
                tzhat = tz
                ty = tz
            ta = ty * cache["mask"]
            to = ta if cache["drop"] is None else ta * cache["drop"] / keep
            t = to + t_in if cache["skip"] else to
            tcaches.append({"t_in": t_in, "tzhat": tzhat})
        psi = (t @ self.head["W"].T).ravel()
        return psi, t, tcaches

    def _tangent_reverse(self, t_last, caches, tcaches, grads: dict):
        """Reverse sweep over the tangent computation for cotangent 1 per sample.

        Adds d(sum_i psi_i)/d(theta) into `grads`. With ReLU and detached
        statistics only W and gamma receive contributions.
        """
        cfg = self.config
        keep = 1.0 - cfg.dropout
        grads["head.W"] += t_last.sum(axis=0, keepdims=True)
        delta = np.broadcast_to(self.head["W"], t_last.shape).copy()
        for i in range(len(self.layers) - 1, -1, -1):
            layer, cache, tcache = self.layers[i], caches[i], tcaches[i]
            carry = delta if cache["skip"] else 0.0
            d_ta = delta if cache["drop"] is None else delta * cache["drop"] / keep
            d_ty = d_ta * cache["mask"]
            if cfg.batchnorm:
                grads[f"layers.{i}.gamma"] += (d_ty * tcache["tzhat"]).sum(axis=0)
                d_tz = d_ty * layer["gamma"] / cache["sig"]
            else:
                d_tz = d_ty
            grads[f"layers.{i}.W"] += d_tz.T @ tcache["t_in"]
            delta = d_tz @ layer["W"] + carry

    def _input_grads(self, Xt, h_last, caches):
        """Per-sample gradient of the output w.r.t. raw q (B, dof).

        Statistics are detached so one sample's gradient never depends on the
        rest of the batch.
        """
        dE = self._reverse(h_last, caches, np.ones(h_last.shape[0]), detach_stats=True)
        dXt = self._encode_backward(Xt, dE)
        return (dXt * self.scale)[:, : self.dof]

    # -- public inference ----------------------------------------------------

    def predict(self, X: np.ndarray, chunk: int = 65536) -> np.ndarray:
        """Batched distance prediction in eval mode."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], chunk):
            d, _, _ = self._forward(X[s : s + chunk], train=False)
            out[s : s + chunk] = d
        return out

    def predict_one(self, q, p) -> float:
        x = np.concatenate([np.asarray(q, dtype=float), np.asarray(p, dtype=float)])
        return float(self.predict(x[None, :])[0])

    def predict_with_grad(self, X: np.ndarray, chunk: int = 65536):
        """Distances and de-normalized q-gradients, eval mode."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        vals = np.empty(X.shape[0])
        grads = np.empty((X.shape[0], self.dof))
        for s in range(0, X.shape[0], chunk):
            Xc = X[s : s + chunk]
            Xt = self._normalize(Xc)
            d, h, caches = self._forward(Xc, train=False)
            vals[s : s + chunk] = d
            grads[s : s + chunk] = self._input_grads(Xt, h, caches)
        return vals, grads

    # -- loss ----------------------------------------------------------------

    def loss_and_grads(
        self,
        X: np.ndarray,
        values: np.ndarray,
        true_grads: np.ndarray,
        weights: LossWeights = None,
        train: bool = None,
        rng: np.random.Generator = None,
        compute_grads: bool = True,
        grad_mode: str = "analytic",
        fd_step: float = 1e-4,
    ):
        """Composite loss, per-term breakdown, and (optionally) parameter gradients.

        Returns (total, terms, grads) where terms carries the unweighted
        component means plus the count of zero-gradient samples.
        """
        weights = weights or LossWeights()
        if X.shape[0] == 0:
            raise InvalidInputError("empty batch")
        train = self.training if train is None else train
        if train and self.config.dropout > 0 and rng is None:
            rng = np.random.default_rng(0)
        values = np.asarray(values, dtype=float).reshape(-1)
        true_grads = np.asarray(true_grads, dtype=float)
        B = X.shape[0]

        Xt = self._normalize(X)
        d, h_last, caches = self._forward(X, train=train, rng=rng)
        if grad_mode == "analytic":
            g = self._input_grads(Xt, h_last, caches)
        else:
            g = self._fd_input_grads(X, fd_step, train, caches, rng)

        # distance term
        resid = d - values
        L_dist = float(np.mean(resid**2))

        gnorm = np.linalg.norm(g, axis=1)
        ok = gnorm > _GRAD_EPS
        zero_count = int(np.sum(~ok))

        # eikonal term
        L_eik_terms = np.where(ok, (gnorm - 1.0) ** 2, 1.0)
        L_eik = float(np.mean(L_eik_terms))

        # direction term
        tnorm = np.linalg.norm(true_grads, axis=1)
        denom = np.where(ok, gnorm * tnorm, 1.0)
        cos = np.where(ok, np.einsum("bi,bi->b", g, true_grads) / denom, 0.0)
        L_dir_terms = (1.0 - cos) ** 2
        L_dir = float(np.mean(L_dir_terms))

        total = weights.w_dist * L_dist + weights.w_eik * L_eik + weights.w_dir * L_dir
        terms = {
            "dist": L_dist,
            "eikonal": L_eik,
            "direction": L_dir,
            "zero_grad_count": zero_count,
        }
        if not compute_grads:
            return total, terms, None

        grads = self.zero_grads()
        # value stream
        cot = weights.w_dist * 2.0 * resid / B
        self._reverse(h_last, caches, cot, grads)

        # cotangent on the predicted input gradient
        u = np.zeros_like(g)
        safe_norm = np.where(ok, gnorm, 1.0)
        u += weights.w_eik * (2.0 * (gnorm - 1.0) / B / safe_norm)[:, None] * g * ok[:, None]
        dcos_dg = true_grads / denom[:, None] - (cos / np.where(ok, gnorm**2, 1.0))[:, None] * g
        u += weights.w_dir * (-2.0 * (1.0 - cos) / B)[:, None] * dcos_dg * ok[:, None]

        if grad_mode == "analytic":
            T_raw = np.zeros((B, self.input_dim))
            T_raw[:, : self.dof] = u
            _, t_last, tcaches = self._tangent_forward(Xt, caches, T_raw)
            self._tangent_reverse(t_last, caches, tcaches, grads)
        else:
            self._fd_second_order(X, u, fd_step, caches, grads)
        return total, terms, grads

    def _fd_input_grads(self, X, fd_step, train, caches, rng):
        """Central-difference estimate of the q-gradient (training fallback).

        Re-uses the batch-norm statistics and dropout masks of the nominal
        forward pass so the differentiated function is self-consistent.
        """
        g = np.empty((X.shape[0], self.dof))
        for j in range(self.dof):
            h_raw = fd_step / self.scale[j]
            Xp = X.copy()
            Xp[:, j] += h_raw
            Xm = X.copy()
            Xm[:, j] -= h_raw
            plus, _, _ = self._forward_frozen(Xp, caches)
            minus, _, _ = self._forward_frozen(Xm, caches)
            g[:, j] = (plus - minus) / (2.0 * h_raw)
        return g

    def _fd_second_order(self, X, u, fd_step, caches, grads):
        """Parameter gradient of sum_i u_i . g_i with g from central differences."""
        for j in range(self.dof):
            h_raw = fd_step / self.scale[j]
            for s in (+1.0, -1.0):
                Xs = X.copy()
                Xs[:, j] += s * h_raw
                _, h_s, caches_s = self._forward_frozen(Xs, caches)
                cot = s * u[:, j] / (2.0 * h_raw)
                self._reverse(h_s, caches_s, cot, grads)

    def _forward_frozen(self, X, ref_caches):
        """Forward with the reference pass's BN stats and dropout masks, caching
        activations for a subsequent reverse sweep."""
        cfg = self.config
        keep = 1.0 - cfg.dropout
        Xt = self._normalize(X)
        h = self._encode(Xt)
        caches = []
        for layer, ref in zip(self.layers, ref_caches):
            z = h @ layer["W"].T + layer["b"]
            if cfg.batchnorm:
                sig = ref["sig"]
                z0 = ref["x"] @ layer["W"].T + layer["b"]
                mu = z0 - ref["zhat"] * sig
                zhat = (z - mu) / sig
                y = layer["gamma"] * zhat + layer["beta"]
            else:
                sig = None
                zhat = z
                y = z
            mask = y > 0
            a = np.where(mask, y, 0.0)
            o = a if ref["drop"] is None else a * ref["drop"] / keep
            out = o + h if ref["skip"] else o
            caches.append(
                {"x": h, "zhat": zhat, "sig": sig, "mask": mask, "drop": ref["drop"],
                 "skip": ref["skip"], "batch_stats": False}
            )
            h = out
        d = (h @ self.head["W"].T + self.head["b"]).ravel()
        return d, h, caches

    # -- checkpoints ----------------------------------------------------------

    def save(self, path) -> None:
        """Flat binary checkpoint: header, normalization bounds, float32 parameters."""
        cfg = self.config
        widths = [cfg.width] * cfg.hidden_layers
        flags = 1 if cfg.batchnorm else 0
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(
                struct.pack(
                    "<IIIII", CHECKPOINT_VERSION, self.dof, self.point_dim,
                    cfg.frequencies, cfg.hidden_layers,
                )
            )
            fh.write(struct.pack(f"<{cfg.hidden_layers}I", *widths))
            fh.write(struct.pack("<If", flags, cfg.dropout))
            fh.write(self.lo.astype("<f4").tobytes())
            fh.write(self.hi.astype("<f4").tobytes())
            for layer in self.layers:
                for key in ("W", "b"):
                    fh.write(np.ascontiguousarray(layer[key], dtype="<f4").tobytes())
                if cfg.batchnorm:
                    for key in ("gamma", "beta", "rmean", "rvar"):
                        fh.write(np.ascontiguousarray(layer[key], dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(self.head["W"], dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(self.head["b"], dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "FieldModel":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise SchemaError(f"not a CSN1 checkpoint (magic {magic!r})")
            version, dof, w, freqs, n_hidden = struct.unpack("<IIIII", fh.read(20))
            if version != CHECKPOINT_VERSION:
                raise VersionError(f"unsupported checkpoint version {version}")
            widths = struct.unpack(f"<{n_hidden}I", fh.read(4 * n_hidden))
            flags, dropout = struct.unpack("<If", fh.read(8))
            d_in = dof + w
            lo = np.frombuffer(fh.read(4 * d_in), dtype="<f4").astype(float)
            hi = np.frombuffer(fh.read(4 * d_in), dtype="<f4").astype(float)
            cfg = NetConfig(
                hidden_layers=n_hidden,
                width=widths[0] if widths else 0,
                frequencies=freqs,
                dropout=float(dropout),
                batchnorm=bool(flags & 1),
            )
            model = cls(dof, w, np.stack([lo[:dof], hi[:dof]], axis=1),
                        np.stack([lo[dof:], hi[dof:]], axis=1), cfg)

            def read_arr(shape):
                count = int(np.prod(shape))
                return (
                    np.frombuffer(fh.read(4 * count), dtype="<f4").astype(float).reshape(shape)
                )

            fan_in = model.encoded_dim
            for layer in model.layers:
                layer["W"] = read_arr((cfg.width, fan_in))
                layer["b"] = read_arr((cfg.width,))
                if cfg.batchnorm:
                    layer["gamma"] = read_arr((cfg.width,))
                    layer["beta"] = read_arr((cfg.width,))
                    layer["rmean"] = read_arr((cfg.width,))
                    layer["rvar"] = read_arr((cfg.width,))
                fan_in = cfg.width
            model.head["W"] = read_arr((1, cfg.width))
            model.head["b"] = read_arr((1,))
        return model

    def snapshot(self) -> dict:
        state = {name: arr.copy() for name, arr in self.named_params()}
        if self.config.batchnorm:
            for i, layer in enumerate(self.layers):
                state[f"layers.{i}.rmean"] = layer["rmean"].copy()
                state[f"layers.{i}.rvar"] = layer["rvar"].copy()
        return state

    def restore(self, state: dict) -> None:
        for i, layer in enumerate(self.layers):
            for key in layer:
                name = f"layers.{i}.{key}"
                if name in state:
                    layer[key] = state[name].copy()
        self.head["W"] = state["head.W"].copy()
        self.head["b"] = state["head.b"].copy()


class AdamW:
    """Decoupled-weight-decay Adam on a named-parameter dict."""

    def __init__(self, model: FieldModel, lr=1e-3, weight_decay=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.model = model
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in model.named_params()}
        self.v = {name: np.zeros_like(p) for name, p in model.named_params()}

    def step(self, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for name, p in self.model.named_params():
            gr = grads[name]
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * gr
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * gr**2
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            p -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p)


def split_indices(n: int, val_fraction: float, seed: int):
    """Deterministic train/validation split shared by training and evaluation."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    return perm[n_val:], perm[:n_val]


def train_field(model: FieldModel, dataset, cfg: TrainConfig = None, weights: LossWeights = None):
    """Train with an 8:2 split, plateau-scheduled learning rate, and a divergence
    guard that restores the last finite epoch.

    Returns a history list of per-epoch dicts; history[-1]["diverged"] flags an
    aborted run.
    """
    cfg = cfg or TrainConfig()
    weights = weights or LossWeights()
    rng = np.random.default_rng(cfg.seed)
    X = dataset.inputs()
    v = dataset.value.astype(float)
    tg = dataset.grad.astype(float)
    n = X.shape[0]
    train_idx, val_idx = split_indices(n, cfg.val_fraction, cfg.seed)
    if train_idx.size == 0:
        raise InvalidInputError("dataset too small for the requested split")

    opt = AdamW(model, cfg.lr, cfg.weight_decay, cfg.betas)
    lr = cfg.lr
    best_val = np.inf
    stall = 0
    history = []
    last_good = model.snapshot()
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(train_idx)
        tot, tdist, teik, tdir, nb = 0.0, 0.0, 0.0, 0.0, 0
        diverged = False
        for s in range(0, order.size, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            total, terms, grads = model.loss_and_grads(
                X[idx], v[idx], tg[idx], weights, train=True, rng=rng,
                grad_mode=cfg.grad_mode, fd_step=cfg.fd_step,
            )
            if not np.isfinite(total):
                diverged = True
                break
            opt.lr = lr
            opt.step(grads)
            tot += total
            tdist += terms["dist"]
            teik += terms["eikonal"]
            tdir += terms["direction"]
            nb += 1
        if diverged:
            model.restore(last_good)
            history.append(
                {"epoch": epoch, "train_loss": float("nan"), "val_loss": float("nan"),
                 "lr": lr, "dist": float("nan"), "eikonal": float("nan"),
                 "direction": float("nan"), "diverged": True}
            )
            break
        model.eval()
        val_total, val_terms, _ = model.loss_and_grads(
            X[val_idx], v[val_idx], tg[val_idx], weights, train=False, compute_grads=False
        )
        if not np.isfinite(val_total):
            model.restore(last_good)
            history.append(
                {"epoch": epoch, "train_loss": tot / max(nb, 1), "val_loss": float("nan"),
                 "lr": lr, "dist": float("nan"), "eikonal": float("nan"),
                 "direction": float("nan"), "diverged": True}
            )
            break
        last_good = model.snapshot()
        history.append(
            {
                "epoch": epoch,
                "train_loss": tot / max(nb, 1),
                "val_loss": val_total,
                "lr": lr,
                "dist": tdist / max(nb, 1),
                "eikonal": teik / max(nb, 1),
                "direction": tdir / max(nb, 1),
                "diverged": False,
            }
        )
        if val_total < best_val - 1e-12:
            best_val = val_total
            stall = 0
        else:
            stall += 1
            if stall > cfg.patience:
                lr = max(lr * cfg.factor, cfg.min_lr)
                stall = 0
    model.eval()
    return history


def history_to_csv(history: list, path) -> None:
    cols = ["epoch", "train_loss", "val_loss", "lr", "dist", "eikonal", "direction"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in history:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")


class NetPointField:
    """Planner-facing adapter: per-point distance/gradient queries on a model."""

    def __init__(self, model: FieldModel):
        self.model = model

    def point_values_and_grads(self, q: np.ndarray, points: np.ndarray):
        pts = np.atleast_2d(points)
        X = np.concatenate(
            [np.broadcast_to(q, (pts.shape[0], q.shape[0])), pts], axis=1
        )
        return self.model.predict_with_grad(X)

    def aggregate(self, q: np.ndarray, points: np.ndarray):
        from .geometry import aggregate_index

        vals, grads = self.point_values_and_grads(q, points)
        k = aggregate_index(vals)
        return float(vals[k]), grads[k]

    def aggregate_batch(self, Q: np.ndarray, points: np.ndarray):
        """Aggregated (phi, grad) over a batch of configurations in one net call."""
        Q = np.atleast_2d(Q)
        pts = np.atleast_2d(points)
        S, P = Q.shape[0], pts.shape[0]
        X = np.concatenate(
            [np.repeat(Q, P, axis=0), np.tile(pts, (S, 1))], axis=1
        )
        vals, grads = self.model.predict_with_grad(X)
        vals = vals.reshape(S, P)
        grads = grads.reshape(S, P, -1)
        all_neg = np.all(vals < 0, axis=1)
        pick = np.where(all_neg, np.argmax(vals, axis=1), np.argmin(vals, axis=1))
        rows = np.arange(S)
        return vals[rows, pick], grads[rows, pick, :]

    def point_scores(self, q: np.ndarray, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        X = np.concatenate(
            [np.broadcast_to(q, (pts.shape[0], q.shape[0])), pts], axis=1
        )
        return self.model.predict(X)
