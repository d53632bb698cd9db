"""Inference and structural validation of feedforward networks, ICNNs, and
Lyapunov candidates.

No training here: networks are loaded from (or saved to) a portable JSON
weight format and evaluated exactly, layer by layer.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, PowerIterationStall, UnsupportedActivation

__all__ = [
    "Layer",
    "Mlp",
    "Icnn",
    "LyapunovCandidate",
    "forward",
    "forward_batch",
    "lyapunov_eval",
    "check_icnn",
    "lipschitz_bound",
    "save_network",
    "load_network",
]

_ACTIVATIONS = ("relu", "sigmoid", "softplus", "identity")


def _act(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if name == "softplus":
        # overflow-safe log(1 + e^x)
        return np.logaddexp(0.0, x)
    if name == "identity":
        return x
    raise UnsupportedActivation(name)


@dataclass(frozen=True)
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if b.size != W.shape[0]:
            raise DimensionMismatch("bias length must match output rows")
        if not np.all(np.isfinite(W)) or not np.all(np.isfinite(b)):
            raise ValueError("weights must be finite")
        if self.activation not in _ACTIVATIONS:
            raise UnsupportedActivation(self.activation)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class Mlp:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.W.shape[1] != prev.W.shape[0]:
                raise DimensionMismatch("consecutive layer dimensions must chain")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self):
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self):
        return self.layers[-1].W.shape[0]


@dataclass(frozen=True)
class Icnn:
    """Input-convex network: z1 = act(W0 x + b0); z_{i+1} = act(U_i z_i + W_i x + b_i).

    Entries of every U_i must be nonnegative and activations convex
    nondecreasing (relu or softplus), which guarantees a convex map.
    """

    W: tuple  # input skip weights, len L
    U: tuple  # latent weights, len L-1
    b: tuple
    activations: tuple

    def __post_init__(self):
        W = tuple(np.atleast_2d(np.asarray(w, dtype=float)) for w in self.W)
        U = tuple(np.atleast_2d(np.asarray(u, dtype=float)) for u in self.U)
        b = tuple(np.asarray(v, dtype=float).ravel() for v in self.b)
        acts = tuple(self.activations)
        if len(U) != len(W) - 1 or len(b) != len(W) or len(acts) != len(W):
            raise DimensionMismatch("need L input weights, L-1 latent weights, L biases")
        for a in acts:
            if a not in ("relu", "softplus"):
                raise UnsupportedActivation(f"ICNN activation must be convex nondecreasing, got {a}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "activations", acts)

    @property
    def in_dim(self):
        return self.W[0].shape[1]

    @property
    def out_dim(self):
        return self.W[-1].shape[0]

    def structural_violations(self):
        out = []
        for i, u in enumerate(self.U):
            if np.any(u < 0):
                idx = np.unravel_index(int(np.argmin(u)), u.shape)
                out.append(f"U[{i}]{list(idx)} = {u[idx]:.6g} < 0")
        return out


@dataclass(frozen=True)
class LyapunovCandidate:
    """V(x) = sigma(g(x) - g(0)) - sigma(0) + eps_quad * ||x||^2.

    The outer softplus is shifted by sigma(0) so V(0) = 0 holds exactly.
    """

    core: Icnn
    eps_quad: float
    outer: str = "softplus"

    def __post_init__(self):
        if self.eps_quad <= 0:
            raise ValueError("eps_quad must be > 0")
        if self.core.out_dim != 1:
            raise DimensionMismatch("Lyapunov core must be scalar-valued")

    @property
    def in_dim(self):
        return self.core.in_dim


def forward(net, x):
    """Exact evaluation; accepts a vector or an (N, dim) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != net.in_dim:
        raise DimensionMismatch(f"input dim {X.shape[1]}, network expects {net.in_dim}")
    if isinstance(net, Mlp):
        Z = X
        for layer in net.layers:
            Z = _act(layer.activation, Z @ layer.W.T + layer.b)
    elif isinstance(net, Icnn):
        Z = _act(net.activations[0], X @ net.W[0].T + net.b[0])
        for i in range(1, len(net.W)):
            Z = _act(net.activations[i], Z @ net.U[i - 1].T + X @ net.W[i].T + net.b[i])
    else:
        raise TypeError(f"cannot evaluate {type(net).__name__}")
    return Z[0] if single else Z


def forward_batch(net, X):
    return forward(net, np.atleast_2d(np.asarray(X, dtype=float)))


def lyapunov_eval(V: LyapunovCandidate, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    g = forward(V.core, X)[:, 0]
    g0 = forward(V.core, np.zeros(V.in_dim))[0]
    val = _act(V.outer, g - g0) - _act(V.outer, np.zeros(1))[0]
    val = val + V.eps_quad * np.sum(X**2, axis=1)
    return float(val[0]) if single else val


def check_icnn(net: Icnn, domain, trials: int, seed: int):
    """Structural check plus randomized midpoint-convexity test.

    Returns a dict report; failures are entries, never exceptions.
    """
    from .geom import sample_region

    if trials < 1:
        raise ValueError("trials must be >= 1")
    violations = net.structural_violations()
    structural_ok = not violations
    rng = np.random.default_rng(seed)
    a = sample_region(domain, trials, rng)
    b = sample_region(domain, trials, rng)
    fa = forward(net, a)
    fb = forward(net, b)
    fm = forward(net, 0.5 * (a + b))
    gap = fm - 0.5 * (fa + fb)
    bad = np.any(gap > 1e-9, axis=1)
    convex_ok = not bool(bad.any())
    witness = None
    if not convex_ok:
        i = int(np.argmax(np.max(gap, axis=1)))
        witness = {"a": a[i].tolist(), "b": b[i].tolist(), "gap": float(np.max(gap[i]))}
    return {
        "check": "icnn",
        "passed": structural_ok and convex_ok,
        "structural_ok": structural_ok,
        "structural_violations": violations,
        "midpoint_convexity_ok": convex_ok,
        "trials": trials,
        "worst_midpoint_gap": float(np.max(gap)),
        "witness": witness,
    }


def _spectral_norm(W, tol=1e-8, max_iter=10_000):
    """Largest singular value by power iteration on W'W."""
    n = W.shape[1]
    v = np.ones(n) / np.sqrt(n)
    s = 0.0
    for _ in range(max_iter):
        w = W.T @ (W @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v_new = w / norm
        s_new = np.sqrt(norm)
        if abs(s_new - s) <= tol * max(s_new, 1e-30):
            return float(s_new)
        v, s = v_new, s_new
    raise PowerIterationStall("power iteration did not converge")


def lipschitz_bound(net: Mlp) -> float:
    """Product of layer spectral norms; a guaranteed upper bound since every
    allowed activation is 1-Lipschitz (sigmoid slope <= 1/4 <= 1)."""
    bound = 1.0
    for layer in net.layers:
        bound *= _spectral_norm(layer.W)
    return float(bound)


# -- JSON weight format ----------------------------------------------------


def network_to_dict(net) -> dict:
    if isinstance(net, Mlp):
        return {
            "kind": "mlp",
            "layers": [
                {"w": l.W.tolist(), "b": l.b.tolist(), "act": l.activation} for l in net.layers
            ],
        }
    if isinstance(net, Icnn):
        return {
            "kind": "icnn",
            "layers": [
                {
                    "w": net.W[i].tolist(),
                    "u": net.U[i - 1].tolist() if i > 0 else None,
                    "b": net.b[i].tolist(),
                    "act": net.activations[i],
                }
                for i in range(len(net.W))
            ],
        }
    if isinstance(net, LyapunovCandidate):
        d = network_to_dict(net.core)
        d["kind"] = "lyapunov"
        d["eps_quad"] = net.eps_quad
        d["outer"] = net.outer
        return d
    raise TypeError(f"cannot serialize {type(net).__name__}")


def network_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "mlp":
        return Mlp(tuple(Layer(l["w"], l["b"], l["act"]) for l in d["layers"]))
    if kind in ("icnn", "lyapunov"):
        W = tuple(l["w"] for l in d["layers"])
        U = tuple(l["u"] for l in d["layers"][1:])
        b = tuple(l["b"] for l in d["layers"])
        acts = tuple(l["act"] for l in d["layers"])
        core = Icnn(W, U, b, acts)
        if kind == "icnn":
            return core
        return LyapunovCandidate(core, d["eps_quad"], d.get("outer", "softplus"))
    raise ValueError(f"unknown network kind {kind!r}")


def save_network(net, path):
    with open(path, "w") as f:
        json.dump(network_to_dict(net), f, sort_keys=True)


def load_network(path):
    with open(path) as f:
        return network_from_dict(json.load(f))
