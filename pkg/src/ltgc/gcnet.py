"""Guidance and control networks: models, losses and training.

Networks map the seven-element state (p, f, g, h, k, L, m) either to the
controls directly (policy head) or to a scalar value whose input gradient
stands in for the costates (value head). Everything runs in float64 torch.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import __version__
from ._kernels import DEGENERATE_NORM, NET_HEADER
from .backgen import COL, CONTROL, COSTATE, STATE, Database
from .equinoctial import PhysicalConstants, b_matrix_batch, d_vector_batch
from .errors import DegenerateCostateError, FormatError, LtgcError

DTYPE = torch.float64
MODEL_FORMAT = "ltgc-model/1"
HEADS = ("value", "policy")
LOSSES = ("n1", "n2", "n3", "n4")
VALUE_KINDS = ("cost_to_go", "propellant_to_go", "final_mass")


class TrainingError(LtgcError, RuntimeError):
    """Non-finite loss during training."""


@dataclass(frozen=True)
class Arch:
    hidden: int = 3
    width: int = 200
    head: str = "policy"
    n_in: int = 7

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if self.hidden < 0 or self.width < 1 or self.n_in < 1:
            raise ValueError("invalid layer dimensions")

    @property
    def n_out(self) -> int:
        return 1 if self.head == "value" else 4

    @property
    def dims(self) -> list[int]:
        return [self.n_in] + [self.width] * self.hidden + [self.n_out]

    @classmethod
    def parse(cls, text: str, head: str) -> "Arch":
        """'3x200' -> three hidden layers of 200 neurons."""
        try:
            l, w = text.lower().split("x")
            return cls(int(l), int(w), head)
        except ValueError as exc:
            raise ValueError(f"architecture must look like '3x200', got {text!r}") from exc


class Network(torch.nn.Module):
    """Softplus MLP with an affine last layer; head activations applied outside."""

    def __init__(self, arch: Arch):
        super().__init__()
        self.arch = arch
        d = arch.dims
        self.layers = torch.nn.ModuleList(
            torch.nn.Linear(a, b, dtype=DTYPE) for a, b in zip(d[:-1], d[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers[:-1]:
            x = torch.nn.functional.softplus(layer(x))
        return self.layers[-1](x)


def init_model(arch: Arch, seed: int = 0) -> Network:
    """Kaiming-normal weights N(0, 2/fan_in) and zero biases."""
    net = Network(arch)
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for layer in net.layers:
            fan_in = layer.in_features
            w = rng.standard_normal((layer.out_features, fan_in)) * math.sqrt(2.0 / fan_in)
            layer.weight.copy_(torch.from_numpy(w))
            layer.bias.zero_()
    return net


def _t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def policy_outputs(raw: torch.Tensor, clamp: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Throttle sigmoid(o0) and unit direction from (o1, o2, o3)."""
    u = torch.sigmoid(raw[..., 0])
    d = raw[..., 1:4]
    n2 = (d * d).sum(-1)
    if clamp:
        n = torch.sqrt(torch.clamp(n2, min=DEGENERATE_NORM ** 2))
    else:
        n = torch.sqrt(n2)
    return u, d / n[..., None]


def forward(model: Network, x) -> dict:
    """Evaluate a model on one state or a batch; degenerate directions raise."""
    X = _t(x)
    single = X.ndim == 1
    X = X.reshape(-1, 7)
    with torch.no_grad():
        raw = model(X)
    if model.arch.head == "value":
        out = {"v": raw[:, 0].numpy()}
    else:
        nd = torch.linalg.vector_norm(raw[:, 1:4], dim=-1)
        if torch.any(nd < DEGENERATE_NORM):
            raise DegenerateCostateError("policy direction output vanishes")
        u, d = policy_outputs(raw, clamp=False)
        out = {"u": u.numpy(), "i_tau": d.numpy()}
    return {k: v[0] for k, v in out.items()} if single else out


def input_gradient(model: Network, x, create_graph: bool = False) -> torch.Tensor:
    """Gradient of the scalar value output with respect to the seven inputs."""
    if model.arch.head != "value":
        raise ValueError("input_gradient requires a value-head model")
    X = _t(x).detach().reshape(-1, 7).clone().requires_grad_(True)
    v = model(X)[:, 0]
    (g,) = torch.autograd.grad(v.sum(), X, create_graph=create_graph)
    return g


# value-target conventions ---------------------------------------------------


@dataclass(frozen=True)
class ValueScale:
    """lambda = grad_scale * grad v + (0, ..., 0, lm_offset)."""

    kind: str
    grad_scale: float
    lm_offset: float

    def target(self, m: np.ndarray, mf: np.ndarray, k: PhysicalConstants) -> np.ndarray:
        if self.kind == "cost_to_go":
            return (m - mf) / k.c2
        if self.kind == "propellant_to_go":
            return m - mf
        return np.array(mf, dtype=float)

    def to_kg(self, dv, k: PhysicalConstants):
        """Convert a value difference into kilograms of propellant."""
        f = k.c2 if self.kind == "cost_to_go" else 1.0
        return dv * f * k.mass_unit


def value_scale(kind: str, k: PhysicalConstants) -> ValueScale:
    if kind == "cost_to_go":
        return ValueScale(kind, 1.0, 0.0)
    if kind == "propellant_to_go":
        return ValueScale(kind, 1.0 / k.c2, 0.0)
    if kind == "final_mass":
        return ValueScale(kind, -1.0 / k.c2, 1.0 / k.c2)
    raise ValueError(f"value kind must be one of {VALUE_KINDS}")


# torch mirror of the optimal-control relations ---------------------------------


def throttle_t(sf: torch.Tensor, eps: float) -> torch.Tensor:
    if eps == 0.0:
        return torch.where(sf < 0, torch.ones_like(sf), torch.where(sf > 0, torch.zeros_like(sf),
                                                                    torch.full_like(sf, 0.5)))
    r = torch.sqrt(4.0 * eps * eps + sf * sf)
    pos = 2.0 * eps / (2.0 * eps + sf + r)
    neg = (r - sf) / (r - sf + 2.0 * eps)
    return torch.where(sf >= 0, pos, neg)


def primer_t(X: torch.Tensor, lam: torch.Tensor, mu: float) -> torch.Tensor:
    B = b_matrix_batch(X[:, :6], mu, xp=torch)
    return torch.einsum("nij,ni->nj", B, lam[:, :6])


def control_from_costates(X: torch.Tensor, lam: torch.Tensor, eps: float,
                          k: PhysicalConstants) -> tuple[torch.Tensor, torch.Tensor]:
    """Optimal throttle and direction from costates, with |B^T lambda| clamped at 1e-14."""
    bl = primer_t(X, lam, k.mu)
    nb = torch.sqrt(torch.clamp((bl * bl).sum(-1), min=DEGENERATE_NORM ** 2))
    sf = 1.0 - k.c1 / X[:, 6] * nb - k.c2 * lam[:, 6]
    return throttle_t(sf, eps), -bl / nb[:, None]


def hamiltonian_t(X: torch.Tensor, lam: torch.Tensor, u: torch.Tensor, i_tau: torch.Tensor,
                  eps: float, k: PhysicalConstants) -> torch.Tensor:
    bl = primer_t(X, lam, k.mu)
    H = (k.c1 * u / X[:, 6]) * (bl * i_tau).sum(-1) + lam[:, 5] * d_vector_batch(X[:, :6], k.mu, xp=torch)
    H = H - k.c2 * lam[:, 6] * u + u
    if eps > 0.0:
        H = H - eps * torch.log(u * (1.0 - u))
    return H


# losses ------------------------------------------------------------------------


@dataclass(frozen=True)
class LossConfig:
    kind: str = "n1"
    s1: float = 1e2
    eps: float = 1e-6
    value_kind: str = "cost_to_go"

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not self.s1 > 0:
            raise ValueError("s1 must be positive")
        if self.value_kind not in VALUE_KINDS:
            raise ValueError(f"value kind must be one of {VALUE_KINDS}")

    @property
    def head(self) -> str:
        return "policy" if self.kind == "n1" else "value"

    def components(self) -> tuple[str, ...]:
        return {"n1": ("policy",), "n2": ("vf",), "n3": ("vf", "lambda"),
                "n4": ("vf", "H", "u")}[self.kind]


@dataclass(frozen=True, eq=False)
class Batch:
    X: torch.Tensor      # (n, 7)
    u: torch.Tensor      # (n,)
    i_tau: torch.Tensor  # (n, 3)
    lam: torch.Tensor    # (n, 7)
    J: torch.Tensor      # (n,) value target

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.X[idx], self.u[idx], self.i_tau[idx], self.lam[idx], self.J[idx])


def make_batch(rows: np.ndarray, k: PhysicalConstants, value_kind: str = "cost_to_go") -> Batch:
    vs = value_scale(value_kind, k)
    J = vs.target(rows[:, COL["m"]], rows[:, COL["mf"]], k)
    return Batch(_t(rows[:, STATE]), _t(rows[:, COL["u"]]), _t(rows[:, CONTROL][:, 1:4]),
                 _t(rows[:, COSTATE]), _t(J))


def network_costates(model: Network, X: torch.Tensor, vs: ValueScale,
                     create_graph: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """(value, costates) where costates come from the input gradient of the value."""
    Xg = X.detach().clone().requires_grad_(True)
    v = model(Xg)[:, 0]
    (g,) = torch.autograd.grad(v.sum(), Xg, create_graph=create_graph)
    lam = vs.grad_scale * g
    if vs.lm_offset != 0.0:
        lam = lam + torch.cat([torch.zeros(6, dtype=DTYPE), torch.tensor([vs.lm_offset], dtype=DTYPE)])
    return v, lam


def loss_components(model: Optional[Network], batch: Batch, k: PhysicalConstants, cfg: LossConfig,
                    which: Optional[Sequence[str]] = None, costates: Optional[torch.Tensor] = None,
                    create_graph: bool = True) -> dict:
    """Requested loss components as 0-d tensors.

    Passing ``costates`` bypasses the network for the costate-based components
    (useful to check the identities with the true costates).
    """
    which = tuple(which or cfg.components())
    out = {}
    if "policy" in which:
        u, d = policy_outputs(model(batch.X))
        out["policy"] = ((u - batch.u) ** 2).mean() + (1.0 - (d * batch.i_tau).sum(-1)).mean()
    need_grad = any(c in which for c in ("lambda", "H", "u"))
    if model is not None and model.arch.head == "value" and ("vf" in which or need_grad):
        vs = value_scale(cfg.value_kind, k)
        if need_grad and costates is None:
            v, lam = network_costates(model, batch.X, vs, create_graph)
        else:
            v, lam = model(batch.X)[:, 0], costates
        if "vf" in which:
            out["vf"] = ((batch.J - v) ** 2).mean()
    else:
        lam = costates
    if need_grad and lam is None:
        raise ValueError("costate-based losses need a value model or explicit costates")
    if "lambda" in which:
        out["lambda"] = ((batch.lam[:, :6] - lam[:, :6]) ** 2).mean()
    if "H" in which:
        out["H"] = (hamiltonian_t(batch.X, lam, batch.u, batch.i_tau, cfg.eps, k) ** 2).mean()
    if "u" in which:
        u, d = control_from_costates(batch.X, lam, cfg.eps, k)
        out["u"] = ((u - batch.u) ** 2).mean() + (1.0 - (d * batch.i_tau).sum(-1)).mean()
    return out


def composite_loss(cfg: LossConfig, comp: dict):
    if cfg.kind == "n1":
        return comp["policy"]
    if cfg.kind == "n2":
        return comp["vf"]
    if cfg.kind == "n3":
        return comp["vf"] + comp["lambda"]
    return comp["vf"] + cfg.s1 * comp["H"] + comp["u"]


def loss(model: Network, batch: Batch, k: PhysicalConstants, cfg: LossConfig,
         create_graph: bool = True) -> torch.Tensor:
    return composite_loss(cfg, loss_components(model, batch, k, cfg, create_graph=create_graph))


# training -------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 4096
    epochs: int = 250
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    plateau_min_delta: float = 1e-6
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.batch < 1 or not self.lr > 0 or self.epochs < 0:
            raise ValueError("batch >= 1, lr > 0 and epochs >= 0 required")


@dataclass(eq=False)
class TrainResult:
    model: Network
    curve: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf


def evaluate_loss(model: Network, batch: Batch, k: PhysicalConstants, cfg: LossConfig,
                  chunk: int = 8192) -> float:
    """Composite loss over a whole split, averaged with per-chunk weights."""
    if len(batch) == 0:
        return math.nan
    total = 0.0
    needs_graph = cfg.kind in ("n3", "n4")
    for s in range(0, len(batch), chunk):
        b = batch.subset(slice(s, s + chunk))
        if needs_graph:
            val = loss(model, b, k, cfg, create_graph=False)
        else:
            with torch.no_grad():
                val = loss(model, b, k, cfg)
        total += val.item() * len(b)
    return total / len(batch)


def train(model: Network, train_batch: Batch, val_batch: Batch, k: PhysicalConstants,
          cfg: TrainConfig, lcfg: LossConfig,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Amsgrad minibatch training with plateau LR decay; returns the best-validation model."""
    if cfg.threads > 0:
        torch.set_num_threads(cfg.threads)
    if model.arch.head != lcfg.head:
        raise ValueError(f"loss {lcfg.kind} needs a {lcfg.head}-head model")
    if len(train_batch) == 0 or len(val_batch) == 0:
        raise ValueError("training and validation splits must both be non-empty")
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.adam_eps,
                           weight_decay=cfg.weight_decay, amsgrad=True)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, mode="min", factor=cfg.plateau_factor, patience=cfg.plateau_patience,
        threshold=cfg.plateau_min_delta, threshold_mode="abs")
    rng = np.random.default_rng(cfg.seed)
    res = TrainResult(copy.deepcopy(model))
    n = len(train_batch)
    for epoch in range(cfg.epochs):
        perm = torch.from_numpy(rng.permutation(n))
        model.train()
        acc, seen = 0.0, 0
        for s in range(0, n, cfg.batch):
            b = train_batch.subset(perm[s:s + cfg.batch])
            opt.zero_grad(set_to_none=True)
            val = loss(model, b, k, lcfg)
            if not torch.isfinite(val):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch offset {s}")
            val.backward()
            opt.step()
            acc += val.item() * len(b)
            seen += len(b)
        model.eval()
        v = evaluate_loss(model, val_batch, k, lcfg)
        if not math.isfinite(v):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        sched.step(v)
        lr = opt.param_groups[0]["lr"]
        res.curve.append({"epoch": epoch, "train": acc / max(seen, 1), "val": v, "lr": lr})
        if v < res.best_val:
            res.best_val, res.best_epoch = v, epoch
            res.model = copy.deepcopy(model)
        if log:
            log(f"epoch {epoch}: train {acc / max(seen, 1):.4e} val {v:.4e} lr {lr:.1e}")
    return res


def split_batches(db: Database, k: PhysicalConstants, value_kind: str = "cost_to_go") -> dict:
    return {s: make_batch(db.split(s), k, value_kind) for s in ("train", "val", "test")}


# export / import / packing -----------------------------------------------------------


def export_model(model: Network, path, metadata: Optional[dict] = None) -> None:
    a = model.arch
    doc = {
        "format": MODEL_FORMAT,
        "tool_version": __version__,
        "arch": {"layers": a.hidden, "widths": [a.width] * a.hidden, "head": a.head, "inputs": a.n_in},
        "weights": [l.weight.detach().numpy().tolist() for l in model.layers],
        "biases": [l.bias.detach().numpy().tolist() for l in model.layers],
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def model_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError("not an ltgc model file")
    try:
        a = doc["arch"]
        widths = a["widths"]
        if len(set(widths)) > 1:
            raise FormatError("only uniform hidden widths are supported")
        arch = Arch(int(a["layers"]), int(widths[0]) if widths else 1, a["head"], int(a.get("inputs", 7)))
        net = Network(arch)
        with torch.no_grad():
            for layer, W, b in zip(net.layers, doc["weights"], doc["biases"], strict=True):
                W = torch.tensor(W, dtype=DTYPE)
                b = torch.tensor(b, dtype=DTYPE)
                if W.shape != layer.weight.shape or b.shape != layer.bias.shape:
                    raise FormatError("weight shapes do not match the architecture")
                layer.weight.copy_(W)
                layer.bias.copy_(b)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model file: {exc}") from exc
    return net


def import_model(path) -> tuple[Network, dict]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read model file {path}: {exc}") from exc
    return model_from_dict(doc), doc.get("metadata", {})


def pack(model: Network, k: PhysicalConstants, eps: float = 1e-6,
         value_kind: str = "cost_to_go") -> np.ndarray:
    """Flat parameter array for the compiled network-in-the-loop field."""
    dims = model.arch.dims
    vs = value_scale(value_kind, k)
    head = 1.0 if model.arch.head == "policy" else 0.0
    hdr = [k.c1, k.c2, k.mu, eps, head, vs.grad_scale, vs.lm_offset, 0.0, float(len(dims) - 1)]
    assert len(hdr) == NET_HEADER
    parts = [np.array(hdr), np.array(dims, dtype=float)]
    for l in model.layers:
        parts.append(l.weight.detach().numpy().ravel())
        parts.append(l.bias.detach().numpy().ravel())
    return np.ascontiguousarray(np.concatenate(parts))


def model_hash(model: Network) -> str:
    h = hashlib.sha256()
    for l in model.layers:
        h.update(l.weight.detach().numpy().tobytes())
        h.update(l.bias.detach().numpy().tobytes())
    return h.hexdigest()
