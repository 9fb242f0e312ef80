"""Backward generation of optimal examples around a nominal transfer.

The nominal terminal augmented state is perturbed in the costates and the
arrival mass (keeping the transversality conditions), the arrival longitude is
shifted so that the Hamiltonian vanishes again, and the optimal field is then
integrated backward in Sundman anomaly. Every point of the result is an
optimal state-control pair for reaching the target orbit.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import multiprocessing as mp
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .equinoctial import PhysicalConstants, nominal_box
from .errors import FormatError, LtgcError, PropagationError
from .pmp import controls_along, hamiltonian_along
from .propagate import DEFAULT_CONFIG, IntegratorConfig, TerminationBox, field_params, integrate_field
from .shooting import NominalRecord

COLUMNS = ("traj_id", "sample_idx", "t", "p", "f", "g", "h", "k", "L", "m",
           "lp", "lf", "lg", "lh", "lk", "lL", "lm", "u", "itr", "itt", "itn", "mf", "t_go")
COL = {c: i for i, c in enumerate(COLUMNS)}
STATE = slice(3, 10)
COSTATE = slice(10, 17)
AUG = slice(3, 17)
CONTROL = slice(17, 21)
BINARY_MAGIC = b"LTDB1\x00\x00\x00"
GEN_EPS = 1e-6
H_TOL = 1e-10

# Default gaussian per-component standard deviations: m, lp, lf, lg, lh, lk
GAUSSIAN_SIGMA = (0.01, 5.0, 1.0, 1.0, 0.0, 0.0)


class NoRootError(LtgcError, RuntimeError):
    """H_f(dL) has no root in the search window."""


@dataclass(frozen=True)
class PerturbationSpec:
    """How the nominal terminal state is perturbed.

    ``ball``: orbital costates (lp..lk) uniform in a 5-ball of radius ``rho``
    and arrival mass uniform in [-mass_bound, mass_bound].
    ``gaussian``: independent normals with standard deviations ``sigma`` for
    (m, lp, lf, lg, lh, lk). lL and lm are never perturbed.
    """

    mode: str = "ball"
    rho: float = 0.2
    sigma: tuple[float, ...] = GAUSSIAN_SIGMA
    mass_bound: float = 0.02

    def __post_init__(self):
        if self.mode not in ("ball", "gaussian"):
            raise ValueError("mode must be 'ball' or 'gaussian'")
        if self.rho < 0 or len(self.sigma) != 6 or any(s < 0 for s in self.sigma):
            raise ValueError("perturbation sizes must be non-negative (six sigmas)")
        if self.mass_bound < 0:
            raise ValueError("mass_bound must be non-negative")

    @classmethod
    def zero(cls) -> "PerturbationSpec":
        return cls("ball", 0.0, (0.0,) * 6, 0.0)

    @classmethod
    def gaussian(cls) -> "PerturbationSpec":
        return cls("gaussian", 0.0, GAUSSIAN_SIGMA)


def _unit_ball(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    r = rng.uniform() ** (1.0 / dim)
    n = np.linalg.norm(v)
    return v * (r / n) if n > 0 else np.zeros(dim)


def perturb_terminal(y_nom: np.ndarray, spec: PerturbationSpec, rng: np.random.Generator,
                     max_draws: int = 1000) -> np.ndarray:
    """Perturbed terminal augmented state before the longitude correction."""
    y = np.array(y_nom[:14], dtype=float)
    for _ in range(max_draws):
        if spec.mode == "ball":
            dl = spec.rho * _unit_ball(rng, 5)
            dm = spec.mass_bound * (2.0 * rng.uniform() - 1.0)
        else:
            s = np.asarray(spec.sigma)
            z = rng.standard_normal(6)
            dm, dl = s[0] * z[0], s[1:] * z[1:]
        if y_nom[6] + dm > 0.0:
            out = y.copy()
            out[6] += dm
            out[7:12] += dl
            return out
    raise ValueError("could not draw a positive terminal mass")


def terminal_hamiltonian(y: np.ndarray, eps: float, k: PhysicalConstants) -> float:
    return float(hamiltonian_along(np.asarray(y)[None, :14], eps, k)[0])


def restore_free_time(candidate: np.ndarray, eps: float, k: PhysicalConstants,
                      n_scan: int = 720, tol: float = H_TOL) -> tuple[np.ndarray, float]:
    """Shift L so that H = 0, picking the root in [-pi, pi] closest to zero."""
    y = np.array(candidate[:14], dtype=float)
    L0 = y[5]

    def H(dL):
        z = y.copy()
        z[5] = L0 + dL
        return terminal_hamiltonian(z, eps, k)

    h0 = H(0.0)
    if abs(h0) < tol:
        return y, 0.0
    grid = np.linspace(-math.pi, math.pi, n_scan + 1)
    Y = np.repeat(y[None, :], grid.shape[0], axis=0)
    Y[:, 5] = L0 + grid
    hv = hamiltonian_along(Y, eps, k)
    roots = []
    for i in np.nonzero(np.sign(hv[:-1]) * np.sign(hv[1:]) <= 0)[0]:
        a, b = grid[i], grid[i + 1]
        if hv[i] == 0.0:
            roots.append(a)
            continue
        if hv[i + 1] == 0.0:
            roots.append(b)
            continue
        roots.append(brentq(H, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))
    for dL in sorted(roots, key=abs):
        if abs(H(dL)) < tol:
            y[5] = L0 + dL
            return y, float(dL)
    raise NoRootError("H_f(dL) has no root in [-pi, pi]")


@dataclass(frozen=True, eq=False)
class Trajectory:
    rows: np.ndarray  # (N, len(COLUMNS)), increasing t, arrival last
    reason: str

    @property
    def t(self) -> np.ndarray:
        return self.rows[:, COL["t"]]

    @property
    def states(self) -> np.ndarray:
        return self.rows[:, AUG]


def generate_trajectory(terminal: np.ndarray, theta_span: float, n: int, eps: float,
                        k: PhysicalConstants, cfg: IntegratorConfig = DEFAULT_CONFIG,
                        box: Optional[TerminationBox] = None, traj_id: int = 0) -> Trajectory:
    """Integrate backward ``theta_span`` in Sundman anomaly and sample ``n`` points.

    Times are measured from arrival (t <= 0). The returned rows are ordered by
    increasing t, so the terminal state is the last row.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    if not theta_span > 0:
        raise ValueError("theta_span must be positive")
    y = np.append(np.asarray(terminal, dtype=float)[:14], 0.0)
    sol = integrate_field("sundman", y, 0.0, -theta_span, field_params(eps, k), cfg, box=box)
    if sol.reason.startswith("initially_outside"):
        raise PropagationError("terminal state outside the termination box")
    th = np.linspace(sol.t_final, 0.0, n)
    Y = sol(th)
    Y[-1] = y
    C = controls_along(Y, eps, k)
    rows = np.empty((n, len(COLUMNS)))
    rows[:, 0] = traj_id
    rows[:, 1] = np.arange(n)
    rows[:, 2] = Y[:, 14]
    rows[:, AUG] = Y[:, :14]
    rows[:, CONTROL] = C[:, :4]
    rows[:, COL["mf"]] = y[6]
    rows[:, COL["t_go"]] = -Y[:, 14]
    return Trajectory(rows, sol.reason)


@dataclass(frozen=True)
class DatabaseSpec:
    name: str = "A"
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    samples_per_traj: int = 100
    trajectories: int = 1000
    horizon_scale: tuple[float, float] = (0.8, 1.2)
    terminate_box: bool = False
    seed: int = 0
    eps: float = GEN_EPS

    def __post_init__(self):
        if self.samples_per_traj < 2:
            raise ValueError("samples_per_traj must be at least 2")
        if self.trajectories < 1:
            raise ValueError("trajectories must be at least 1")
        lo, hi = self.horizon_scale
        if not 0 < lo <= hi:
            raise ValueError("horizon_scale must satisfy 0 < lo <= hi")

    def to_json(self) -> dict:
        d = asdict(self)
        d["perturbation"]["sigma"] = list(self.perturbation.sigma)
        d["horizon_scale"] = list(self.horizon_scale)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DatabaseSpec":
        d = dict(d)
        p = dict(d.pop("perturbation"))
        p["sigma"] = tuple(p["sigma"])
        return cls(perturbation=PerturbationSpec(**p), horizon_scale=tuple(d.pop("horizon_scale")), **d)


def trajectory_rng(seed: int, traj_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(traj_id)])


def split_of(seed: int, traj_id: int) -> str:
    """80/10/10 train/val/test split from a hash of (seed, traj_id)."""
    h = hashlib.sha256(f"{int(seed)}:{int(traj_id)}".encode()).digest()
    r = int.from_bytes(h[:8], "little") % 10
    return "train" if r < 8 else ("val" if r == 8 else "test")


# worker state for the process pool
_CTX: dict = {}


def _init_worker(spec: DatabaseSpec, nominal: NominalRecord, cfg: IntegratorConfig):
    _CTX["spec"], _CTX["nominal"], _CTX["cfg"] = spec, nominal, cfg
    _CTX["box"] = nominal_box() if spec.terminate_box else None


def _one(traj_id: int) -> tuple[int, Optional[np.ndarray], str]:
    return generate_one(_CTX["spec"], _CTX["nominal"], traj_id, _CTX["cfg"], _CTX["box"])


def generate_one(spec: DatabaseSpec, nominal: NominalRecord, traj_id: int,
                 cfg: IntegratorConfig = DEFAULT_CONFIG,
                 box: Optional[TerminationBox] = None) -> tuple[int, Optional[np.ndarray], str]:
    """One database trajectory; returns (traj_id, rows or None, status)."""
    k = nominal.constants
    rng = trajectory_rng(spec.seed, traj_id)
    scale = rng.uniform(*spec.horizon_scale) if spec.horizon_scale[0] < spec.horizon_scale[1] \
        else spec.horizon_scale[0]
    cand = perturb_terminal(nominal.y_final, spec.perturbation, rng)
    if cand[6] >= nominal.s0[6]:
        return traj_id, None, "mass_above_initial"
    try:
        term, _ = restore_free_time(cand, spec.eps, k)
    except NoRootError:
        return traj_id, None, "no_dL_root"
    try:
        tr = generate_trajectory(term, scale * nominal.sundman_span, spec.samples_per_traj,
                                 spec.eps, k, cfg, box, traj_id)
    except PropagationError:
        return traj_id, None, "propagation_failed"
    if not np.all(np.isfinite(tr.rows)):
        return traj_id, None, "propagation_failed"
    return traj_id, tr.rows, "ok"


def run_generation(spec: DatabaseSpec, nominal: NominalRecord, workers: int = 1,
                   cfg: IntegratorConfig = DEFAULT_CONFIG,
                   ids: Optional[Iterable[int]] = None) -> tuple[np.ndarray, dict]:
    """Generate all trajectories, in traj_id order; returns (rows, failure counts)."""
    ids = list(range(spec.trajectories)) if ids is None else list(ids)
    if workers <= 1:
        _init_worker(spec, nominal, cfg)
        results = [_one(i) for i in ids]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
        with ctx.Pool(workers, initializer=_init_worker, initargs=(spec, nominal, cfg)) as pool:
            results = list(pool.imap(_one, ids, chunksize=max(1, len(ids) // (8 * workers))))
    counts: dict = {}
    blocks = []
    for _, rows, status in results:
        counts[status] = counts.get(status, 0) + 1
        if rows is not None:
            blocks.append(rows)
    rows = np.concatenate(blocks) if blocks else np.empty((0, len(COLUMNS)))
    return rows, counts


# file formats ---------------------------------------------------------------


def _fmt(v: float, integer: bool) -> str:
    return str(int(v)) if integer else repr(float(v))


def rows_to_csv(rows: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write(",".join(COLUMNS) + "\n")
    for r in rows:
        buf.write(",".join([str(int(r[0])), str(int(r[1]))] + [repr(float(v)) for v in r[2:]]))
        buf.write("\n")
    return buf.getvalue()


def write_csv(path, rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))


def read_csv(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != COLUMNS:
            raise FormatError(f"unexpected CSV header in {path}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        return np.empty((0, len(COLUMNS)))
    return data


def write_binary(path, rows: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<QQ", rows.shape[0], rows.shape[1]))
        fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())


def read_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(len(BINARY_MAGIC)) != BINARY_MAGIC:
            raise FormatError(f"{path} is not an LTDB1 file")
        n, c = struct.unpack("<QQ", fh.read(16))
        if c != len(COLUMNS):
            raise FormatError("column count mismatch")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * c:
        raise FormatError("truncated LTDB1 file")
    return data.reshape(n, c).astype(float)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def nominal_summary(nominal: NominalRecord) -> dict:
    return {"tf_years": nominal.tf_years, "propellant_kg": nominal.propellant_kg,
            "terminal_elements": nominal.y_final[:5].tolist(),
            "terminal_state": nominal.y_final.tolist(),
            "sundman_span": nominal.sundman_span, "eps": nominal.eps,
            "constants": nominal.to_json()["constants"]}


@dataclass(frozen=True, eq=False)
class Database:
    rows: np.ndarray
    manifest: dict

    @property
    def seed(self) -> int:
        return int(self.manifest["seed"])

    @property
    def traj_ids(self) -> np.ndarray:
        return np.unique(self.rows[:, 0]).astype(int)

    def split_ids(self, name: str) -> list[int]:
        return list(self.manifest["splits"][name])

    def split(self, name: str) -> np.ndarray:
        ids = np.asarray(self.split_ids(name), dtype=float)
        return self.rows[np.isin(self.rows[:, 0], ids)]

    def trajectory(self, traj_id: int) -> np.ndarray:
        return self.rows[self.rows[:, 0] == traj_id]


def build_database(spec: DatabaseSpec, nominal: NominalRecord, out_dir, workers: int = 1,
                   cfg: IntegratorConfig = DEFAULT_CONFIG, binary: bool = False,
                   extra_meta: Optional[dict] = None) -> Database:
    """Generate ``spec.trajectories`` trajectories and write samples plus manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, counts = run_generation(spec, nominal, workers, cfg)
    ids = sorted(set(int(v) for v in rows[:, 0]))
    splits = {"train": [], "val": [], "test": []}
    for i in ids:
        splits[split_of(spec.seed, i)].append(i)
    csv_path = out / "samples.csv"
    write_csv(csv_path, rows)
    files = {"samples.csv": sha256_file(csv_path)}
    if binary:
        write_binary(out / "samples.ltdb", rows)
        files["samples.ltdb"] = sha256_file(out / "samples.ltdb")
    spec_json = spec.to_json()
    manifest = {
        "format": "ltgc-database",
        "tool_version": __version__,
        "name": spec.name,
        "spec": spec_json,
        "seed": spec.seed,
        "config_hash": config_hash(spec_json),
        "columns": list(COLUMNS),
        "counts": {"requested": spec.trajectories, "succeeded": len(ids),
                   "failed": {k: v for k, v in sorted(counts.items()) if k != "ok"},
                   "rows": int(rows.shape[0])},
        "nominal": nominal_summary(nominal),
        "split_rule": "sha256(f'{seed}:{traj_id}') first 8 bytes little-endian mod 10: "
                      "0-7 train, 8 val, 9 test; nominal excluded",
        "splits": splits,
        "files": files,
    }
    if extra_meta:
        manifest.update(extra_meta)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return Database(rows, manifest)


def load_database(path, verify: bool = False) -> Database:
    """Load a database directory (or its manifest path)."""
    p = Path(path)
    d = p if p.is_dir() else p.parent
    try:
        with open(d / "manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest in {d}: {exc}") from exc
    if manifest.get("format") != "ltgc-database":
        raise FormatError("not an ltgc database manifest")
    if verify:
        for name, digest in manifest["files"].items():
            if sha256_file(d / name) != digest:
                raise FormatError(f"{name} does not match its manifest hash")
    rows = read_binary(d / "samples.ltdb") if (d / "samples.ltdb").exists() else read_csv(d / "samples.csv")
    return Database(rows, manifest)


def manifest_hash(path) -> str:
    p = Path(path)
    return sha256_file(p / "manifest.json" if p.is_dir() else p)


# optimality audit -------------------------------------------------------------


@dataclass(frozen=True)
class AuditEntry:
    traj_id: int
    max_abs_H: float
    transversality: float
    target_miss: float
    resolve_rel_err: float
    resolve_ok: bool


def audit(db: Database, k: PhysicalConstants, target: np.ndarray, n: int = 100,
          eps: float = GEN_EPS, cfg: IntegratorConfig = DEFAULT_CONFIG) -> list[AuditEntry]:
    """Optimality checks on the first ``n`` trajectories of a database.

    For each trajectory: max |H| over its samples, terminal transversality, and
    the relative error of the propellant-to-go obtained by re-solving the
    free-time problem from its middle sample, warm-started with the stored
    costates and time-to-go.
    """
    from .shooting import shoot_free_time, solve

    out = []
    for tid in db.traj_ids[:n]:
        tr = db.trajectory(int(tid))
        Y = tr[:, AUG]
        Hs = hamiltonian_along(Y, eps, k)
        term = tr[-1]
        trans = max(abs(term[COL["lL"]]), abs(term[COL["lm"]]))
        miss = float(np.max(np.abs(term[STATE][:5] - target)))
        mid = tr[tr.shape[0] // 2]
        s0 = mid[STATE]
        z0 = np.concatenate([mid[COSTATE], [mid[COL["t_go"]]]])
        res = solve(lambda z: shoot_free_time(z, s0, target, eps, k, cfg), z0)
        stored = mid[COL["m"]] - mid[COL["mf"]]
        if res.success:
            y0 = np.concatenate([s0, res.z[:7]])
            mf = integrate_field("time", y0, 0.0, res.z[7], field_params(eps, k), cfg).y_final[6]
            err = abs((s0[6] - mf) - stored) / stored
        else:
            err = math.inf
        out.append(AuditEntry(int(tid), float(np.max(np.abs(Hs))), float(trans), miss,
                              float(err), bool(res.success and err < 1e-3)))
    return out
