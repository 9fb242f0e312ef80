"""Command-line entry point: nominal, generate, train, evaluate, fly."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import ConfigError, FormatError, LtgcError

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _meta(cfg, extra: Optional[dict] = None) -> dict:
    d = {"tool_version": __version__, "config_hash": cfg.hash(), "seed": cfg.seed}
    if extra:
        d.update(extra)
    return d


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _sha(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _scenario(cfg):
    from .equinoctial import PhysicalConstants, Scenario, date_to_mjd

    s = cfg.scenario
    k = PhysicalConstants.from_si(thrust_n=s.thrust_n, isp_s=s.isp_s, m0_kg=s.m0_kg)
    return Scenario(launch_mjd=date_to_mjd(s.launch_date), freeze_years=s.freeze_years, constants=k)


def _integrator(cfg):
    from .propagate import IntegratorConfig

    return IntegratorConfig(cfg.integrator.rel_tol, cfg.integrator.abs_tol)


def _flight_cfg(cfg):
    from .propagate import IntegratorConfig

    return IntegratorConfig(cfg.integrator.flight_tol, cfg.integrator.flight_tol)


def _load_nominal(path: str):
    from .shooting import NominalRecord

    p = _require(path, "nominal file")
    try:
        with open(p) as fh:
            doc = json.load(fh)
        return NominalRecord.from_json(doc["record"] if "record" in doc else doc)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed nominal file {path}: {exc}") from exc


def _verify_inputs(paths: dict) -> None:
    """Re-hash inputs that record a checksum; raise on mismatch."""
    from .backgen import load_database

    for what, path in paths.items():
        if what == "database":
            load_database(path, verify=True)
        elif what == "nominal":
            doc = json.load(open(path))
            rec = doc.get("record")
            if rec is not None and doc.get("record_sha256") != hashlib.sha256(
                    json.dumps(rec, sort_keys=True).encode()).hexdigest():
                raise FormatError(f"{path} does not match its recorded checksum")
        print(f"verified {what}: {path}", file=sys.stderr)


# subcommands -----------------------------------------------------------------------------


def cmd_nominal(cfg, args) -> int:
    from .shooting import HomotopySchedule, homotopy_solve

    sc = _scenario(cfg)
    sched = HomotopySchedule.ending_at(cfg.homotopy.epsilon_final)
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    rec = homotopy_solve(sc.departure_state(), sc.target_elements(), sched, sc.constants,
                         seed=cfg.seed, restarts=cfg.homotopy.restarts, method=cfg.homotopy.method,
                         cfg=_integrator(cfg), n_samples=cfg.homotopy.samples, log=log)
    body = rec.to_json()
    doc = {"meta": _meta(cfg), "config": cfg.to_json(), "record": body,
           "record_sha256": hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()}
    _write_json(args.out, doc)
    print(f"t*f = {rec.tf_years:.4f} yr, propellant = {rec.propellant_kg:.2f} kg, "
          f"switches = {len(rec.switches)}, |residual| = {rec.residual_norm:.1e}")
    print(f"wrote {args.out} sha256={_sha(args.out)}")
    return EXIT_OK


def cmd_generate(cfg, args) -> int:
    from .backgen import DatabaseSpec, PerturbationSpec, build_database

    if args.verify:
        _verify_inputs({"nominal": args.nominal})
    nom = _load_nominal(args.nominal)
    d = cfg.database
    pert = PerturbationSpec.gaussian() if d.spec == "gaussian" else \
        PerturbationSpec("ball", d.rho, mass_bound=d.mass_bound)
    spec = DatabaseSpec(name=d.name, perturbation=pert, samples_per_traj=d.samples,
                        trajectories=d.trajectories, horizon_scale=(d.horizon_min, d.horizon_max),
                        terminate_box=d.terminate_box, seed=cfg.seed)
    db = build_database(spec, nom, args.out, cfg.workers, _integrator(cfg), d.binary,
                        extra_meta={"meta": _meta(cfg, {"nominal_sha256": _sha(args.nominal)})})
    c = db.manifest["counts"]
    print(f"succeeded {c['succeeded']}/{c['requested']} trajectories, {c['rows']} rows")
    for name, digest in db.manifest["files"].items():
        print(f"{name} sha256={digest}")
    print(f"manifest.json sha256={_sha(Path(args.out) / 'manifest.json')}")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    import torch

    from .backgen import load_database, manifest_hash
    from .gcnet import Arch, LossConfig, TrainConfig, export_model, init_model, split_batches, train

    _require(args.db, "database")
    db = load_database(args.db, verify=args.verify)
    k = _constants_from_db(db)
    t = cfg.train
    lcfg = LossConfig(t.loss, t.s1, db.manifest["spec"].get("eps", 1e-6), t.value_kind)
    tcfg = TrainConfig(lr=t.lr, batch=t.batch, epochs=t.epochs, plateau_factor=t.factor,
                       plateau_patience=t.patience, plateau_min_delta=t.min_delta, seed=cfg.seed,
                       threads=1 if cfg.workers == 1 else cfg.workers)
    if cfg.workers == 1:
        torch.use_deterministic_algorithms(True)
    try:
        arch = Arch.parse(t.arch, lcfg.head)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    batches = split_batches(db, k, t.value_kind)
    if len(batches["train"]) == 0 or len(batches["val"]) == 0:
        raise UsageError("database too small: training or validation split is empty")
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    res = train(init_model(arch, cfg.seed), batches["train"], batches["val"], k, tcfg, lcfg, log)
    from .gcnet import evaluate_loss

    test_loss = evaluate_loss(res.model, batches["test"], k, lcfg)
    meta = _meta(cfg, {"loss": t.loss, "value_kind": t.value_kind, "eps": lcfg.eps,
                       "database_manifest_sha256": manifest_hash(args.db),
                       "best_epoch": res.best_epoch, "best_val": res.best_val, "test_loss": test_loss})
    export_model(res.model, args.out, meta)
    curve = args.curve or str(Path(args.out).with_suffix(".curve.csv"))
    with open(curve, "w") as fh:
        fh.write("epoch,train,val,lr\n")
        for row in res.curve:
            fh.write(f"{row['epoch']},{row['train']!r},{row['val']!r},{row['lr']!r}\n")
    print(f"best epoch {res.best_epoch}: val {res.best_val:.6e}, test {test_loss:.6e}")
    print(f"wrote {args.out} sha256={_sha(args.out)}")
    return EXIT_OK


def _constants_from_db(db):
    from .equinoctial import PhysicalConstants

    c = db.manifest.get("nominal", {}).get("constants")
    if c:
        return PhysicalConstants(**c)
    return PhysicalConstants.from_si()


def _controller(args, nom):
    from .evalsim import NetController, ReplayOracle, ZeroThrust
    from .gcnet import import_model

    if getattr(args, "oracle", None) == "replay":
        return ReplayOracle(nom), {}
    if getattr(args, "oracle", None) == "zero":
        return ZeroThrust(), {}
    if not args.model:
        raise UsageError("a --model or --oracle is required")
    model, meta = import_model(_require(args.model, "model file"))
    return NetController(model, meta.get("eps", 1e-6), meta.get("value_kind", "cost_to_go")), meta


def cmd_evaluate(cfg, args) -> int:
    from .backgen import load_database
    from .evalsim import (NetController, control_error_stats, fly, flight_summary,
                          propellant_discrepancy, region_eval, value_error_stats)

    nom = _load_nominal(args.nominal)
    k = nom.constants
    ctrl, meta = _controller(args, nom)
    fc = _flight_cfg(cfg)
    e = cfg.eval
    report = {"meta": _meta(cfg, {"model_sha256": _sha(args.model) if args.model else None}),
              "controller": type(ctrl).__name__}
    fr = fly(ctrl, nom.s0, e.horizon_factor * nom.tf, k, nom.target, fc, e.flight_samples,
             eval_time=nom.tf)
    report["nominal_flight"] = flight_summary(fr)
    if args.discrepancy:
        d = propellant_discrepancy(ctrl, nom, e.discrepancy_dt_years, fc, cfg.seed)
        report["propellant_discrepancy"] = {"kg": d.kg, "flight_kg": d.flight_kg,
                                            "completion_kg": d.completion_kg,
                                            "reference_kg": d.reference_kg,
                                            "completion": d.completion}
    if args.db and isinstance(ctrl, NetController):
        db = load_database(_require(args.db, "database"), verify=args.verify)
        test = db.split("test")
        report["control_errors"] = control_error_stats(ctrl.model, test, k, ctrl.eps, ctrl.value_kind)
        if ctrl.model.arch.head == "value":
            report["value_errors"] = value_error_stats(ctrl.model, test, k, ctrl.value_kind)
    if isinstance(ctrl, NetController) and e.regions:
        report["regions"] = [region_eval(ctrl, nom, x, e.n, cfg.seed, e.horizon_factor * nom.tf, fc,
                                         e.flight_samples) for x in e.regions]
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out} sha256={_sha(args.out)}")
    else:
        print(text)
    return EXIT_OK


def cmd_fly(cfg, args) -> int:
    from .evalsim import export_trajectory, fly, flight_summary

    nom = _load_nominal(args.nominal)
    k = nom.constants
    ctrl, _ = _controller(args, nom)
    duration = (args.duration_years * k.year) if args.duration_years else nom.tf
    zoh = args.zoh_days * k.day if args.zoh_days else None
    fr = fly(ctrl, nom.s0, duration, k, nom.target, _flight_cfg(cfg), cfg.eval.flight_samples,
             eval_time=min(nom.tf, duration), zoh_period=zoh)
    export_trajectory(args.out, fr, k)
    s = flight_summary(fr)
    print(f"propellant {s['propellant_kg']:.4f} kg, rEd(t*f) {s['red_at']:.3e}, "
          f"min rEd {s['min_red']:.3e}")
    print(f"wrote {args.out} sha256={_sha(args.out)}")
    return EXIT_OK


# argument parsing ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltgc", description=__doc__)
    p.add_argument("--version", action="version", version=f"ltgc {__version__}")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    n = sub.add_parser("nominal", help="solve the nominal transfer")
    n.add_argument("--out", default="nominal.json")
    n.add_argument("--epsilon-final", type=float)
    n.add_argument("--launch-date")
    n.add_argument("--restarts", type=int)
    n.add_argument("--method", choices=("hybr", "lm"))

    g = sub.add_parser("generate", help="backward-generate a database")
    g.add_argument("--nominal", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--trajectories", type=int)
    g.add_argument("--samples", type=int)
    g.add_argument("--rho", type=float)
    g.add_argument("--mass-bound", type=float)
    g.add_argument("--spec", choices=("ball", "gaussian"))
    g.add_argument("--terminate-box", action="store_true", default=None)
    g.add_argument("--binary", action="store_true", default=None)
    g.add_argument("--name")
    g.add_argument("--verify", action="store_true")

    t = sub.add_parser("train", help="train a network on a database")
    t.add_argument("--db", required=True)
    t.add_argument("--out", default="model.json")
    t.add_argument("--curve")
    t.add_argument("--loss", choices=("n1", "n2", "n3", "n4"))
    t.add_argument("--arch")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--s1", type=float)
    t.add_argument("--value-kind", choices=("cost_to_go", "propellant_to_go", "final_mass"))
    t.add_argument("--verify", action="store_true")

    e = sub.add_parser("evaluate", help="evaluate a controller")
    e.add_argument("--nominal", required=True)
    e.add_argument("--model")
    e.add_argument("--oracle", choices=("replay", "zero"))
    e.add_argument("--db")
    e.add_argument("--regions", help="comma separated percentages, e.g. 2,4,8,16")
    e.add_argument("--n", type=int)
    e.add_argument("--discrepancy", action="store_true")
    e.add_argument("--dt-years", type=float)
    e.add_argument("--out")
    e.add_argument("--verify", action="store_true")

    f = sub.add_parser("fly", help="fly a controller and export the trajectory")
    f.add_argument("--nominal", required=True)
    f.add_argument("--from", dest="start", choices=("nominal",), default="nominal")
    f.add_argument("--model")
    f.add_argument("--oracle", choices=("replay", "zero"))
    f.add_argument("--duration-years", type=float)
    f.add_argument("--zoh-days", type=float)
    f.add_argument("--out", default="trajectory.csv")
    return p


def _overrides(args) -> dict:
    a = vars(args)
    regions = None
    if a.get("regions") is not None:
        try:
            regions = [float(v) for v in a["regions"].split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"invalid --regions {a['regions']!r}") from exc
    return {
        "seed": a.get("seed"), "workers": a.get("workers"),
        "scenario": {"launch_date": a.get("launch_date")},
        "homotopy": {"epsilon_final": a.get("epsilon_final"), "restarts": a.get("restarts"),
                     "method": a.get("method")},
        "database": {"trajectories": a.get("trajectories"), "samples": a.get("samples"),
                     "rho": a.get("rho"), "mass_bound": a.get("mass_bound"), "spec": a.get("spec"),
                     "terminate_box": a.get("terminate_box"), "binary": a.get("binary"),
                     "name": a.get("name")},
        "train": {"loss": a.get("loss"), "arch": a.get("arch"), "epochs": a.get("epochs"),
                  "batch": a.get("batch"), "lr": a.get("lr"), "s1": a.get("s1"),
                  "value_kind": a.get("value_kind")},
        "eval": {"regions": regions, "n": a.get("n"), "discrepancy_dt_years": a.get("dt_years")},
    }


COMMANDS = {"nominal": cmd_nominal, "generate": cmd_generate, "train": cmd_train,
            "evaluate": cmd_evaluate, "fly": cmd_fly}


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .config import load_config

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        print("config: " + json.dumps(cfg.to_json(), sort_keys=True), file=sys.stderr)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LtgcError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
