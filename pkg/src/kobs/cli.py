"""Command-line front end: simulate, train, rank, delay, verify, report.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytical, decomposition, delayembed, ocdmd, simulator
from .observables import ANALYTICAL_MONOMIALS


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    system: str = "example1"
    seed: int = 0
    n_ic: int = 30
    backend: str = "network"
    grid: dict = field(default_factory=lambda: dict(ocdmd.DEFAULT_GRID))
    overrides: dict = field(default_factory=dict)
    standardize: bool = True

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.system not in simulator.BUILTINS:
            raise ConfigError(f"unknown system {self.system!r}")
        if not self.grid or any(len(v) == 0 for v in self.grid.values()):
            raise ConfigError("hyperparameter grid must be non-empty")
        if self.n_ic < 3 or self.n_ic % 3:
            raise ConfigError("n_ic must be a positive multiple of 3")


def _parse_overrides(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not NAME=VALUE")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError as exc:
            raise ConfigError(f"override {item!r} has a non-numeric value") from exc
    return out


def _base_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg


def _write(path: Path, text: str):
    if not path.parent.is_dir():
        raise ConfigError(f"output directory {path.parent} does not exist")
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = _base_config(args)
    system = args.system or cfg.system
    seed = cfg.seed if args.seed is None else args.seed
    n_ic = cfg.n_ic if args.n_ic is None else args.n_ic
    overrides = dict(cfg.overrides)
    overrides.update(_parse_overrides(args.set))
    for name in ("a", "b", "gamma"):
        val = getattr(args, name)
        if val is not None:
            if system != "analytical":
                raise ConfigError(f"--{name} only applies to the analytical system")
            overrides[name] = val
    out = Path(args.out)
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            spec = simulator.get_builtin(system, **overrides)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if n_ic < 3 or n_ic % 3:
        raise ConfigError("--n-ic must be a positive multiple of 3")
    ds = simulator.generate_dataset(spec, n_ic, seed, noise_std=args.noise)
    simulator.write_dataset(ds, out / "trajectories.csv", out / "manifest.json")
    kind = "discrete map" if spec.discrete else f"RK4, T_s={spec.sample_time:g}s"
    print(f"{spec.name}: {n_ic} initial conditions x {spec.n_samples} samples, n={spec.n}, p={spec.p} ({kind})")
    print("splits: " + ", ".join(f"{k}={len(v)}" for k, v in ds.splits.items()))
    return 0


def _grid_from_args(args, cfg: RunConfig):
    grid = dict(cfg.grid)
    if args.backend:
        grid["backend"] = [args.backend]
    if args.degree is not None:
        grid = {"backend": ["dictionary"], "degree": [args.degree]}
    if args.analytical_dictionary:
        grid = {"backend": ["dictionary"], "monomials": [[list(m) for m in ANALYTICAL_MONOMIALS]]}
    for key in ("epochs", "nonlinear_dim"):
        val = getattr(args, key)
        if val is not None:
            grid[key] = [val]
    if args.lr is not None:
        grid["lr"] = [args.lr]
    if args.hidden:
        grid["hidden"] = [tuple(int(v) for v in args.hidden.split(","))]
    return grid


def cmd_train(args) -> int:
    cfg = _base_config(args)
    ds = simulator.read_dataset(args.data)
    grid = _grid_from_args(args, cfg)
    seed = cfg.seed if args.seed is None else args.seed
    standardize = cfg.standardize and not args.no_standardize
    result = ocdmd.grid_search(ds, grid, seed=seed, standardize=standardize)
    out = Path(args.out)
    if not out.parent.is_dir():
        raise ConfigError(f"output directory {out.parent} does not exist")
    result.best.save(out)
    board = out.with_name(out.stem + "_leaderboard.csv")
    _write(board, result.leaderboard_csv())
    report = ocdmd.fit_report(result.best, ds)
    _write(out.with_name(out.stem + "_fit.csv"), report.to_csv())
    print(f"trained {len(result.leaderboard)} combination(s); best n_L={result.best.lifted_dim}")
    for split, vals in report.metrics.items():
        print(f"  {split}: " + ", ".join(f"{k}={v:.4f}" for k, v in vals.items()))
    return 0


def cmd_rank(args) -> int:
    model = ocdmd.KoopmanModel.load(args.model)
    ds = simulator.read_dataset(args.data)
    p = model.Wh.shape[0]
    if args.output_index is not None:
        if not 1 <= args.output_index <= p:
            raise ConfigError(f"--output-index must be in 1..{p}")
        outputs = [args.output_index - 1]
    else:
        outputs = list(range(p))
    train = ds.split("train")
    X = np.hstack([tr.states.T for tr in train])
    reports = []
    for o in outputs:
        dec = decomposition.decompose(model, o, threshold=args.threshold, trajectories=train)
        rep = decomposition.sensitivity(dec, X)
        reports.append(rep)
        flag = " (no reduction)" if dec.no_reduction else ""
        order = " > ".join(f"x{i + 1}" for i in rep.ranking)
        print(f"y{o + 1}: n_oL={dec.n_oL}/{model.lifted_dim}{flag}; ranking {order}")
    rank_csv, mat_csv, svg_text = decomposition.rank_report(reports)
    prefix = Path(args.out_prefix)
    _write(prefix.with_name(prefix.name + "_ranking.csv"), rank_csv)
    _write(prefix.with_name(prefix.name + "_matrix.csv"), mat_csv)
    _write(prefix.with_name(prefix.name + ".svg"), svg_text)
    return 0


def _parse_subsets(text: str, p: int):
    subsets = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            raise ConfigError("empty output subset")
        try:
            idx = [int(v) - 1 for v in chunk.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad output list {chunk!r}") from exc
        if not idx or any(not 0 <= i < p for i in idx):
            raise ConfigError(f"outputs must be in 1..{p}: {chunk!r}")
        subsets.append(tuple(idx))
    return subsets


def cmd_delay(args) -> int:
    ds = simulator.read_dataset(args.data)
    if args.outputs is None or not args.outputs.strip():
        raise ConfigError("--outputs must name at least one output")
    subsets = _parse_subsets(args.outputs, ds.spec.p)
    grid = dict(delayembed.DEFAULT_DELAY_GRID)
    grid["n_d"] = [int(v) for v in args.nd.split(",")]
    if args.epochs is not None:
        grid["epochs"] = [args.epochs]
    out = Path(args.out_dir)
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    fits = {}
    for sub in subsets:
        name = delayembed.subset_name(sub)
        best, board = delayembed.fit_delay_koopman(ds, grid, outputs=sub, seed=args.seed)
        v = best.report["val"]
        print(f"{name}: best n_d={best.n_d}, val z r2 1-step={v['r2_z_1step']:.4f} n-step={v['r2_z_nstep']:.4f}")
        best.model.metadata["n_d"] = best.n_d
        best.model.metadata["outputs"] = list(sub)
        best.model.save(out / f"delay_{name}.json")
        fits[name] = delayembed.fit_diffeomorphism(best, ds, epochs=args.diffeo_epochs, seed=args.seed)
        good = [f"x{i + 1}" for i, r in enumerate(fits[name].r2) if r >= 0.8]
        print(f"  reconstructable (r2 >= 0.8): {', '.join(good) or 'none'}")
    csv_text, svg_text = delayembed.reconstruction_report(fits)
    _write(out / "reconstruction.csv", csv_text)
    _write(out / "reconstruction.svg", svg_text)
    return 0


def cmd_verify(args) -> int:
    a, b, gamma = args.a, args.b, args.gamma
    if args.degenerate:
        a, b = 0.8, 0.64
    tol = analytical.Tolerances()
    if args.tol is not None:
        tol = analytical.Tolerances(args.tol, args.tol, args.tol, args.tol)
    rep = analytical.verify_pipeline(tol, a=a, b=b, gamma=gamma, noise_std=args.noise)
    for line in rep.lines():
        print(line)
    print(f"{'OK' if rep.passed else 'FAILED'} in {rep.seconds:.2f}s")
    return 0 if rep.passed else 1


def cmd_report(args) -> int:
    model = ocdmd.KoopmanModel.load(args.model)
    ds = simulator.read_dataset(args.data)
    text = ocdmd.fit_report(model, ds).to_csv()
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kobs", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a built-in system and write a dataset")
    s.add_argument("--system", choices=sorted(simulator.BUILTINS))
    s.add_argument("--n-ic", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default=".")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="NAME=VALUE", help="parameter override")
    s.add_argument("--a", type=float)
    s.add_argument("--b", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--noise", type=float, default=0.0, help="additive state noise std")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="grid-search a Koopman model with output")
    t.add_argument("--data", required=True, help="dataset manifest.json")
    t.add_argument("--out", default="model.json")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--backend", choices=["network", "dictionary"])
    t.add_argument("--degree", type=int, help="polynomial dictionary degree")
    t.add_argument("--analytical-dictionary", action="store_true")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--hidden", help="comma-separated hidden widths")
    t.add_argument("--nonlinear-dim", type=int)
    t.add_argument("--no-standardize", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rank", help="decompose a model and rank states per output")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--output-index", type=int, help="1-based output; default all")
    r.add_argument("--threshold", type=float, default=0.99)
    r.add_argument("--out-prefix", default="sensitivity")
    r.set_defaults(func=cmd_rank)

    d = sub.add_parser("delay", help="delay-embedded Koopman models and state reconstruction")
    d.add_argument("--data", required=True)
    d.add_argument("--outputs", help="1-based outputs; ';' separates subsets, e.g. '1,2,3;1;2;3'")
    d.add_argument("--nd", default="1,2,3,4,5,6")
    d.add_argument("--epochs", type=int)
    d.add_argument("--diffeo-epochs", type=int, default=3000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out-dir", default=".")
    d.set_defaults(func=cmd_delay)

    v = sub.add_parser("verify", help="run the exact analytical oracle")
    v.add_argument("--a", type=float, default=0.9)
    v.add_argument("--b", type=float, default=0.5)
    v.add_argument("--gamma", type=float, default=1.0)
    v.add_argument("--tol", type=float, help="override every tolerance")
    v.add_argument("--noise", type=float, default=0.0)
    v.add_argument("--degenerate", action="store_true", help="use a^2 = b parameters")
    v.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="score a saved model on every split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
