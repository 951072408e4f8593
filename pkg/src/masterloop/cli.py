"""Command line front end: read a JSON config, run suites, write report.json and terms.csv.

Config keys (all optional except ``group`` and ``N``)::

    group            "SO" | "SU" | "U"
    N                matrix size
    beta             coupling (default 0.5)
    dims, periodic   lattice box (default [1, 1], false)
    loops            loop-word strings, e.g. "0+ 3+ 1- 2-"; "@p0" is the boundary
                     of plaquette 0 and "@p0-" its inverse (default ["@p0"])
    edge             distinguished edge id, or {"vertex": [...], "axis": k}
                     (default: first edge of the first loop)
    sampler          "metropolis" | "langevin"
    sweeps, burn_in, chains, seed, dt, step, n_batches
    suites           subset of verify-mle, verify-ibp, verify-pair,
                     verify-extrinsic, gradient-check, sample-only
    zscore_threshold, stderr_floor
    rotate           also run verify-mle with every loop distinguished
    ibp_measure      "haar" | "yang-mills" (default: both)
    haar_samples     i.i.d. Haar samples for the Haar-measure suites
    eps              exchangeable-pair step sizes (default [0.2, 0.1, 0.05])
    gradient_cases   random cases for gradient-check (default 100)

Exit codes: 0 all suites pass, 1 statistical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from masterloop import equation_verifier as ev
from masterloop import group_geometry as gg
from masterloop import loop_algebra as la
from masterloop.group_geometry import GroupSpec
from masterloop.lattice_complex import CellComplex, build_rect_lattice, describe
from masterloop.yang_mills_sampler import ChainParams, run_chain

log = logging.getLogger("masterloop")

SUITES = ("verify-mle", "verify-ibp", "verify-pair", "verify-extrinsic", "gradient-check", "sample-only")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    group: str
    N: int
    beta: float = 0.5
    dims: list = field(default_factory=lambda: [1, 1])
    periodic: bool = False
    loops: list = field(default_factory=lambda: ["@p0"])
    edge: object = None
    sampler: str = "metropolis"
    sweeps: int = 600
    burn_in: int = 100
    chains: int = 1000
    seed: int = 0
    dt: float = 0.01
    step: float = 0.4
    n_batches: int = 50
    suites: list = field(default_factory=lambda: ["verify-mle"])
    zscore_threshold: float = 4.0
    stderr_floor: float = 1e-12
    rotate: bool = False
    ibp_measure: object = None
    haar_samples: int = 100_000
    eps: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    gradient_cases: int = 100

    @property
    def spec(self) -> GroupSpec:
        return GroupSpec(self.group, self.N)


@dataclass
class Problem:
    config: RunConfig
    spec: GroupSpec
    complex: CellComplex
    loops: list
    edge: int
    params: ChainParams


def load_config(path: str | Path, seed: int | None = None, suites: list | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = set(RunConfig.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "group" not in raw or "N" not in raw:
        raise ConfigError("config needs 'group' and 'N'")
    cfg = RunConfig(**raw)
    if seed is not None:
        cfg.seed = seed
    if suites:
        cfg.suites = suites
    if not cfg.suites:
        raise ConfigError("suite selection is empty")
    bad = [s for s in cfg.suites if s not in SUITES]
    if bad:
        raise ConfigError(f"unknown suite(s) {bad}; choose from {list(SUITES)}")
    return cfg


def _parse_word(text: str, c: CellComplex) -> la.LoopWord:
    text = text.strip()
    if text.startswith("@p"):
        body = text[2:]
        sign = -1 if body.endswith("-") else 1
        body = body.rstrip("+-")
        if not body.isdigit():
            raise ConfigError(f"bad plaquette reference {text!r}")
        p = int(body)
        if p >= c.n_plaquettes:
            raise ConfigError(f"plaquette {p} does not exist (lattice has {c.n_plaquettes})")
        return c.boundary(p, sign)
    return la.parse_loop(text).bind(c)


def build_problem(cfg: RunConfig) -> Problem:
    try:
        spec = cfg.spec
        c = build_rect_lattice(cfg.dims, cfg.periodic)
        loops = [_parse_word(s, c) for s in cfg.loops]
        if not loops:
            raise ConfigError("need at least one loop")
        if cfg.edge is None:
            edge = loops[0][0].edge
        elif isinstance(cfg.edge, dict):
            edge = c.edge_id(cfg.edge["vertex"], cfg.edge["axis"])
        else:
            edge = int(cfg.edge)
            c.check_edge(edge)
        if la.occurrences(loops[0], edge).m == 0:
            raise ConfigError(f"edge {edge} does not occur in the first loop")
        params = ChainParams(beta=float(cfg.beta), spec=spec, sweeps=int(cfg.sweeps), burn_in=int(cfg.burn_in),
                             step=float(cfg.step), dt=float(cfg.dt), seed=int(cfg.seed),
                             n_batches=int(cfg.n_batches), chains=int(cfg.chains), sampler=cfg.sampler)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    return Problem(cfg, spec, c, loops, edge, params)


def _seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1, np.uint64)[0] >> np.uint64(1)) for s in ss.spawn(n)]


# ---------------------------------------------------------------------------
# suites


def gradient_check(spec: GroupSpec, cases: int, seed: int = 0, n_edges: int = 4, max_len: int = 8,
                   max_m: int = 4) -> dict:
    """Closed-form gradients and Laplacians against finite differences at random points."""
    rng = np.random.default_rng(seed)
    worst_grad = worst_lap = 0.0
    for _ in range(cases):
        links = gg.haar_sample(spec, rng, (n_edges,))
        loop = random_loop(rng, n_edges, max_len, max_m)

        def fn(L, loop=loop):
            return la.wilson(loop, L)

        grad = gg.grad_wilson(loop, 0, links, spec)
        fd = gg.fd_directional(fn, links, 0, spec)
        cf = np.array([gg.cinner(grad, gg.TangentVector(links[0], f)) for f in gg.frame(links[0], spec)])
        worst_grad = max(worst_grad, float(np.abs(fd - cf).max() / max(1.0, np.abs(cf).max())))
        lap = gg.laplacian_wilson(loop, 0, links, spec)
        fl = gg.fd_laplacian(fn, links, 0, spec)
        worst_lap = max(worst_lap, float(abs(lap - fl) / max(1.0, abs(fl))))
    ok = worst_grad < 1e-6 and worst_lap < 1e-4
    return {"group": str(spec), "cases": cases, "max_rel_error_gradient": worst_grad,
            "max_rel_error_laplacian": worst_lap, "pass": ok}


def random_loop(rng: np.random.Generator, n_edges: int, max_len: int = 8, max_m: int = 4, e: int = 0):
    """Random word through edge ``e`` with at most ``max_m`` occurrences of it."""
    while True:
        length = int(rng.integers(1, max_len + 1))
        pairs = [(int(rng.integers(n_edges)), int(rng.choice([1, -1]))) for _ in range(length)]
        m = sum(1 for k, _ in pairs if k == e)
        if 1 <= m <= max_m:
            return la.LoopWord.from_pairs(pairs)


def _rows_for(report: ev.TermReport) -> list[dict]:
    return report.rows()


def run_suites(prob: Problem) -> tuple[dict, list[dict], bool]:
    cfg = prob.config
    seeds = dict(zip(SUITES, _seeds(cfg.seed, len(SUITES))))
    results: dict = {}
    rows: list[dict] = []
    ok = True
    for suite in cfg.suites:
        t0 = time.time()
        params = ChainParams(**{**asdict_params(prob.params), "seed": seeds[suite]})
        if suite == "verify-mle":
            orders = [prob.loops]
            if cfg.rotate:
                orders = [prob.loops[k:] + prob.loops[:k] for k in range(len(prob.loops))]
            out = []
            for k, loops in enumerate(orders):
                if la.occurrences(loops[0], prob.edge).m == 0:
                    continue
                rep = ev.verify_mle(loops, prob.edge, prob.complex, params, cfg.zscore_threshold, cfg.stderr_floor)
                out.append(rep.summary())
                if k == 0:
                    rows = rep.rows()
                ok &= rep.passed
            res = out[0] if len(out) == 1 else {"rotations": out, "pass": all(r["pass"] for r in out)}
        elif suite == "verify-ibp":
            measures = [cfg.ibp_measure] if cfg.ibp_measure else ["haar", "yang-mills"]
            res = {}
            for m in measures:
                chk = ev.verify_ibp(prob.loops[:1], prob.loops, prob.edge, m, params, prob.complex,
                                    cfg.haar_samples, cfg.zscore_threshold, cfg.stderr_floor)
                res[m] = chk.summary()
                ok &= chk.passed
        elif suite == "verify-pair":
            rep = ev.verify_exchangeable_pair(prob.loops[:1], prob.loops[:1], cfg.eps, prob.spec, e=prob.edge,
                                              n_edges=prob.complex.n_edges,
                                              samples=min(cfg.haar_samples, 20_000), seed=params.seed,
                                              threshold=cfg.zscore_threshold)
            res = rep.summary()
            ok &= rep.passed
        elif suite == "verify-extrinsic":
            if not prob.spec.is_real:
                raise ConfigError(f"verify-extrinsic needs an SO(N) group, not {prob.spec}")
            measures = [cfg.ibp_measure] if cfg.ibp_measure else ["haar", "yang-mills"]
            res = {}
            for m in measures:
                rep = ev.verify_extrinsic_sd(prob.loops[:1], prob.loops, prob.edge, m, params, prob.complex,
                                             cfg.haar_samples, cfg.zscore_threshold, cfg.stderr_floor)
                res[m] = rep.summary()
                ok &= rep.passed
        elif suite == "gradient-check":
            res = gradient_check(prob.spec, cfg.gradient_cases, params.seed)
            ok &= res["pass"]
        else:
            res = sample_only(prob, params)
        res["seconds"] = round(time.time() - t0, 2)
        results[suite] = res
        log.info("%s: %s", suite, "pass" if res.get("pass", True) else "FAIL")
    return results, rows, ok


def asdict_params(p: ChainParams) -> dict:
    return {k: getattr(p, k) for k in ChainParams.__dataclass_fields__}


def sample_only(prob: Problem, params: ChainParams) -> dict:
    obs = {f"W[{la.format_loop(w)}]": (lambda L, w=w: la.wilson(w, L)) for w in prob.loops}
    for p in range(prob.complex.n_plaquettes):
        obs.setdefault(f"W[@p{p}]", lambda L, p=p: la.wilson(prob.complex.boundary(p), L))
    res = run_chain(prob.complex, params, obs)
    est = {k: {"re": res.estimate(k).mean.real, "im": res.estimate(k).mean.imag, "stderr": res.estimate(k).stderr}
           for k in obs}
    return {"estimates": est, "acceptance": res.acceptance, "step": res.step, **res.diagnostics}


def write_reports(out: Path, summary: dict, rows: list[dict]):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    with open(out / "terms.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["term_kind", "indices", "coefficient", "estimate_re", "estimate_im",
                                           "stderr"])
        w.writeheader()
        w.writerows(rows)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    raise TypeError(type(o))


# ---------------------------------------------------------------------------


def _cmd_run(args, suites_override=None) -> int:
    suites = suites_override or (args.suite.split(",") if args.suite else None)
    cfg = load_config(args.config, args.seed, suites)
    prob = build_problem(cfg)
    results, rows, ok = run_suites(prob)
    summary = {"config": asdict(cfg), "edge": prob.edge, "suites": results, "pass": ok}
    write_reports(Path(args.out), summary, rows)
    print(json.dumps({k: v.get("pass") if isinstance(v, dict) else v for k, v in results.items()}))
    return 0 if ok else 1


def _cmd_describe(args) -> int:
    cfg = load_config(args.config)
    prob = build_problem(cfg)
    print(describe(prob.complex))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="masterloop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "gradient-check", "sample"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="out")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--suite", default=None, help="comma separated suite names")
    p = sub.add_parser("describe")
    p.add_argument("--config", required=True)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "describe":
            return _cmd_describe(args)
        if args.command == "gradient-check":
            return _cmd_run(args, ["gradient-check"])
        if args.command == "sample":
            return _cmd_run(args, ["sample-only"])
        return _cmd_run(args)
    except (ConfigError, la.LoopWordError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
