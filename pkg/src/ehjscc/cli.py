"""Command-line front end: config ingestion, dispatch, stable serialization.

One YAML config file describes a system (source, channel, arrivals,
leakage, capacity) plus whatever the requested command needs: policy
constants for ``solve``, a search budget for ``search``, a capacity list
for ``sweep``, a horizon for ``simulate``.  Outputs are CSV/JSON files
written with round-trip float formatting and fixed ordering, so rerunning
the same config gives byte-identical artifacts.

Exit codes: 0 on success, 2 for configuration problems, 3 when the
requested constants (or search) yield no feasible policy, 4 when the
numerics fail outright.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Optional

import numpy as np
import yaml

from .distortion import lower_bound
from .models import (
    ArrivalModel,
    AwgnChannel,
    BernoulliSource,
    ConstantLeakage,
    DecreasingLeakage,
    GaussianSource,
    IncreasingLeakage,
    SystemConfig,
    TabulatedLeakage,
    ZeroLeakage,
)
from .numerics import Grid, SingularityError
from .policy import (
    PolicySolution,
    VariationalConstants,
    solve_adaptive,
    solve_constant_kappa,
)
from .search import Problem, SearchSpec, capacity_sweep, tune_constants
from .simulator import SimConfig, compare_to_analytic, simulate

__all__ = ["main", "load_run_config", "ConfigError", "InfeasibleError"]


class ConfigError(Exception):
    """The config file is missing, malformed, or semantically invalid."""


class InfeasibleError(Exception):
    """The requested constants or search admit no feasible policy."""


# ---------------------------------------------------------------------------
# config ingestion
# ---------------------------------------------------------------------------

_LEAKAGE_KINDS = {
    "zero": ZeroLeakage,
    "increasing": IncreasingLeakage,
    "decreasing": DecreasingLeakage,
    "constant": ConstantLeakage,
}


def _fail(path: str, why: str):
    raise ConfigError(f"{path}: {why}")


def _section(data: dict, key: str, path: str) -> dict:
    got = data.get(key)
    if not isinstance(got, dict):
        _fail(f"{path}{key}", "missing or not a mapping")
    return got


def _number(raw, path: str, *, allow_inf: bool = False) -> float:
    if isinstance(raw, str) and raw.strip().lower() in ("inf", ".inf", "infinity"):
        value = math.inf
    elif isinstance(raw, (int, float)) and not isinstance(raw, bool):
        value = float(raw)
    else:
        _fail(path, f"expected a number, got {raw!r}")
    if math.isinf(value) and not allow_inf:
        _fail(path, "must be finite")
    if math.isnan(value):
        _fail(path, "must not be NaN")
    return value


def _integer(raw, path: str) -> int:
    if not isinstance(raw, int) or isinstance(raw, bool):
        _fail(path, f"expected an integer, got {raw!r}")
    return raw


def _pair(raw, path: str) -> tuple:
    if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
        _fail(path, "expected a [low, high] pair")
    return (_number(raw[0], f"{path}[0]"), _number(raw[1], f"{path}[1]"))


def _build_source(data: dict):
    kind = data.get("kind")
    try:
        if kind == "gaussian":
            return GaussianSource(variance=_number(data.get("variance", 1.0),
                                                   "source.variance"))
        if kind == "bernoulli":
            return BernoulliSource(prob=_number(data.get("prob", 0.5),
                                                "source.prob"))
    except ValueError as exc:
        _fail("source", str(exc))
    _fail("source.kind", f"must be 'gaussian' or 'bernoulli', got {kind!r}")


def _build_leakage(raw):
    if isinstance(raw, str):
        if raw in _LEAKAGE_KINDS:
            return _LEAKAGE_KINDS[raw]()
        if raw.startswith("custom:"):
            return _load_leakage_table(raw[len("custom:"):])
    _fail(
        "leakage",
        f"must be one of {sorted(_LEAKAGE_KINDS)} or custom:<path>, got {raw!r}",
    )


def _load_leakage_table(path: str):
    # two-column charge,rate text table; a header row is skipped if present
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        _fail("leakage", f"cannot read custom table {path!r}: {exc}")
    charges, rates = [], []
    for i, line in enumerate(lines):
        cells = line.split(",")
        if len(cells) != 2:
            _fail("leakage", f"{path}:{i + 1}: expected two comma-separated columns")
        try:
            charges.append(float(cells[0]))
            rates.append(float(cells[1]))
        except ValueError:
            if i == 0:
                continue    # header
            _fail("leakage", f"{path}:{i + 1}: non-numeric entry")
    try:
        return TabulatedLeakage(charges=tuple(charges), rates=tuple(rates))
    except ValueError as exc:
        _fail("leakage", f"{path}: {exc}")


class RunConfig:
    """Validated contents of one config file.

    Holds the physical system (source, channel, arrivals, leakage,
    capacity, startup power) plus the optional per-command sections,
    already coerced to library types.
    """

    def __init__(self, data: dict):
        if not isinstance(data, dict):
            raise ConfigError("top level: expected a mapping")
        self.src = _build_source(_section(data, "source", ""))
        ch_sec = _section(data, "channel", "")
        arr_sec = _section(data, "arrivals", "")
        try:
            self.ch = AwgnChannel(noise=_number(ch_sec.get("noise", 1.0),
                                                "channel.noise"))
            self.arrivals = ArrivalModel(
                delta=_number(arr_sec.get("delta", 1.0), "arrivals.delta"),
                lam=_number(arr_sec.get("lam", 1.0), "arrivals.lam"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.leak = _build_leakage(data.get("leakage", "zero"))
        self.capacity = _number(data.get("capacity"), "capacity", allow_inf=True)
        if self.capacity <= 0.0:
            _fail("capacity", "must be positive")
        self.p0plus = _number(data.get("p0plus", 1e-3), "p0plus")
        if self.p0plus <= 0.0:
            _fail("p0plus", "must be positive")

        self.policy_kind = data.get("policy", "adaptive")
        if self.policy_kind not in ("adaptive", "constant-kappa"):
            _fail("policy", f"must be 'adaptive' or 'constant-kappa', "
                            f"got {self.policy_kind!r}")
        self.refine_c2: Optional[bool] = data.get("refine_c2")
        if self.refine_c2 is not None and not isinstance(self.refine_c2, bool):
            _fail("refine_c2", "must be a boolean")

        self.constants = None
        self.constant_c = None
        if "constants" in data:
            sec = _section(data, "constants", "")
            if self.policy_kind == "constant-kappa":
                self.constant_c = _number(sec.get("c"), "constants.c")
            else:
                try:
                    self.constants = VariationalConstants(
                        beta=_number(sec.get("beta"), "constants.beta"),
                        c1=_number(sec.get("c1"), "constants.c1"),
                        c2=_number(sec.get("c2"), "constants.c2"),
                    )
                except ValueError as exc:
                    raise ConfigError(f"constants: {exc}") from exc

        self.search_spec = self._parse_search(data.get("search"))
        self.sweep_capacities, self.kappa_budget = self._parse_sweep(
            data.get("sweep")
        )
        self._parse_simulate(data.get("simulate"))
        out = data.get("out")
        if out is not None and not isinstance(out, str):
            _fail("out", "must be a directory path string")
        self.out = out

    def _parse_search(self, sec) -> Optional[SearchSpec]:
        if sec is None:
            return None
        if not isinstance(sec, dict):
            _fail("search", "expected a mapping")
        kwargs = {}
        if "budget" in sec:
            kwargs["budget"] = _integer(sec["budget"], "search.budget")
        if "seed" in sec:
            kwargs["seed"] = _integer(sec["seed"], "search.seed")
        if "margin" in sec:
            kwargs["margin"] = _number(sec["margin"], "search.margin")
        for name in ("beta_bounds", "c1_bounds", "c2_bounds"):
            if name in sec:
                kwargs[name] = _pair(sec[name], f"search.{name}")
        try:
            return SearchSpec(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"search: {exc}") from exc

    def _parse_sweep(self, sec):
        if sec is None:
            return None, 240
        if not isinstance(sec, dict):
            _fail("sweep", "expected a mapping")
        raw = sec.get("capacities")
        if not isinstance(raw, (list, tuple)) or not raw:
            _fail("sweep.capacities", "expected a non-empty list")
        caps = [_number(v, f"sweep.capacities[{i}]") for i, v in enumerate(raw)]
        budget = 240
        if "kappa_budget" in sec:
            budget = _integer(sec["kappa_budget"], "sweep.kappa_budget")
        return caps, budget

    def _parse_simulate(self, sec):
        self.horizon = None
        self.sim_seed = 0
        self.sim_z0 = 0.0
        self.policy_csv = None
        if sec is None:
            return
        if not isinstance(sec, dict):
            _fail("simulate", "expected a mapping")
        self.horizon = _number(sec.get("horizon"), "simulate.horizon")
        if "seed" in sec:
            self.sim_seed = _integer(sec["seed"], "simulate.seed")
        if "z0" in sec:
            self.sim_z0 = _number(sec["z0"], "simulate.z0")
        if "policy_csv" in sec:
            if not isinstance(sec["policy_csv"], str):
                _fail("simulate.policy_csv", "must be a file path string")
            self.policy_csv = sec["policy_csv"]


def load_run_config(path: str) -> RunConfig:
    """Parse and validate a YAML config file.

    Raises :class:`ConfigError` with a ``field: problem`` message for
    anything from an unreadable file to an out-of-range parameter.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path!r}: {exc}") from exc
    return RunConfig(data)


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    # shortest decimal that round-trips; repr() is locale-independent
    return repr(float(x))


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _solution_sidecar(sol: PolicySolution) -> dict:
    return {
        "pi0": sol.pi0,
        "kappa0": sol.kappa0,
        "d_beta": sol.d_beta,
        "d_avg": sol.d_avg,
        "residual50": sol.optimality_residual,
        "feasible": sol.feasible,
    }


def _solution_csv(sol: PolicySolution) -> str:
    lines = ["z,p,kappa,f"]
    for z, p, k, f in zip(sol.grid.nodes, sol.p, sol.kappa, sol.f):
        lines.append(f"{_fmt(z)},{_fmt(p)},{_fmt(k)},{_fmt(f)}")
    return "\n".join(lines) + "\n"


def _out_dir(cfg: RunConfig, args) -> str:
    out = args.out or cfg.out or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _solve_from_config(cfg: RunConfig, *, default_refine: bool) -> PolicySolution:
    refine = cfg.refine_c2 if cfg.refine_c2 is not None else default_refine
    if cfg.policy_kind == "constant-kappa":
        if cfg.constant_c is None:
            raise ConfigError("constants.c: required for a constant-kappa solve")
        return solve_constant_kappa(
            cfg.src, cfg.ch, cfg.arrivals, cfg.leak,
            cfg.capacity, cfg.p0plus, cfg.constant_c,
        )
    if cfg.constants is None:
        raise ConfigError("constants: required for an adaptive solve")
    return solve_adaptive(
        cfg.src, cfg.ch, cfg.arrivals, cfg.leak,
        cfg.capacity, cfg.p0plus, cfg.constants,
        refine_c2=refine,
    )


def cmd_bound(cfg: RunConfig, args) -> int:
    value = lower_bound(cfg.src, cfg.ch, cfg.arrivals, cfg.capacity)
    print(f"{value:.6f}")
    if args.out or cfg.out:
        out = _out_dir(cfg, args)
        if args.format == "json":
            _write_text(
                os.path.join(out, "bound.json"),
                json.dumps({"L": cfg.capacity, "d_lb": value}) + "\n",
            )
        else:
            _write_text(
                os.path.join(out, "bound.csv"),
                f"L,d_lb\n{_fmt(cfg.capacity)},{_fmt(value)}\n",
            )
    return 0


def cmd_solve(cfg: RunConfig, args) -> int:
    if math.isinf(cfg.capacity):
        raise ConfigError("capacity: solve needs a finite battery")
    sol = _solve_from_config(cfg, default_refine=False)
    if not sol.feasible:
        raise InfeasibleError(sol.message or "constants give no feasible policy")
    sidecar = _solution_sidecar(sol)
    out = _out_dir(cfg, args)
    if args.format == "json":
        payload = dict(sidecar)
        payload["z"] = [float(v) for v in sol.grid.nodes]
        payload["p"] = [float(v) for v in sol.p]
        payload["kappa"] = [float(v) for v in sol.kappa]
        payload["f"] = [float(v) for v in sol.f]
        _write_text(os.path.join(out, "solution.json"),
                    json.dumps(payload) + "\n")
    else:
        _write_text(os.path.join(out, "solution.csv"), _solution_csv(sol))
        _write_text(os.path.join(out, "solution.json"),
                    json.dumps(sidecar) + "\n")
    print(json.dumps(sidecar))
    return 0


def cmd_search(cfg: RunConfig, args) -> int:
    if math.isinf(cfg.capacity):
        raise ConfigError("capacity: search needs a finite battery")
    problem = Problem(
        src=cfg.src, ch=cfg.ch, arrivals=cfg.arrivals, leak=cfg.leak,
        capacity=cfg.capacity, p0plus=cfg.p0plus,
    )
    spec = cfg.search_spec or SearchSpec()
    if args.seed is not None:
        spec = SearchSpec(
            beta_bounds=spec.beta_bounds, c1_bounds=spec.c1_bounds,
            c2_bounds=spec.c2_bounds, budget=spec.budget,
            seed=args.seed, margin=spec.margin,
        )
    result = tune_constants(problem, spec)
    if not result.feasible:
        raise InfeasibleError(
            f"search exhausted {result.evaluations} evaluations "
            f"({result.infeasible_evals} infeasible) without a feasible point"
        )
    payload = {
        "beta": result.constants.beta,
        "c1": result.constants.c1,
        "c2": result.constants.c2,
        "d_avg": result.d_avg,
        "evaluations": result.evaluations,
        "infeasible_evals": result.infeasible_evals,
        "feasible": True,
    }
    out = _out_dir(cfg, args)
    _write_text(os.path.join(out, "search.json"), json.dumps(payload) + "\n")
    print(json.dumps(payload))
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    if cfg.sweep_capacities is None:
        raise ConfigError("sweep.capacities: required for the sweep command")
    shell_capacity = (
        cfg.capacity if math.isfinite(cfg.capacity) else cfg.sweep_capacities[0]
    )
    problem = Problem(
        src=cfg.src, ch=cfg.ch, arrivals=cfg.arrivals, leak=cfg.leak,
        capacity=shell_capacity, p0plus=cfg.p0plus,
    )
    spec = cfg.search_spec or SearchSpec()
    if args.seed is not None:
        spec = SearchSpec(
            beta_bounds=spec.beta_bounds, c1_bounds=spec.c1_bounds,
            c2_bounds=spec.c2_bounds, budget=spec.budget,
            seed=args.seed, margin=spec.margin,
        )
    result = capacity_sweep(
        problem, cfg.sweep_capacities, spec, kappa_budget=cfg.kappa_budget
    )
    header = "L,d_avg_adaptive,d_avg_constk,d_lb"
    lines = [header]
    print(header)
    for cap, d_ad, d_ck, d_lb in result.rows():
        line = f"{_fmt(cap)},{_fmt(d_ad)},{_fmt(d_ck)},{_fmt(d_lb)}"
        lines.append(line)
        print(line)
    out = _out_dir(cfg, args)
    if args.format == "json":
        rows = [
            {"L": cap, "d_avg_adaptive": d_ad, "d_avg_constk": d_ck, "d_lb": d_lb}
            for cap, d_ad, d_ck, d_lb in result.rows()
        ]
        _write_text(os.path.join(out, "sweep.json"), json.dumps(rows) + "\n")
    else:
        _write_text(os.path.join(out, "sweep.csv"), "\n".join(lines) + "\n")
    return 0


def _load_policy_csv(cfg: RunConfig, path: str) -> PolicySolution:
    # re-ingest a solve artifact: CSV columns z,p,kappa,f plus the JSON
    # sidecar written next to it
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"simulate.policy_csv: cannot read {path!r}: {exc}")
    if data.shape[1] != 4 or data.shape[0] < 2:
        raise ConfigError(
            f"simulate.policy_csv: {path!r} must have z,p,kappa,f rows"
        )
    sidecar_path = os.path.splitext(path)[0] + ".json"
    try:
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(
            f"simulate.policy_csv: cannot read sidecar {sidecar_path!r}: {exc}"
        )
    if not sidecar.get("feasible", False):
        raise InfeasibleError(f"policy in {path!r} is marked infeasible")
    d_beta = sidecar.get("d_beta")
    return PolicySolution(
        kind="adaptive" if d_beta is not None else "constant-kappa",
        grid=Grid.from_nodes(data[:, 0]),
        p=data[:, 1],
        kappa=data[:, 2],
        f=data[:, 3],
        pi0=float(sidecar["pi0"]),
        kappa0=float(sidecar["kappa0"]),
        d_beta=None if d_beta is None else float(d_beta),
        d_avg=float(sidecar["d_avg"]),
        optimality_residual=sidecar.get("residual50"),
        feasible=True,
        p0plus=cfg.p0plus,
    )


def cmd_simulate(cfg: RunConfig, args) -> int:
    if cfg.horizon is None:
        raise ConfigError("simulate.horizon: required for the simulate command")
    if math.isinf(cfg.capacity):
        raise ConfigError("capacity: simulate needs a finite battery")
    if cfg.policy_csv is not None:
        policy = _load_policy_csv(cfg, cfg.policy_csv)
    else:
        # a simulable policy must close the mismatch normalization, so the
        # endpoint polish is on unless the config explicitly disables it
        policy = _solve_from_config(cfg, default_refine=True)
        if not policy.feasible:
            raise InfeasibleError(
                policy.message or "constants give no feasible policy"
            )
    seed = args.seed if args.seed is not None else cfg.sim_seed
    system = SystemConfig(
        arrivals=cfg.arrivals, leakage=cfg.leak,
        capacity=cfg.capacity, p0plus=cfg.p0plus,
    )
    try:
        sim_config = SimConfig(
            policy=policy, system=system, horizon=cfg.horizon,
            seed=seed, z0=cfg.sim_z0, src=cfg.src, ch=cfg.ch,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    stats = simulate(sim_config)
    report = compare_to_analytic(stats, policy)
    report_payload = {
        "ks_distance": report.ks_distance,
        "pi0_gap": report.pi0_gap,
        "inv_kappa_gap": report.inv_kappa_gap,
        "d_dagger_gap": report.d_dagger_gap,
    }
    payload = {
        "capacity": stats.capacity,
        "horizon": stats.horizon,
        "seed": seed,
        "pi0_hat": stats.pi0_hat,
        "mean_power": stats.mean_power,
        "mean_inv_kappa": stats.mean_inv_kappa,
        "mean_d_dagger": stats.mean_d_dagger,
        "overflow_energy": stats.overflow_energy,
        "event_count": stats.event_count,
        "energy_residual": stats.energy_residual,
        "report": report_payload,
        "bin_edges": [float(v) for v in stats.bin_edges],
        "empirical_cdf": [float(v) for v in stats.empirical_cdf],
    }
    out = _out_dir(cfg, args)
    _write_text(os.path.join(out, "simulation.json"), json.dumps(payload) + "\n")
    if args.format == "csv":
        lines = ["z,cdf"]
        for edge, val in zip(stats.bin_edges, stats.empirical_cdf):
            lines.append(f"{_fmt(edge)},{_fmt(val)}")
        _write_text(os.path.join(out, "cdf.csv"), "\n".join(lines) + "\n")
    print(json.dumps(report_payload))
    return 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_COMMANDS = {
    "bound": cmd_bound,
    "solve": cmd_solve,
    "search": cmd_search,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML config file")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config's RNG seed")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="output file format")
    parser = argparse.ArgumentParser(
        prog="ehjscc",
        description="Charge-adaptive power/bandwidth policies for an "
                    "energy-harvesting transmitter",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("bound", parents=[common],
                   help="distortion lower bound for the configured battery")
    sub.add_parser("solve", parents=[common],
                   help="solve the policy for given constants")
    sub.add_parser("search", parents=[common],
                   help="tune the constants under an evaluation budget")
    sub.add_parser("sweep", parents=[common],
                   help="adaptive vs constant-mismatch distortion over capacities")
    sub.add_parser("simulate", parents=[common],
                   help="Monte-Carlo run of a solved policy")
    return parser


def main(argv=None) -> int:
    """Entry point: parse arguments, run one command, map errors to codes."""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed: must be non-negative")
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except (SingularityError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
