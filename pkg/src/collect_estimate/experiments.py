"""Configured experiments: the three worked examples and custom models.

Every ``run_*`` function writes CSV/JSON artifacts into an output directory
and returns a summary dict.  CSV artifacts start with ``# key=value`` lines
recording the configuration hash, seed and library versions.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .asymptotics import threshold_report
from .chain_dynamics import (DistributionSpace, LocalKernel, NodeDynamics, StateSpace,
                             TransitionKernel, build_kernel_exact)
from .costs import WeightedAbsCost, cost_upper_bound, make_cost
from .estimators import LastObservationEstimator, make_estimator
from .learning import VirtualMdpConfig, train_synchronized
from .linear_systems import (GraphSpec, LinearNetworkModel, complete_graph,
                             estimate_only_cost, finite_horizon_schedule, load_adjacency,
                             schedule_grid_csv, star_graph, y_space_value_iteration)
from .model_based import learn_model_based
from .planning import (extract_strategy, first_collect_times,
                       strategy_from_csv, truncation_index, value_iteration)
from .simulation import (ChainWorld, ModelEnv, evaluate_linear_strategy, evaluate_strategy,
                         horizon_for_tail)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


EXAMPLE1 = {
    "p_g": 0.8, "p_d": 0.8, "d_w": 1, "d_s": 99, "s_max": 99, "s_min": -99,
    "q": 0.95, "gamma": 0.9, "fee": 100.0, "k": 70,
    "learn_sweeps": 2000, "learn_lr_scale": 10.0, "probe": [0, 50],
}

EXAMPLE2 = {
    "q": 0.9, "gamma": 0.85, "k": 200,
    "vary_n": {"A": 0.8, "fee": 0.4, "sigma_w": 6.0, "n_values": list(range(2, 21))},
    "vary_sigma": {"A": 0.9, "fee": 1.0, "n": 5,
                   "sigma_values": [round(0.5 * i, 2) for i in range(0, 21)]},
    "sim_paths": 20_000,
}

EXAMPLE3 = {
    "n": 50, "p_AA": 0.95, "p_BB": 0.98, "fee": 0.02, "gamma": 0.8, "q": 0.95, "k": 50,
    "estimator": "map", "kl_floor": None,
}

DEFAULTS = {"example1": EXAMPLE1, "example2": EXAMPLE2, "example3": EXAMPLE3, "custom": {}}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    params: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: str = "out"
    epsilon: float | None = None
    k: int | None = None

    def __post_init__(self):
        if self.experiment not in DEFAULTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"choose from {sorted(DEFAULTS)}")
        self.params = _merge(DEFAULTS[self.experiment], self.params)
        if self.epsilon is not None and self.k is not None:
            raise ConfigError("give either epsilon or k, not both")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.k is not None:
            if self.k < 0:
                raise ConfigError("k must be nonnegative")
            self.params["k"] = int(self.k)

    @classmethod
    def from_dict(cls, raw: dict, **overrides) -> "ExperimentConfig":
        raw = dict(raw)
        kw = {key: raw.pop(key) for key in ("experiment", "seed", "out_dir", "epsilon", "k")
              if key in raw}
        overrides = {key: v for key, v in overrides.items() if v is not None}
        # a truncation given on the command line replaces the file's choice
        if "epsilon" in overrides or "k" in overrides:
            for key in ("epsilon", "k"):
                kw.pop(key, None)
                raw.pop(key, None)
        kw.update(overrides)
        return cls(params=raw, **kw)

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "params": self.params, "seed": self.seed,
                "epsilon": self.epsilon, "k": self.k}

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def header(self) -> list[str]:
        return [f"config_hash={self.config_hash()}", f"seed={self.seed}",
                f"experiment={self.experiment}",
                f"versions=collect_estimate {__version__}; numpy {np.__version__}; "
                f"scipy {scipy.__version__}"]

    def out(self, name: str) -> Path:
        path = Path(self.out_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path / name


def _write_csv(cfg: ExperimentConfig, name: str, text: str) -> str:
    path = cfg.out(name)
    with open(path, "w", newline="") as fh:
        for line in cfg.header():
            fh.write(f"# {line}\n")
        fh.write(text)
    return str(path)


def _write_json(cfg: ExperimentConfig, name: str, payload: dict) -> str:
    path = cfg.out(name)
    body = {"meta": dict(line.split("=", 1) for line in cfg.header()), **payload}
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True, default=_json_default)
    return str(path)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _resolve_k(cfg: ExperimentConfig, gamma: float, c_max: float) -> int:
    if cfg.epsilon is not None:
        return truncation_index(cfg.epsilon, gamma, c_max)
    return int(cfg.params["k"])


def _surface_csv(dspace: DistributionSpace, action: np.ndarray, label) -> str:
    lines = ["x,y,action"]
    for x in range(len(dspace)):
        for y in range(action.shape[1]):
            lines.append(f"{label(x)},{y},{int(action[x, y])}")
    return "\n".join(lines) + "\n"


# -- example 1 --------------------------------------------------------------

def example1_model(p: dict):
    """Battery-level sensor: single node on ``{-(d_s+d_w) .. d_s+d_w}`` with saturation."""
    top = int(p["d_s"]) + int(p["d_w"])
    space = StateSpace(tuple(range(-top, top + 1)))
    s_max, s_min = p["s_max"], p["s_min"]
    p_g, p_d = p["p_g"], p["p_d"]
    noise = {1.0: p_g * (1 - p_d), -1.0: p_d * (1 - p_g), 0.0: p_g * p_d + (1 - p_g) * (1 - p_d)}

    def f(s, m, w):
        if s > s_max:
            return s_max
        if s < s_min:
            return s_min
        return s + w

    dyn = NodeDynamics(space, f, noise)
    dspace = DistributionSpace(1, space)
    kernel = build_kernel_exact(dyn.local_kernel(), dspace=dspace)
    cost = WeightedAbsCost(space.values, p["fee"])
    return dyn, kernel, cost


def run_example1(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    dyn, kernel, cost = example1_model(p)
    ds = kernel.dspace
    gamma, q = p["gamma"], p["q"]
    k = _resolve_k(cfg, gamma, cost.c_max)
    est = LastObservationEstimator()
    table = value_iteration(kernel, cost, est, q, gamma, k)
    labels = ds.space.labels
    zero = labels.index(0.0)
    probe_x = labels.index(float(p["probe"][0]))
    probe_y = min(int(p["probe"][1]), k)
    action = extract_strategy(table)
    first = first_collect_times(action)
    artifacts = {
        "value_table": _write_csv(cfg, "example1_value_table.csv", table.to_csv()),
        "strategy": _write_csv(cfg, "example1_strategy.csv",
                               _surface_csv(ds, action, lambda x: int(labels[x]))),
    }
    mirror = np.array([labels.index(-s) for s in labels])
    summary = {
        "k": k, "c_max": cost.c_max, "anchor_label": labels[table.anchor],
        "V_probe": float(table.value[probe_x, probe_y]), "probe": [labels[probe_x], probe_y],
        "V_0_by_y": {str(y): float(table.value[zero, y]) for y in range(min(k, 60) + 1)},
        "first_collect": {str(int(labels[x])): int(first[x]) for x in range(len(ds))},
        "strategy_symmetric": bool((action == action[mirror]).all()),
        "iterations": table.iterations,
        "state_space": f"{len(labels)} labels from {labels[0]:g} to {labels[-1]:g}; "
                       "saturation maps the extremes back inside [s_min, s_max]",
    }
    sweeps = int(p.get("learn_sweeps", 0))
    if sweeps > 0:
        estimates = est.table(kernel, k)
        env = ModelEnv(kernel, cost, estimates, q, k)
        vcfg = VirtualMdpConfig(k, table.anchor, q, gamma)
        res = train_synchronized(env, len(ds), vcfg, sweeps, seed=cfg.seed,
                                 lr_scale=p.get("learn_lr_scale", 1.0),
                                 probes=[(probe_x, probe_y)],
                                 record_every=max(1, sweeps // 200))
        artifacts["learning_curve"] = _write_csv(cfg, "example1_learning_curve.csv",
                                                 res.curve_csv([(probe_x, probe_y)]))
        summary["Q_probe"] = float(res.table.Q[probe_x, probe_y].min())
        summary["Q_sweeps"] = sweeps
    summary["artifacts"] = artifacts
    _write_json(cfg, "example1_summary.json", summary)
    return summary


# -- example 2 --------------------------------------------------------------

def example2_model(graph: str, n: int, A: float, sigma_w: float, q: float, gamma: float,
                   fee: float) -> LinearNetworkModel:
    """Graph-polynomial model ``alpha(1) = A/(n-1)`` on a complete or star graph."""
    if n < 2:
        raise ConfigError("example 2 needs n >= 2")
    adj = complete_graph(n) if graph == "complete" else star_graph(n)
    g = GraphSpec(adj, (0.0, A / (n - 1)), D=1)
    return LinearNetworkModel.from_graph(g, sigma_w, q=q, gamma=gamma, fee=fee)


def _collect_set(sol) -> set:
    return set(np.flatnonzero(sol.action).tolist())


def run_example2(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    q, gamma, k = p["q"], p["gamma"], int(p["k"])
    rows, summary = [], {"panels": {}}
    for panel, spec in (("vary_n", p["vary_n"]), ("vary_sigma", p["vary_sigma"])):
        if panel == "vary_n":
            cases = [(n, spec["sigma_w"]) for n in spec["n_values"]]
        else:
            cases = [(spec["n"], s) for s in spec["sigma_values"]]
        for graph in ("complete", "star"):
            info = []
            for n, sig in cases:
                model = example2_model(graph, n, spec["A"], sig, q, gamma, spec["fee"])
                sol = y_space_value_iteration(model, k)
                for y in range(k + 1):
                    rows.append({"panel": panel, "graph": graph, "n": n, "sigma_w": sig, "y": y,
                                 "action": int(sol.action[y]), "V0": float(sol.v0[y]),
                                 "V1": float(sol.v1[y])})
                info.append({"n": n, "sigma_w": sig, "mode_A": float(model.A[0, 0]),
                             "threshold": sol.threshold,
                             "estimate_only_cost": estimate_only_cost(model),
                             "V0_at_0": float(sol.value[0])})
            summary["panels"][f"{panel}/{graph}"] = info

    checks = {}
    comp = summary["panels"]["vary_sigma/complete"]
    sets = []
    for entry in comp:
        model = example2_model("complete", entry["n"], p["vary_sigma"]["A"], entry["sigma_w"],
                               q, gamma, p["vary_sigma"]["fee"])
        sets.append(_collect_set(y_space_value_iteration(model, k)))
    checks["collect_region_monotone_in_sigma"] = all(a <= b for a, b in zip(sets, sets[1:]))
    cn = summary["panels"]["vary_n/complete"]
    sn = summary["panels"]["vary_n/star"]
    checks["complete_threshold_exceeds_star_n_ge_3"] = all(
        c["estimate_only_cost"] > s["estimate_only_cost"] for c, s in zip(cn, sn) if c["n"] >= 3)
    checks["zero_noise_never_collects"] = all(e["threshold"] == -1 for key, panel in
                                              summary["panels"].items() for e in panel
                                              if e["sigma_w"] == 0)
    summary["checks"] = checks
    summary["simulation"] = example2_consistency(p, cfg.seed)
    summary["artifacts"] = {
        "grids": _write_csv(cfg, "example2_grids.csv", schedule_grid_csv(rows))}
    _write_json(cfg, "example2_summary.json", summary)
    return summary


def example2_consistency(p: dict, seed: int, cases=None) -> list[dict]:
    """Monte-Carlo cost of the elapsed-time strategy against the DP value at ``y = 0``."""
    q, gamma, k = p["q"], p["gamma"], int(p["k"])
    if cases is None:
        left, right = p["vary_n"], p["vary_sigma"]
        cases = [("complete", 5, left["A"], left["sigma_w"], left["fee"]),
                 ("star", 5, left["A"], left["sigma_w"], left["fee"]),
                 ("complete", right["n"], right["A"], right["sigma_values"][-1], right["fee"])]
    out = []
    for i, (graph, n, A, sig, fee) in enumerate(cases):
        model = example2_model(graph, n, A, sig, q, gamma, fee)
        sol = y_space_value_iteration(model, k)
        H = horizon_for_tail(gamma, float(sol.costs.max()))
        rep = evaluate_linear_strategy(model.A, sol.action, gamma, fee, weights=model.weights,
                                       sigma2=sig, q=q, H=H, paths=p.get("sim_paths", 20_000),
                                       seed=seed + i)
        tail = gamma**H * float(sol.costs.max()) / (1 - gamma)
        out.append({"graph": graph, "n": n, "A": A, "sigma_w": sig, "fee": fee,
                    "V_dp": float(sol.value[0]), "J_mc": rep.mean, "se": rep.se,
                    "tail": tail,
                    "consistent": bool(abs(rep.mean - sol.value[0]) <= 3 * rep.se + tail)})
    return out


# -- example 3 --------------------------------------------------------------

def example3_model(p: dict):
    space = StateSpace((0.0, 1.0))  # 0 = party A, 1 = party B
    local = LocalKernel.decoupled(space, [[p["p_AA"], 1 - p["p_AA"]],
                                          [1 - p["p_BB"], p["p_BB"]]])
    dspace = DistributionSpace(int(p["n"]), space)
    kernel = build_kernel_exact(local, dspace=dspace)
    cost = make_cost("kl_plus_fee", n=int(p["n"]), fee=p["fee"], floor=p.get("kl_floor"))
    estimator = make_estimator(p.get("estimator", "map"), local)
    return local, kernel, cost, estimator


def run_example3(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    local, kernel, cost, estimator = example3_model(p)
    ds = kernel.dspace
    n = ds.n
    k = _resolve_k(cfg, p["gamma"], cost.c_max)
    table = value_iteration(kernel, cost, estimator, p["q"], p["gamma"], k)
    action = extract_strategy(table)
    first = first_collect_times(action)
    votes_a = ds.counts[:, 0]
    lines = ["votes_for_A,first_collect_y"] + [f"{int(votes_a[x])},{int(first[x])}"
                                               for x in range(len(ds))]
    artifacts = {
        "value_table": _write_csv(cfg, "example3_value_table.csv", table.to_csv()),
        "strategy": _write_csv(cfg, "example3_strategy.csv",
                               _surface_csv(ds, action, lambda x: int(votes_a[x]))),
        "thresholds": _write_csv(cfg, "example3_thresholds.csv", "\n".join(lines) + "\n"),
    }
    xa = ds.index_of([45, n - 45]) if n >= 45 else None
    xb = ds.index_of([n - 45, 45]) if n >= 45 else None
    summary = {
        "k": k, "iterations": table.iterations, "cost": cost.metadata(),
        "first_collect_45_for_A": None if xa is None else int(first[xa]),
        "first_collect_45_for_B": None if xb is None else int(first[xb]),
        "first_collect_by_votes_for_A": {str(int(votes_a[x])): int(first[x])
                                         for x in range(len(ds))},
        "artifacts": artifacts,
    }
    _write_json(cfg, "example3_summary.json", summary)
    return summary


# -- custom models ------------------------------------------------------------

@dataclass
class ChainSetup:
    local: LocalKernel
    kernel: TransitionKernel
    cost: object
    estimator: object
    q: float
    gamma: float
    k: int
    anchor: int | None
    x1: int


def build_chain_setup(cfg: ExperimentConfig) -> ChainSetup:
    """Chain model from ``model``/``cost``/``estimator`` entries of a custom config."""
    p = cfg.params
    try:
        model = p["model"]
        labels = tuple(model["labels"])
        n = int(model["n"])
        matrix = np.asarray(model["kernel"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"custom chain config needs model.labels, model.n and model.kernel "
                          f"({exc})") from None
    space = StateSpace(labels)
    dspace = DistributionSpace(n, space, cap=int(model.get("cap", 10**7)))
    local = LocalKernel.decoupled(space, matrix)
    kernel = build_kernel_exact(local, dspace=dspace)
    cspec = dict(p.get("cost", {"name": "quadratic_fee", "fee": 0.1}))
    name = cspec.pop("name", "quadratic_fee")
    if name in ("custom_table", "custom-table"):
        cspec["atoms"] = dspace.probs
    cost = make_cost(name, labels=space.values, n=n, **cspec)
    estimator = make_estimator(p.get("estimator", "map"), local)
    gamma, q = float(p.get("gamma", 0.9)), float(p.get("q", 1.0))
    if not 0 < gamma < 1 or not 0 <= q <= 1:
        raise ConfigError("need 0 < gamma < 1 and 0 <= q <= 1")
    c_max = cost.c_max if cost.c_max is not None else cost_upper_bound(cost, dspace.probs)
    if cfg.epsilon is None and "k" not in p and "epsilon" in p:
        cfg.epsilon = float(p["epsilon"])
    if cfg.epsilon is not None:
        k = truncation_index(cfg.epsilon, gamma, c_max)
    elif "k" in p:
        k = int(p["k"])
    else:
        k = truncation_index(1e-3, gamma, c_max)
    anchor = dspace.index_of(p["anchor"]) if "anchor" in p else None
    x1 = dspace.index_of(model["x1"]) if "x1" in model else 0
    return ChainSetup(local, kernel, cost, estimator, q, gamma, k, anchor, x1)


def _max_iter(cfg: ExperimentConfig) -> int | None:
    val = cfg.params.get("max_iter")
    return None if val is None else int(val)


def run_plan(cfg: ExperimentConfig) -> dict:
    st = build_chain_setup(cfg)
    table = value_iteration(st.kernel, st.cost, st.estimator, st.q, st.gamma, st.k,
                            anchor=st.anchor, max_iter=_max_iter(cfg))
    path = cfg.out("value_table.csv")
    table.to_csv(path, header_lines=cfg.header())
    return {"k": st.k, "rows": len(st.kernel) * (st.k + 1), "value_table": str(path),
            "V_initial": float(table.value[st.x1, 0]), "iterations": table.iterations}


def run_learn(cfg: ExperimentConfig) -> dict:
    st = build_chain_setup(cfg)
    p = cfg.params
    mode = p.get("mode", "model-free")
    if mode == "model-based":
        world = ChainWorld(st.kernel.dspace, local=st.local, q=st.q,
                           paths=int(p.get("paths", 100)), init=st.x1, rng=cfg.seed)
        res = learn_model_based(world, int(p.get("steps", 200)), st.cost, st.estimator,
                                st.gamma, k=st.k)
        path = cfg.out("value_table.csv")
        res.table.to_csv(path, header_lines=cfg.header())
        return {"mode": mode, "T_hat": res.T_hat.tolist(), "q_hat": res.q_hat,
                "samples": res.samples, "value_table": str(path)}
    if mode != "model-free":
        raise ConfigError("learn mode must be 'model-free' or 'model-based'")
    estimates = st.estimator.table(st.kernel, st.k)
    env = ModelEnv(st.kernel, st.cost, estimates, st.q, st.k)
    anchor = st.anchor if st.anchor is not None else st.kernel.dspace.uniform_closest()
    vcfg = VirtualMdpConfig(st.k, anchor, st.q, st.gamma)
    sweeps = int(p.get("sweeps", 1000))
    probe = (st.x1, 0)
    res = train_synchronized(env, len(st.kernel), vcfg, sweeps, seed=cfg.seed,
                             lr_scale=float(p.get("lr_scale", 1.0)), probes=[probe],
                             record_every=max(1, sweeps // 200))
    _write_csv(cfg, "qtable.csv", res.table.to_csv())
    _write_json(cfg, "qtable.json", res.table.meta)
    _write_csv(cfg, "learning_curve.csv", res.curve_csv([probe]))
    return {"mode": mode, "sweeps": sweeps, "drift": res.drift, "converged": res.converged,
            "Q_initial": float(res.table.Q[probe].min())}


def run_simulate(cfg: ExperimentConfig) -> dict:
    st = build_chain_setup(cfg)
    p = cfg.params
    if "strategy_file" in p:
        strategy = strategy_from_csv(p["strategy_file"])
        k_eff = strategy.shape[1] - 1
        V_dp = None
    else:
        table = value_iteration(st.kernel, st.cost, st.estimator, st.q, st.gamma, st.k,
                                anchor=st.anchor, max_iter=_max_iter(cfg))
        strategy, k_eff = extract_strategy(table), st.k
        V_dp = float(table.value[st.x1, 0])
    c_max = st.cost.c_max if st.cost.c_max is not None else \
        cost_upper_bound(st.cost, st.kernel.dspace.probs)
    H = int(p.get("horizon", horizon_for_tail(st.gamma, c_max)))
    estimates = st.estimator.table(st.kernel, max(H, k_eff))
    ds = st.kernel.dspace

    def factory(P, rng):
        return ChainWorld(ds, local=st.local, q=st.q, paths=P, init=st.x1, rng=rng,
                          mode="counts")

    rep = evaluate_strategy(factory, strategy, estimates, st.cost, st.gamma, H=H,
                            paths=int(p.get("paths", 10_000)), seed=cfg.seed, c_max=c_max)
    out = {**rep.as_dict(), "V_dp": V_dp}
    _write_json(cfg, "evaluation.json", out)
    return out


def run_threshold(cfg: ExperimentConfig) -> dict:
    st = build_chain_setup(cfg)
    p = cfg.params
    ds = st.kernel.dspace
    m1 = ds.probs[st.x1]
    fee = float(p.get("collection_cost", getattr(st.cost, "fee", 0.0)))
    rep = threshold_report(st.local, st.cost, ds.n, m1, st.gamma, fee,
                           C=p.get("C"), resolution=int(p.get("grid", 10)),
                           paths=int(p.get("paths", 10_000)), seed=cfg.seed)
    path = cfg.out("threshold.json")
    rep.to_json(path)
    return json.loads(rep.to_json())


def build_linear_model(p: dict) -> LinearNetworkModel:
    common = {"q": float(p.get("q", 1.0)), "gamma": float(p.get("gamma", 0.9)),
              "fee": float(p.get("fee", 1.0)), "C": p.get("C"), "obs_cov": p.get("obs_cov")}
    if "graph" in p:
        g = p["graph"]
        kind = g.get("type", "complete")
        if kind == "complete":
            adj = complete_graph(int(g["n"]))
        elif kind == "star":
            adj = star_graph(int(g["n"]))
        elif kind == "file":
            adj = load_adjacency(g["path"])
        else:
            raise ConfigError(f"unknown graph type {kind!r}")
        n = adj.shape[0]
        alpha = g.get("alpha", [0.0, float(g.get("A", 1.0)) / max(1, n - 1)])
        spec = GraphSpec(adj, tuple(alpha), int(g.get("D", 1)))
        return LinearNetworkModel.from_graph(spec, float(p.get("sigma_w", 1.0)), **common)
    if "A" not in p or "noise_cov" not in p:
        raise ConfigError("linear config needs A and noise_cov, or a graph")
    return LinearNetworkModel(np.asarray(p["A"], dtype=float), np.asarray(p["noise_cov"]),
                              **common)


def run_linear_plan(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    model = build_linear_model(p)
    k = int(p.get("k", 200)) if cfg.epsilon is None else None
    if k is None:
        from .linear_systems import elapsed_cost_table
        # c(k, 1) grows with k; iterate to a fixed point of the bound
        k = 1
        for _ in range(50):
            k_new = truncation_index(cfg.epsilon, model.gamma,
                                     float(elapsed_cost_table(model, k)[-1, 1]) or 1.0)
            if k_new == k:
                break
            k = max(k_new, 1)
    sol = y_space_value_iteration(model, k, tau=int(p.get("delay", 0)))
    rows = [{"y": y, "V0": float(sol.v0[y]), "V1": float(sol.v1[y]),
             "V": float(sol.value[y]), "action": int(sol.action[y])} for y in range(k + 1)]
    out = {"k": k, "threshold": sol.threshold,
           "strategy": _write_csv(cfg, "linear_strategy.csv", schedule_grid_csv(rows))}
    if "H" in p:
        C = model.C if model.C is not None else np.eye(model.dim)
        sched, obj = finite_horizon_schedule(model.A, model.noise_cov, C, model.obs_cov,
                                             int(p["H"]), model.gamma, model.fee)
        out["schedule"] = list(sched)
        out["schedule_objective"] = obj
    _write_json(cfg, "linear_plan.json", out)
    return out


RUNNERS = {"example1": run_example1, "example2": run_example2, "example3": run_example3}


def run_experiment(cfg: ExperimentConfig) -> dict:
    if cfg.experiment == "custom":
        return run_custom(cfg, cfg.params.get("command", "plan"))
    return RUNNERS[cfg.experiment](cfg)


def run_custom(cfg: ExperimentConfig, command: str) -> dict:
    table = {"plan": run_plan, "learn": run_learn, "simulate": run_simulate,
             "threshold": run_threshold, "linear-plan": run_linear_plan}
    if command not in table:
        raise ConfigError(f"unknown command {command!r}")
    return table[command](cfg)
