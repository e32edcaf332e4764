"""Experiment orchestration: YAML config, subcommands, CSV/JSON outputs and
reproducibility manifests.

Exit codes: 0 ok, 2 config error, 3 invariant violation.
"""

import argparse
import csv
import json
import os
import sys
from fractions import Fraction

import yaml

from . import __version__
from .capacities import CapacityDistribution, sample_capacities
from .geometry import DomainSpec, discretize_domain, frac, unit_box_domain, unit_square_domain
from .maxflow import cylinder_flow_tau, max_flow
from .measure import DistanceOptions, distance, from_json
from .stream import admissibility_report, dump_stream, load_stream


class ConfigError(Exception):
    pass


def _need(cfg, key, path):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}: missing required field")
    return cfg[key]


def _as_int(v, path, minimum=None):
    if not isinstance(v, int) or isinstance(v, bool):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return v


def _as_frac(v, path):
    try:
        return frac(v)
    except Exception:
        raise ConfigError(f"{path}: expected a rational like '1/2', got {v!r}")


def parse_distribution(cfg, path="dist"):
    kind = _need(cfg, "kind", path)
    try:
        if kind == "constant":
            return CapacityDistribution.constant(_as_frac(_need(cfg, "c", path), f"{path}.c"))
        if kind == "bernoulli":
            return CapacityDistribution.bernoulli(
                _as_frac(_need(cfg, "a", path), f"{path}.a"),
                _as_frac(_need(cfg, "b", path), f"{path}.b"),
                _as_frac(_need(cfg, "p", path), f"{path}.p"),
            )
        if kind == "uniform":
            return CapacityDistribution.uniform(
                _as_frac(_need(cfg, "a", path), f"{path}.a"),
                _as_frac(_need(cfg, "b", path), f"{path}.b"),
            )
        if kind == "discrete":
            return CapacityDistribution.discrete(
                [_as_frac(v, f"{path}.values") for v in _need(cfg, "values", path)],
                [_as_frac(p, f"{path}.probs") for p in _need(cfg, "probs", path)],
            )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}")
    raise ConfigError(f"{path}.kind: unknown distribution kind {kind!r}")


def parse_domain(cfg, path="domain"):
    if isinstance(cfg, str):
        if cfg == "unit_square":
            return unit_square_domain()
        if cfg.startswith("unit_box_d"):
            try:
                return unit_box_domain(int(cfg.removeprefix("unit_box_d")))
            except ValueError:
                pass
        raise ConfigError(f"{path}: unknown named domain {cfg!r}")
    d = _as_int(_need(cfg, "d", path), f"{path}.d", minimum=2)

    def read_box(b, p):
        if len(b) != d:
            raise ConfigError(f"{p}: box must have {d} axis intervals")
        return tuple((_as_frac(lo, p), _as_frac(hi, p)) for lo, hi in b)

    boxes = tuple(read_box(b, f"{path}.boxes[{i}]") for i, b in enumerate(_need(cfg, "boxes", path)))
    source = tuple(read_box(b, f"{path}.source[{i}]") for i, b in enumerate(_need(cfg, "source", path)))
    sink = tuple(read_box(b, f"{path}.sink[{i}]") for i, b in enumerate(_need(cfg, "sink", path)))
    try:
        return DomainSpec(d=d, boxes=boxes, source=source, sink=sink)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}")


def _write_manifest(out_dir, subcommand, cfg, seed):
    payload = {
        "subcommand": subcommand,
        "config": cfg,
        "seed": seed,
        "version": __version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=str)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(c) for c in row])


def _cell(c):
    if isinstance(c, float):
        return repr(c)
    if isinstance(c, Fraction):
        return repr(float(c))
    return c


def _common(cfg, args):
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: expected an integer")
    threads = args.threads
    if threads is None:
        env = os.environ.get("LATFLOW_THREADS")
        threads = int(env) if env else cfg.get("threads", 1)
    out_dir = args.out_dir or cfg.get("out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    mode = cfg.get("mode", "exact")
    if mode not in ("exact", "float"):
        raise ConfigError("mode: must be 'exact' or 'float'")
    return seed, threads, out_dir, mode


def cmd_maxflow(cfg, args):
    seed, threads, out_dir, mode = _common(cfg, args)
    sub = _need(cfg, "maxflow", "config")
    domain = parse_domain(_need(sub, "domain", "maxflow"), "maxflow.domain")
    n = _as_int(_need(sub, "n", "maxflow"), "maxflow.n", minimum=1)
    dist = parse_distribution(_need(sub, "dist", "maxflow"), "maxflow.dist")
    L = discretize_domain(domain, n)
    t = sample_capacities(L, dist, seed, exact=(mode == "exact"))
    res = max_flow(L, t)
    report = admissibility_report(res.stream, t, L)
    cut_cap = res.cut_capacity(t)
    duality = res.value == cut_cap if mode == "exact" else abs(float(res.value - cut_cap)) < 1e-9
    with open(os.path.join(out_dir, "stream.txt"), "w") as fh:
        fh.write(dump_stream(res.stream))
    with open(os.path.join(out_dir, "cut.txt"), "w") as fh:
        for e in res.cutset:
            fh.write(" ".join(str(c) for c in e.x) + f" {e.axis}\n")
    summary = {
        "value": float(res.value),
        "cut_capacity": float(cut_cap),
        "flow_equals_cut": bool(duality),
        "admissible": bool(report.admissible),
        "edges": len(L.edges),
        "vertices": len(L.omega),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "maxflow", cfg, seed)
    if not duality or not report.admissible:
        print("invariant violation: duality or admissibility failed", file=sys.stderr)
        return 3
    return 0


def cmd_tau(cfg, args):
    seed, threads, out_dir, mode = _common(cfg, args)
    sub = _need(cfg, "tau", "config")
    d = _as_int(sub.get("d", 2), "tau.d", minimum=2)
    side = _as_int(_need(sub, "side", "tau"), "tau.side", minimum=1)
    h = _as_int(_need(sub, "h", "tau"), "tau.h", minimum=1)
    axis = _as_int(sub.get("axis", d - 1), "tau.axis")
    dist = parse_distribution(_need(sub, "dist", "tau"), "tau.dist")
    from .capacities import region_edges
    from .estimate import straight_base
    from .geometry import Cylinder, Region

    base = straight_base(d, side, axis)
    v = tuple(1 if j == axis else 0 for j in range(d))
    region = Region(cylinder=Cylinder(base, h, v, two_sided=True))
    t = sample_capacities(region_edges(region, 1, d=d), dist, seed, exact=(mode == "exact"))
    res = cylinder_flow_tau(base, h, t, n=1)
    summary = {"tau": float(res.value), "side": side, "h": h, "d": d}
    with open(os.path.join(out_dir, "tau.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "tau", cfg, seed)
    return 0


def cmd_decompose(cfg, args):
    seed, threads, out_dir, mode = _common(cfg, args)
    sub = _need(cfg, "decompose", "config")
    domain = parse_domain(_need(sub, "domain", "decompose"), "decompose.domain")
    stream_path = _need(sub, "stream", "decompose")
    from .reconnect import decompose, recompose

    with open(stream_path) as fh:
        f = load_stream(fh.read())
    L = discretize_domain(domain, f.n)
    paths = decompose(f, L)
    rebuilt = recompose(paths, f.d, f.n)
    exact = rebuilt.values == f.values
    payload = {
        "paths": [
            {"vertices": [list(v) for v in verts], "weight": _cell(float(w))}
            for verts, w in paths
        ],
        "count": len(paths),
        "reconstruction_exact": bool(exact),
    }
    with open(os.path.join(out_dir, "paths.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "decompose", cfg, seed)
    return 0 if exact else 3


def cmd_mix_demo(cfg, args):
    seed, threads, out_dir, mode = _common(cfg, args)
    sub = _need(cfg, "mix_demo", "config")
    kind = sub.get("kind", "mix2d")
    M = _as_frac(sub.get("M", 1), "mix_demo.M")
    from . import reconnect

    if kind == "mix2d":
        inputs = [_as_frac(v, "mix_demo.inputs") for v in _need(sub, "inputs", "mix_demo")]
        g = reconnect.mix2d(inputs, M)
    elif kind == "mix":
        r = _as_int(_need(sub, "r", "mix_demo"), "mix_demo.r", minimum=1)
        d = _as_int(sub.get("d", 2), "mix_demo.d", minimum=2)
        from itertools import product

        keys = list(product(range(1, r + 1), repeat=d - 1))
        fin = {k: _as_frac(v, "mix_demo.inputs") for k, v in zip(keys, _need(sub, "inputs", "mix_demo"))}
        fout = {k: _as_frac(v, "mix_demo.outputs") for k, v in zip(keys, _need(sub, "outputs", "mix_demo"))}
        g = reconnect.mix(fin, fout, _as_int(_need(sub, "m", "mix_demo"), "mix_demo.m"), M)
    else:
        raise ConfigError(f"mix_demo.kind: unsupported kind {kind!r}")
    with open(os.path.join(out_dir, "mix_stream.txt"), "w") as fh:
        fh.write(dump_stream(g))
    summary = {
        "support": len(g.values),
        "max_magnitude": float(g.max_magnitude()),
        "within_bound": bool(g.max_magnitude() <= M),
    }
    with open(os.path.join(out_dir, "mix.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "mix-demo", cfg, seed)
    return 0 if summary["within_bound"] else 3


def cmd_distance(cfg, args):
    seed, threads, out_dir, mode = _common(cfg, args)
    sub = _need(cfg, "distance", "config")
    with open(_need(sub, "measure_a", "distance")) as fh:
        mu = from_json(fh.read())
    with open(_need(sub, "measure_b", "distance")) as fh:
        nu = from_json(fh.read())
    opts = DistanceOptions(k_max=_as_int(sub.get("k_max", 12), "distance.k_max", minimum=1))
    br = distance(mu, nu, opts)
    payload = {
        "lower": br.lower,
        "upper": br.upper,
        "gap": br.gap,
        "k_max": br.k_max,
        "grid": br.grid,
    }
    with open(os.path.join(out_dir, "distance.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "distance", cfg, seed)
    return 0


def cmd_rate(cfg, args):
    seed, threads, out_dir, mode = _common(cfg, args)
    sub = _need(cfg, "rate", "config")
    d = _as_int(sub.get("d", 2), "rate.d", minimum=2)
    n = _as_int(_need(sub, "n", "rate"), "rate.n", minimum=1)
    s = _as_frac(_need(sub, "s", "rate"), "rate.s")
    v = [_as_frac(c, "rate.v") for c in _need(sub, "v", "rate")]
    if len(v) != d:
        raise ConfigError("rate.v: must have d components")
    eps_list = [float(_as_frac(e, "rate.eps")) for e in _need(sub, "eps", "rate")]
    trials = _as_int(_need(sub, "trials", "rate"), "rate.trials", minimum=1)
    dist = parse_distribution(_need(sub, "dist", "rate"), "rate.dist")
    from .estimate import estimate_rate

    results = estimate_rate(s, v, None, n, trials, dist, seed, d=d,
                            threads=threads, eps_grid=eps_list)
    header = ["s"] + [f"v{j+1}" for j in range(d)] + [
        "eps", "n", "trials", "successes", "phat", "lo", "hi", "Ihat",
    ]
    rows = []
    for r in results:
        ih = r.i_hat if r.i_hat != float("inf") else r.i_hat_bound
        rows.append([float(s)] + [float(c) for c in v] + [
            r.eps, n, r.trials, r.successes, r.p_hat, r.ci_lo, r.ci_hi, ih,
        ])
    _write_csv(os.path.join(out_dir, "rate.csv"), header, rows)
    _write_manifest(out_dir, "rate", cfg, seed)
    return 0


def cmd_flow_constant(cfg, args):
    seed, threads, out_dir, mode = _common(cfg, args)
    sub = _need(cfg, "flow_constant", "config")
    d = _as_int(sub.get("d", 2), "flow_constant.d", minimum=2)
    axis = _as_int(sub.get("axis", d - 1), "flow_constant.axis")
    n_list = [_as_int(n, "flow_constant.n_list", minimum=1) for n in _need(sub, "n_list", "flow_constant")]
    h_mode = sub.get("h", "n")
    trials = _as_int(_need(sub, "trials", "flow_constant"), "flow_constant.trials", minimum=1)
    dist = parse_distribution(_need(sub, "dist", "flow_constant"), "flow_constant.dist")
    if h_mode == "n":
        h_of_n = lambda n: n
    elif isinstance(h_mode, int):
        h_of_n = lambda n: h_mode
    else:
        raise ConfigError("flow_constant.h: expected 'n' or an integer")
    from .estimate import estimate_flow_constant

    points = estimate_flow_constant(dist, axis, n_list, h_of_n, trials, seed,
                                    d=d, exact=(mode == "exact"), threads=threads)
    header = ["n", "h", "trials", "mean", "lo", "hi"]
    rows = [[p.n, p.h, p.trials, p.mean, p.ci_lo, p.ci_hi] for p in points]
    _write_csv(os.path.join(out_dir, "nu.csv"), header, rows)
    _write_manifest(out_dir, "flow-constant", cfg, seed)
    return 0


def cmd_tail(cfg, args):
    seed, threads, out_dir, mode = _common(cfg, args)
    sub = _need(cfg, "tail", "config")
    domain = parse_domain(_need(sub, "domain", "tail"), "tail.domain")
    n = _as_int(_need(sub, "n", "tail"), "tail.n", minimum=1)
    lams = [float(_as_frac(l, "tail.lam")) for l in _need(sub, "lam", "tail")]
    trials = _as_int(_need(sub, "trials", "tail"), "tail.trials", minimum=1)
    dist = parse_distribution(_need(sub, "dist", "tail"), "tail.dist")
    L = discretize_domain(domain, n)
    from .estimate import tail_probability
    import math

    d = L.d
    header = ["lam", "n", "trials", "successes", "phat", "lo", "hi",
              "neglog_per_nd1", "neglog_per_nd"]
    rows = []
    for lam in lams:
        p, (lo, hi), successes = tail_probability(lam, n, trials, dist, seed, L, threads=threads)
        neglog = -math.log(p) if p > 0 else float("inf")
        rows.append([lam, n, trials, successes, p, lo, hi,
                     neglog / n ** (d - 1), neglog / n**d])
    _write_csv(os.path.join(out_dir, "tail.csv"), header, rows)
    _write_manifest(out_dir, "tail", cfg, seed)
    return 0


COMMANDS = {
    "maxflow": cmd_maxflow,
    "tau": cmd_tau,
    "decompose": cmd_decompose,
    "mix-demo": cmd_mix_demo,
    "distance": cmd_distance,
    "rate": cmd_rate,
    "flow-constant": cmd_flow_constant,
    "tail": cmd_tail,
}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="latflow", description=__doc__)
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out-dir", default=None)
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.subcommand](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
