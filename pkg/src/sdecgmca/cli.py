"""
Command line front-end.

Configuration is an INI file with ``[scene]``, ``[solver]`` and ``[run]``
sections; every SceneConfig / SolverConfig field can be set there, and
``--set section.key=value`` overrides the file. Exit codes: 0 on success,
2 for configuration or input errors, 3 for numerical failures.
"""

import argparse
import configparser
from dataclasses import dataclass, field, fields, replace
from functools import partial
import json
import logging
from pathlib import Path
import sys

import numpy as np

from . import experiments as ex
from . import io
from .errors import ConfigurationError, ContractError, SingularMatrixError
from .metrics import align
from .simulate import SceneConfig, normalize_to_best_channel, simulate
from .solver import SolverConfig, Strategy, gmca_baseline, solve
from .sphere import GridSpec, convolve, lmax_from_size, synthesis

log = logging.getLogger("sdecgmca")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    scene: SceneConfig
    solver: SolverConfig
    seeds: list = field(default_factory=lambda: [1])
    out: str = "out"
    workers: int = None
    timing: bool = True
    strategy: str = "sdecgmca"  # or eig_max
    baseline: str = "none"      # or gmca
    c_eig_max: float = 0.1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.strategy not in ("sdecgmca", "eig_max"):
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.baseline not in ("none", "gmca"):
            raise ConfigurationError(f"unknown baseline {self.baseline!r}")


def parse_seeds(text):
    """``"1-5,8"`` -> [1, 2, 3, 4, 5, 8]."""
    seeds = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
        except ValueError:
            raise ConfigurationError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    return seeds


def _coerce(value, kind, name):
    try:
        if kind is bool:
            v = value.strip().lower()
            if v in _TRUE:
                return True
            if v in _FALSE:
                return False
            raise ValueError
        if kind is Strategy:
            return Strategy(value.strip())
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigurationError(f"{name}: cannot parse {value!r} as {kind.__name__}") from None


def _section_values(cp, section, cls):
    if not cp.has_section(section):
        return {}
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, value in cp.items(section):
        if key not in types:
            raise ConfigurationError(f"unknown key {section}.{key}")
        out[key] = _coerce(value, types[key], f"{section}.{key}")
    return out


def load_config(path=None, overrides=()):
    """Build a RunConfig from an optional INI file plus ``section.key=value``
    overrides."""
    cp = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigurationError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not (sep and dot):
            raise ConfigurationError(f"override {item!r} is not section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, value.strip())
    extra = set(cp.sections()) - {"scene", "solver", "run"}
    if extra:
        raise ConfigurationError(f"unknown config sections: {sorted(extra)}")
    scene = SceneConfig(**_section_values(cp, "scene", SceneConfig))
    solver_kw = {**ex.EXPERIMENT_SOLVER, "n_sources": scene.n_sources,
                 **_section_values(cp, "solver", SolverConfig)}
    solver = SolverConfig(**solver_kw)
    if solver.n_sources != scene.n_sources:
        raise ConfigurationError("solver.n_sources must equal scene.n_sources")
    run = {}
    if cp.has_section("run"):
        known = {"seeds", "out", "workers", "timing", "strategy", "baseline", "c_eig_max"}
        for key, value in cp.items("run"):
            if key not in known:
                raise ConfigurationError(f"unknown key run.{key}")
        sec = cp["run"]
        if "seeds" in sec:
            run["seeds"] = parse_seeds(sec["seeds"])
        if "out" in sec:
            run["out"] = sec["out"]
        if "workers" in sec:
            run["workers"] = _coerce(sec["workers"], int, "run.workers")
        if "timing" in sec:
            run["timing"] = _coerce(sec["timing"], bool, "run.timing")
        for key in ("strategy", "baseline"):
            if key in sec:
                run[key] = sec[key].strip()
        if "c_eig_max" in sec:
            run["c_eig_max"] = _coerce(sec["c_eig_max"], float, "run.c_eig_max")
    return RunConfig(scene, solver, **run)


def _apply_common(cfg, args):
    changes = {}
    if getattr(args, "seeds", None):
        changes["seeds"] = parse_seeds(args.seeds)
    if getattr(args, "out", None):
        changes["out"] = args.out
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "no_timing", False):
        changes["timing"] = False
    return replace(cfg, **changes) if changes else cfg


# --- subcommands --------------------------------------------------------------

def cmd_simulate(cfg):
    out = Path(cfg.out)
    dirs = []
    for seed in cfg.seeds:
        scene = simulate(replace(cfg.scene, seed=seed))
        if not scene.mixing_converged:
            log.warning("seed %d: mixing matrix did not reach the target condition number",
                        seed)
        dirs.append(io.save_scene(scene, out / f"seed_{seed}"))
    for d in dirs:
        print(d)
    return EXIT_OK


def _scene_dirs(paths):
    dirs = []
    for p in map(Path, paths):
        if (p / "scene.json").is_file():
            dirs.append(p)
            continue
        found = sorted(p.glob("seed_*/scene.json"),
                       key=lambda q: int(q.parent.name.split("_", 1)[1]))
        if not found:
            raise ConfigurationError(f"{p} is not a scene directory")
        dirs.extend(q.parent for q in found)
    return dirs


def _run_one(scene_dir, cfg):
    """Solve one stored scene; returns (metrics row, state, scene)."""
    scene = io.load_scene(scene_dir)
    seed = scene.config.seed
    solver = replace(cfg.solver, n_sources=scene.config.n_sources)
    if cfg.baseline == "gmca":
        state = gmca_baseline(ex.degrade_channels(scene.channels, scene.beams), solver,
                              scene.noise_sigma)
        row = ex.metrics_row(seed, "gmca", f"{solver.c_wu_start:.6g}->{solver.c_wu_end:.6g}",
                              solver.c_ref, state, scene, s_worse=state.s)
    elif cfg.strategy == "eig_max":
        c = cfg.c_eig_max
        solver = replace(solver, c_wu_start=c, c_wu_end=c, c_ref=c,
                         warmup_strategy=Strategy.EIG_MAX,
                         refinement_strategy=Strategy.EIG_MAX)
        state = solve(scene.channels, normalize_to_best_channel(scene.beams), solver,
                      scene.noise_sigma)
        row = ex.metrics_row(seed, "eig_max", f"{c:.6g}", c, state, scene)
    else:
        state = solve(scene.channels, normalize_to_best_channel(scene.beams), solver,
                      scene.noise_sigma)
        row = ex.metrics_row(seed, "sdecgmca",
                              f"{solver.c_wu_start:.6g}->{solver.c_wu_end:.6g}",
                              solver.c_ref, state, scene)
    return row, state, scene


def _run_and_save(scene_dir, cfg):
    row, state, scene = _run_one(scene_dir, cfg)
    dest = Path(cfg.out) / f"seed_{scene.config.seed}"
    io.save_checkpoint(state, dest)
    # estimates permuted and sign-flipped to match the stored truth
    al = align(state.a, scene.mixing)
    for n, src in enumerate(al.apply_sources(state.s)):
        io.write_alm(dest / f"aligned_{n}.salm", src)
    if not cfg.timing:
        row["wallclock_s"] = 0.0
    return row


def cmd_run(cfg, scene_paths):
    dirs = _scene_dirs(scene_paths)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    rows = ex.map_seeds(partial(_run_and_save, cfg=cfg), dirs, cfg.workers)
    path = Path(cfg.out) / "metrics.csv"
    io.write_table(path, "metrics", rows)
    print(path)
    return EXIT_OK


def cmd_bench_strategies(cfg):
    rows = ex.bench_strategies(cfg.scene, cfg.seeds, workers=cfg.workers)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(out / "bench.csv", "bench", rows)
    print(out / "bench.csv")
    return EXIT_OK


def cmd_grid(cfg):
    optima = ex.nonblind_optima(cfg.scene, cfg.seeds, workers=cfg.workers)
    c_wu_opt, c_ref_opt = optima[Strategy.EIG_FLOOR], optima[Strategy.SNR]
    cells, runs = ex.run_grid(cfg.scene, cfg.solver, cfg.seeds, c_wu_opt, c_ref_opt,
                              workers=cfg.workers)
    if not cfg.timing:
        for r in runs:
            r["wallclock_s"] = 0.0
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(out / "grid.csv", "grid", cells)
    io.write_table(out / "grid_runs.csv", "metrics", runs)
    (out / "optima.json").write_text(json.dumps(
        {k.value: v for k, v in optima.items()}, indent=2, sort_keys=True) + "\n")
    print(out / "grid.csv")
    return EXIT_OK


def _load_field(path):
    """Pixel values of a map or coefficient file (coefficients are synthesized
    on the default grid)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"SMAP":
        return io.read_map(path), None
    if magic == b"SALM":
        return None, io.read_alm(path)
    raise io.FormatError(f"{path}: neither a map nor a coefficient file")


def render_array(values, log_scale=False):
    """8-bit grayscale image of a map, linearly scaled between its extremes.

    Returns ``(pixels, vmin, vmax)``; ``vmin``/``vmax`` are in the rendered
    units (log10 of the magnitude when ``log_scale``).
    """
    v = np.asarray(values, dtype=float)
    if log_scale:
        mag = np.abs(v)
        positive = mag[mag > 0]
        floor = positive.min() if positive.size else 1.0
        v = np.log10(np.maximum(mag, floor))
    vmin, vmax = float(v.min()), float(v.max())
    if vmax > vmin:
        pix = np.round(255.0 * (v - vmin) / (vmax - vmin))
    else:
        pix = np.full(v.shape, 128.0)
    return pix.astype(np.uint8), vmin, vmax


def cmd_render(map_path, png_path, log_scale=False, minus=None, minus_beam=None):
    from PIL import Image

    values, alm = _load_field(map_path)
    if minus is not None:
        if alm is None:
            raise ConfigurationError("--minus needs a coefficient file as input")
        ref = io.read_alm(minus)
        if minus_beam is not None:
            ref = convolve(ref, io.read_beam(minus_beam))
        alm = ref - alm
    if values is None:
        values = synthesis(alm, GridSpec.default(lmax_from_size(alm.size)))
    pix, vmin, vmax = render_array(values, log_scale)
    Image.fromarray(pix, mode="L").save(png_path)
    side = Path(str(png_path) + ".txt")
    side.write_text(f"min={vmin!r}\nmax={vmax!r}\nlog10={'yes' if log_scale else 'no'}\n")
    print(png_path)
    return EXIT_OK


def cmd_schema_check(paths):
    bad = 0
    for p in paths:
        try:
            kind, rows = io.read_table(p)
            print(f"{p}: ok ({kind}, {len(rows)} rows)")
        except (io.FormatError, OSError) as exc:
            print(f"{p}: FAIL {exc}")
            bad += 1
    return EXIT_CONFIG if bad else EXIT_OK


# --- entry point --------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="sdecgmca", description=__doc__.strip().splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI file with [scene], [solver], [run] sections")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
        sp.add_argument("--seeds", help="seed list, e.g. 1-20 or 1,3,5")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="worker processes (capped by SDEC_THREADS)")
        sp.add_argument("--no-timing", action="store_true",
                        help="write wallclock_s as 0 so outputs are reproducible byte for byte")

    common(sub.add_parser("simulate", help="write simulated scenes, one directory per seed"))
    sp = sub.add_parser("run", help="run the solver on stored scenes")
    common(sp)
    sp.add_argument("scenes", nargs="+", help="scene directories or their parent")
    sp.add_argument("--baseline", choices=("none", "gmca"),
                    help="gmca: degrade channels to the worst resolution, no deconvolution")
    sp.add_argument("--strategy", choices=("sdecgmca", "eig_max"),
                    help="eig_max: regularize with c * lambda_max throughout")
    common(sub.add_parser("bench-strategies", help="non-blind strategy benchmark"))
    common(sub.add_parser("grid", help="(c_wu, c_ref) sensitivity grid"))
    sp = sub.add_parser("render", help="render a map or coefficient file to PNG")
    sp.add_argument("input")
    sp.add_argument("png")
    sp.add_argument("--log", action="store_true", help="render log10 of the magnitude")
    sp.add_argument("--minus", help="coefficient file; render (MINUS - INPUT) instead")
    sp.add_argument("--minus-beam", help="beam CSV applied to MINUS before subtracting")
    sp = sub.add_parser("schema-check", help="validate CSV outputs against their schema")
    sp.add_argument("files", nargs="+")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "render":
            return cmd_render(args.input, args.png, args.log, args.minus, args.minus_beam)
        if args.command == "schema-check":
            return cmd_schema_check(args.files)
        cfg = _apply_common(load_config(args.config, args.set), args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "run":
            changes = {k: v for k, v in (("baseline", args.baseline),
                                         ("strategy", args.strategy)) if v}
            return cmd_run(replace(cfg, **changes), args.scenes)
        if args.command == "bench-strategies":
            return cmd_bench_strategies(cfg)
        if args.command == "grid":
            return cmd_grid(cfg)
    except (ConfigurationError, ContractError, io.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularMatrixError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
