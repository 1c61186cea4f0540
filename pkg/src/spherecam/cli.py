"""Batch front door: mask design, simulation, reconstruction, sweeps, eval.

Runs are driven by flat ``key = value`` config files (``include = other.cfg``
pulls in defaults, later keys win).  Every output embeds the sha256 hash of
the effective config plus the seed, and nothing embeds a timestamp, so a rerun
with the same config is byte-identical.

Exit codes: 0 success, 2 config errors, 3 validation errors, 4 I/O errors,
1 anything else.  Failures print ``error:<category>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import forwardsim as fs
from . import maskdesign as md
from . import recon
from . import sceneio
from . import sphharm
from .operators import SpectralConvOperator

__all__ = ["main", "load_config", "config_hash", "ConfigError"]

DEFAULT_SWEEPS = {
    "brightness": [10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
    "resolution": [36, 72, 180, 360],
    "subsample": [10, 25, 50, 100],
}


class ConfigError(Exception):
    """A config file is malformed, incomplete, or holds unknown keys."""


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

def load_config(path, _seen=None) -> dict:
    """Parse a flat key=value file; ``include`` merges another file first."""
    path = Path(path).resolve()
    seen = set() if _seen is None else _seen
    if path in seen:
        raise ConfigError(f"config include cycle through {path}")
    seen.add(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    cfg: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key == "include":
            cfg.update(load_config(path.parent / value, seen))
        else:
            cfg[key] = value
    return cfg


def config_hash(cfg: dict, command: str) -> str:
    """Short hash of the effective (post-include, post-override) config."""
    canon = command + "\n" + "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


_REQUIRED = object()


def _get(cfg, key, default=_REQUIRED, cast=str):
    if key not in cfg:
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return default
    try:
        return cast(cfg[key])
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} has unparseable value {cfg[key]!r}") from None


def _get_bool(cfg, key, default):
    raw = cfg.get(key)
    if raw is None:
        return default
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r} is not a boolean: {raw!r}")


def _check_keys(cfg, command, allowed):
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")


def _write_lines(path: Path, lines) -> None:
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Shared inputs
# ---------------------------------------------------------------------------

def bumps_scene(L: int, seed: int, n_bumps: int = 10, kappa: float = 60.0) -> sphharm.SphericalSignal:
    """Seeded positive test scene: von Mises-Fisher bumps projected to degree < L."""
    grid = sphharm.make_grid(L)
    rng = np.random.default_rng(seed)
    d = grid.directions()
    raw = np.zeros(grid.n_samples)
    for _ in range(n_bumps):
        center = rng.standard_normal(3)
        center /= np.linalg.norm(center)
        amp = rng.uniform(0.3, 1.0)
        conc = rng.uniform(0.5, 1.0) * kappa
        raw += amp * np.exp(conc * (d @ center - 1.0))
    raw = 0.05 + 0.9 * raw.reshape(grid.shape) / raw.max()
    coeffs = sphharm.sht_forward(sphharm.SphericalSignal(grid, raw))
    return sphharm.sht_inverse(coeffs)


def _load_scene(spec: str, L: int, cfg: dict) -> sphharm.SphericalSignal:
    if spec.startswith("builtin:"):
        name = spec[len("builtin:"):]
        if name != "bumps":
            raise ConfigError(f"unknown builtin scene {name!r}")
        return bumps_scene(L, _get(cfg, "scene_seed", 123, int))
    raster = sceneio.load_raster(spec)
    channel = _get(cfg, "channel", 0, int)
    if not 0 <= channel < raster.channels:
        raise ConfigError(f"channel {channel} out of range for {raster.channels}-channel scene")
    return sceneio.raster_to_grid(raster, L)[channel]


def _response_label(spec: str) -> str:
    if spec.startswith("open:"):
        return "open" + spec[len("open:"):] + "deg"
    if spec.startswith("mask:"):
        spec = spec[len("mask:"):]
    path = Path(spec)
    # design outputs are all named response.csv; the run directory is the
    # part that actually identifies the mask
    if path.stem in ("response", "mask") and path.parent.name:
        return path.parent.name
    return path.stem


def _load_response(spec: str, L: int) -> md.AngularResponse:
    if spec.startswith("open:"):
        try:
            deg = float(spec[len("open:"):])
        except ValueError:
            raise ConfigError(f"malformed response spec {spec!r}") from None
        return md.open_aperture_response(deg, L)
    if spec.startswith("mask:"):
        return md.mask_to_response(md.load_mask(spec[len("mask:"):]), L)
    return md.load_response(spec, L)


def _sensor(cfg: dict) -> fs.SensorSpec:
    return fs.SensorSpec(
        full_well=_get(cfg, "full_well", 32761.0, float),
        dynamic_range_db=_get(cfg, "dynamic_range_db", 73.07, float),
    )


def _recon_config(cfg: dict) -> recon.ReconConfig:
    return recon.ReconConfig(
        lambda_tv=_get(cfg, "lambda_tv", 1e-4, float),
        max_iters=_get(cfg, "max_iters", 150, int),
        tv_inner_iters=_get(cfg, "tv_inner_iters", 25, int),
        rel_tol=_get(cfg, "rel_tol", 1e-8, float),
        nonneg=_get_bool(cfg, "nonneg", True),
    )


_RECON_KEYS = ("lambda_tv", "max_iters", "tv_inner_iters", "rel_tol", "nonneg")
_SENSOR_KEYS = ("full_well", "dynamic_range_db")


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_design(cfg: dict, out_dir: Path, chash: str) -> None:
    _check_keys(cfg, "design", ("mode", "n_bits", "half_aperture_deg", "L", "seed",
                                "restarts", "iters"))
    mode = _get(cfg, "mode")
    n_bits = _get(cfg, "n_bits", cast=int)
    alpha = _get(cfg, "half_aperture_deg", cast=float)
    L = _get(cfg, "L", cast=int)
    seed = _get(cfg, "seed", 0, int)
    if mode == "exhaustive":
        mask = md.search_exhaustive(n_bits, alpha, L)
    elif mode == "stochastic":
        mask = md.search_stochastic(n_bits, alpha, L, seed=seed,
                                    restarts=_get(cfg, "restarts", 16, int),
                                    iters=_get(cfg, "iters", 150, int))
    else:
        raise ConfigError(f"mode must be 'exhaustive' or 'stochastic', got {mode!r}")
    response = md.mask_to_response(mask, L)
    open_resp = md.open_aperture_response(alpha, L)
    md.save_mask(mask, out_dir / "mask.txt")
    md.save_response(response, out_dir / "response.csv")
    throughput = md.light_throughput(response)
    report = [
        f"config_hash={chash}",
        f"seed={seed}",
        f"mode={mode}",
        f"n_bits={n_bits}",
        f"half_aperture_deg={_fmt(alpha)}",
        f"L={L}",
        "bits=" + "".join(str(b) for b in mask.bits),
        f"code_int={mask.code_int}",
        f"robustness={_fmt(md.robustness(response))}",
        f"throughput_sr={_fmt(throughput)}",
        f"throughput_percent_of_open={_fmt(100.0 * throughput / md.light_throughput(open_resp))}",
    ]
    report += [f"ghat_{l}={_fmt(g)}" for l, g in enumerate(response.scaling_coeffs)]
    _write_lines(out_dir / "design_report.txt", report)


def _simulate_from_config(cfg: dict, seed: int):
    """Shared scene->measurement path for cmd_simulate (returns set + scene)."""
    L = _get(cfg, "L", cast=int)
    scene = _load_scene(_get(cfg, "scene"), L, cfg)
    response = _load_response(_get(cfg, "response"), L)
    deformation = cfg.get("deformation")
    if deformation is not None:
        params = {}
        for cfg_key, param in (("deform_ratio", "ratio"), ("deform_angle_deg", "angle_deg"),
                               ("deform_bend", "bend")):
            if cfg_key in cfg:
                params[param] = _get(cfg, cfg_key, cast=float)
        layout = fs.deform_layout(scene.grid, deformation, params)
    else:
        layout = fs.full_grid_layout(scene.grid)
    m = fs.simulate(scene, response, layout, _sensor(cfg),
                    _get(cfg, "brightness", cast=float), seed=seed,
                    noiseless=_get_bool(cfg, "noiseless", False))
    fraction = _get(cfg, "subsample", None, float)
    if fraction is not None:
        if deformation is not None:
            raise ConfigError("subsample applies to grid layouts, not deformations")
        m = fs.subsample(m, fraction, seed=_get(cfg, "subsample_seed", seed, int))
    return m, scene


def _cmd_simulate(cfg: dict, out_dir: Path, chash: str) -> None:
    _check_keys(cfg, "simulate", ("scene", "scene_seed", "channel", "response", "L",
                                  "brightness", "seed", "noiseless", "subsample",
                                  "subsample_seed", "deformation", "deform_ratio",
                                  "deform_angle_deg", "deform_bend") + _SENSOR_KEYS)
    seed = _get(cfg, "seed", 0, int)
    m, _ = _simulate_from_config(cfg, seed)
    fs.save_measurements(m, out_dir / "measurements.csv", extra_header={"config_hash": chash})


def _cmd_reconstruct(cfg: dict, out_dir: Path, chash: str) -> None:
    _check_keys(cfg, "reconstruct", ("measurements", "response", "L", "seed", "truth",
                                     "scene_seed", "channel", "raster_width",
                                     "raster_height") + _RECON_KEYS)
    L = _get(cfg, "L", cast=int)
    grid = sphharm.make_grid(L)
    m, _ = fs.load_measurements(_get(cfg, "measurements"), grid=grid)
    response = _load_response(_get(cfg, "response"), L)
    operator = fs.measurement_operator(grid, response, m.layout, m.gain)
    out, info = recon.mfista_tv(m, operator, _recon_config(cfg), return_info=True)
    width = _get(cfg, "raster_width", grid.n_phi, int)
    height = _get(cfg, "raster_height", grid.L, int)
    clipped = sphharm.SphericalSignal(grid, np.clip(out.values, 0.0, 1.0))
    sceneio.save_raster(sceneio.grid_to_raster(clipped, width, height),
                        out_dir / "recon.pgm", bits=16)
    report = [
        f"config_hash={chash}",
        f"seed={int(m.seed)}",
        f"iterations={info.iterations}",
        f"converged={info.converged}",
        f"step={_fmt(info.step)}",
        f"final_objective={_fmt(info.final_objective)}",
    ]
    truth_spec = cfg.get("truth")
    if truth_spec is not None:
        truth = _load_scene(truth_spec, L, cfg)
        report.append(f"snr_i_db={_fmt(recon.snr_i(out, truth))}")
    report.append("objectives=" + ",".join(_fmt(o) for o in info.objectives))
    _write_lines(out_dir / "recon_report.txt", report)


def _sweep_point(sweep, value, cfg, base_seed, n_seeds, responses):
    """Mean reconstruction quality over seeds for one sweep value."""
    L = value if sweep == "resolution" else _get(cfg, "L", cast=int)
    grid = sphharm.make_grid(L)
    scene = _load_scene(_get(cfg, "scene"), L, cfg)
    brightness = (value / 100.0 if sweep == "brightness"
                  else _get(cfg, "brightness", 0.4, float))
    layout = fs.full_grid_layout(grid)
    sensor = _sensor(cfg)
    rc = _recon_config(cfg)
    means = []
    for spec in responses:
        response = _load_response(spec, L)
        snrs = []
        for i in range(n_seeds):
            seed = base_seed + i
            m = fs.simulate(scene, response, layout, sensor, brightness, seed=seed)
            if sweep == "subsample" and value != 100:
                m = fs.subsample(m, value / 100.0, seed=seed)
                rows = m.layout.indices
            else:
                rows = None
            op = SpectralConvOperator(grid, response.scaling_coeffs[:L], rows, m.gain)
            out = recon.mfista_tv(m, op, rc)
            snrs.append(recon.snr_i(out, scene))
        means.append(float(np.mean(snrs)))
    return means


def _cmd_sweep(cfg: dict, out_dir: Path, chash: str) -> None:
    _check_keys(cfg, "sweep", ("sweep", "values", "responses", "scene", "scene_seed",
                               "channel", "L", "brightness", "seeds", "seed",
                               "workers") + _RECON_KEYS + _SENSOR_KEYS)
    sweep = _get(cfg, "sweep")
    if sweep not in DEFAULT_SWEEPS:
        raise ConfigError(
            f"sweep must be one of {sorted(DEFAULT_SWEEPS)}, got {sweep!r}")
    raw_values = cfg.get("values")
    if raw_values is None:
        values = DEFAULT_SWEEPS[sweep]
    else:
        try:
            values = [int(v.strip()) for v in raw_values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"sweep values must be integers, got {raw_values!r}") from None
        if not values:
            raise ConfigError("sweep values list is empty")
    responses = [s.strip() for s in _get(cfg, "responses").split(",") if s.strip()]
    if not responses:
        raise ConfigError("config key 'responses' names no responses")
    base_seed = _get(cfg, "seed", 0, int)
    n_seeds = _get(cfg, "seeds", 3, int)
    workers = _get(cfg, "workers", min(4, len(values)), int)
    # points are independent; a thread pool keeps per-point determinism
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(
            lambda v: _sweep_point(sweep, v, cfg, base_seed, n_seeds, responses), values))
    lines = [f"# config_hash={chash}", f"# seed={base_seed}",
             "parameter," + ",".join(_response_label(s) for s in responses)]
    for value, means in zip(values, rows):
        lines.append(f"{value}," + ",".join(_fmt(s) for s in means))
    _write_lines(out_dir / "sweep.csv", lines)


def _cmd_eval(cfg: dict, out_dir: Path, chash: str) -> None:
    _check_keys(cfg, "eval", ("truth", "estimate", "L", "scene_seed", "channel", "seed"))
    L = _get(cfg, "L", cast=int)
    truth = _load_scene(_get(cfg, "truth"), L, cfg)
    estimate = _load_scene(_get(cfg, "estimate"), L, cfg)
    err = estimate.values - truth.values
    w = truth.grid.weights[:, None]
    rmse = float(np.sqrt(np.sum(w * err * err) / (4.0 * np.pi)))
    report = [
        f"config_hash={chash}",
        f"seed={_get(cfg, 'seed', 0, int)}",
        f"snr_i_db={_fmt(recon.snr_i(estimate, truth))}",
        f"rmse={_fmt(rmse)}",
    ]
    _write_lines(out_dir / "eval_report.txt", report)


_COMMANDS = {
    "design": _cmd_design,
    "simulate": _cmd_simulate,
    "reconstruct": _cmd_reconstruct,
    "sweep": _cmd_sweep,
    "eval": _cmd_eval,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spherecam",
        description="Design masks, simulate spherical sensors, reconstruct scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default=".", help="directory for output files")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = str(args.seed)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg, out_dir, config_hash(cfg, args.command))
    except ConfigError as e:
        print(f"error:config: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error:io: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"error:validation: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - last-resort category for the exit code
        print(f"error:internal: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
