"""Command-line campaign runner.

Every subcommand reads an optional JSON config (unknown keys are rejected),
writes CSV/JSON outputs into ``--out`` and a ``manifest.json`` holding the
resolved config, seed, package versions and wall time. A manifest can be fed
back through ``--config`` to rerun the same campaign.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from sicqmn import __version__
from sicqmn.coherence import cce_coherence, coherence_vs_concentration, default_tau_grid, local_bath
from sicqmn.detection import (
    CensusParams,
    census_campaign,
    contrast_map,
    readout_signal,
    realization_seed,
    spectrum,
    write_census_csv,
    write_census_json,
    write_map_csv,
    write_spectrum_csv,
)
from sicqmn.gates import GateBath, GateSpec, fidelity_matrix, reference_bath
from sicqmn.lattice import (
    NATURAL_C13,
    NATURAL_SI29,
    IsotopeConfig,
    LatticeSpec,
    SpinBath,
    bath_statistics,
    concentration_pair,
    generate_supercell,
    sample_bath,
)
from sicqmn.physics import DEFAULT_CONSTANTS, hyperfine_components, transition_frequencies_array
from sicqmn.pulses import FINAL_PHASE_RULES, DdrfParams, schedule_array

MANIFEST_NAME = "manifest.json"

DEFAULT_CONFIG = {
    "master_seed": 2024,
    "lattice": {
        "volume_nm3": 680.0,
        # totals, [c13, si29] pairs or "natural"
        "concentrations": ["natural"],
    },
    "sequence": {
        "n_pi": 100,
        "tau_n_us": 93.0,
        "rabi_hz": None,
        "rotation_multiple": 1.0,
        "phi_initial": 0.0,
        "final_phase_rule": "half",
    },
    "analysis": {
        "realizations": 50,
        "threads": 1,
        "spectrum": {"omega_min_khz": 400.0, "omega_max_khz": 650.0, "points": 251,
                     "window_khz": None},
        "map": {"species": "C13", "r_min_nm": 0.3, "r_max_nm": 3.0, "r_points": 28,
                "theta_points": 37},
        "census": {"contrast_threshold": 0.5, "delta_f_hz": None, "prune_contrast": 0.01},
        "coherence": {"order": 2, "n_pi": 1, "radius_nm": 8.0, "n_distributions": 5,
                      "n_bathstates": 5, "pair_cutoff_nm": 2.0, "pair_hf_min_hz": 1000.0,
                      "t_max_s": 0.5, "points": 60},
        "cnot": {"bath": "reference", "n_pi": 40, "tau_n_us": 130.0, "max_spectators": 6},
    },
    "output": {"directory": "out"},
}

_NULLABLE = {("sequence", "rabi_hz"), ("analysis", "census", "delta_f_hz"),
             ("analysis", "spectrum", "window_khz")}


class ConfigError(ValueError):
    """Invalid campaign configuration; the message names the offending field."""


# ----------------------------------------------------------------------------
# config


def _merge(base, update, path=()):
    out = copy.deepcopy(base)
    for key, val in update.items():
        where = ".".join(path + (key,))
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{where}' must be an object")
            out[key] = _merge(base[key], val, path + (key,))
        else:
            out[key] = val
    return out


def _check_types(cfg, ref, path=()):
    for key, ref_val in ref.items():
        val = cfg[key]
        p = path + (key,)
        where = ".".join(p)
        if isinstance(ref_val, dict):
            _check_types(val, ref_val, p)
        elif val is None:
            if p not in _NULLABLE:
                raise ConfigError(f"'{where}' must not be null")
        elif isinstance(ref_val, bool) or isinstance(ref_val, str):
            if type(val) is not type(ref_val):
                raise ConfigError(f"'{where}' must be a {type(ref_val).__name__}")
        elif isinstance(ref_val, (int, float)) or p in _NULLABLE:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"'{where}' must be a number")
            if isinstance(ref_val, int) and not isinstance(ref_val, bool) \
                    and not float(val).is_integer():
                raise ConfigError(f"'{where}' must be an integer")


def parse_concentration(c, where="lattice.concentrations"):
    """'natural', a total fraction or a [c13, si29] pair -> (c13, si29)."""
    if c == "natural":
        return NATURAL_C13, NATURAL_SI29
    if isinstance(c, (list, tuple)):
        if len(c) != 2 or not all(isinstance(x, (int, float)) for x in c):
            raise ConfigError(f"'{where}' pairs must be [c13, si29]")
        pair = float(c[0]), float(c[1])
    elif isinstance(c, (int, float)) and not isinstance(c, bool):
        if c < 0:
            raise ConfigError(f"'{where}' entries must be non-negative")
        pair = concentration_pair(float(c))
    else:
        raise ConfigError(f"'{where}' entries must be numbers, pairs or 'natural'")
    if not all(0 <= x <= 1 for x in pair):
        raise ConfigError(f"'{where}' fractions must lie in [0, 1]")
    return pair


def validate(cfg: dict) -> list[str]:
    """Diagnostics for a resolved config; empty when valid.

    Messages starting with 'warning:' do not make the config invalid.
    """
    diags = []
    try:
        _check_types(cfg, DEFAULT_CONFIG)
    except ConfigError as exc:
        return [str(exc)]
    seq, an, lat = cfg["sequence"], cfg["analysis"], cfg["lattice"]

    def need(cond, msg):
        if not cond:
            diags.append(msg)

    need(0 <= cfg["master_seed"] < 2**64, "'master_seed' must be an unsigned 64-bit integer")
    need(lat["volume_nm3"] > 0, "'lattice.volume_nm3' must be positive")
    need(isinstance(lat["concentrations"], list) and lat["concentrations"],
         "'lattice.concentrations' must be a non-empty list")
    if isinstance(lat["concentrations"], list):
        for c in lat["concentrations"]:
            try:
                parse_concentration(c)
            except ConfigError as exc:
                diags.append(str(exc))
                break
    need(seq["n_pi"] >= 1, "'sequence.n_pi' must be >= 1")
    need(seq["tau_n_us"] > 0, "'sequence.tau_n_us' must be positive")
    need(seq["rabi_hz"] is None or seq["rabi_hz"] > 0, "'sequence.rabi_hz' must be positive")
    need(seq["rotation_multiple"] > 0, "'sequence.rotation_multiple' must be positive")
    need(seq["final_phase_rule"] in FINAL_PHASE_RULES,
         f"'sequence.final_phase_rule' must be one of {FINAL_PHASE_RULES}")
    need(an["realizations"] >= 1, "'analysis.realizations' must be >= 1")
    need(an["threads"] >= 1, "'analysis.threads' must be >= 1")
    sp = an["spectrum"]
    need(0 < sp["omega_min_khz"] < sp["omega_max_khz"],
         "'analysis.spectrum' needs 0 < omega_min_khz < omega_max_khz")
    need(sp["points"] >= 2, "'analysis.spectrum.points' must be >= 2")
    need(sp["window_khz"] is None or sp["window_khz"] > 0,
         "'analysis.spectrum.window_khz' must be positive")
    mp = an["map"]
    need(mp["species"] in ("C13", "Si29"), "'analysis.map.species' must be C13 or Si29")
    need(0.1 < mp["r_min_nm"] < mp["r_max_nm"], "'analysis.map' needs 0.1 < r_min_nm < r_max_nm")
    need(mp["r_points"] >= 1 and mp["theta_points"] >= 1,
         "'analysis.map' grid sizes must be >= 1")
    ce = an["census"]
    need(0 < ce["contrast_threshold"] < 1, "'analysis.census.contrast_threshold' must be in (0, 1)")
    need(ce["delta_f_hz"] is None or ce["delta_f_hz"] >= 0,
         "'analysis.census.delta_f_hz' must be non-negative")
    need(ce["prune_contrast"] >= 0, "'analysis.census.prune_contrast' must be non-negative")
    co = an["coherence"]
    need(co["order"] in (1, 2), "'analysis.coherence.order' must be 1 or 2")
    for k in ("n_pi", "n_distributions", "n_bathstates", "points"):
        need(co[k] >= 1, f"'analysis.coherence.{k}' must be >= 1")
    for k in ("radius_nm", "pair_cutoff_nm", "t_max_s"):
        need(co[k] > 0, f"'analysis.coherence.{k}' must be positive")
    cn = an["cnot"]
    need(cn["bath"] in ("reference", "sampled"), "'analysis.cnot.bath' must be reference or sampled")
    need(cn["n_pi"] >= 2 and cn["n_pi"] % 2 == 0, "'analysis.cnot.n_pi' must be even and >= 2")
    need(cn["tau_n_us"] > 0, "'analysis.cnot.tau_n_us' must be positive")
    need(cn["max_spectators"] >= 0, "'analysis.cnot.max_spectators' must be >= 0")

    if not diags:
        rabi = census_params(cfg).rabi
        wl = abs(DEFAULT_CONSTANTS.larmor("Si29"))
        if rabi > wl / 20:
            diags.append(f"warning: rabi {rabi:.4g} Hz exceeds |omega_L| / 20 = {wl / 20:.4g} Hz; "
                         "rotating-wave approximation is poor")
    return diags


def load_config(path=None, base=None) -> dict:
    """Read a config or manifest (JSON) and merge it over ``base`` (the defaults)."""
    base = DEFAULT_CONFIG if base is None else base
    if path is None:
        return copy.deepcopy(base)
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "manifest_version" in data:
        data = data["config"]
    return _merge(base, data)


# ----------------------------------------------------------------------------
# helpers


def census_params(cfg, n_pi=None, tau_us=None) -> CensusParams:
    seq, ce = cfg["sequence"], cfg["analysis"]["census"]
    return CensusParams(
        n_pi=int(seq["n_pi"] if n_pi is None else n_pi),
        tau_n=float(seq["tau_n_us"] if tau_us is None else tau_us) * 1e-6,
        rotation_multiple=float(seq["rotation_multiple"]),
        contrast_threshold=float(ce["contrast_threshold"]),
        delta_f=ce["delta_f_hz"],
        prune_contrast=float(ce["prune_contrast"]),
        final_phase_rule=seq["final_phase_rule"],
        rabi_hz=seq["rabi_hz"],
    )


def ddrf_params(cfg, omega=0.0) -> DdrfParams:
    p = census_params(cfg)
    return DdrfParams(p.n_pi, p.tau_n, omega, p.rabi, float(cfg["sequence"]["phi_initial"]),
                      final_phase_rule=p.final_phase_rule)


def _sample(cfg, conc_index=0, realization=0) -> SpinBath:
    c13, si29 = parse_concentration(cfg["lattice"]["concentrations"][conc_index])
    sites = generate_supercell(LatticeSpec(), float(cfg["lattice"]["volume_nm3"]))
    seed = realization_seed(cfg["master_seed"], conc_index, realization)
    return sample_bath(sites, IsotopeConfig(c13, si29, seed))


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int)) and not isinstance(v, bool) else _fmt(v)
                        for v in row])


def _concentration_list(cfg):
    out = []
    for c in cfg["lattice"]["concentrations"]:
        if isinstance(c, (int, float)) and not isinstance(c, bool):
            out.append(float(c))
        else:
            out.append(parse_concentration(c))
    return out


# ----------------------------------------------------------------------------
# subcommands; each returns the list of files written


def run_lattice(cfg, out: Path):
    bath = _sample(cfg)
    bath.save(out / "bath.json")
    st = bath_statistics(bath)
    summary = {
        "counts": st["counts"],
        "n_spins": len(bath),
        "volume_nm3": bath.volume,
        "mean_nn_distance_nm": float(np.mean(st["nn_distance"])) if st["nn_distance"].size else None,
    }
    (out / "lattice_stats.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    _write_rows(out / "nn_distance.csv", ["nn_distance_nm"], [[d] for d in st["nn_distance"]])
    return ["bath.json", "lattice_stats.json", "nn_distance.csv"]


def run_spectrum(cfg, out: Path):
    sp = cfg["analysis"]["spectrum"]
    grid = np.linspace(sp["omega_min_khz"], sp["omega_max_khz"], int(sp["points"])) * 1e3
    win = sp["window_khz"]
    data = spectrum(_sample(cfg), grid, ddrf_params(cfg),
                    window_hz=None if win is None else float(win) * 1e3)
    write_spectrum_csv(out / "spectrum.csv", data)
    return ["spectrum.csv"]


def run_map(cfg, out: Path, tag=""):
    mp = cfg["analysis"]["map"]
    r = np.linspace(mp["r_min_nm"], mp["r_max_nm"], int(mp["r_points"]))
    th = np.linspace(0.0, np.pi, int(mp["theta_points"]))
    pts = contrast_map(mp["species"], ddrf_params(cfg), r, th)
    name = f"map{tag}.csv"
    write_map_csv(out / name, pts)
    return [name]


def _census(cfg, params_list):
    an = cfg["analysis"]
    return census_campaign(_concentration_list(cfg), int(an["realizations"]), params_list,
                           int(cfg["master_seed"]), float(cfg["lattice"]["volume_nm3"]),
                           int(an["threads"]))


def run_census(cfg, out: Path, params_list=None):
    results = _census(cfg, params_list or (census_params(cfg),))
    write_census_csv(out / "census.csv", results)
    write_census_json(out / "census.json", results)
    return ["census.csv", "census.json"]


def run_histogram(cfg, out: Path, params_list):
    results = _census(cfg, params_list)
    rows = []
    for res in results:
        for k, (h_acc, h_sensed) in enumerate(zip(*_aligned_hist(res))):
            rows.append([_fmt(res.concentration), res.params.label, k, h_acc, h_sensed])
    _write_rows(out / "histogram.csv",
                ["concentration", "params", "count", "p_accessible", "p_sensed"], rows)
    write_census_json(out / "census.json", results)
    return ["histogram.csv", "census.json"]


def _aligned_hist(res):
    n = max(res.counts.max(initial=0), res.sensed_counts.max(initial=0)) + 1
    a = np.bincount(res.counts, minlength=n) / len(res.counts)
    s = np.bincount(res.sensed_counts, minlength=n) / len(res.sensed_counts)
    return a, s


def run_coherence(cfg, out: Path):
    co = cfg["analysis"]["coherence"]
    tau = default_tau_grid(int(co["n_pi"]), float(co["t_max_s"]), int(co["points"]))
    concs = _concentration_list(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t2 = coherence_vs_concentration(
            concs, int(co["n_distributions"]), int(co["n_bathstates"]), int(co["n_pi"]),
            radius_nm=float(co["radius_nm"]), tau_grid=tau, master_seed=int(cfg["master_seed"]),
            order=int(co["order"]), pair_cutoff_nm=float(co["pair_cutoff_nm"]),
            pair_hf_min_hz=float(co["pair_hf_min_hz"]))
    _write_rows(out / "t2.csv", ["concentration", "t2_s"], t2)
    # coherence curve of the first bath for inspection
    ss = np.random.SeedSequence([int(cfg["master_seed"]), 0, 0])
    bath_seed, state_seed = (int(x) for x in ss.generate_state(2, dtype=np.uint64))
    bath = local_bath(concs[0], float(co["radius_nm"]), bath_seed)
    curve = cce_coherence(bath, int(co["n_pi"]), tau, int(co["order"]),
                          n_bathstates=int(co["n_bathstates"]), seed=state_seed % 2**63,
                          pair_cutoff_nm=float(co["pair_cutoff_nm"]),
                          pair_hf_min_hz=float(co["pair_hf_min_hz"]))
    curve.to_csv(out / "coherence_curve.csv")
    return ["t2.csv", "coherence_curve.csv"]


def run_cnot(cfg, out: Path):
    cn = cfg["analysis"]["cnot"]
    if cn["bath"] == "reference":
        gb = reference_bath()
    else:
        bath = _sample(cfg)
        hf = hyperfine_components(bath.positions, bath.gamma)
        strongest = np.argsort(-np.abs(hf[:, 0]))[:4]
        gb = GateBath.from_spin_bath(bath.subset(np.sort(strongest)))
    spec = GateSpec(0, 1, int(cn["n_pi"]), float(cn["tau_n_us"]) * 1e-6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fm = fidelity_matrix(gb, spec, max_spectators=int(cn["max_spectators"]))
    fm.to_csv(out / "cnot_fidelity.csv")
    return ["cnot_fidelity.csv"]


def run_readout(cfg, out: Path):
    """Readout sweep for one on-axis 13C spin driven on and off resonance."""
    from sicqmn.lattice import NuclearSpin

    spin = NuclearSpin((0.0, 0.0, 0.5), "C13", 10.71)
    bath = SpinBath.from_spins([spin])
    hf = hyperfine_components(bath.positions, bath.gamma)[0]
    wl = DEFAULT_CONSTANTS.larmor("C13")
    w1, w2 = transition_frequencies_array(wl, hf[0], np.hypot(hf[1], hf[2]))
    base = ddrf_params(cfg)
    phases = schedule_array(base.n_pi, 2 * np.pi * (w2 - w1) * base.tau_n, base.phi_initial,
                            base.final_phase_rule)
    detuned = w1 + 50 * base.rabi + 5e3
    on = readout_signal(bath, base.replace(omega=float(w1)), phases=phases)
    off = readout_signal(bath, base.replace(omega=float(detuned)), phases=phases)
    _write_rows(out / "readout.csv", ["phi_rad", "p_resonant", "p_detuned"],
                zip(on.phases, on.p_32, off.p_32))
    return ["readout.csv"]


def _sweep(values):
    return [round(float(v), 6) for v in values]


# canned campaigns: (description, config overrides, runner)
REPRODUCE = {
    "fig2b": ("readout versus final pulse phase for one spin",
              {}, run_readout),
    "fig3a": ("contrast map, N = 100 and tau_n = 93 us",
              {"sequence": {"n_pi": 100, "tau_n_us": 93.0}}, run_map),
    "fig3b": ("contrast map, N = 20 and tau_n = 46 us",
              {"sequence": {"n_pi": 20, "tau_n_us": 46.0}}, run_map),
    "fig4a": ("count histograms at natural abundance for both sequences",
              {"lattice": {"concentrations": ["natural"]}}, "hist"),
    "fig4b": ("mean accessible qubits versus concentration",
              {"lattice": {"concentrations": _sweep(np.arange(0.0025, 0.0301, 0.0025))}},
              run_census),
    "fig4cd": ("P(>= k qubits) versus concentration",
               {"lattice": {"concentrations": _sweep(np.arange(0.005, 0.0301, 0.005))}},
               run_census),
    "figS8": ("bath spectrum at natural abundance",
              {"lattice": {"concentrations": ["natural"]}}, run_spectrum),
    "figS9b": ("Hahn-echo T2 versus concentration",
               {"lattice": {"concentrations": [0.005, 0.01, 0.02, 0.04]}}, run_coherence),
    "fig5b": ("CNOT fidelity matrix of the reference bath",
              {"analysis": {"cnot": {"bath": "reference"}}}, run_cnot),
}


def run_reproduce(cfg, out: Path, target: str):
    _, _, runner = REPRODUCE[target]
    if runner == "hist":
        plist = (census_params(cfg, 100, 93.0), census_params(cfg, 20, 46.0))
        return run_histogram(cfg, out, plist)
    return runner(cfg, out)


COMMANDS = {
    "lattice": run_lattice,
    "spectrum": run_spectrum,
    "map": run_map,
    "census": run_census,
    "coherence": run_coherence,
    "cnot": run_cnot,
}


# ----------------------------------------------------------------------------
# entry point


def _versions():
    import scipy
    import sklearn

    return {"sicqmn": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sicqmn", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config or manifest")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--realizations", type=int, help="Monte Carlo realizations")
    common.add_argument("--threads", type=int, help="worker threads")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    rep = sub.add_parser("reproduce", parents=[common], help="canned campaigns")
    rep.add_argument("target", choices=sorted(REPRODUCE))
    sub.add_parser("validate", parents=[common], help="check a config")
    return parser


def _resolve(args) -> dict:
    base = DEFAULT_CONFIG
    if args.command == "reproduce":
        base = _merge(DEFAULT_CONFIG, REPRODUCE[args.target][1])
    cfg = load_config(args.config, base)
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.realizations is not None:
        cfg["analysis"]["realizations"] = args.realizations
    if args.threads is not None:
        cfg["analysis"]["threads"] = args.threads
    if args.out is not None:
        cfg["output"]["directory"] = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    diags = validate(cfg)
    errors = [d for d in diags if not d.startswith("warning:")]
    for d in diags:
        print(d if d.startswith("warning:") else f"config error: {d}", file=sys.stderr)
    if args.command == "validate":
        if not errors:
            print("ok")
        return 1 if errors else 0
    if errors:
        return 2

    out = Path(cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.command == "reproduce":
        files = run_reproduce(cfg, out, args.target)
    else:
        files = COMMANDS[args.command](cfg, out)
    manifest = {
        "manifest_version": 1,
        "command": args.command,
        "target": getattr(args, "target", None),
        "master_seed": cfg["master_seed"],
        "config": cfg,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "outputs": files,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    print(f"wrote {', '.join(files)} to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
