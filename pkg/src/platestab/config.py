"""Flat key=value configuration files and profile resolution.

Every physical and dimensionless quantity can be set by key; dimensionless
keys override values derived from the physical ones.  The built-in default
profile carries the reference plate data with the dimensionless overrides
used throughout the validation runs.
"""

import hashlib

from .exceptions import ConfigError
from .params import DimensionlessParams, PhysicalParams, nondimensionalize

__all__ = ["parse_config_text", "load_config", "resolve_params", "resolve_sim",
           "DEFAULT_PROFILE", "config_hash", "canonical_text"]

PHYSICAL_KEYS = ("L1", "L2", "h", "rho", "E", "G", "kprime", "I", "I1", "I2",
                 "M", "rhof", "U")
DIMLESS_KEYS = ("epsilon", "mu1", "mu2", "a", "theta", "xi", "L")

DEFAULT_PROFILE = """\
# reference elastic-plate profile (physical data plus dimensionless overrides)
L1 = 1.0
L2 = 9.0
h = 0.03
rho = 2700.0
E = 1.8e8
G = 1080.0
kprime = 0.833
I = 2.25e-6
I1 = 0.27
I2 = 0.03
M = 3.0
rhof = 0.00453
U = 1020.0
# dimensionless overrides (the simulation profile)
epsilon = 3.0
mu1 = 1.8
mu2 = 0.2
a = 0.2
theta = 0.057
xi = 0.2
L = 9.0
# discretization and design parameters
dt = 0.001
dx = 0.05
T = 6.0
modes = 3
scenario = state-feedback
delta1 = 5.0
delta2 = 5.0
delta3 = 5.0
gain_l1 = 5.0
gain_l2 = 5.0
gain_l3 = 5.0
kernel_m = 41
kernel_tol = 1e-10
ny = 181
"""


def parse_config_text(text):
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_config(path=None):
    if path is None:
        return parse_config_text(DEFAULT_PROFILE)
    with open(path) as fh:
        return parse_config_text(fh.read())


def _fget(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing configuration key {key!r} (no default)")
        return default
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"configuration key {key!r} is not a number: {cfg[key]!r}") from exc


def resolve_params(cfg) -> DimensionlessParams:
    """Dimensionless constants from a parsed config mapping."""
    have_phys = any(k in cfg for k in PHYSICAL_KEYS)
    base = {}
    if have_phys:
        missing = [k for k in PHYSICAL_KEYS if k not in cfg]
        if missing and not all(k in cfg for k in DIMLESS_KEYS):
            raise ConfigError(f"missing configuration key {missing[0]!r} "
                              "(physical parameter set incomplete)")
        if not missing:
            p = PhysicalParams(**{k: _fget(cfg, k) for k in PHYSICAL_KEYS})
            dd = nondimensionalize(p)
            base = {k: getattr(dd, "eps" if k == "epsilon" else k) for k in DIMLESS_KEYS}
            extra = {k: getattr(dd, k) for k in
                     ("h", "G", "rho", "I", "I1", "I2", "rhof", "U", "M")}
        else:
            extra = {}
    else:
        extra = {}
    vals = {}
    for k in DIMLESS_KEYS:
        if k in cfg:
            vals[k] = _fget(cfg, k)
        elif k in base:
            vals[k] = base[k]
        else:
            raise ConfigError(f"missing configuration key {k!r} "
                              "(not derivable from physical parameters)")
    d = DimensionlessParams(eps=vals["epsilon"], mu1=vals["mu1"], mu2=vals["mu2"],
                            a=vals["a"], theta=vals["theta"], xi=vals["xi"],
                            L=vals["L"], **extra)
    d.validate()
    return d


def resolve_sim(cfg, **overrides):
    """SimConfig from a parsed config mapping plus CLI overrides."""
    from .sim import SimConfig
    get = lambda key, dflt: overrides.get(key) if overrides.get(key) is not None \
        else _fget(cfg, key, dflt)
    snap = cfg.get("snapshot_times", "")
    snap_times = tuple(float(s) for s in snap.split(",") if s.strip()) if snap else ()
    if overrides.get("snapshot_times") is not None:
        snap_times = tuple(overrides["snapshot_times"])
    sc = overrides.get("scenario") or cfg.get("scenario", "state-feedback")
    return SimConfig(
        dt=get("dt", 1e-3), dx=get("dx", 0.05), T=get("T", 6.0),
        N=int(get("modes", 3)), scenario=sc,
        delta=(_fget(cfg, "delta1", 5.0), _fget(cfg, "delta2", 5.0),
               _fget(cfg, "delta3", 5.0)),
        L_gains=(_fget(cfg, "gain_l1", 5.0), _fget(cfg, "gain_l2", 5.0),
                 _fget(cfg, "gain_l3", 5.0)),
        kernel_m=int(get("kernel_m", 41)), kernel_tol=_fget(cfg, "kernel_tol", 1e-10),
        kernel_max_iter=int(_fget(cfg, "kernel_max_iter", 200)),
        ny=int(get("ny", 181)), diag_stride=int(get("diag_stride", 1)),
        snapshot_times=snap_times,
        observer_init=cfg.get("observer_init", "zero"),
        observer_method=cfg.get("observer_method", "reflected"),
        phi0_literal_npi=cfg.get("phi0_literal_npi", "0") in ("1", "true", "yes"),
        init_amplitude=_fget(cfg, "init_amplitude", 0.01),
    )


def canonical_text(cfg):
    return "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg):
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:16]
