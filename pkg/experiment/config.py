"""
Experiment configuration: flat `key = value` files, CLI overrides and presets.

Model keys accept a qualifier after '@': a peak level (`e_k@1e-2 = 1.2`) or an
experiment algorithm (`tau@amm_aniso = 8e-4`). Algorithm qualifiers win over
peak-level qualifiers, which win over the plain key.
"""
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, Mapping, Optional, Tuple, Union

from core.model import ModelParams
from measurement.operators import FFT_NORMALIZATIONS, ILLUMINATION_KINDS
from metrics.metrics import SNR_DENOMINATORS
from outer_solvers.solvers import INIT_MODES


PATTERNS = ("cdp", "ptycho")
EXPERIMENT_ALGORITHMS = ("pr", "amm", "palm", "amm_aniso", "palm_aniso")
REQUIRED_KEYS = ("pattern", "image", "delta", "algorithm")
MODEL_KEYS = (
    "tau", "eta", "r", "c_k", "d_k", "e_k", "inner_iters", "outer_iters", "l0_prox_standard", "eta_pr", "r_pr",
)


class ConfigError(ValueError):
    """Configuration problem; `line` is None for missing keys and CLI overrides."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("true", "yes", "on", "1"):
        return True
    if value in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(options: Tuple[str, ...]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text
    return parse


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}")


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"expected a number, got {text!r}")


# key -> (parser, is_list)
KEYS: Dict[str, Tuple[Callable[[str], object], bool]] = {
    "name": (str, False),
    "pattern": (_choice(PATTERNS), False),
    "image": (str, True),
    "crop": (_int, False),
    "delta": (_float, True),
    "algorithm": (_choice(EXPERIMENT_ALGORITHMS), True),
    "seed": (_int, True),
    "out": (str, False),
    "K": (_int, False),
    "masks": (str, False),
    "frame_side": (_int, False),
    "slide_dist": (_int, True),
    "illumination": (str, False),
    "fft_normalization": (_choice(FFT_NORMALIZATIONS), False),
    "tau": (_float, False),
    "eta": (_float, False),
    "r": (_float, False),
    "c_k": (_float, False),
    "d_k": (_float, False),
    "e_k": (_float, False),
    "inner_iters": (_int, False),
    "outer_iters": (_int, False),
    "l0_prox_standard": (_bool, False),
    "eta_pr": (_float, False),
    "r_pr": (_float, False),
    "eta_scale": (_float, True),
    "tau_scale": (_float, True),
    "patch": (_int, False),
    "stride": (_int, False),
    "init": (_choice(INIT_MODES), False),
    "baseline_iters": (_int, False),
    "warm_start": (_bool, False),
    "truncated_warmup": (_bool, False),
    "real_valued": (_bool, False),
    "monitor": (_bool, False),
    "timing": (_bool, False),
    "trace_every": (_int, False),
    "workers": (_int, False),
    "snr_denominator": (_choice(SNR_DENOMINATORS), False),
}


@dataclass(frozen=True)
class ExperimentSpec:
    """
    A validated experiment: every (image, delta, algorithm, slide_dist, seed,
    eta_scale, tau_scale) combination is one sweep cell.
    """
    pattern: str
    images: Tuple[str, ...]
    deltas: Tuple[float, ...]
    algorithms: Tuple[str, ...]
    name: str = "experiment"
    crop: Optional[int] = None
    seeds: Tuple[int, ...] = (0,)
    output_dir: Optional[str] = None
    K: int = 2
    masks: Optional[str] = None
    frame_side: int = 64
    slide_dists: Tuple[int, ...] = (16,)
    illumination: str = "zoneplate_synthetic"
    fft_normalization: str = "unitary"
    params: ModelParams = field(default_factory=ModelParams)
    # {qualifier: {model key: value}}; qualifier is a delta (float) or an algorithm name
    param_overrides: Dict[object, Dict[str, object]] = field(default_factory=dict)
    eta_scales: Tuple[float, ...] = (1.0,)
    tau_scales: Tuple[float, ...] = (1.0,)
    patch_side: int = 8
    stride: int = 1
    init_u: str = "from_baseline"
    baseline_iters: int = 100
    warm_start: bool = True
    truncated_warmup: bool = False
    real_valued: bool = False
    monitor: bool = False
    timing: bool = False
    trace_every: int = 1
    workers: Optional[int] = None
    snr_denominator: str = "estimate"

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if not self.images:
            raise ValueError("At least one image is required")
        if not self.deltas or any(not d > 0 for d in self.deltas):
            raise ValueError(f"Peak levels must be positive, got {self.deltas}")
        if not self.algorithms:
            raise ValueError("At least one algorithm is required")
        if self.pattern == "cdp" and self.K < 1:
            raise ValueError(f"K must be at least 1, got {self.K}")
        if self.pattern == "ptycho" and any(s < 1 for s in self.slide_dists):
            raise ValueError(f"slide_dist must be positive, got {self.slide_dists}")
        if any(not s > 0 for s in self.eta_scales + self.tau_scales):
            raise ValueError("eta_scale and tau_scale entries must be positive")

    def params_for(self, delta: float, algorithm: str, eta_scale: float = 1.0, tau_scale: float = 1.0) -> ModelParams:
        """Model parameters of one cell: plain keys, then delta, then algorithm overrides, then scales."""
        values = {}
        for qualifier, overrides in self.param_overrides.items():
            if not isinstance(qualifier, str) and abs(qualifier - delta) <= 1e-12 * max(1.0, abs(delta)):
                values.update(overrides)
        values.update(self.param_overrides.get(algorithm, {}))
        params = replace(self.params, **values)
        l0_mode = "anisotropic" if algorithm.endswith("_aniso") else "isotropic"
        return replace(params, eta=params.eta * eta_scale, tau=params.tau * tau_scale, l0_mode=l0_mode)

    def config_hash(self) -> str:
        """sha256 of everything that determines cell outputs."""
        payload = asdict(self)
        for key in ("output_dir", "workers", "name"):
            payload.pop(key)
        payload["param_overrides"] = {str(k): v for k, v in sorted(self.param_overrides.items(), key=lambda kv: str(kv[0]))}
        text = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


_KEY_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(@[^\s=@]+)?$")


def _split_assignments(line: str, line_no: int):
    """One `key = value` per line, or several `key=value` tokens without spaces around '='."""
    if line.count("=") == 1:
        key, value = line.split("=", 1)
        return [(key.strip(), value.strip())]
    pairs = []
    for token in line.split():
        if token.count("=") != 1:
            raise ConfigError(f"cannot split {line!r} into key=value pairs", line_no)
        key, value = token.split("=", 1)
        pairs.append((key, value))
    return pairs


def _convert(key: str, value: str, line: Optional[int]):
    parser, is_list = KEYS[key]
    try:
        if is_list:
            return tuple(parser(item) for item in re.split(r"[,\s]+", value) if item)
        if value == "":
            raise ValueError("empty value")
        return parser(value)
    except ValueError as e:
        raise ConfigError(f"key '{key}': {e}", line)


def _qualifier(key: str, text: str, line: Optional[int]):
    if key not in MODEL_KEYS:
        raise ConfigError(f"key '{key}' does not accept an '@' qualifier", line)
    if text in EXPERIMENT_ALGORITHMS:
        return text
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"qualifier '@{text}' is neither a peak level nor an algorithm", line)


def read_entries(text: str) -> Dict[str, Tuple[str, int]]:
    """
    Raw `key -> (value, line)` pairs of a config text, keys not yet validated.

    Raises:
        ConfigError: On malformed lines or duplicate keys
    """
    entries: Dict[str, Tuple[str, int]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", line_no)
        for key, value in _split_assignments(line, line_no):
            if not _KEY_PATTERN.match(key):
                raise ConfigError(f"malformed key {key!r}", line_no)
            if key in entries:
                raise ConfigError(f"duplicate key '{key}' at lines {entries[key][1]} and {line_no}", line_no)
            entries[key] = (value, line_no)
    return entries


def parse_config(
    text: str,
    overrides: Optional[Mapping[str, Union[str, Tuple[str, Optional[int]]]]] = None,
) -> ExperimentSpec:
    """
    Parse config text into a validated ExperimentSpec.

    Args:
        text: `key = value` lines with '#' comments
        overrides: Key -> raw value (CLI flags) replacing file keys. A
            `(value, line)` pair, as returned by read_entries, keeps its line
            number for error messages.

    Raises:
        ConfigError: Unknown key, bad value, duplicate key, missing required key
            or invalid combination, with the line number where one applies
    """
    entries = read_entries(text)
    for key, value in (overrides or {}).items():
        if isinstance(value, tuple):
            entries[key] = (str(value[0]), value[1])
        else:
            entries[key] = (str(value), None)

    values: Dict[str, object] = {}
    param_overrides: Dict[object, Dict[str, object]] = {}
    for full_key, (value, line) in entries.items():
        key, _, qualifier = full_key.partition("@")
        if key not in KEYS:
            raise ConfigError(f"unknown key '{key}'", line)
        converted = _convert(key, value, line)
        if qualifier:
            param_overrides.setdefault(_qualifier(key, qualifier, line), {})[key] = converted
        else:
            values[key] = converted

    for key in REQUIRED_KEYS:
        if key not in values:
            raise ConfigError(f"missing required key '{key}'")
    if not values["algorithm"]:
        raise ConfigError("at least one algorithm is required", entries["algorithm"][1])

    model = {k: values.pop(k) for k in MODEL_KEYS if k in values}
    renames = {
        "image": "images", "delta": "deltas", "algorithm": "algorithms", "seed": "seeds",
        "out": "output_dir", "slide_dist": "slide_dists", "patch": "patch_side", "init": "init_u",
        "eta_scale": "eta_scales", "tau_scale": "tau_scales",
    }
    kwargs = {renames.get(k, k): v for k, v in values.items()}
    try:
        spec = ExperimentSpec(params=ModelParams(**model), param_overrides=param_overrides, **kwargs)
        for delta in spec.deltas:
            for algorithm in spec.algorithms:
                spec.params_for(delta, algorithm)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}")
    if spec.illumination not in ILLUMINATION_KINDS and not spec.illumination.lower().endswith(".cprm"):
        raise ConfigError(f"illumination must be one of {ILLUMINATION_KINDS} or a .cprm path, got {spec.illumination!r}")
    return spec


# Calibration below assumes unnormalized FFTs. For CDP, A*A averages 1.75 n K
# per pixel (mean octanary |m|^2 is 1.75), so Poisson noise on u has a standard
# deviation near 1/sqrt(3.5 n K) per real component. tau sits at about 3.3 of
# those, eta near 8 / diag(A*A) and r near 8 eta. Ptychography uses the summed
# illumination power for diag(A*A) instead. PALM needs c_k above the patch
# coverage (64) and d_k above ||alpha alpha*||, which grows with delta^2 and
# image size.
_CDP_REAL = """\
# Real-valued images, CDP with K=2 octanary masks
pattern = cdp
K = 2
delta = 5e-3, 1e-2
algorithm = pr, amm, palm
fft_normalization = unnormalized
real_valued = true
baseline_iters = 300
c_k = 80
e_k@5e-3 = 1.5
e_k@1e-2 = 1.2
outer_iters = 100
"""

_CDP_REAL_FULL = """\
image = phantom:smooth:256
eta = 3.5e-5
r = 2.8e-4
tau = 5e-3
d_k = 150
"""

_CDP_REAL_DESK = """\
image = phantom:smooth:128
eta = 1.4e-4
r = 1.1e-3
tau = 1e-2
d_k = 40
"""

_CDP_COMPLEX = """\
# Complex-valued image, CDP with K=4 masks, isotropic and anisotropic L0
pattern = cdp
K = 4
delta = 0.08, 0.1
algorithm = pr, amm, amm_aniso
fft_normalization = unnormalized
baseline_iters = 300
outer_iters = 50
"""

_CDP_COMPLEX_FULL = """\
image = phantom:disks:256
eta = 1.75e-5
r = 1.4e-4
tau = 3.5e-3
tau@amm_aniso = 3.2e-3
"""

_CDP_COMPLEX_DESK = """\
image = phantom:disks_equal:128
eta = 7e-5
r = 5.6e-4
tau = 7e-3
tau@amm_aniso = 6.3e-3
"""

_PTYCHO = """\
# Ptychography, zone plate illumination
pattern = ptycho
illumination = zoneplate_synthetic
algorithm = pr, amm, amm_aniso, palm, palm_aniso
fft_normalization = unnormalized
baseline_iters = 300
c_k = 80
inner_iters@palm = 2
inner_iters@palm_aniso = 2
outer_iters = 50
"""

_PTYCHO_FULL = """\
image = phantom:disks:256
frame_side = 64
slide_dist = 16
delta = 0.2, 0.5
eta = 2e-4
r = 1.6e-3
tau = 1.2e-2
d_k@0.2 = 6e4
d_k@0.5 = 4e5
"""

_PTYCHO_DESK = """\
image = phantom:disks:128
frame_side = 32
slide_dist = 8, 10, 12
delta = 0.2
eta = 1.1e-3
r = 9e-3
tau = 3e-2
d_k = 1.5e4
"""

_PTYCHO_SLIDE = """\
image = phantom:disks:256
frame_side = 64
slide_dist = 18, 20, 22
delta = 0.2
eta = 3e-4
r = 2.4e-3
tau = 1.5e-2
d_k = 6e4
"""


def _param_sweep(calibration: str, scales: str) -> str:
    base = _CDP_REAL.replace("delta = 5e-3, 1e-2", "delta = 5e-3").replace("algorithm = pr, amm, palm", "algorithm = amm")
    return base + calibration + f"eta_scale = {scales}\ntau_scale = {scales}\n"


PRESETS: Dict[str, str] = {
    "cdp-real": _CDP_REAL + _CDP_REAL_FULL,
    "cdp-real-desk": _CDP_REAL + _CDP_REAL_DESK,
    "cdp-complex": _CDP_COMPLEX + _CDP_COMPLEX_FULL,
    "cdp-complex-desk": _CDP_COMPLEX + _CDP_COMPLEX_DESK,
    "ptycho": _PTYCHO + _PTYCHO_FULL,
    "ptycho-desk": _PTYCHO + _PTYCHO_DESK,
    "ptycho-slide": _PTYCHO + _PTYCHO_SLIDE,
    "param-sweep": _param_sweep(_CDP_REAL_FULL, ", ".join(f"{2.0 ** k:g}" for k in range(-4, 5))),
    "param-sweep-desk": _param_sweep(_CDP_REAL_DESK, "0.25, 0.5, 1, 2, 4"),
}


def preset_text(name: str) -> str:
    """
    Raises:
        ConfigError: For an unknown preset name
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]
