"""Network deployments, constants and large-scale channel draws.

Everything here is fixed while the optimizer runs: geometry, shadowed path
gains, channel-estimate quality and the interference-plus-noise powers seen by
the users of the home cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml


class ScenarioError(ValueError):
    """Raised for invalid scenario descriptions."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


@dataclass(frozen=True)
class RadioConstants:
    bandwidth: float
    antennas: int
    cap_gap_ul: float
    cap_gap_dl: float
    coherence_samples: float
    pilot_len: int
    noise_ap: float
    noise_ut: float
    ap_power: float
    ut_power_max: float
    output_ratio: float
    pathloss_exp: float
    shadow_std_db: float

    @property
    def pilot_overhead(self) -> float:
        """Fraction of each coherence interval left for data."""
        return (self.coherence_samples - self.pilot_len) / self.coherence_samples

    def validate(self) -> None:
        for name in ("bandwidth", "noise_ap", "noise_ut", "ap_power", "ut_power_max", "output_ratio"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"radio.{name} must be positive")
        if self.antennas < 1:
            raise ScenarioError("radio.antennas must be >= 1")
        if self.cap_gap_ul < 1 or self.cap_gap_dl < 1:
            raise ScenarioError("capacity gaps must be >= 1")
        if not 0 < self.pilot_overhead <= 1:
            raise ScenarioError("pilot overhead must lie in (0, 1]")
        if self.shadow_std_db < 0:
            raise ScenarioError("radio.shadow_std_db must be >= 0")


@dataclass(frozen=True)
class ComputeConstants:
    user_capacitance: float
    user_cycles: float
    mec_capacitance: float
    mec_cycles: float
    f_user_min: float
    f_user_max: float
    f_mec_min: float
    f_mec_max: float
    weight: float
    latency: float

    def validate(self) -> None:
        if not 0 < self.f_user_min < self.f_user_max:
            raise ScenarioError("need 0 < f_user_min < f_user_max")
        if not 0 < self.f_mec_min < self.f_mec_max:
            raise ScenarioError("need 0 < f_mec_min < f_mec_max")
        if not 0 < self.weight < 1:
            raise ScenarioError("weight must lie strictly between 0 and 1")
        if not self.latency > 0:
            raise ScenarioError("latency must be positive")
        for name in ("user_capacitance", "mec_capacitance", "user_cycles", "mec_cycles"):
            if getattr(self, name) < 0:
                raise ScenarioError(f"compute.{name} must be nonnegative")


@dataclass(frozen=True)
class NetworkScenario:
    """Static deployment. Users are ordered by cell: user ``cell*K + i`` uses pilot ``i``."""

    ap_pos: np.ndarray          # (L, 2) metres
    user_pos: np.ndarray        # (L*K, 2) metres
    user_cell: np.ndarray       # (L*K,)
    requests: np.ndarray        # (L*K,) bits
    users_per_cell: int
    home_cell: int
    contaminating: tuple[tuple[int, ...], ...]
    radio: RadioConstants
    compute: ComputeConstants
    area: tuple[float, float] = (20.0, 20.0)
    min_distance: float = 3.0

    @property
    def n_cells(self) -> int:
        return len(self.ap_pos)

    @property
    def home_users(self) -> np.ndarray:
        k = self.users_per_cell
        return np.arange(self.home_cell * k, (self.home_cell + 1) * k)

    @property
    def home_requests(self) -> np.ndarray:
        return self.requests[self.home_users]

    def distances(self) -> np.ndarray:
        """(L, L*K) AP-to-user distances."""
        diff = self.ap_pos[:, None, :] - self.user_pos[None, :, :]
        return np.sqrt((diff**2).sum(-1))

    def with_requests(self, bits) -> "NetworkScenario":
        req = np.broadcast_to(np.asarray(bits, dtype=float), self.requests.shape).copy()
        if np.any(req <= 0):
            raise ScenarioError("requests must be positive")
        return replace(self, requests=req)

    def with_compute(self, **changes) -> "NetworkScenario":
        comp = replace(self.compute, **changes)
        comp.validate()
        return replace(self, compute=comp)

    def with_radio(self, **changes) -> "NetworkScenario":
        radio = replace(self.radio, **changes)
        radio.validate()
        return replace(self, radio=radio)


@dataclass(frozen=True)
class ChannelRealization:
    """Large-scale quantities for one draw, restricted to what the home cell needs.

    ``sigma1_fixed``/``sigma2_fixed`` hold everything in the interference-plus-noise
    powers that does not depend on home-cell transmit powers; :meth:`refresh`
    adds the home-cell contribution for given powers.
    """

    beta: np.ndarray            # (L, L*K) gains AP j <-> user m
    gamma_hat: np.ndarray       # (K,) mean-square channel estimate of home users at home AP
    home_beta: np.ndarray       # (K,) home AP <-> home user gains
    sigma1_fixed: np.ndarray    # (K,) W
    sigma2_fixed: np.ndarray    # (K,) W
    sigma1_sq: np.ndarray       # (K,) W, current total
    sigma2_sq: np.ndarray       # (K,) W, current total
    ap_power: float
    csi_mode: str

    def refresh(self, p: np.ndarray, eta: np.ndarray) -> "ChannelRealization":
        """Recompute the noise powers for home-cell uplink powers ``p`` and downlink coefficients ``eta``."""
        p = np.asarray(p, dtype=float)
        eta = np.asarray(eta, dtype=float)
        s1 = self.sigma1_fixed + float(np.dot(self.home_beta, p))
        s2 = self.sigma2_fixed + self.ap_power * self.home_beta * float(eta.sum())
        return replace(self, sigma1_sq=s1, sigma2_sq=s2)


CSI_MODES = ("perfect", "contaminated")

DEFAULT_CONFIG: dict[str, Any] = {
    "area": [20.0, 20.0],
    "ap_grid": [2, 2],
    "users_per_cell": 4,
    "home_cell": 0,
    "min_distance": 3.0,
    "request_bits": 20e3,
    "radio": {
        "bandwidth": 5e6,
        "antennas": 100,
        "cap_gap_ul": 1.25,
        "cap_gap_dl": 1.25,
        "coherence_samples": None,   # defaults to bandwidth * latency
        "noise_ap_dbm": -127.0,
        "noise_ut_dbm": -122.0,
        "ap_power_dbm": 46.0,
        "ut_power_dbm": 23.0,
        "output_ratio": 2.0,
        "pathloss_exp": 2.2,
        "shadow_std_db": 2.7,
    },
    "compute": {
        # 0.5 pF and 5 pF with frequencies measured in GHz, expressed in SI
        "user_capacitance": 0.5e-12 * 1e-18,
        "user_cycles": 1000.0,
        "mec_capacitance": 5e-12 * 1e-18,
        "mec_cycles": 500.0,
        "f_user_min": 60e6,
        "f_user_max": 1.8e9,
        "f_mec_min": 2.2e9,
        "f_mec_max": 24 * 3.4e9,
        "weight": 1e-3,
        "latency": 20e-3,
    },
}


def merge_config(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | Path) -> dict[str, Any]:
    """Read a YAML scenario file and overlay it on the defaults."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must hold a mapping")
    return merge_config(DEFAULT_CONFIG, data)


_KNOWN_KEYS = {"area", "ap_grid", "ap_positions", "users", "users_per_cell", "home_cell",
               "min_distance", "request_bits", "contaminating", "radio", "compute"}


def _grid_aps(area, grid) -> np.ndarray:
    nx, ny = grid
    w, h = area
    xs = (np.arange(nx) + 0.5) * w / nx
    ys = (np.arange(ny) + 0.5) * h / ny
    return np.array([(x, y) for y in ys for x in xs], dtype=float)


def _cell_bounds(area, grid, cell):
    nx, ny = grid
    w, h = area
    cx, cy = cell % nx, cell // nx
    return cx * w / nx, (cx + 1) * w / nx, cy * h / ny, (cy + 1) * h / ny


def build_scenario(config: dict[str, Any] | None = None, seed: int = 0) -> NetworkScenario:
    """Validate ``config`` (merged over the defaults) and place users.

    Users are either listed explicitly under ``users`` (``x``, ``y``, ``cell``,
    optional ``request``) or dropped uniformly in their cell's rectangle with at
    least ``min_distance`` to the serving AP.
    """
    cfg = merge_config(DEFAULT_CONFIG, config or {})
    unknown = set(cfg) - _KNOWN_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    area = tuple(float(a) for a in cfg["area"])
    if min(area) <= 0:
        raise ScenarioError("area must be positive")
    min_dist = float(cfg["min_distance"])
    k = int(cfg["users_per_cell"])
    if k < 1:
        raise ScenarioError("users_per_cell must be >= 1")

    if cfg.get("ap_positions") is not None:
        aps = np.asarray(cfg["ap_positions"], dtype=float).reshape(-1, 2)
        grid = None
    else:
        grid = tuple(int(g) for g in cfg["ap_grid"])
        aps = _grid_aps(area, grid)
    n_cells = len(aps)
    home = int(cfg["home_cell"])
    if not 0 <= home < n_cells:
        raise ScenarioError("home_cell out of range")

    rng = np.random.default_rng(seed)
    if cfg.get("users") is not None:
        users = cfg["users"]
        pos = np.array([[u["x"], u["y"]] for u in users], dtype=float)
        cells = np.array([int(u["cell"]) for u in users])
        default_req = cfg["request_bits"]
        req = np.array([float(u.get("request", default_req)) for u in users])
        order = np.argsort(cells, kind="stable")
        pos, cells, req = pos[order], cells[order], req[order]
        if np.any(np.bincount(cells, minlength=n_cells) != k):
            raise ScenarioError("every cell needs exactly users_per_cell users")
    else:
        if grid is None:
            raise ScenarioError("random user placement needs ap_grid")
        pos = np.empty((n_cells * k, 2))
        for c in range(n_cells):
            x0, x1, y0, y1 = _cell_bounds(area, grid, c)
            for i in range(k):
                for _ in range(10_000):
                    pt = rng.uniform((x0, y0), (x1, y1))
                    if np.hypot(*(pt - aps[c])) >= min_dist:
                        break
                else:
                    raise ScenarioError("cannot place user outside the minimum distance")
                pos[c * k + i] = pt
        cells = np.repeat(np.arange(n_cells), k)
        req = np.broadcast_to(np.asarray(cfg["request_bits"], dtype=float), (n_cells * k,)).copy()

    if np.any(req <= 0):
        raise ScenarioError("requests must be positive")
    if np.any(pos < 0) or np.any(pos[:, 0] > area[0]) or np.any(pos[:, 1] > area[1]):
        raise ScenarioError("users must lie inside the area")
    d_home = np.hypot(*(pos - aps[cells]).T)
    if np.any(d_home < min_dist - 1e-12):
        raise ScenarioError("user closer to its AP than min_distance")

    if cfg.get("contaminating") is not None:
        contam = tuple(tuple(int(q) for q in row) for row in cfg["contaminating"])
        if len(contam) != n_cells:
            raise ScenarioError("contaminating needs one entry per cell")
    else:
        contam = tuple(tuple(q for q in range(n_cells) if q != c) for c in range(n_cells))

    r, c = cfg["radio"], cfg["compute"]
    coherence = r.get("coherence_samples")
    if coherence is None:
        coherence = r["bandwidth"] * c["latency"]
    radio = RadioConstants(
        bandwidth=float(r["bandwidth"]), antennas=int(r["antennas"]),
        cap_gap_ul=float(r["cap_gap_ul"]), cap_gap_dl=float(r["cap_gap_dl"]),
        coherence_samples=float(coherence), pilot_len=k,
        noise_ap=dbm_to_watt(r["noise_ap_dbm"]), noise_ut=dbm_to_watt(r["noise_ut_dbm"]),
        ap_power=dbm_to_watt(r["ap_power_dbm"]), ut_power_max=dbm_to_watt(r["ut_power_dbm"]),
        output_ratio=float(r["output_ratio"]), pathloss_exp=float(r["pathloss_exp"]),
        shadow_std_db=float(r["shadow_std_db"]),
    )
    compute = ComputeConstants(**{key: float(c[key]) for key in (
        "user_capacitance", "user_cycles", "mec_capacitance", "mec_cycles", "f_user_min",
        "f_user_max", "f_mec_min", "f_mec_max", "weight", "latency")})
    radio.validate()
    compute.validate()
    return NetworkScenario(
        ap_pos=aps, user_pos=pos, user_cell=cells, requests=req, users_per_cell=k,
        home_cell=home, contaminating=contam, radio=radio, compute=compute,
        area=area, min_distance=min_dist,
    )


def _mmse_estimate(beta_col_pilot: np.ndarray, target: float, rc: RadioConstants) -> float:
    # gamma = tau*p*beta^2 / (sigma_r^2 + tau*p*sum over pilot sharers)
    tp = rc.pilot_len * rc.ut_power_max
    return tp * target**2 / (rc.noise_ap + tp * beta_col_pilot.sum())


def draw_channel(scn: NetworkScenario, seed: int = 0, csi_mode: str = "perfect") -> ChannelRealization:
    """Draw shadowing and assemble the home-cell noise powers.

    Interferers follow a fixed power model: every user transmits at its maximum
    power and every AP splits its power equally over its users. The home cell's
    own (power-dependent) contribution starts at zero and is added with
    :meth:`ChannelRealization.refresh` once powers are known.
    """
    if csi_mode not in CSI_MODES:
        raise ScenarioError(f"csi_mode must be one of {CSI_MODES}")
    rc = scn.radio
    rng = np.random.default_rng(seed)
    dist = scn.distances()
    shadow = 10.0 ** (rc.shadow_std_db * rng.standard_normal(dist.shape) / 10.0)
    beta = shadow * dist ** (-rc.pathloss_exp)

    k = scn.users_per_cell
    l = scn.home_cell
    home = scn.home_users
    others = [q for q in range(scn.n_cells) if q != l]
    contam = [q for q in scn.contaminating[l] if q != l]
    n = rc.antennas
    p_int = rc.ut_power_max
    eta_int = 1.0 / k

    home_beta = beta[l, home]
    gamma_hat = np.empty(k)
    s1 = np.empty(k)
    s2 = np.empty(k)
    # uplink terms common to all home users: every non-home user at full power
    other_users = np.array([m for m in range(scn.n_cells * k) if scn.user_cell[m] != l], dtype=int)
    ul_noncoherent = p_int * beta[l, other_users].sum() if len(other_users) else 0.0
    for i in range(k):
        m = home[i]
        sharers = [l] + contam
        if csi_mode == "perfect":
            gamma_hat[i] = home_beta[i]
            coh_ul = 0.0
            coh_dl = 0.0
        else:
            col = beta[l, [q * k + i for q in sharers]]
            gamma_hat[i] = _mmse_estimate(col, beta[l, m], rc)
            coh_ul = 0.0
            coh_dl = 0.0
            for q in contam:
                # estimate at home AP of the co-pilot user in cell q
                coh_ul += _mmse_estimate(col, beta[l, q * k + i], rc) * p_int
                # estimate at AP q of this home user, which AP q beams towards its own user i
                col_q = beta[q, [c * k + i for c in sharers]]
                coh_dl += _mmse_estimate(col_q, beta[q, m], rc) * eta_int
        s1[i] = rc.noise_ap + ul_noncoherent + n * coh_ul
        s2[i] = rc.noise_ut + rc.ap_power * sum(beta[q, m] for q in others) + n * rc.ap_power * coh_dl
    ch = ChannelRealization(
        beta=beta, gamma_hat=gamma_hat, home_beta=home_beta, sigma1_fixed=s1, sigma2_fixed=s2,
        sigma1_sq=s1.copy(), sigma2_sq=s2.copy(), ap_power=rc.ap_power, csi_mode=csi_mode,
    )
    return ch
