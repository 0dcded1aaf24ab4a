"""Value-suppressing uncertainty colors.

Ring symmetry picks a hue from a linear palette; ring magnitude mixes that
hue against a suppression color (light gray by default), so low-uncertainty
regions fade out instead of shouting. The mix runs in linear RGB.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .tube import RingStats, TubeMesh

# Sampled from matplotlib's viridis at 17 even stops and frozen here so the
# package carries no plotting dependency.
VIRIDIS = (
    (0.267004, 0.004874, 0.329415),
    (0.282327, 0.094955, 0.417331),
    (0.278826, 0.175490, 0.483397),
    (0.258965, 0.251537, 0.524736),
    (0.229739, 0.322361, 0.545706),
    (0.199430, 0.387607, 0.554642),
    (0.172719, 0.448791, 0.557885),
    (0.149039, 0.508051, 0.557250),
    (0.127568, 0.566949, 0.550556),
    (0.120638, 0.625828, 0.533488),
    (0.157851, 0.683765, 0.501686),
    (0.246070, 0.738910, 0.452024),
    (0.369214, 0.788888, 0.382914),
    (0.515992, 0.831158, 0.294279),
    (0.678489, 0.863742, 0.189503),
    (0.845561, 0.887322, 0.099702),
    (0.993248, 0.906157, 0.143936),
)

GRAYSCALE = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))

PALETTES = {"viridis": VIRIDIS, "grayscale": GRAYSCALE}

DEFAULT_SUPPRESS = (0.8, 0.8, 0.8)


def _check_stops(stops) -> tuple:
    stops = tuple(tuple(float(c) for c in stop) for stop in stops)
    if len(stops) < 2:
        raise ValueError("palette needs at least 2 stops")
    for stop in stops:
        if len(stop) != 3 or not all(0.0 <= c <= 1.0 for c in stop):
            raise ValueError(f"palette stop out of range: {stop!r}")
    return stops


def palette_by_name(name: str) -> tuple:
    try:
        return PALETTES[name]
    except KeyError:
        raise ValueError(f"unknown palette {name!r}; have {sorted(PALETTES)}") from None


def load_palette(path) -> tuple:
    """Read a palette from a JSON file holding an array of [r, g, b] rows."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError("palette file must contain a JSON array of RGB stops")
    return _check_stops(data)


def parse_hex_color(text: str) -> tuple:
    """'#RRGGBB' or 'RRGGBB' to an RGB triple in [0, 1]."""
    s = text.lstrip("#")
    if len(s) != 6:
        raise ValueError(f"expected 6 hex digits, got {text!r}")
    try:
        vals = tuple(int(s[i : i + 2], 16) / 255.0 for i in (0, 2, 4))
    except ValueError:
        raise ValueError(f"invalid hex color {text!r}") from None
    return vals


@dataclass(frozen=True)
class ColormapConfig:
    palette: tuple = VIRIDIS
    suppress_color: tuple = DEFAULT_SUPPRESS
    magnitude_percentile: float = 98.0
    magnitude_ceiling: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "palette", _check_stops(self.palette))
        sup = tuple(float(c) for c in self.suppress_color)
        if len(sup) != 3 or not all(0.0 <= c <= 1.0 for c in sup):
            raise ValueError(f"suppress_color out of range: {sup!r}")
        object.__setattr__(self, "suppress_color", sup)
        if not 0.0 < self.magnitude_percentile <= 100.0:
            raise ValueError("magnitude_percentile must be in (0, 100]")
        if self.magnitude_ceiling is not None and self.magnitude_ceiling <= 0:
            raise ValueError("magnitude_ceiling must be positive")


@dataclass(frozen=True)
class ColorSample:
    rgba: tuple

    def __post_init__(self):
        rgba = tuple(float(c) for c in self.rgba)
        if len(rgba) != 4 or not all(0.0 <= c <= 1.0 for c in rgba):
            raise ValueError(f"rgba out of range: {rgba!r}")
        object.__setattr__(self, "rgba", rgba)


def resolve_ceiling(all_stats, config: ColormapConfig) -> float:
    """Percentile of per-ring magnitudes across a whole query.

    A fixed ``magnitude_ceiling`` in the config short-circuits the scan.
    Degenerate pools (all zeros, or a zero percentile with nonzero tail)
    fall back to a positive sentinel so levels stay well defined.
    """
    if config.magnitude_ceiling is not None:
        return float(config.magnitude_ceiling)
    mags = [np.asarray(s.magnitude, dtype=np.float64) for s in all_stats]
    if not mags:
        raise ValueError("no stats to resolve a ceiling from")
    pool = np.concatenate(mags)
    if pool.size == 0:
        raise ValueError("no rings to resolve a ceiling from")
    ceiling = float(np.percentile(pool, config.magnitude_percentile))
    if ceiling <= 0.0:
        peak = float(pool.max())
        ceiling = peak if peak > 0.0 else 1.0
    return ceiling


def sample_palette(stops, x):
    """Piecewise-linear palette lookup; x clamped to [0, 1]. Vectorized."""
    stops = np.asarray(stops, dtype=np.float64)
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    pos = x * (len(stops) - 1)
    idx = np.minimum(pos.astype(np.int64), len(stops) - 2)
    frac = pos - idx
    return stops[idx] + frac[..., None] * (stops[idx + 1] - stops[idx])


def _srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c > 0.04045, ((c + 0.055) / 1.055) ** 2.4, c / 12.92)


def _linear_to_srgb(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c > 0.0031308, 1.055 * c ** (1.0 / 2.4) - 0.055, 12.92 * c)


def color_values(magnitude, symmetry, config: ColormapConfig, ceiling: float):
    """Vectorized color assignment; returns an (..., 4) float64 array.

    level = clamp(magnitude / ceiling, 0, 1). The endpoints bypass the
    linear-RGB round trip so level 0 is bit-identical to the suppress color
    and level 1 lands exactly on the palette sample.
    """
    if ceiling <= 0:
        raise ValueError("ceiling must be positive")
    magnitude = np.asarray(magnitude, dtype=np.float64)
    symmetry = np.asarray(symmetry, dtype=np.float64)
    if np.any(magnitude < 0):
        raise ValueError("magnitude must be nonnegative")
    if np.any((symmetry < 0) | (symmetry > 1)):
        raise ValueError("symmetry must lie in [0, 1]")
    level = np.clip(magnitude / ceiling, 0.0, 1.0)
    c_sym = sample_palette(config.palette, symmetry)
    sup = np.asarray(config.suppress_color, dtype=np.float64)
    mixed = _linear_to_srgb(
        _srgb_to_linear(sup)
        + level[..., None] * (_srgb_to_linear(c_sym) - _srgb_to_linear(sup))
    )
    mixed = np.where(level[..., None] <= 0.0, sup, mixed)
    mixed = np.where(level[..., None] >= 1.0, c_sym, mixed)
    out = np.empty(level.shape + (4,), dtype=np.float64)
    out[..., :3] = np.clip(mixed, 0.0, 1.0)
    out[..., 3] = 1.0
    return out


def color_for(magnitude, symmetry, config: ColormapConfig, ceiling: float) -> ColorSample:
    rgba = color_values(
        np.float64(magnitude), np.float64(symmetry), config, ceiling
    )
    return ColorSample(tuple(rgba.tolist()))


def color_tube(mesh: TubeMesh, stats: RingStats | None = None,
               config: ColormapConfig | None = None,
               ceiling: float | None = None) -> TubeMesh:
    """Attach per-vertex colors: one color per ring, suppress color at the apex."""
    if stats is None:
        stats = mesh.stats
    if config is None:
        config = ColormapConfig()
    if len(stats.magnitude) != mesh.n_rings:
        raise ValueError(
            f"stats cover {len(stats.magnitude)} rings, mesh has {mesh.n_rings}"
        )
    if ceiling is None:
        ceiling = resolve_ceiling([stats], config)
    ring_colors = color_values(stats.magnitude, stats.symmetry, config, ceiling)
    colors = np.empty((mesh.n_vertices, 4), dtype=np.float64)
    colors[0, :3] = config.suppress_color
    colors[0, 3] = 1.0
    m = mesh.ring_samples
    colors[1:] = np.repeat(ring_colors, m, axis=0)
    return replace(mesh, colors=colors)


def color_tubes(meshes, config: ColormapConfig | None = None):
    """Color a batch under one shared ceiling; returns (meshes, ceiling)."""
    if config is None:
        config = ColormapConfig()
    ceiling = resolve_ceiling([mesh.stats for mesh in meshes], config)
    return [color_tube(mesh, config=config, ceiling=ceiling) for mesh in meshes], ceiling
