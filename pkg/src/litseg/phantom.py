"""Synthetic CT phantoms: a body, an ellipsoidal liver and spherical lesions."""
from dataclasses import dataclass, field

import numpy as np

from .errors import LesionOutsideLiver
from .volume_io import Volume


@dataclass
class PhantomSpec:
    size: tuple = (64, 64, 64)
    liver_center: tuple = (32.0, 32.0, 32.0)
    liver_radii: tuple = (16.0, 12.0, 12.0)
    lesions: list = field(default_factory=list)  # [((cx, cy, cz), r), ...]
    noise_sigma: float = 10.0
    hu_background: float = -1000.0
    hu_body: float = 40.0
    hu_liver: float = 100.0
    hu_lesion: float = 20.0
    seed: int = 0


def _grid(size):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in size), indexing="ij")


def ellipsoid(size, center, radii):
    x, y, z = _grid(size)
    return (((x - center[0]) / radii[0]) ** 2 + ((y - center[1]) / radii[1]) ** 2
            + ((z - center[2]) / radii[2]) ** 2) <= 1.0


def body_mask(size):
    """Elliptic cylinder along the axial (last) axis filling ~90% of the cross-section."""
    x, y, _ = _grid(size)
    cx, cy = (size[0] - 1) / 2, (size[1] - 1) / 2
    return ((x - cx) / (0.46 * size[0])) ** 2 + ((y - cy) / (0.46 * size[1])) ** 2 <= 1.0


def generate(spec):
    """Return ``(volume, liver_mask, lesion_mask)``; masks are uint8 volumes."""
    size = tuple(int(s) for s in spec.size)
    liver = ellipsoid(size, spec.liver_center, spec.liver_radii)
    lesion = np.zeros(size, bool)
    for center, radius in spec.lesions:
        if radius < 1:
            raise LesionOutsideLiver(f"lesion radius {radius} < 1")
        sphere = ellipsoid(size, center, (radius,) * 3)
        if not sphere.any() or np.any(sphere & ~liver):
            raise LesionOutsideLiver(f"lesion at {center} with radius {radius} leaves the liver")
        lesion |= sphere
    hu = np.full(size, spec.hu_background, np.float64)
    hu[body_mask(size)] = spec.hu_body
    hu[liver] = spec.hu_liver
    hu[lesion] = spec.hu_lesion
    if spec.noise_sigma > 0:
        hu += np.random.default_rng(spec.seed).normal(0.0, spec.noise_sigma, size)
    return (Volume(hu.astype(np.float32)),
            Volume(liver.astype(np.uint8)),
            Volume(lesion.astype(np.uint8)))


def random_spec(size, rng, noise_sigma=10.0, n_lesions=None):
    """Random liver pose and 0-3 lesions placed fully inside the liver."""
    size = tuple(int(s) for s in size)
    s = np.array(size, dtype=np.float64)
    radii = s * rng.uniform([0.18, 0.14, 0.14], [0.28, 0.22, 0.22])
    center = s / 2 + rng.uniform(-0.08, 0.08, 3) * s
    liver = ellipsoid(size, center, radii)
    if n_lesions is None:
        n_lesions = int(rng.choice(4, p=[0.2, 0.3, 0.3, 0.2]))
    lesions = []
    r_max = max(1.5, min(0.14 * min(size), radii.min() - 1.5))
    r_min = min(max(1.5, 0.06 * min(size)), r_max)
    while len(lesions) < n_lesions:
        r = float(rng.uniform(r_min, r_max))
        u = rng.normal(size=3)
        u *= rng.uniform(0, 1) ** (1 / 3) / np.linalg.norm(u)
        c = center + u * np.maximum(radii - r - 1.0, 0.0)
        sphere = ellipsoid(size, c, (r, r, r))
        if sphere.any() and not np.any(sphere & ~liver):
            lesions.append((tuple(float(v) for v in c), r))
    return PhantomSpec(size=size, liver_center=tuple(float(v) for v in center),
                       liver_radii=tuple(float(v) for v in radii), lesions=lesions,
                       noise_sigma=noise_sigma, seed=int(rng.integers(2 ** 31)))


def generate_dataset(n, size=64, seed=0, noise_sigma=10.0):
    """``n`` phantom triples; at least 30% of them carry a lesion."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if np.isscalar(size):
        size = (int(size),) * 3
    rng = np.random.default_rng(seed)
    counts = [int(rng.choice(4, p=[0.2, 0.3, 0.3, 0.2])) for _ in range(n)]
    need = int(np.ceil(0.3 * n)) - sum(c > 0 for c in counts)
    for i in range(n):
        if need <= 0:
            break
        if counts[i] == 0:
            counts[i] = 1
            need -= 1
    return [generate(random_spec(size, rng, noise_sigma, c)) for c in counts]
