"""Masking strategies for masked-autoencoder pretraining.

A mask is a boolean array over the token grid with True = visible, False =
masked (the token the decoder must reconstruct). Sequence masks have shape
(T, q, q) for T frames on a q x q patch grid.

The progression-aware strategy centers a radial kernel near the middle of
the grid (where the disease signal concentrates), hides the tokens under the
kernel, and hides peripheral tokens at random with a probability that grows
with severity grade: threshold 1 - 0.1 * grade on a uniform draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KERNEL_VARIANTS = ("isotropic", "as_printed")

STRATEGIES = ("random", "visit", "prog_aware", "prog_aware_random")

N_GRADES = 5


def gaussian_kernel(q: int, center: tuple[float, float], r: float,
                    variant: str = "isotropic") -> np.ndarray:
    """(q, q) radial kernel with peak 1 at `center`.

    isotropic:  exp(-pi/(r*q^2) * ((i-cx)^2 + (j-cy)^2) / 2)
    as_printed: exp(-pi/(r*q^2) * (((i-cx) - (j-cy)) / 2)^2), which decays
                only across the difference coordinate and leaves a constant
                ridge along i - j = cx - cy.
    """
    if q < 2:
        raise ValueError(f"grid side must be at least 2, got {q}")
    if r <= 0.0:
        raise ValueError(f"kernel parameter r must be positive, got {r}")
    if variant not in KERNEL_VARIANTS:
        raise ValueError(f"unknown kernel variant {variant!r}; expected one of {KERNEL_VARIANTS}")
    cx, cy = center
    if not (0 <= cx <= q - 1 and 0 <= cy <= q - 1):
        raise ValueError(f"kernel center {center} outside the {q}x{q} grid")
    i = np.arange(q, dtype=np.float64)[:, None]
    j = np.arange(q, dtype=np.float64)[None, :]
    coef = np.pi / (r * q * q)
    if variant == "isotropic":
        return np.exp(-coef * ((i - cx) ** 2 + (j - cy) ** 2) / 2.0)
    return np.exp(-coef * (((i - cx) - (j - cy)) / 2.0) ** 2)


def severity_threshold(grade: int) -> float:
    """Visibility threshold 1 - 0.1 * grade for peripheral tokens."""
    if not isinstance(grade, (int, np.integer)):
        raise TypeError(f"grade must be an integer, got {type(grade).__name__}")
    if not 0 <= grade < N_GRADES:
        raise ValueError(f"grade must be in 0..{N_GRADES - 1}, got {grade}")
    return 1.0 - 0.1 * int(grade)


def prog_aware_mask(q: int, grade: int, r: float, rng: np.random.Generator,
                          variant: str = "isotropic") -> np.ndarray:
    """Visibility mask for one frame.

    The kernel center is the grid middle jittered by -1/0/+1 per axis. A
    token stays visible only where the kernel is below r (outside the
    central blob) and an independent uniform draw is below the severity
    threshold. Draw order is fixed: x offset, y offset, then the (q, q)
    uniform field.
    """
    cx = q // 2 + int(rng.integers(-1, 2))
    cy = q // 2 + int(rng.integers(-1, 2))
    cx = min(max(cx, 0), q - 1)
    cy = min(max(cy, 0), q - 1)
    kernel = gaussian_kernel(q, (cx, cy), r, variant=variant)
    field = rng.random((q, q))
    return (kernel < r) & (field < severity_threshold(grade))


def sequence_prog_mask(q: int, grades, r: float, rng: np.random.Generator,
                    variant: str = "isotropic",
                    randomize_grades: bool = False) -> np.ndarray:
    """(T, q, q) visibility mask, one progression-aware frame mask per visit.

    With randomize_grades=True the true grade of each frame is replaced by a
    uniform draw from 0..4 (the label-shuffled control); the draw happens
    before the frame's own mask draws.
    """
    grades = np.asarray(grades)
    masks = np.empty((len(grades), q, q), dtype=bool)
    for t, grade in enumerate(grades):
        if randomize_grades:
            grade = int(rng.integers(0, N_GRADES))
        masks[t] = prog_aware_mask(q, int(grade), r, rng, variant=variant)
    return masks


def random_mask(q: int, n_frames: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """(T, q, q) mask hiding exactly floor(ratio * T * q * q) tokens chosen
    uniformly over the whole sequence."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    n = n_frames * q * q
    n_masked = int(np.floor(ratio * n))
    visible = np.ones(n, dtype=bool)
    visible[rng.permutation(n)[:n_masked]] = False
    return visible.reshape(n_frames, q, q)


def visit_mask(q: int, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """(T, q, q) mask hiding every token of one uniformly chosen frame."""
    if n_frames < 1:
        raise ValueError(f"need at least one frame, got {n_frames}")
    visible = np.ones((n_frames, q, q), dtype=bool)
    visible[int(rng.integers(n_frames))] = False
    return visible


@dataclass(frozen=True)
class MaskConfig:
    """Which strategy to apply during pretraining and its knobs.

    ratio is used by "random"; r and kernel_variant by the progression-aware
    strategies. "prog_aware_random" is the label-shuffled control.
    """

    strategy: str = "prog_aware"
    ratio: float = 0.75
    r: float = 0.75
    kernel_variant: str = "isotropic"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown mask strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.kernel_variant not in KERNEL_VARIANTS:
            raise ValueError(f"unknown kernel variant {self.kernel_variant!r}; expected one of {KERNEL_VARIANTS}")


def make_mask(config: MaskConfig, q: int, grades, rng: np.random.Generator) -> np.ndarray:
    """Dispatch to the configured strategy for one sequence of visits."""
    n_frames = len(grades)
    if config.strategy == "random":
        return random_mask(q, n_frames, config.ratio, rng)
    if config.strategy == "visit":
        return visit_mask(q, n_frames, rng)
    randomize = config.strategy == "prog_aware_random"
    return sequence_prog_mask(q, grades, config.r, rng,
                           variant=config.kernel_variant, randomize_grades=randomize)


def expected_masked_fraction(q: int, grade: int, r: float,
                             variant: str = "isotropic") -> float:
    """Mean masked fraction of a progression-aware frame mask with the kernel
    centered exactly at (q//2, q//2): central fraction f_c plus (1 - f_c)
    times the peripheral masking probability 0.1 * grade."""
    kernel = gaussian_kernel(q, (q // 2, q // 2), r, variant=variant)
    f_c = float(np.mean(kernel >= r))
    return f_c + (1.0 - f_c) * 0.1 * grade


def mask_to_pbm(visible_frame: np.ndarray) -> bytes:
    """Render one (q, q) frame mask as a plain-text PBM image, masked tokens
    black (1) and visible tokens white (0)."""
    if visible_frame.ndim != 2:
        raise ValueError(f"expected a 2-D frame mask, got shape {visible_frame.shape}")
    h, w = visible_frame.shape
    lines = [f"P1\n{w} {h}\n"]
    for row in ~np.asarray(visible_frame, dtype=bool):
        lines.append(" ".join("1" if bit else "0" for bit in row) + "\n")
    return "".join(lines).encode("ascii")
