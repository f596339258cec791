"""Label-preserving random affine augmentation of training chips.

Rotation, optional horizontal flip, shifts, shear, and zoom compose into
a single affine map applied with one bilinear resample.  Out-of-bounds
samples take the nearest edge pixel, so augmented values never leave the
input's value range.  The identity configuration reproduces the input
bitwise.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class AugmentConfig:
    rotation_deg_max: float = 40.0
    horizontal_flip: bool = True
    shift_frac_max: float = 0.2
    shear_frac_max: float = 0.2
    zoom_frac_max: float = 0.2
    enabled: bool = True

    def __post_init__(self):
        if self.rotation_deg_max < 0:
            raise ValueError("rotation_deg_max must be >= 0")
        for name in ("shift_frac_max", "shear_frac_max", "zoom_frac_max"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")


def _translation(dr, dc):
    m = np.eye(3)
    m[0, 2] = dr
    m[1, 2] = dc
    return m


def _primitives(rotation_deg, flip, shear, zoom):
    """Centered primitives in application order (flip, shear, zoom, rotate)."""
    theta = np.deg2rad(rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta), 0.0],
                    [np.sin(theta), np.cos(theta), 0.0],
                    [0.0, 0.0, 1.0]])
    shr = np.array([[1.0, 0.0, 0.0],
                    [shear, 1.0, 0.0],
                    [0.0, 0.0, 1.0]])
    zom = np.diag([zoom, zoom, 1.0])
    flp = np.diag([1.0, -1.0 if flip else 1.0, 1.0])
    return flp, shr, zom, rot


def affine_matrix(h, w, rotation_deg=0.0, flip=False, shift=(0.0, 0.0), shear=0.0,
                  zoom=1.0, inverse=False):
    """Homogeneous (row, col) map for the composed transform.

    The forward matrix places source content: flip, then shear, zoom,
    and rotation about the image center, then the (row, col) pixel
    shift.  inverse=True builds the exact output-to-source map from the
    closed-form primitive inverses (no matrix inversion), which is what
    the sampler consumes.
    """
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    to_center = _translation(-cr, -cc)
    from_center = _translation(cr, cc)
    flp, shr, zom, rot = _primitives(rotation_deg, flip, shear, zoom)
    if not inverse:
        m = from_center @ rot @ zom @ shr @ flp @ to_center
        return _translation(shift[0], shift[1]) @ m
    rot_i = rot.T
    zom_i = np.diag([1.0 / zoom, 1.0 / zoom, 1.0])
    shr_i = np.array([[1.0, 0.0, 0.0],
                      [-shear, 1.0, 0.0],
                      [0.0, 0.0, 1.0]])
    m = from_center @ flp @ shr_i @ zom_i @ rot_i @ to_center
    return m @ _translation(-shift[0], -shift[1])


def apply_affine(image, inverse_matrix):
    """Bilinear-resample a C x H x W image through an output-to-source map.

    Source coordinates are clamped to the image, which fills anything
    out of bounds with the nearest edge pixel.  An exact identity matrix
    short-circuits to a bitwise copy.
    """
    image = np.asarray(image)
    c, h, w = image.shape
    if np.array_equal(inverse_matrix, np.eye(3)):
        return image.copy()
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    src_r = inverse_matrix[0, 0] * rows + inverse_matrix[0, 1] * cols + inverse_matrix[0, 2]
    src_c = inverse_matrix[1, 0] * rows + inverse_matrix[1, 1] * cols + inverse_matrix[1, 2]
    src_r = np.clip(src_r, 0.0, h - 1.0)
    src_c = np.clip(src_c, 0.0, w - 1.0)
    r0 = np.floor(src_r).astype(np.intp)
    c0 = np.floor(src_c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (src_r - r0).astype(image.dtype)
    fc = (src_c - c0).astype(image.dtype)
    top = image[:, r0, c0] * (1 - fc) + image[:, r0, c1] * fc
    bot = image[:, r1, c0] * (1 - fc) + image[:, r1, c1] * fc
    return top * (1 - fr) + bot * fr


def random_affine(image, cfg, rng):
    """One random draw of the composed transform applied to a C x H x W image.

    Draw order is fixed (rotation, flip, row shift, col shift, shear,
    zoom) so a given rng stream always produces the same augmentation.
    """
    c, h, w = image.shape
    rotation = rng.uniform(-cfg.rotation_deg_max, cfg.rotation_deg_max)
    flip = bool(cfg.horizontal_flip and rng.random() < 0.5)
    shift_r = rng.uniform(-cfg.shift_frac_max, cfg.shift_frac_max) * h
    shift_c = rng.uniform(-cfg.shift_frac_max, cfg.shift_frac_max) * w
    shear = rng.uniform(-cfg.shear_frac_max, cfg.shear_frac_max)
    zoom = rng.uniform(1.0 - cfg.zoom_frac_max, 1.0 + cfg.zoom_frac_max)
    inv = affine_matrix(h, w, rotation_deg=rotation, flip=flip, shift=(shift_r, shift_c),
                        shear=shear, zoom=zoom, inverse=True)
    return apply_affine(image, inv)


def augment_batch(batch, cfg, rng):
    """Independent random transform per sample; disabled config passes through."""
    if not cfg.enabled:
        return batch
    batch = np.asarray(batch)
    return np.stack([random_affine(img, cfg, rng) for img in batch])
