"""The degradation operators.

Every op has the same signature: (uint8 image, level parameter, Generator) ->
float64 array in [0, 255] space. The registry quantizes the result back to
uint8 exactly once, so each distortion rounds once regardless of how many
internal colorspace trips it makes. Stochastic ops draw a unit-scale random
field first and scale it by the level parameter afterwards, so the same seed
produces aligned fields across severity levels.

Codec ops (jpeg, jpeg2000) are the exception to the float convention: the
codec round trip defines the degradation, and its integer output is returned
as float.
"""

from __future__ import annotations

import io
import warnings

import numpy as np
from PIL import Image
from scipy.ndimage import convolve, gaussian_filter, map_coordinates
from skimage import color as skcolor

_EDGE = "nearest"


def _rgb01(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 255.0


def _from01(arr: np.ndarray) -> np.ndarray:
    return arr * 255.0


def _lab(img: np.ndarray) -> np.ndarray:
    return skcolor.rgb2lab(_rgb01(img))


def _from_lab(lab: np.ndarray) -> np.ndarray:
    # Heavy chroma edits leave the sRGB gamut; skimage clips and warns.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rgb = skcolor.lab2rgb(lab)
    return _from01(np.clip(rgb, 0.0, 1.0))


# -- blur -------------------------------------------------------------------


def gaussian_blur(img, sigma, rng):
    return gaussian_filter(img.astype(np.float64), sigma=(sigma, sigma, 0.0), mode=_EDGE)


def _disk_kernel(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    dist = np.sqrt(yy * yy + xx * xx)
    k = np.clip(radius + 0.5 - dist, 0.0, 1.0)  # one-pixel antialiased rim
    return k / k.sum()


def lens_blur(img, radius, rng):
    k = _disk_kernel(radius)
    x = img.astype(np.float64)
    out = np.empty_like(x)
    for c in range(3):
        out[:, :, c] = convolve(x[:, :, c], k, mode=_EDGE)
    return out


def _line_kernel(length: int, angle_deg: float = 45.0) -> np.ndarray:
    # Unit-mass segment splatted bilinearly around the kernel center.
    half = (length - 1) / 2.0
    rad = np.deg2rad(angle_deg)
    r = int(np.ceil(half * max(abs(np.cos(rad)), abs(np.sin(rad)))))
    size = 2 * r + 1
    k = np.zeros((size, size), dtype=np.float64)
    t = np.linspace(-half, half, num=8 * length)
    ys = -np.sin(rad) * t + r
    xs = np.cos(rad) * t + r
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0
    for dy, dx, w in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx), (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        np.add.at(k, (np.clip(y0 + dy, 0, size - 1), np.clip(x0 + dx, 0, size - 1)), w)
    return k / k.sum()


def motion_blur(img, length, rng):
    k = _line_kernel(int(length))
    x = img.astype(np.float64)
    out = np.empty_like(x)
    for c in range(3):
        out[:, :, c] = convolve(x[:, :, c], k, mode=_EDGE)
    return out


# -- color ------------------------------------------------------------------


def color_diffuse(img, sigma, rng):
    lab = _lab(img)
    lab[:, :, 1] = gaussian_filter(lab[:, :, 1], sigma, mode=_EDGE)
    lab[:, :, 2] = gaussian_filter(lab[:, :, 2], sigma, mode=_EDGE)
    return _from_lab(lab)


def color_shift(img, offset, rng):
    # Displace the green channel diagonally, replicating edges.
    d = int(offset)
    x = img.astype(np.float64)
    g = np.pad(x[:, :, 1], ((d, 0), (d, 0)), mode="edge")
    x[:, :, 1] = g[: x.shape[0], : x.shape[1]]
    return x


def color_quantize(img, n_levels, rng):
    n = int(n_levels)
    q = np.floor(img.astype(np.float64) * n / 256.0)
    return (q + 0.5) * (256.0 / n) - 0.5


def color_desaturate(img, factor, rng):
    hsv = skcolor.rgb2hsv(_rgb01(img))
    hsv[:, :, 1] *= factor
    return _from01(skcolor.hsv2rgb(hsv))


def color_oversaturate(img, factor, rng):
    lab = _lab(img)
    lab[:, :, 1] *= factor
    lab[:, :, 2] *= factor
    return _from_lab(lab)


# -- compression ------------------------------------------------------------


def jpeg(img, quality, rng):
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def jpeg2000(img, rate, rng):
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(
        buf, format="JPEG2000", quality_mode="rates", quality_layers=[float(rate)], irreversible=True
    )
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


# -- brightness -------------------------------------------------------------


def brighten(img, amount, rng):
    v = _rgb01(img)
    return _from01(np.power(v, 1.0 / (1.0 + amount)))


def darken(img, amount, rng):
    v = _rgb01(img)
    return _from01(np.power(v, 1.0 + amount))


def mean_shift(img, shift, rng):
    return img.astype(np.float64) + shift


# -- noise and spatial ------------------------------------------------------


def white_noise(img, sigma, rng):
    field = rng.normal(0.0, 1.0, size=img.shape)
    return img.astype(np.float64) + sigma * field


def white_noise_color(img, sigma, rng):
    # Chroma-only noise in YCbCr; luma stays clean.
    field = rng.normal(0.0, 1.0, size=(img.shape[0], img.shape[1], 2))
    ycc = skcolor.rgb2ycbcr(_rgb01(img))
    ycc[:, :, 1] += sigma * field[:, :, 0]
    ycc[:, :, 2] += sigma * field[:, :, 1]
    return _from01(np.clip(skcolor.ycbcr2rgb(ycc), 0.0, 1.0))


def impulse_noise(img, prob, rng):
    # Thresholding one uniform field keeps corrupted sets nested across levels.
    u = rng.random(size=img.shape)
    out = img.astype(np.float64)
    out[u < prob / 2.0] = 0.0
    out[u > 1.0 - prob / 2.0] = 255.0
    return out


def multiplicative_noise(img, sigma, rng):
    field = rng.normal(0.0, 1.0, size=img.shape)
    return img.astype(np.float64) * (1.0 + sigma * field)


def denoise_oversmooth(img, amount, rng):
    # Residue of an aggressive denoiser: noise injected, then oversmoothed.
    sigma_noise, sigma_blur = amount
    field = rng.normal(0.0, 1.0, size=img.shape)
    noisy = img.astype(np.float64) + sigma_noise * field
    return gaussian_filter(noisy, sigma=(sigma_blur, sigma_blur, 0.0), mode=_EDGE)


def jitter(img, sigma, rng):
    h, w = img.shape[:2]
    dy = rng.normal(0.0, 1.0, size=(h, w)) * sigma
    dx = rng.normal(0.0, 1.0, size=(h, w)) * sigma
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([yy + dy, xx + dx])
    x = img.astype(np.float64)
    out = np.empty_like(x)
    for c in range(3):
        out[:, :, c] = map_coordinates(x[:, :, c], coords, order=1, mode=_EDGE)
    return out


def pixelate(img, scale, rng):
    h, w = img.shape[:2]
    small = (max(1, int(round(w * scale))), max(1, int(round(h * scale))))
    im = Image.fromarray(img, mode="RGB")
    out = im.resize(small, Image.NEAREST).resize((w, h), Image.NEAREST)
    return np.asarray(out, dtype=np.float64)
