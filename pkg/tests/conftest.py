import base64

import numpy as np

from vizreward import imaging


def rand_image(seed: int, w: int = 64, h: int = 64, channels: int = 3) -> imaging.ImageBuf:
    rng = np.random.RandomState(seed)
    return imaging.from_array(rng.randint(0, 256, size=(h, w, channels), dtype=np.uint8))


def chart_image(seed: int, w: int = 640, h: int = 480) -> imaging.ImageBuf:
    """White canvas with random colored boxes and rules; noise degrades it measurably."""
    rng = np.random.RandomState(seed)
    arr = np.full((h, w, 3), 255, dtype=np.uint8)
    for _ in range(rng.randint(3, 8)):
        x0, y0 = rng.randint(0, w - 40), rng.randint(0, h - 40)
        bw, bh = rng.randint(20, w // 3), rng.randint(20, h // 3)
        arr[y0 : min(y0 + bh, h), x0 : min(x0 + bw, w)] = rng.randint(0, 256, 3)
    for _ in range(rng.randint(2, 5)):
        arr[rng.randint(0, h), :] = rng.randint(0, 256, 3)
    return imaging.from_array(arr)


def gauss_noise(img: imaging.ImageBuf, sigma: float, seed: int) -> imaging.ImageBuf:
    if sigma == 0:
        return img
    rng = np.random.RandomState(seed)
    arr = img.samples.astype(np.float64) + rng.normal(0.0, sigma, img.samples.shape)
    return imaging.from_array(np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8))


def b64_rollout(img: imaging.ImageBuf, language: str = "identity") -> str:
    payload = base64.b64encode(imaging.encode_png(img)).decode("ascii")
    return f"```{language}\n{payload}\n```"

