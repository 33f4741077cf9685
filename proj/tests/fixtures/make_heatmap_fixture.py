"""Writes heatmap_small.bin with numpy's FFT as the reference transform."""
import struct
from pathlib import Path

import numpy as np

VIDEO_ID, D, N, M = 42, 3, 12, 4

n = np.arange(N)
seq = np.stack([np.sin(0.7 * (d + 1) * n) + 0.1 * d + np.cos(0.3 * n) for d in range(D)])
spec = np.fft.fft(seq, axis=1)[:, :M]
amp = np.abs(spec)
phase = np.angle(spec)
phase[amp < 1e-9] = 0.0
phase[phase <= -np.pi] = np.pi

out = Path(__file__).with_name("heatmap_small.bin")
with open(out, "wb") as f:
    f.write(struct.pack("<qII", VIDEO_ID, D, M))
    f.write(amp.astype("<f4").tobytes())
    f.write(phase.astype("<f4").tobytes())
