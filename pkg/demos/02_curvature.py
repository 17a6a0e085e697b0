"""Turning angles of embedded trajectories, and what they look like on synthetic videos."""
import math
import tempfile

import numpy as np

from coherent_embed import EncoderConfig, SyntheticSpec, generate_synthetic, load_all, mac, tac
from coherent_embed.trainer import embed_frames, encoder_from_checkpoint, random_init_checkpoint

# a square walk turns 90 degrees twice
square = [[0, 0], [1, 0], [1, 1], [0, 1]]
print("square walk TAC (deg):", round(math.degrees(tac(square)), 2), "MAC:", round(math.degrees(mac(square)), 2))

# a noisy line is nearly straight; more noise bends it more
rng = np.random.default_rng(0)
line = np.linspace(0, 1, 30)[:, None] * np.ones(3)
for sigma in (0.0, 0.01, 0.05):
    print(f"noise {sigma}: mean turn {math.degrees(tac(line + sigma * rng.standard_normal(line.shape))) / 28:.2f} deg")

# frames of a small synthetic dataset, embedded by an untrained encoder
with tempfile.TemporaryDirectory() as tmp:
    index = generate_synthetic(SyntheticSpec(videos_per_class=2, frames_per_video=20, seed=3), tmp)
    videos = load_all(index)
embed = embed_frames(encoder_from_checkpoint(random_init_checkpoint(EncoderConfig(dim=32), seed=0)))
for entry, v in list(zip(index.videos, videos))[::2]:
    path = embed(v.frames)
    print(f"video {entry.video_id} (class {entry.label}): TAC {math.degrees(tac(path)):.0f} deg over {len(path)} frames")
