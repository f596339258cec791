"""Peek inside the network: dead-filter counts and activation-map PNGs.

Runs one synthetic chip through a randomly initialized damage
classifier, reports how many filters are dead (activation map exactly
zero) at each convolution, and exports the first convolution's 32
activation maps as grayscale PNGs.
"""

from pathlib import Path

import numpy as np

from stormchip import (build_damage_cnn, dead_filter_report, export_activation_maps, forward,
                       initialize_network)

OUT = Path(__file__).parent / "output" / "maps"

net = build_damage_cnn()
initialize_network(net, np.random.default_rng(3))

rng = np.random.default_rng(4)
chip = rng.random((1, 3, 150, 150), dtype=np.float32)
chip[:, :, 40:110, 40:110] *= 0.3   # dark block gives the filters an edge to find

_, acts = forward(net, chip, mode="eval")

print("dead filters per convolution (zero activation map across the batch):")
for i, spec in enumerate(net.layers):
    if spec.kind == "conv3x3":
        dead, total, fraction = dead_filter_report(acts, i)
        bar = "#" * round(fraction * 40)
        print(f"  layer {i}: {dead:>3}/{total:<3} dead ({fraction:5.1%}) {bar}")

paths = export_activation_maps(acts, 0, OUT, layer_label=1)
print(f"\nwrote {len(paths)} maps to {OUT}")
print("e.g.", Path(paths[0]).name, "...", Path(paths[-1]).name)
