"""Which sliding windows become positives for a synthetic scene.

Run: python3 demos/assignment_walkthrough.py
"""

from collections import Counter

from densemask.assignment import assign
from densemask.harness import network_windows
from densemask.heads import NetConfig
from densemask.synth import SceneConfig, Shape, generate_scene

scene = SceneConfig(count_range=(3, 3))
image, instances = generate_scene(scene, index=4)
print(f"image {image.shape}, {len(instances)} visible instances")
for j, g in enumerate(instances):
    print(f"  #{j} {Shape(g.category).name.lower():<9} bbox {g.bbox} longer side {g.longer_side}")

net = NetConfig()  # two-level bipyramid, 9x9 base windows
windows = network_windows(net, scene.image_size)
labels = assign(windows, instances)
pos = [a for a in labels if a.is_positive]
print(f"\n{len(windows)} windows, {len(pos)} positives")
by_level = Counter((a.window.level, a.positive.instance) for a in pos)
for (level, inst), n in sorted(by_level.items()):
    side = next(a.window.side for a in pos if a.window.level == level)
    print(f"  level {level} ({side:.0f} px windows): instance #{inst} owns {n} window(s)")

# A positive carries a soft target: the fraction of each window cell the mask covers.
a = pos[0]
print(f"\ntarget for window {a.window.y, a.window.x} on level {a.window.level}:")
for row in a.positive.target_mask[:: max(1, a.window.size[0] // 9)]:
    print("  " + " ".join(f"{v:.1f}" for v in row[:: max(1, a.window.size[1] // 9)]))
