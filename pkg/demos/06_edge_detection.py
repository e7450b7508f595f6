# %% [markdown]
# # Parallel edge detection
# Both processors run the same gradient worker.  The host hands out image
# lines in pairs and collects |gx| + |gy| for each pixel.

# %%
import numpy as np

from multinoc import bundled_images, edge_detect_demo, edge_reference

images = bundled_images()
{name: img.shape for name, img in images.items()}

# %%
for name, img in images.items():
    out = edge_detect_demo(img)
    print(name, "identical to reference:", bool((out == edge_reference(img)).all()))

# %%
img = images["disc16"]
out = edge_detect_demo(img)
print("\n".join("".join(row) for row in np.where(out > 0, "#", ".")))
