# %% [markdown]
# # Zero-load latency
# A single packet on an idle mesh pays 7 cycles per router it crosses
# plus 2 cycles per flit.  We send one packet between every pair of
# corners of a 4x4 mesh and compare the measured latency with that rule.

# %%
import numpy as np

from multinoc import Mesh, MeshConfig, NetAddress, min_latency

corners = [NetAddress(0, 0), NetAddress(3, 0), NetAddress(0, 3), NetAddress(3, 3)]
sizes = np.array([3, 10, 50])

# %%
rows = []
for src in corners:
    for dst in corners:
        for size in sizes:
            mesh = Mesh(MeshConfig(4, 4))
            mesh.nis[src].send([dst.pack(), int(size) - 2] + [0] * (int(size) - 2))
            mesh.run()
            r = mesh.records[0]
            rows.append((r.hops, r.size, r.latency, min_latency(r.hops, r.size)))
rows = np.array(rows)
rows[:6]

# %% [markdown]
# Columns are routers crossed, packet size, measured and predicted latency.

# %%
assert (rows[:, 2] == rows[:, 3]).all()
print(f"{len(rows)} packets, every latency equals n*7 + 2*P")
