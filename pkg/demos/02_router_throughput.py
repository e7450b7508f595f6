# %% [markdown]
# # Center-router throughput
# Five flows cross the center of a 3x3 mesh on disjoint input and output
# ports, so the router keeps five connections open at once.  Each moves a
# flit every two cycles.

# %%
import numpy as np

from multinoc import NetAddress, peak_router_throughput, throughput_report
from multinoc.system import center_flows, peak_scenario

center_flows(3, 3)

# %%
mesh = peak_scenario(packets=4)
center = NetAddress(1, 1)
rep = throughput_report(mesh, (100, 500))
rep.router_rate(center), rep.router_bits(center) / 1e9, rep.utilization(center)

# %% [markdown]
# Inside one packet lifetime the router is saturated.  A sliding
# 1000-cycle window shows the bubbles that packet boundaries introduce:
# every new header waits for the routing engine.

# %%
times = np.sort(np.concatenate([np.array(l.log) for l in mesh.links
                                if l.src_router is not None and l.src_router.address == center]))
starts = np.arange(0, times[-1] - 999)
counts = np.searchsorted(times, starts + 1000) - np.searchsorted(times, starts)
print("best 1000-cycle window:", counts.max(), "flits")
print("analytical peak:", peak_router_throughput(50e6, 8) / 1e9, "Gbit/s")
