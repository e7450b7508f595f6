# %% [markdown]
# # Wait and notify
# Core 1 blocks until core 2 notifies it.  If the notify arrives first it
# is latched and the later wait falls straight through.

# %%
from multinoc import SystemConfig, build_system
from multinoc.host import program_path
from multinoc.r8 import assemble


def scenario(p1):
    images = {1: assemble(open(program_path(p1)).read()),
              2: assemble(open(program_path("notify.asm")).read())}
    s = build_system(SystemConfig(images=images))
    s.host_send([0x55, 0x02, 0x01, 0x02, 0x02])
    s.run()
    return [line for line in s.trace.lines()
            if any(k in line for k in ("wait", "notify", "printf", "halt"))]


# %%
print("\n".join(scenario("wait.asm")))

# %%
print("\n".join(scenario("wait_late.asm")))
