# %% [markdown]
# # Talking to the platform
# The host reaches the platform only through the serial IP.  A session
# synchronizes, loads a program, starts it and reads memory back.

# %%
from multinoc import Session, parse_console_line
from multinoc.host import program_path

s = Session()
for line in ("55", f"load 1 {program_path('store7.asm')}", "02 01", "run 200",
             "00 01 01 00 20"):
    s.execute(parse_console_line(line))
print("\n".join(s.transcript))

# %% [markdown]
# The raw frame `00 01 01 00 20` reads one word at 0x0020 of core 1.  The
# echo program shows scanf and printf through the same link.

# %%
s = Session()
for line in ("sync", f"load 2 {program_path('echo.asm')}", "activate 2"):
    s.execute(parse_console_line(line))
for v in (41, 99, 0xFFFF):
    s.expect(("scanf", "2"))
    s.execute(parse_console_line(f"scanf 2 {v}"))
    s.expect(("printf", "2", str((v + 1) & 0xFFFF)))
print("\n".join(s.transcript[-6:]))
