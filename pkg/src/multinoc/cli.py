"""Command-line front ends: assembler, simulator, console and edge demo."""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .host import (ParseError, Session, SessionError, edge_detect_demo, format_matrix,
                   load_image_file, parse_console_line, parse_matrix, run_script)
from .noc import DeadlockError
from .r8.asm import AssemblyError, assemble_with_listing
from .r8.objfile import ObjectFormatError
from .system import (ConfigError, SystemConfig, TrafficConfig, build_system, latency_report,
                     load_config, run_traffic, traffic_generate)


def _core_images(cfg: SystemConfig, specs: list[str]) -> None:
    for spec in specs or []:
        core, _, path = spec.partition("=")
        if not path:
            raise ConfigError(f"--image expects CORE=PATH, got {spec!r}")
        cfg.images[int(core)] = load_image_file(path)
    cfg.validate()


def cmd_asm(args) -> int:
    with open(args.source) as f:
        image, listing = assemble_with_listing(f.read())
    text = image.to_text()
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    if args.listing:
        print(listing, file=sys.stderr)
    return 0


def cmd_sim(args) -> int:
    cfg = load_config(args.config) if args.config else SystemConfig()
    if args.max_cycles is not None:
        cfg.max_cycles = args.max_cycles
    if args.pattern:
        cfg.traffic = TrafficConfig(args.pattern, args.rate, args.seed,
                                    cfg.max_cycles if args.max_cycles else 10_000)
    if cfg.traffic is not None:
        sched = traffic_generate(cfg.mesh, cfg.traffic)
        res = run_traffic(cfg.mesh, sched)
        rep = latency_report(res.records, cfg.routing_cycles)
        print(f"packets={len(sched)} delivered={res.delivered} cycles={res.cycles} "
              f"mean_latency={rep.mean if rep.rows else 0:.2f} max_gap={rep.max_gap}")
        if args.csv:
            with open(args.csv, "w") as f:
                f.write("src,dst,size,inject,deliver,hops\n")
                for r in res.records:
                    f.write(f"{r.source.x}{r.source.y},{r.target.x}{r.target.y},{r.size},"
                            f"{r.inject_cycle},{r.deliver_cycle},{r.hops}\n")
        return 0 if res.all_delivered else 1
    _core_images(cfg, args.image)
    system = build_system(cfg)
    for core in args.activate or []:
        system.processor(core).activated = True
    trace = system.run()
    if args.trace:
        with open(args.trace, "w") as f:
            f.write(trace.text())
    else:
        sys.stdout.write(trace.text())
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(trace.packet_csv())
    print(f"cycles={trace.cycles} digest={trace.digest()}", file=sys.stderr)
    return 0


def cmd_console(args) -> int:
    cfg = load_config(args.config) if args.config else SystemConfig()
    _core_images(cfg, args.image)
    session = Session(build_system(cfg))
    if args.script:
        tr = run_script(args.script, session)
        sys.stdout.write(tr.text())
        return tr.exit_code
    shown = 0
    for line in sys.stdin:
        try:
            cmd = parse_console_line(line)
            if cmd is None:
                continue
            session.transcript.append(f"> {cmd}")
            if cmd.kind.value == "quit":
                break
            if cmd.kind.value == "expect":
                ok, msg = session.expect(cmd.expect)
                session.transcript.append("= ok" if ok else f"! {msg}")
            else:
                session.execute(cmd)
        except (ParseError, SessionError, OSError) as e:
            session.transcript.append(f"! {e}")
        for out in session.transcript[shown:]:
            print(out, flush=True)
        shown = len(session.transcript)
    return 0


def cmd_edge(args) -> int:
    with open(args.input) as f:
        image = parse_matrix(f.read())
    cfg = load_config(args.config) if args.config else SystemConfig()
    out = edge_detect_demo(image, Session(build_system(cfg)))
    text = format_matrix(out)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multinoc", description="MultiNoC platform simulator")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("asm", help="assemble R8 source to an object file")
    a.add_argument("source")
    a.add_argument("-o", "--output")
    a.add_argument("-l", "--listing", action="store_true", help="print a listing to stderr")
    a.set_defaults(func=cmd_asm)

    s = sub.add_parser("sim", help="run the platform or NoC-only traffic")
    s.add_argument("-c", "--config")
    s.add_argument("-i", "--image", action="append", metavar="CORE=PATH")
    s.add_argument("--activate", action="append", type=int, metavar="CORE",
                   help="start a processor without going through the serial IP")
    s.add_argument("-n", "--max-cycles", type=int)
    s.add_argument("-t", "--trace", help="trace output path")
    s.add_argument("--csv", help="packet table output path")
    s.add_argument("--pattern", choices=["uniform", "pairwise"], help="NoC-only traffic mode")
    s.add_argument("--rate", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sim)

    c = sub.add_parser("console", help="interactive or scripted host console")
    c.add_argument("-c", "--config")
    c.add_argument("-s", "--script")
    c.add_argument("-i", "--image", action="append", metavar="CORE=PATH")
    c.set_defaults(func=cmd_console)

    e = sub.add_parser("edge", help="parallel edge detection on a text matrix")
    e.add_argument("input")
    e.add_argument("-o", "--output")
    e.add_argument("-c", "--config")
    e.set_defaults(func=cmd_edge)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AssemblyError, ObjectFormatError, ConfigError, ParseError, SessionError,
            DeadlockError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
