"""Cycle-level model of a 2x2 Hermes NoC platform with R8 processors."""

from .host import (ConsoleCommand, MonitorEvent, Session, bundled_images, edge_detect_demo,
                   edge_reference, parse_console_line, run_script)
from .ips import AddressTarget, MemoryIp, ProcessorIp, SerialIp, decode_address
from .noc import (Mesh, MeshConfig, NetAddress, PacketRecord, Port, arbitrate, link_cycle,
                  min_latency, peak_router_throughput, router_cycle, xy_route)
from .services import CoreMap, CoreRole, ServiceKind, ServiceMessage, decode_packet, encode_packet
from .system import (SimTrace, System, SystemConfig, TrafficConfig, build_system,
                     latency_report, load_config, throughput_report, traffic_generate)

__version__ = "0.1.0"

__all__ = [
    "ConsoleCommand", "MonitorEvent", "Session", "bundled_images", "edge_detect_demo", "edge_reference",
    "parse_console_line", "run_script",
    "AddressTarget", "MemoryIp", "ProcessorIp", "SerialIp", "decode_address",
    "Mesh", "MeshConfig", "NetAddress", "PacketRecord", "Port", "arbitrate", "link_cycle",
    "min_latency", "peak_router_throughput", "router_cycle", "xy_route",
    "CoreMap", "CoreRole", "ServiceKind", "ServiceMessage", "decode_packet", "encode_packet",
    "SimTrace", "System", "SystemConfig", "TrafficConfig", "build_system",
    "latency_report", "load_config", "throughput_report", "traffic_generate",
]
