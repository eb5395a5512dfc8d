"""Site/center message protocol and transports."""
from .transport import (
    FileTransport,
    InProcessTransport,
    SiteWorker,
    TcpTransport,
    Transport,
    file_site_loop,
    make_transport,
    run_sites,
    tcp_site_loop,
)
from .wire import (
    PROTOCOL_VERSION,
    TERMINATE_ROUND,
    Direction,
    RoundMessage,
    deserialize,
    serialize,
    terminate_message,
)

__all__ = [
    "Direction",
    "FileTransport",
    "InProcessTransport",
    "PROTOCOL_VERSION",
    "RoundMessage",
    "SiteWorker",
    "TERMINATE_ROUND",
    "TcpTransport",
    "Transport",
    "deserialize",
    "file_site_loop",
    "make_transport",
    "run_sites",
    "serialize",
    "tcp_site_loop",
    "terminate_message",
]
