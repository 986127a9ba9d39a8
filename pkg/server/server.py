#!/usr/bin/env python3
"""
HopLink Mock SPARQL Server - launcher
Serves a SPARQL fixture file over HTTP for offline runs of the sp strategy.

    python server/server.py tests/fixtures/sparql_fixture.json --port 8890
"""

import argparse
import logging
import os
import platform
import signal
import sys

# Repository root on the path when run as a script
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from pipelines.sparql import MockSparqlEndpoint
from server.mock_endpoint import MockSparqlServer
from shared.errors import HopLinkError


def signal_handler(sig, frame):
    """Handle termination by raising into the serving loop"""
    raise KeyboardInterrupt


def setup_signal_handlers():
    """Set up signal handlers in a cross-platform way"""
    try:
        # SIGINT already raises KeyboardInterrupt
        if platform.system() != 'Windows':
            signal.signal(signal.SIGTERM, signal_handler)
    except Exception as e:
        print(f"⚠️  Signal handler setup failed: {e}", file=sys.stderr)


def main(argv=None) -> int:
    """Main entry point for the mock SPARQL server"""
    parser = argparse.ArgumentParser(prog="hoplink-mock-sparql")
    parser.add_argument("fixture", help="SPARQL fixture JSON (query -> results or error)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8890)
    parser.add_argument("--debug", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    setup_signal_handlers()

    try:
        fixtures = MockSparqlEndpoint.from_file(args.fixture)
    except HopLinkError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code

    server = MockSparqlServer(fixtures, host=args.host, port=args.port)
    print(f"🚀 Mock SPARQL server on http://{args.host}:{args.port}/sparql", file=sys.stderr)
    print("   Press Ctrl+C to stop", file=sys.stderr)
    try:
        server.start()
    except KeyboardInterrupt:
        print("\n🛑 Shutting down mock SPARQL server...", file=sys.stderr)
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
