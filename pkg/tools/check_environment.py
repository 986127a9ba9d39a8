#!/usr/bin/env python3
"""
HopLink Environment Check
Verifies the interpreter, the required packages and the core codecs before
a long evaluation run.
"""

import importlib
import os
import platform
import socket
import sys
import tempfile

# Repository root on the path when run as a script
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

REQUIRED_PACKAGES = ("numpy", "requests", "tqdm", "dotenv")


def test_python_version():
    """Test Python version compatibility"""
    print(f"🐍 Python Version: {sys.version}")
    if sys.version_info >= (3, 9):
        print("✅ Python version compatible (3.9+)")
        return True
    print("❌ Python version too old (need 3.9+)")
    return False


def test_packages():
    """Test that every runtime dependency imports"""
    ok = True
    for name in REQUIRED_PACKAGES:
        try:
            module = importlib.import_module(name)
            print(f"✅ {name} {getattr(module, '__version__', '')}".rstrip())
        except ImportError as e:
            print(f"❌ {name} import failed: {e}")
            ok = False
    return ok


def test_loopback():
    """The mock SPARQL server binds to 127.0.0.1"""
    try:
        test_socket = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        test_socket.bind(('127.0.0.1', 0))
        port = test_socket.getsockname()[1]
        test_socket.close()
        print(f"✅ Loopback binding works (tested port {port})")
        return True
    except OSError as e:
        print(f"❌ Socket error: {e}")
        return False


def test_protocol():
    """Record codec survives a write/read through a file"""
    try:
        from shared.protocol import Protocol, RecordType

        record = Protocol.create_gold("q1", ["Kismet", "1999"])
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "gold.jsonl")
            Protocol.append_record(path, record)
            back = list(Protocol.read_records(path, RecordType.GOLD))
        if back != [record]:
            print("❌ Protocol records do not survive a file round trip")
            return False
        print("✅ Protocol module works")
        return True
    except Exception as e:
        print(f"❌ Protocol error: {e}")
        return False


def test_store():
    """A two-triple graph loads and answers a one-hop query"""
    try:
        import io

        from store.loaders import load_graph

        graph, report = load_graph(io.StringIO("a\tr\tb\nb\tr\tc\n"), fmt="tsv")
        a = graph.entities.local_id("a")
        relations = graph.one_hop_relations([a])
        if report.triples != 2 or len(relations) != 1:
            print("❌ Triple store returned unexpected results")
            return False
        print("✅ Triple store works")
        return True
    except Exception as e:
        print(f"❌ Triple store error: {e}")
        return False


def main():
    """Run all environment checks"""
    print("🧪 HopLink Environment Check")
    print(f"💻 {platform.system()} {platform.release()} ({platform.machine()})")
    print("=" * 50)

    tests = [
        ("Python Version", test_python_version),
        ("Packages", test_packages),
        ("Loopback Sockets", test_loopback),
        ("Protocol Module", test_protocol),
        ("Triple Store", test_store),
    ]

    results = []
    for test_name, test_func in tests:
        print(f"\n🔍 Testing {test_name}:")
        try:
            result = test_func()
        except Exception as e:
            print(f"❌ Test '{test_name}' crashed: {e}")
            result = False
        results.append((test_name, result))

    print("\n" + "=" * 50)
    print("📊 Summary:")
    passed = sum(1 for _, result in results if result)
    for test_name, result in results:
        status = "✅ PASS" if result else "❌ FAIL"
        print(f"  {status} {test_name}")
    print(f"\n🎯 Overall: {passed}/{len(results)} checks passed")
    return passed == len(results)


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
