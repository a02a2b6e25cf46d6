#!/usr/bin/env python3
"""Stub deployment probe: reports a latency read from the artifact file."""
import json
import sys

doc = json.loads(sys.stdin.readline())
with open(doc["artifact"]) as f:
    latency = float(f.read().strip() or "12.5")
print(json.dumps({"metrics": {"latency_ms": latency}}))
