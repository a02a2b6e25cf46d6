#!/usr/bin/env python3
"""Branin evaluator speaking the hopper wire protocol.

Reads one JSON document from stdin, writes {"metrics": {"score": f}}.
Set HOPPER_DEMO_SLEEP to add a fixed delay in seconds.
"""
import json
import math
import os
import sys
import time


def branin(x1, x2):
    a, b, c = 1.0, 5.1 / (4 * math.pi ** 2), 5 / math.pi
    r, s, t = 6.0, 10.0, 1 / (8 * math.pi)
    return a * (x2 - b * x1 ** 2 + c * x1 - r) ** 2 + s * (1 - t) * math.cos(x1) + s


def main():
    doc = json.loads(sys.stdin.readline())
    cfg = doc["config"]
    delay = float(os.environ.get("HOPPER_DEMO_SLEEP", "0"))
    if delay > 0:
        time.sleep(delay)
    print(json.dumps({"metrics": {"score": branin(float(cfg["x1"]), float(cfg["x2"]))}}))


if __name__ == "__main__":
    main()
