"""Sample functions for the tutorial flow and load tests.

The image functions work on raw bytes (no codecs): the contract under test
is blob round-tripping and deterministic transforms, not visual fidelity.
Every sample is deterministic given (state, payload, seed).
"""

from __future__ import annotations

import argparse
import random
import time

from .server import HandlerContext, build_server

RESIZE_MARKER = b"RSZ1;"
DETECTED_LABELS = ["cat", "dog", "tree"]


def resize(ctx: HandlerContext) -> dict:
    """Byte-level downscale: keep the first half of the blob behind a marker."""
    data = ctx.get_blob("image")
    resized = RESIZE_MARKER + data[: max(1, len(data) // 2)]
    ctx.put_blob("image", resized)
    ctx.state["resized"] = True
    return {"bytes": len(resized)}


def change_format(ctx: HandlerContext) -> dict:
    fmt = str((ctx.payload or {}).get("format", "png"))
    ctx.state["format"] = fmt
    return {"format": fmt}


def detect_object(ctx: HandlerContext) -> dict:
    ctx.state["labels"] = list(DETECTED_LABELS)
    return {"labels": list(DETECTED_LABELS)}


def json_random(ctx: HandlerContext) -> dict:
    """Fill the state with N pseudo-random fields from a seeded generator."""
    payload = ctx.payload or {}
    n = int(payload.get("fields", 8))
    seed = payload.get("seed", 0)
    rng = random.Random(seed)
    for i in range(n):
        ctx.state[f"f{i}"] = rng.random()
    return {"fields": n, "seed": seed}


def inc(ctx: HandlerContext) -> dict:
    ctx.state["n"] = int(ctx.state.get("n", 0)) + 1
    return {"n": ctx.state["n"]}


def sleep_ms(ctx: HandlerContext) -> dict:
    ms = float((ctx.payload or {}).get("ms", 0))
    time.sleep(ms / 1000.0)
    return {"sleptMs": ms}


SAMPLES = {
    "resize": resize,
    "changeFormat": change_format,
    "change-format": change_format,
    "detectObject": detect_object,
    "detect-object": detect_object,
    "json-random": json_random,
    "inc": inc,
    "sleep-ms": sleep_ms,
}


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="Run the sample function runtime.")
    parser.add_argument("--port", type=int, required=True)
    args = parser.parse_args(argv)
    server = build_server(SAMPLES, args.port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


if __name__ == "__main__":
    main()
