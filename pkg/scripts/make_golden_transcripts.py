"""Regenerate tests/data/golden_*.bin from the fixed small session.

The files are frozen test vectors: rerun only after a deliberate change of
the wire format, and review the diff.
"""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from protocol_helpers import golden_spec, run_pair  # noqa: E402


def main():
    spec = golden_spec()
    out, errs, (ta, tb) = run_pair(spec, spec)
    if errs:
        raise SystemExit(f"session failed: {errs}")
    data = ROOT / "tests" / "data"
    data.mkdir(exist_ok=True)
    (data / "golden_alice_to_bob.bin").write_bytes(bytes(ta.sent))
    (data / "golden_bob_to_alice.bin").write_bytes(bytes(tb.sent))
    print(f"alice->bob {len(ta.sent)} bytes, bob->alice {len(tb.sent)} bytes")


if __name__ == "__main__":
    main()
