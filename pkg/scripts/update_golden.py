"""Regenerate the CLI golden files under tests/golden/.

Run only after an intentional change to a report format:

    python scripts/update_golden.py
"""

import contextlib
import io
from pathlib import Path

from pkinet.cli import main

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden"
COMMANDS = {
    f"{cmd}_{v}.txt": ["--threads", "1", cmd, "--config", f"pkinet-{v.lower()}"]
    for cmd in ("summary", "rf", "ablate", "flops")
    for v in ("S", "T")
}


def render(argv) -> bytes:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(argv)
    if code != 0:
        raise SystemExit(f"{argv} exited with {code}")
    return buf.getvalue().encode("utf-8")


if __name__ == "__main__":
    GOLDEN.mkdir(parents=True, exist_ok=True)
    for name, argv in COMMANDS.items():
        (GOLDEN / name).write_bytes(render(argv))
        print(f"wrote {GOLDEN / name}")
