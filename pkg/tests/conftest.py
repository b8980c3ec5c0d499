import json
from pathlib import Path

import pytest
from PIL import Image

from emocue.gateway import Gateway, MockBackend


def make_png(path: Path, seed: int, size: int = 6) -> Path:
    img = Image.new("RGB", (size, size), (seed % 256, (seed * 7) % 256, (seed * 13) % 256))
    img.putpixel((0, 0), ((seed // 256) % 256, 1, 2))
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
    return path


def write_manifest(root: Path, rows: list[dict]) -> Path:
    """rows: {labels, split, dataset_id?}; images are generated with unique content."""
    out = []
    for i, row in enumerate(rows):
        name = row.get("image") or f"img/{i:03d}.png"
        if not (root / name).exists():
            make_png(root / name, row.get("seed", i + 1))
        out.append({"image": name, "labels": row["labels"], "split": row["split"],
                    "dataset_id": row.get("dataset_id", "emotion6")})
    path = root / "manifest.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in out))
    return path


@pytest.fixture
def png(tmp_path):
    counter = iter(range(1, 10_000))
    return lambda name=None: make_png(tmp_path / (name or f"p{next(counter)}.png"), next(counter) * 17)


@pytest.fixture
def mock_gateway():
    def build(rules=(), default="", responder=None, **kw):
        return Gateway(MockBackend(rules, default=default, responder=responder, dim=kw.pop("dim", 16)), **kw)
    return build


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
