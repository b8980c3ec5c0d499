"""Self-contained demo project: synthetic images, manifest, concept corpus, mock script and config.

    python3 -m emocue.demo DIR
    emocue ingest --config DIR/config.yaml
    ...
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import yaml
from PIL import Image

from emocue.taxonomy import dataset_profile

EMOTIONS = dataset_profile("emotion6").vocabulary

# concept_id, gloss, tags
CONCEPTS = [
    ("c01", "funeral procession", ["sadness"]),
    ("c02", "empty rainy street", ["sadness"]),
    ("c03", "birthday celebration", ["joy"]),
    ("c04", "children laughing", ["joy"]),
    ("c05", "dark alley at night", ["fear"]),
    ("c06", "snarling dog", ["fear", "anger"]),
    ("c07", "rotting food", ["disgust"]),
    ("c08", "overflowing garbage", ["disgust"]),
    ("c09", "clenched fist", ["anger"]),
    ("c10", "street riot", ["anger", "fear"]),
    ("c11", "confetti explosion", ["surprise", "joy"]),
    ("c12", "unexpected gift", ["surprise"]),
    ("c13", "plain office desk", ["neutral"]),
    ("c14", "parking lot", ["neutral"]),
    ("c15", "flooded village", ["sadness", "fear"]),
]

EXTRACTED = {
    "sadness": "rain-soaked street",
    "joy": "smiling faces",
    "fear": "shadowy figure",
    "disgust": "spoiled food",
    "anger": "raised fist",
    "surprise": "open mouth",
    "neutral": "plain background",
}


def _json_block(data) -> str:
    return "```json\n" + json.dumps(data) + "\n```"


def mock_script() -> dict:
    """Scripted replies keyed on each instruction template's header line."""
    subjective = {e: [f"List cues in the image that would make a viewer feel {e}.",
                      f"Which details could evoke {e}?"] for e in EMOTIONS}
    verdicts = [{"id": "o1", "verdict": "revise", "suggestion": "Describe the lighting and colors as short phrases.",
                 "rationale": "too vague"}]
    verdicts += [{"id": f"o{i}", "verdict": "keep"} for i in (2, 3)]
    verdicts += [{"id": f"s-{e}-{i}", "verdict": "keep"} for e in EMOTIONS for i in (1, 2)]
    rules = [
        {"match": r"^### Cue categorization", "respond": _json_block({
            "1": ["Facial Expressions", "Gestures"], "2": ["Lighting", "Color Tone"],
            "3": ["Scene Type", "Weather"], "4": ["Weapons"], "5": ["Human Actions"], "6": ["Sharp Edges"]})},
        {"match": r"^### Contrastive reasoning", "respond": _json_block([
            {"emotion": "joy", "direction": "suppresses", "cue": "dark lighting", "rationale": "gloom"},
            {"emotion": "fear", "direction": "suppresses", "cue": "bright colors", "rationale": "safety"},
            {"emotion": "sadness", "direction": "supports", "cue": "rain", "rationale": "melancholy"}])},
        {"match": r"^### Objective prompt design", "respond": _json_block([
            "Describe the scene type as short phrases.", "List the people's facial expressions.",
            "List salient objects."])},
        {"match": r"^### Subjective prompt design", "respond": _json_block(subjective)},
        {"match": r"^### Prompt refinement", "respond": _json_block(verdicts)},
    ]
    rules += [{"match": rf"(?s)^### Cue extraction.*\b{e}\b", "respond": phrase} for e, phrase in EXTRACTED.items()]
    rules += [
        {"match": r"^### Cue extraction", "respond": "grey sky\ncrowd of people"},
        {"match": r"^### Final emotion judgment", "respond": "sadness"},
    ]
    return {"rules": rules, "default": "none", "embedding": {"seed": 11, "dim": 32}}


def _image(path: Path, index: int) -> None:
    img = Image.new("RGB", (8, 8), ((index * 37) % 256, (index * 91) % 256, (index * 53) % 256))
    img.putpixel((index % 8, (index // 8) % 8), (255 - index, index, 0))
    img.save(path, format="PNG")


def build_demo(root: str | Path, test_per_emotion: int = 2) -> Path:
    """Write the demo project under ``root``; returns the config path.

    Test split: ``test_per_emotion`` single-label Emotion6 images per emotion.
    The bdr and fewshot splits get one image per emotion.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    index = 0
    for split, count in (("bdr", 1), ("fewshot", 1), ("test", test_per_emotion)):
        for emotion in EMOTIONS:
            for _ in range(count):
                index += 1
                name = f"images/{split}_{emotion}_{index:03d}.png"
                _image(root / name, index)
                rows.append({"image": name, "labels": [emotion], "dataset_id": "emotion6", "split": split})
    with open(root / "manifest.jsonl", "w", encoding="utf-8") as fh:
        fh.writelines(json.dumps(r) + "\n" for r in rows)
    with open(root / "concepts.jsonl", "w", encoding="utf-8") as fh:
        fh.writelines(json.dumps({"concept_id": c, "gloss": g, "emotion_tags": t}) + "\n" for c, g, t in CONCEPTS)
    (root / "mock.yaml").write_text(yaml.safe_dump(mock_script(), sort_keys=False), encoding="utf-8")
    config = {"run_dir": "run", "manifest": "manifest.jsonl", "concept_corpus": "concepts.jsonl",
              "mock_script": "mock.yaml", "per_emotion": 1, "seed": 7, "parallelism": 4, "method_name": "mock"}
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return path


def main() -> None:
    p = argparse.ArgumentParser(description="Write a runnable demo project with a scripted mock backend.")
    p.add_argument("directory")
    p.add_argument("--test-per-emotion", type=int, default=2)
    args = p.parse_args()
    print(build_demo(args.directory, args.test_per_emotion))


if __name__ == "__main__":
    main()
