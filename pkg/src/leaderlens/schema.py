"""Benchmark schemas and the categorical vocabularies of the snapshot format.

A schema names the benchmark score columns a snapshot must carry plus the
metadata columns shared by every snapshot.  Two schemas ship built in: the
six-benchmark leaderboard layout and a five-benchmark alternative used for
smaller cross-validation exports.  Custom schemas load from a JSON file.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from importlib import resources as importlib_resources

from .errors import DataError

REQUIRED_META = ("model", "params_b", "type", "architecture")
OPTIONAL_META = ("precision", "license")

TRAINING_TYPES = ("fine-tune", "instruction-tune", "pretrained", "RL-tune", "unknown")

ARCH_CATEGORIES = ("Bloom", "Falcon", "GLM", "GPT2", "GPTJ", "GPTNeo",
                   "Llama", "Mistral", "OPT", "Rwkv", "Other")


class SchemaError(DataError):
    """A schema definition violates its own invariants."""


@dataclass(frozen=True)
class BenchmarkSchema:
    """Ordered benchmark columns plus the required metadata columns."""

    name: str
    benchmarks: tuple[tuple[str, str], ...]
    required_meta: tuple[str, ...] = REQUIRED_META

    def __post_init__(self) -> None:
        if len(self.benchmarks) < 2:
            raise SchemaError(
                f"schema {self.name!r} needs at least 2 benchmark columns")
        names = [col for col, _ in self.benchmarks]
        if len(set(names)) != len(names):
            raise SchemaError(f"schema {self.name!r} has duplicate benchmark names")

    @property
    def benchmark_names(self) -> tuple[str, ...]:
        return tuple(col for col, _ in self.benchmarks)


DEFAULT_SCHEMA = BenchmarkSchema(
    name="default",
    benchmarks=(
        ("ARC", "accuracy (25-shot)"),
        ("HellaSwag", "accuracy (10-shot)"),
        ("MMLU", "accuracy (5-shot)"),
        ("TruthfulQA", "accuracy (0-shot)"),
        ("Winogrande", "accuracy (5-shot)"),
        ("GSM8K", "accuracy (5-shot)"),
    ),
)

# Smaller alternative layout: accuracy everywhere except Coqa, which is F1.
APPENDIX_D_SCHEMA = BenchmarkSchema(
    name="appendix-d",
    benchmarks=(
        ("Lambada", "accuracy"),
        ("Hellaswag", "accuracy"),
        ("Winogrande", "accuracy"),
        ("Piqa", "accuracy"),
        ("Coqa", "F1"),
    ),
)

_BUILTIN_SCHEMAS = {s.name: s for s in (DEFAULT_SCHEMA, APPENDIX_D_SCHEMA)}


def get_schema(name: str) -> BenchmarkSchema:
    """Look up a built-in schema by name."""
    try:
        return _BUILTIN_SCHEMAS[name]
    except KeyError:
        raise SchemaError(
            f"unknown schema {name!r}; built-ins: {sorted(_BUILTIN_SCHEMAS)}"
        ) from None


def schema_from_file(path: str) -> BenchmarkSchema:
    """Load a custom schema from JSON.

    Expected shape: {"name": str, "benchmarks": [[column, metric_label], ...]}.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot load schema file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "benchmarks" not in doc:
        raise SchemaError(f"schema file {path} must define a 'benchmarks' list")
    try:
        benchmarks = tuple((str(c), str(m)) for c, m in doc["benchmarks"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(
            f"schema file {path}: benchmarks must be [column, label] pairs"
        ) from exc
    return BenchmarkSchema(name=str(doc.get("name", path)), benchmarks=benchmarks)


def normalize_training_type(raw: str | None) -> str:
    """Collapse free-text training-type spellings onto the closed vocabulary.

    Unrecognized or missing values map to "unknown" rather than failing.
    """
    if raw is None:
        return "unknown"
    text = raw.strip().lower().replace("_", "-").replace(" ", "-")
    if not text:
        return "unknown"
    if text.startswith("fine"):
        return "fine-tune"
    if text.startswith("instruct"):
        return "instruction-tune"
    if text.startswith(("pretrain", "pre-train")):
        return "pretrained"
    if text.startswith(("rl", "rlhf")):
        return "RL-tune"
    return "unknown"


@dataclass(frozen=True)
class ArchRule:
    pattern: str
    category: str


def _parse_rules(text: str, origin: str) -> tuple[ArchRule, ...]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or set(reader.fieldnames) < {"pattern", "category"}:
        raise SchemaError(f"rule table {origin} needs 'pattern,category' columns")
    rules = []
    for row in reader:
        pattern = (row["pattern"] or "").strip().lower()
        category = (row["category"] or "").strip()
        if not pattern:
            continue
        if category not in ARCH_CATEGORIES:
            raise SchemaError(
                f"rule table {origin}: category {category!r} not one of "
                f"{ARCH_CATEGORIES}")
        rules.append(ArchRule(pattern, category))
    if not rules:
        raise SchemaError(f"rule table {origin} contains no rules")
    return tuple(rules)


def load_arch_rules(path: str | None = None) -> tuple[ArchRule, ...]:
    """Load the ordered architecture substring rules (first match wins).

    Without a path, the table bundled with the package is used.
    """
    if path is None:
        text = (importlib_resources.files("leaderlens") / "resources"
                / "arch_rules.csv").read_text(encoding="utf-8")
        return _parse_rules(text, "builtin")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SchemaError(f"cannot load rule table {path}: {exc}") from exc
    return _parse_rules(text, path)


_DEFAULT_RULES: tuple[ArchRule, ...] | None = None


def default_arch_rules() -> tuple[ArchRule, ...]:
    """Bundled rules, loaded once and cached."""
    global _DEFAULT_RULES
    if _DEFAULT_RULES is None:
        _DEFAULT_RULES = load_arch_rules(None)
    return _DEFAULT_RULES


def map_architecture(architecture_raw: str,
                     rules: tuple[ArchRule, ...] | None = None) -> str:
    """Case-insensitive substring mapping of a raw architecture name.

    The first matching rule decides; anything unmatched falls to "Other".
    """
    if rules is None:
        rules = default_arch_rules()
    lowered = (architecture_raw or "").lower()
    for rule in rules:
        if rule.pattern in lowered:
            return rule.category
    return "Other"
