"""Shared fixtures: a deterministic synthetic leaderboard snapshot.

The generator mimics the shape of a real export: ~1200 rows, six score
columns, training-type and architecture mixes close to the real ones, a
mass of exact zeros in GSM8K, some zero-parameter rows and a pinch of
unparseable cells when asked for.
"""

import io
import math

import numpy as np
import pytest

ARCH_POOL = [
    ("LlamaForCausalLM", 0.54),
    ("GPTNeoXForCausalLM", 0.11),
    ("GPT2LMHeadModel", 0.09),
    ("OPTForCausalLM", 0.036),
    ("GPTJForCausalLM", 0.033),
    ("BloomForCausalLM", 0.03),
    ("MistralForCausalLM", 0.024),
    ("FalconForCausalLM", 0.01),
    ("ChatGLMModel", 0.01),
    ("RwkvForCausalLM", 0.01),
    ("FrobnicateNet", 0.097),
]

TYPE_POOL = [
    ("fine-tune", 0.63),
    ("instruction-tune", 0.15),
    ("pretrained", 0.135),
    ("RL-tune", 0.018),
    ("", 0.067),
]

BENCHMARKS = ("ARC", "HellaSwag", "MMLU", "TruthfulQA", "Winogrande", "GSM8K")


def synth_rows(n=1200, seed=20240112):
    """Rows of (model, params_b, type, architecture, scores dict)."""
    rng = np.random.default_rng(seed)
    archs, arch_p = zip(*ARCH_POOL)
    types, type_p = zip(*TYPE_POOL)
    arch_p = np.array(arch_p) / sum(arch_p)
    type_p = np.array(type_p) / sum(type_p)

    rows = []
    for i in range(n):
        arch = archs[rng.choice(len(archs), p=arch_p)]
        ttype = types[rng.choice(len(types), p=type_p)]
        params = float(np.exp(rng.normal(math.log(6.0), 1.1)))
        params = min(max(params, 0.01), 180.0)
        ability = 0.5 * math.log(params) + rng.normal(0.0, 0.55)
        type_lift = {"instruction-tune": 0.45, "fine-tune": 0.40,
                     "RL-tune": 0.30, "pretrained": 0.0, "": 0.15}[ttype]
        arch_lift = 0.25 if arch in ("LlamaForCausalLM", "MistralForCausalLM",
                                     "GPT2LMHeadModel") else 0.0
        base = ability + type_lift + arch_lift
        scores = {}
        for j, bench in enumerate(BENCHMARKS):
            noise = rng.normal(0.0, 4.0)
            if bench == "GSM8K":
                raw = 28.0 * base - 18.0 + noise
                val = max(0.0, raw)
            elif bench == "TruthfulQA":
                # mildly decreasing in size at the low end
                val = 48.0 - 3.5 * math.log(params) + 6.0 * type_lift + noise
            else:
                val = 18.0 * base + 22.0 + 2.0 * j + noise
            scores[bench] = float(min(max(val, 0.0), 100.0))
        rows.append((f"org/model-{i:04d}", params, ttype, arch, scores))
    return rows


def rows_to_csv(rows, zero_param_rows=0, bad_rows=0):
    buf = io.StringIO()
    buf.write("model,params_b,type,architecture," + ",".join(BENCHMARKS) + "\n")
    for name, params, ttype, arch, scores in rows:
        cells = [name, f"{params:.4f}", ttype, arch]
        cells += [f"{scores[b]:.3f}" for b in BENCHMARKS]
        buf.write(",".join(cells) + "\n")
    for i in range(zero_param_rows):
        buf.write(f"org/zero-{i},0,fine-tune,LlamaForCausalLM,"
                  + ",".join(["50"] * len(BENCHMARKS)) + "\n")
    for i in range(bad_rows):
        buf.write(f"org/bad-{i},abc,fine-tune,LlamaForCausalLM,"
                  + ",".join(["50"] * len(BENCHMARKS)) + "\n")
    return buf.getvalue()


@pytest.fixture(scope="session")
def snapshot_csv():
    return rows_to_csv(synth_rows(1200))


@pytest.fixture(scope="session")
def table(snapshot_csv):
    from leaderlens.data import parse_snapshot
    return parse_snapshot(snapshot_csv.encode(), "csv")
