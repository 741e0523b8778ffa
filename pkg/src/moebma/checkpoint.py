"""Text checkpoints for trained models and CSV files for datasets.

Checkpoint layout::

    # moebma checkpoint
    kind=moe
    n_experts=3
    ...
    [w_gate]
    0.1 -0.2
    ...

Header lines are ``key=value``; each ``[block]`` is followed by whitespace
separated rows.  Floats are written with ``repr`` so reading them back is
bit-exact.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from moebma.bayes import GaussianPosterior, PosteriorSamples
from moebma.datagen import Dataset, GeneratorSpec
from moebma.models import GlmParams
from moebma.moe import GatingParams, MoeModel

MAGIC = "# moebma checkpoint"


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line


HEADER_KEYS = {
    "moe": ("kind", "n_experts", "k", "d", "link", "sigma"),
    "blr": ("kind", "d", "sigma"),
    "samples": ("kind", "provenance", "seed", "n_samples", "d"),
}


def _fmt_row(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def _render(header: dict, blocks: list[tuple[str, np.ndarray]]) -> str:
    lines = [MAGIC]
    lines += [f"{k}={v}" for k, v in header.items()]
    for name, arr in blocks:
        lines.append(f"[{name}]")
        arr = np.atleast_2d(arr)
        lines += [_fmt_row(r) for r in arr]
    return "\n".join(lines) + "\n"


def dumps_model(model) -> str:
    if isinstance(model, MoeModel):
        header = {"kind": "moe", "n_experts": model.n_experts, "k": model.k, "d": model.dim,
                  "link": model.link, "sigma": repr(float(model.sigma))}
        theta = np.stack([e.theta for e in model.experts])
        return _render(header, [("w_gate", model.gating.w_gate), ("w_noise", model.gating.w_noise),
                                ("theta", theta)])
    if isinstance(model, GaussianPosterior):
        header = {"kind": "blr", "d": model.dim, "sigma": repr(float(model.sigma))}
        return _render(header, [("mean", model.mean), ("cov", model.cov)])
    if isinstance(model, PosteriorSamples):
        header = {"kind": "samples", "provenance": model.provenance, "seed": model.seed,
                  "n_samples": len(model), "d": model.dim}
        return _render(header, [("samples", model.thetas)])
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _parse(text: str, path: str | None = None):
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ParseError("missing checkpoint magic line", 1, path)
    header: dict[str, tuple[str, int]] = {}
    blocks: dict[str, list[tuple[list[float], int]]] = {}
    current = None
    for no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current in blocks:
                raise ParseError(f"duplicate block [{current}]", no, path)
            blocks[current] = []
            continue
        if current is None:
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", no, path)
            key, value = line.split("=", 1)
            header[key.strip()] = (value.strip(), no)
            continue
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError:
            raise ParseError(f"non-numeric value in block [{current}]: {line!r}", no, path) from None
        blocks[current].append((row, no))
    return header, blocks, len(lines)


def loads_model(text: str, path: str | None = None):
    header, blocks, n_lines = _parse(text, path)
    if "kind" not in header:
        raise ParseError("header has no kind", None, path)
    kind, kind_line = header["kind"]
    if kind not in HEADER_KEYS:
        raise ParseError(f"unknown model kind {kind!r}", kind_line, path)
    allowed = HEADER_KEYS[kind]
    for key, (_, no) in header.items():
        if key not in allowed:
            raise ParseError(f"unknown header key {key!r}", no, path)
    for key in allowed:
        if key not in header:
            raise ParseError(f"missing header key {key!r}", None, path)

    def integer(key):
        value, no = header[key]
        try:
            return int(value)
        except ValueError:
            raise ParseError(f"{key} must be an integer, got {value!r}", no, path) from None

    def real(key):
        value, no = header[key]
        try:
            return float(value)
        except ValueError:
            raise ParseError(f"{key} must be a number, got {value!r}", no, path) from None

    def block(name, rows, cols):
        if name not in blocks:
            raise ParseError(f"missing block [{name}]", n_lines, path)
        got = blocks[name]
        if len(got) != rows:
            line = got[-1][1] if got else n_lines
            raise ParseError(f"block [{name}] has {len(got)} rows, expected {rows}", line, path)
        for row, no in got:
            if len(row) != cols:
                raise ParseError(f"block [{name}] row has {len(row)} values, expected {cols}", no, path)
        return np.array([r for r, _ in got], dtype=np.float64).reshape(rows, cols)

    if kind == "moe":
        E, d, k = integer("n_experts"), integer("d"), integer("k")
        link, sigma = header["link"][0], real("sigma")
        wg, wn, th = block("w_gate", E, d), block("w_noise", E, d), block("theta", E, d)
        return MoeModel(GatingParams(wg, wn, k), [GlmParams(t, link, sigma) for t in th])
    if kind == "blr":
        d = integer("d")
        return GaussianPosterior(block("mean", 1, d)[0], block("cov", d, d), real("sigma"))
    n, d = integer("n_samples"), integer("d")
    return PosteriorSamples(block("samples", n, d), header["provenance"][0], integer("seed"))


def save_model(model, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path):
    return loads_model(Path(path).read_text(), str(path))


# ---------------------------------------------------------------------------
# datasets


SPEC_KEYS = ("kind", "degree", "seed", "coeffs", "interval", "noise_std", "means", "stds")


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.split(",")) if value else ()


def dumps_spec(spec: GeneratorSpec) -> str:
    def join(vals):
        return ",".join(repr(float(v)) for v in vals)

    lines = [
        f"kind={spec.kind}",
        f"degree={spec.degree}",
        f"seed={spec.seed}",
        f"coeffs={join(spec.coeffs)}",
        f"interval={join(spec.interval)}",
        f"noise_std={spec.noise_std!r}",
        f"means={join(spec.means)}",
        f"stds={join(spec.stds)}",
    ]
    return "\n".join(lines) + "\n"


def loads_spec(text: str, path: str | None = None) -> GeneratorSpec:
    values: dict[str, str] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", no, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SPEC_KEYS:
            raise ParseError(f"unknown spec key {key!r}", no, path)
        values[key] = value
    missing = [k for k in SPEC_KEYS if k not in values]
    if missing:
        raise ParseError(f"missing spec keys {missing}", None, path)
    try:
        return GeneratorSpec(
            kind=values["kind"], degree=int(values["degree"]), coeffs=_floats(values["coeffs"]),
            interval=_floats(values["interval"]), noise_std=float(values["noise_std"]),
            means=_floats(values["means"]), stds=_floats(values["stds"]), seed=int(values["seed"]),
        )
    except ValueError as exc:
        raise ParseError(str(exc), None, path) from None


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(ds.dim)] + ["y"])
        for row, target in zip(ds.X, ds.y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def load_dataset(path, spec: GeneratorSpec | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty dataset file", 1, str(path)) from None
        d = len(header) - 1
        if d < 1 or header != [f"x{j}" for j in range(d)] + ["y"]:
            raise ParseError(f"bad dataset header {header}", 1, str(path))
        rows = []
        for no, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ParseError(f"expected {d + 1} fields, got {len(row)}", no, str(path))
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ParseError(f"non-numeric field in {row}", no, str(path)) from None
    arr = np.array(rows, dtype=np.float64).reshape(-1, d + 1)
    try:
        return Dataset(arr[:, :d], arr[:, d], spec)
    except ValueError as exc:
        raise ParseError(str(exc), None, str(path)) from None


def save_split_dir(directory, train: Dataset, test: Dataset, spec: GeneratorSpec) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.csv")
    save_dataset(test, out / "test.csv")
    (out / "spec.txt").write_text(dumps_spec(spec))
    return out


def load_split_dir(directory) -> tuple[Dataset, Dataset, GeneratorSpec]:
    src = Path(directory)
    spec_path = src / "spec.txt"
    spec = loads_spec(spec_path.read_text(), str(spec_path))
    return load_dataset(src / "train.csv", spec), load_dataset(src / "test.csv", spec), spec
