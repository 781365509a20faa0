"""End-to-end experiment stages: synth, preprocess, select, optimize, evaluate, explain.

Every stage reads only earlier-stage artifacts under the output directory
plus the run configuration, so any stage can be re-run in isolation.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import annealer, explain, feature_select, gbt, metrics, param_space, preprocess

log = logging.getLogger(__name__)

GROUPS = ("X_all",) + feature_select.METHODS
ALGORITHM_LABELS = {"sa": "SA", "asa": "ASA", "atsa": "ATSA"}
LABEL_COLUMN = "label"

PROFILES = {
    "desk": {"max_iterations": 60, "moves_per_iteration": 4},
    "paper": {"max_iterations": 1000, "moves_per_iteration": 8},
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# -- configuration -----------------------------------------------------------

@dataclass
class DataConfig:
    table: Optional[str] = None
    schema: Optional[str] = None
    synth_n: int = 3000
    prevalence: float = 0.06
    knn_k: int = 5


@dataclass
class ExplainConfig:
    permutations: int = 50
    n_instances: int = 100
    background_size: int = 100


@dataclass
class RunConfig:
    out: str = "runs/desk"
    seed: int = 0
    profile: str = "desk"
    data: DataConfig = field(default_factory=DataConfig)
    split_ratio: float = 0.8
    stratified: bool = True
    inner_holdout: float = 0.25
    search_space: list = field(default_factory=lambda: param_space.default_space().to_list())
    annealers: dict = field(default_factory=dict)
    groups: list = field(default_factory=lambda: list(GROUPS))
    algorithms: list = field(default_factory=lambda: list(annealer.ALGORITHMS))
    threshold: float = 0.5
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {sorted(PROFILES)}")
        budget = PROFILES[self.profile]
        for alg in annealer.ALGORITHMS:
            merged = {"algorithm": alg, **budget, **self.annealers.get(alg, {})}
            self.annealers[alg] = annealer.AnnealerConfig.from_dict(merged).to_dict()
        unknown = set(self.groups) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown data groups: {sorted(unknown)}")
        unknown = set(self.algorithms) - set(annealer.ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")
        self.space()

    def space(self) -> param_space.ParamSpace:
        return param_space.ParamSpace.from_list(self.search_space)

    def annealer_config(self, alg: str) -> annealer.AnnealerConfig:
        return annealer.AnnealerConfig.from_dict(self.annealers[alg])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "data" in kw:
            kw["data"] = DataConfig(**kw["data"])
        if "explain" in kw:
            kw["explain"] = ExplainConfig(**kw["explain"])
        if "annealers" in kw:
            kw["annealers"] = {k: dict(v) for k, v in kw["annealers"].items()}
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


# -- helpers -----------------------------------------------------------------

def derive_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def model_name(group: str, alg: str) -> str:
    return f"{group}_{ALGORITHM_LABELS[alg]}-XGB"


def parse_model_name(name: str) -> tuple[str, str]:
    if not name.endswith("-XGB"):
        raise ValueError(f"not a model name: {name!r}")
    group, label = name[: -len("-XGB")].rsplit("_", 1)
    algs = {v: k for k, v in ALGORITHM_LABELS.items()}
    if group not in GROUPS or label not in algs:
        raise ValueError(f"not a model name: {name!r}")
    return group, algs[label]


def _write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _read_json(path: Path) -> Any:
    with open(path) as fh:
        return json.load(fh)


class Layout:
    """Artifact paths under one output directory."""

    def __init__(self, out: str | Path):
        self.root = Path(out)

    data = property(lambda self: self.root / "data")
    prep = property(lambda self: self.root / "preprocess")
    select = property(lambda self: self.root / "select")
    optimize = property(lambda self: self.root / "optimize")
    evaluate = property(lambda self: self.root / "evaluate")
    explain = property(lambda self: self.root / "explain")

    def train_csv(self) -> Path:
        return self.prep / "train.csv"

    def test_csv(self) -> Path:
        return self.prep / "test.csv"

    def best_params(self, model: str) -> Path:
        return self.optimize / model / "best_params.json"

    def trace(self, model: str) -> Path:
        return self.optimize / model / "trace.csv"


# -- stages ------------------------------------------------------------------

def stage_synth(cfg: RunConfig) -> list[Path]:
    paths = preprocess.write_synth(Layout(cfg.out).data, cfg.data.synth_n, cfg.data.prevalence,
                                   derive_seed(cfg.seed, "synth"))
    return list(paths.values())


def _input_paths(cfg: RunConfig) -> tuple[Path, Path]:
    if cfg.data.table:
        if not cfg.data.schema:
            raise ValueError("data.table is set but data.schema is not")
        return Path(cfg.data.table), Path(cfg.data.schema)
    lay = Layout(cfg.out)
    return lay.data / "ed_visits.csv", lay.data / "schema.json"


def stage_preprocess(cfg: RunConfig) -> list[Path]:
    table, schema_path = _input_paths(cfg)
    ds = preprocess.prepare(table, preprocess.load_schema(schema_path), cfg.data.knn_k)
    train, test = preprocess.split(ds, cfg.split_ratio, cfg.stratified, derive_seed(cfg.seed, "split"))
    train, ranges = preprocess.scale_minmax(train)
    test = preprocess.apply_minmax(test, ranges)
    lay = Layout(cfg.out)
    lay.prep.mkdir(parents=True, exist_ok=True)
    train.to_csv(lay.train_csv(), LABEL_COLUMN)
    test.to_csv(lay.test_csv(), LABEL_COLUMN)
    scaling = _write_json(lay.prep / "scaling.json", {c: list(r) for c, r in ranges.items()})
    return [lay.train_csv(), lay.test_csv(), scaling]


def _load_split(cfg: RunConfig) -> tuple[preprocess.Dataset, preprocess.Dataset]:
    lay = Layout(cfg.out)
    return (preprocess.read_numeric_csv(lay.train_csv(), LABEL_COLUMN),
            preprocess.read_numeric_csv(lay.test_csv(), LABEL_COLUMN))


def stage_select(cfg: RunConfig) -> list[Path]:
    train, _ = _load_split(cfg)
    methods = [g for g in cfg.groups if g != "X_all"] or list(feature_select.METHODS)
    results = feature_select.run_methods(train, derive_seed(cfg.seed, "select") % 2**32, methods)
    lay = Layout(cfg.out)
    lay.select.mkdir(parents=True, exist_ok=True)
    written = []
    for r in results:
        path = lay.select / f"{r.method}.json"
        r.write(path)
        written.append(path)
    report = lay.select / "selection_report.csv"
    feature_select.write_report(feature_select.selection_report(results, train.columns), report)
    written.append(report)
    return written


def group_features(cfg: RunConfig, group: str, all_features: list[str]) -> list[str]:
    if group == "X_all":
        return list(all_features)
    path = Layout(cfg.out).select / f"{group}.json"
    selected = _read_json(path)["selected"]
    if not selected:
        raise ValueError(f"data group {group} selected no features")
    return selected


def _matrix(cfg: RunConfig, group: str | None = None, alg: str | None = None) -> list[tuple[str, str]]:
    return [(g, a) for g in cfg.groups for a in cfg.algorithms
            if (group is None or g == group) and (alg is None or a == alg)]


class AucObjective:
    """Holdout AUC of a boosted ensemble trained with candidate hyperparameters."""

    def __init__(self, space: param_space.ParamSpace, X_fit, y_fit, X_val, y_val, seed: int):
        self.space = space
        self.X_fit, self.y_fit = X_fit, y_fit
        self.X_val, self.y_val = X_val, y_val
        self.seed = seed

    def hyperparams(self, s: param_space.Solution) -> gbt.GbtHyperparams:
        return gbt.GbtHyperparams.from_mapping(s.as_dict(self.space))

    def __call__(self, s: param_space.Solution) -> float:
        model = gbt.train(self.X_fit, self.y_fit, self.hyperparams(s), np.random.default_rng(self.seed))
        return metrics.roc_auc(self.y_val, model.predict_proba(self.X_val))


def stage_optimize(cfg: RunConfig, group: str | None = None, alg: str | None = None) -> list[Path]:
    train, _ = _load_split(cfg)
    lay = Layout(cfg.out)
    space = cfg.space()
    fit, val = preprocess.split(train, 1.0 - cfg.inner_holdout, True, derive_seed(cfg.seed, "inner-split"))
    written = []
    for g, a in _matrix(cfg, group, alg):
        name = model_name(g, a)
        params_path, trace_path = lay.best_params(name), lay.trace(name)
        if params_path.exists() and trace_path.exists():
            log.info("%s already optimised, skipping", name)
            written += [trace_path, params_path]
            continue
        features = group_features(cfg, g, train.columns)
        objective = AucObjective(space, fit.select(features).X, fit.labels,
                                 val.select(features).X, val.labels, derive_seed(cfg.seed, f"objective:{name}"))
        rng = np.random.default_rng(derive_seed(cfg.seed, f"annealer:{name}"))
        result = annealer.optimize(objective, space, cfg.annealer_config(a), rng)
        log.info("%s: best inner AUC %.4f after %d evaluations", name, result.best_score, result.evaluations)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        result.write_trace(trace_path)
        _write_json(params_path, {
            "model": name,
            "group": g,
            "algorithm": a,
            "features": features,
            "hyperparams": result.best_solution.as_dict(space),
            "inner_auc": result.best_score,
            "evaluations": result.evaluations,
            "tabu_hits": result.tabu_hits,
        })
        written += [trace_path, params_path]
    return written


def _fit_model(cfg: RunConfig, train: preprocess.Dataset, params: dict) -> gbt.BoostedEnsemble:
    hp = gbt.GbtHyperparams.from_mapping(params["hyperparams"])
    features = params["features"]
    return gbt.train(train.select(features).X, train.labels, hp,
                     np.random.default_rng(derive_seed(cfg.seed, f"final:{params['model']}")),
                     feature_names=features)


def _fmt_metric(v: Optional[float]) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def stage_evaluate(cfg: RunConfig, group: str | None = None, alg: str | None = None) -> list[Path]:
    train, test = _load_split(cfg)
    lay = Layout(cfg.out)
    reports = []
    for g, a in _matrix(cfg, group, alg):
        name = model_name(g, a)
        if not lay.best_params(name).exists():
            continue
        params = _read_json(lay.best_params(name))
        model = _fit_model(cfg, train, params)
        scores = model.predict_proba(test.select(params["features"]).X)
        reports.append(metrics.evaluate_scores(name, test.labels, scores, cfg.threshold))
    if not reports:
        raise ValueError("no optimised models found; run optimize first")
    written = [_write_json(lay.evaluate / f"{r.model}.json", r.to_dict()) for r in reports]
    best = max(reports, key=lambda r: r.auc)
    table = lay.evaluate / "performance.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", *metrics.METRIC_COLUMNS, "best"])
        for r in reports:
            w.writerow([r.model, *(_fmt_metric(getattr(r, c)) for c in metrics.METRIC_COLUMNS),
                        int(r is best)])
    written.append(table)
    return written


def _read_performance(cfg: RunConfig) -> list[dict]:
    with open(Layout(cfg.out).evaluate / "performance.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def _balanced_sample(ds: preprocess.Dataset, n: int, rng: np.random.Generator) -> np.ndarray:
    idx = []
    for cls in (0, 1):
        members = np.flatnonzero(ds.labels == cls)
        take = min(len(members), max(1, n // 2))
        idx.append(np.sort(rng.choice(members, size=take, replace=False)))
    return np.concatenate(idx)


def stage_explain(cfg: RunConfig) -> list[Path]:
    """Attribution reports for the best all-features model and the overall best.

    Instances are a class-balanced draw from the test split, explained
    against a background drawn from the training split, so the signed mean
    of a feature is positive when it pushes LBTC cases above the population
    baseline more than it pulls SAT cases below it.
    """
    train, test = _load_split(cfg)
    lay = Layout(cfg.out)
    perf = _read_performance(cfg)
    if not perf:
        raise ValueError("no evaluated models; run evaluate first")
    by_auc = sorted(perf, key=lambda r: -float(r["auc"]))
    all_feat = [r for r in by_auc if parse_model_name(r["model"])[0] == "X_all"]
    targets = []
    if all_feat:
        targets.append(("all_features", all_feat[0]["model"]))
    targets.append(("best", by_auc[0]["model"]))

    written = []
    for tag, name in targets:
        params = _read_json(lay.best_params(name))
        model = _fit_model(cfg, train, params)
        feats = params["features"]
        rng = np.random.default_rng(derive_seed(cfg.seed, f"explain:{tag}:{name}"))
        rows = _balanced_sample(test, cfg.explain.n_instances, rng)
        bg_idx = rng.choice(train.n_rows, size=min(cfg.explain.background_size, train.n_rows), replace=False)
        report = explain.mean_shap_report(
            model.predict_proba, test.select(feats).X[rows], cfg.explain.permutations, rng,
            feature_names=feats, background=train.select(feats).X[np.sort(bg_idx)],
            seed=derive_seed(cfg.seed, f"explain:{tag}:{name}"),
        )
        json_path = lay.explain / f"{tag}_{name}.json"
        table_path = lay.explain / f"{tag}_{name}.csv"
        lay.explain.mkdir(parents=True, exist_ok=True)
        report.write(json_path, table_path)
        written += [json_path, table_path]
    return written


def write_manifest(cfg: RunConfig) -> Path:
    root = Path(cfg.out)
    # the output location is implied by where config.json lives; leaving it
    # out keeps two runs of the same config byte-identical across directories
    resolved = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    _write_json(root / "config.json", resolved)
    entries = []
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.name != "manifest.json"):
        data = path.read_bytes()
        entries.append({"path": path.relative_to(root).as_posix(),
                        "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    return _write_json(root / "manifest.json", {"seed": cfg.seed, "profile": cfg.profile, "files": entries})


STAGES = ("synth", "preprocess", "select", "optimize", "evaluate", "explain")


def run_stage(name: str, cfg: RunConfig, **selector) -> list[Path]:
    fn = {
        "synth": stage_synth, "preprocess": stage_preprocess, "select": stage_select,
        "optimize": stage_optimize, "evaluate": stage_evaluate, "explain": stage_explain,
    }[name]
    try:
        return fn(cfg, **selector) if name in ("optimize", "evaluate") else fn(cfg)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_all(cfg: RunConfig) -> Path:
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    for name in STAGES:
        if name == "synth" and cfg.data.table:
            continue
        if name == "select" and not any(g != "X_all" for g in cfg.groups):
            continue
        log.info("stage %s", name)
        run_stage(name, cfg)
    try:
        return write_manifest(cfg)
    except Exception as exc:
        raise StageError("manifest", exc) from exc
