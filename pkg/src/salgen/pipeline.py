"""End-to-end experiment orchestration.

Stages form a fixed dependency chain per run: data -> classifier ->
(per method: explanations -> method autoencoder -> score), with the
reference autoencoder trained once and shared. Runs live under
<out_dir>/runs/<hash>/ where the hash covers everything except the method
list, so experiments that differ only in methods share the data and model
stages. Completed stages are recorded in a manifest and skipped on rerun,
and all stage outputs are deterministic functions of the config (seeds
included), so a repeated run reproduces scores.csv byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import attribution, data, models, report, scoring, synth
from .errors import NoMethodsConfigured, SalgenError, StageFailed
from .metrics import MetricVector

DEFAULT_K_FRACTION = 0.25
DL_WINDOW = 10


@dataclass
class MethodSpec:
    id: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    out_dir: str
    # data
    data_dir: str | None = None
    synthetic_train: int | None = None
    synthetic_test: int | None = None
    subset_train: int | None = None
    subset_test: int | None = None
    data_seed: int = 0
    # models
    classifier_epochs: int = 4
    classifier_lr: float = 1e-3
    ae_epochs: int = 30
    ae_lr: float = 1e-3
    batch_size: int = 64
    model_seed: int = 0
    # evaluation
    methods: list[MethodSpec] = field(default_factory=list)
    s_per_class: int = 100
    k_fraction: float = DEFAULT_K_FRACTION
    dl_window: int = DL_WINDOW
    pair_budget: int = 500
    explain_seed: int = 0
    vp_seed: int = 0

    def __post_init__(self):
        self.methods = [
            m if isinstance(m, MethodSpec) else MethodSpec(**m) for m in self.methods
        ]
        for m in self.methods:
            if m.kind not in attribution.METHOD_KINDS:
                raise ValueError("method %r has unregistered kind %r" % (m.id, m.kind))
        if self.ae_epochs < self.dl_window:
            raise ValueError("ae_epochs must be >= the DL window")
        if not 0.0 < self.k_fraction < 1.0:
            raise ValueError("k_fraction must lie in (0, 1)")

    def config_hash(self) -> str:
        payload = asdict(self)
        payload.pop("out_dir")  # same experiment, wherever it lands
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def base_hash(self) -> str:
        """Hash of everything the shared stages (data, classifier, reference
        autoencoder) depend on; method lists do not invalidate those."""
        payload = asdict(self)
        payload.pop("out_dir")
        payload.pop("methods")
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


def desk_profile(out_dir: str, **overrides) -> RunConfig:
    """Laptop-scale defaults: 6000/2000 images, 30 autoencoder epochs,
    100 samples per class, 500-pair Spearman budget."""
    cfg = dict(
        out_dir=out_dir,
        synthetic_train=6000,
        synthetic_test=2000,
        subset_train=6000,
        subset_test=2000,
        classifier_epochs=4,
        classifier_lr=1e-3,
        ae_epochs=30,
        ae_lr=2e-3,
        s_per_class=100,
        pair_budget=500,
    )
    cfg.update(overrides)
    return RunConfig(**cfg)


def full_profile(out_dir: str, **overrides) -> RunConfig:
    """Reference-scale settings: the full 60k/10k splits, 100 autoencoder
    epochs at lr 1e-5, 500 samples per class."""
    cfg = dict(
        out_dir=out_dir,
        classifier_epochs=10,
        classifier_lr=1e-3,
        ae_epochs=100,
        ae_lr=1e-5,
        s_per_class=500,
        pair_budget=2000,
    )
    cfg.update(overrides)
    return RunConfig(**cfg)


class RunManifest:
    """Per-stage status, wall time and artifact paths for one run."""

    def __init__(self, path: str, run_id: str, config_hash: str):
        self.path = path
        self.state = {"run_id": run_id, "config_hash": config_hash, "stages": {}}
        if os.path.exists(path):
            with open(path) as fh:
                prior = json.load(fh)
            if prior.get("config_hash") == config_hash:
                self.state = prior

    def stage_done(self, name: str) -> bool:
        stage = self.state["stages"].get(name)
        if not stage or stage.get("status") != "done":
            return False
        return all(os.path.exists(p) for p in stage.get("artifacts", []))

    def record(self, name: str, status: str, wall_time: float, artifacts: list[str]):
        self.state["stages"][name] = {
            "status": status,
            "wall_time": wall_time,
            "artifacts": list(artifacts),
        }
        with open(self.path, "w") as fh:
            json.dump(self.state, fh, indent=1, sort_keys=True)

    def all_artifacts_exist(self) -> bool:
        return all(
            os.path.exists(p)
            for stage in self.state["stages"].values()
            for p in stage.get("artifacts", [])
        )


@dataclass
class RunResult:
    run_dir: str
    cards: list[scoring.ScoreCard]
    curves: dict[str, list[MetricVector]]
    manifest: RunManifest
    report_files: list[str]


class Runner:
    """Executes the stage chain for one RunConfig with caching."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.run_dir = os.path.join(cfg.out_dir, "runs", cfg.base_hash())
        for sub in ("models", "explanations", "curves", "scores"):
            os.makedirs(os.path.join(self.run_dir, sub), exist_ok=True)
        cfg.to_json(os.path.join(self.run_dir, "config-%s.json" % cfg.config_hash()))
        self.manifest = RunManifest(
            os.path.join(self.run_dir, "manifest.json"),
            run_id=os.path.basename(self.run_dir),
            config_hash=cfg.base_hash(),
        )
        self._register_methods()
        self._train = None
        self._test = None
        self._classifier = None
        self._ae_ref = None

    def _register_methods(self):
        """Method ids name cached artifacts, so an id must always carry the
        same parameters within one run directory."""
        path = os.path.join(self.run_dir, "methods.json")
        registry = {}
        if os.path.exists(path):
            with open(path) as fh:
                registry = json.load(fh)
        for spec in self.cfg.methods:
            entry = json.dumps({"kind": spec.kind, "params": spec.params}, sort_keys=True)
            if registry.get(spec.id, entry) != entry:
                raise ValueError(
                    "method id %r reused with different parameters in %s"
                    % (spec.id, self.run_dir)
                )
            registry[spec.id] = entry
        with open(path, "w") as fh:
            json.dump(registry, fh, indent=1, sort_keys=True)

    def _stage(self, name: str, artifacts: list[str], fn):
        """Run fn unless the stage is already done with artifacts present."""
        if self.manifest.stage_done(name):
            return False
        t0 = time.time()
        try:
            fn()
        except SalgenError as exc:
            self.manifest.record(name, "failed", time.time() - t0, [])
            raise StageFailed("stage %r failed: %s" % (name, exc)) from exc
        self.manifest.record(name, "done", time.time() - t0, artifacts)
        return True

    # -- data ------------------------------------------------------------

    def datasets(self) -> tuple[data.LabeledDataset, data.LabeledDataset]:
        if self._train is None:
            cfg = self.cfg
            t0 = time.time()
            if cfg.data_dir or os.environ.get(data.DATA_DIR_ENV):
                train, test = data.load_dataset(cfg.data_dir)
            elif cfg.synthetic_train:
                train, test = synth.make_digits(
                    cfg.synthetic_train, cfg.synthetic_test or 0, seed=cfg.data_seed
                )
            else:
                raise ValueError("config names neither a data dir nor synthetic sizes")
            if cfg.subset_train and cfg.subset_train < len(train):
                train = data.stratified_subset(train, cfg.subset_train, cfg.data_seed)
            if cfg.subset_test and cfg.subset_test < len(test):
                test = data.stratified_subset(test, cfg.subset_test, cfg.data_seed + 1)
            self._train, self._test = train, test
            self.manifest.record("data", "done", time.time() - t0, [])
        return self._train, self._test

    # -- shared models -----------------------------------------------------

    def classifier(self) -> models.ClassifierModel:
        if self._classifier is None:
            path = os.path.join(self.run_dir, "models", "classifier.npz")
            train, test = self.datasets()

            def build():
                model = models.train_classifier(
                    train,
                    test,
                    models.TrainConfig(
                        epochs=self.cfg.classifier_epochs,
                        lr=self.cfg.classifier_lr,
                        batch_size=self.cfg.batch_size,
                        seed=self.cfg.model_seed,
                    ),
                )
                models.save_model(path, model)

            self._stage("classifier", [path], build)
            self._classifier = models.load_model(path)
        return self._classifier

    def ae_ref(self) -> models.AutoencoderModel:
        if self._ae_ref is None:
            path = os.path.join(self.run_dir, "models", "ae_ref.npz")
            curve_path = os.path.join(self.run_dir, "curves", "ae_ref.csv")
            train, test = self.datasets()

            def build():
                model, curve = models.train_autoencoder(
                    train.images,
                    train.images,
                    self._ae_train_config(),
                    test_inputs=test.images,
                    test_targets=test.images,
                    role="ae_ref",
                    k_fraction=self.cfg.k_fraction,
                    monotonic_check=True,
                )
                models.save_model(path, model)
                report.write_curve_csv(curve_path, curve)

            self._stage("ae_ref", [path, curve_path], build)
            self._ae_ref = models.load_model(path)
        return self._ae_ref

    def _ae_train_config(self) -> models.TrainConfig:
        return models.TrainConfig(
            epochs=self.cfg.ae_epochs,
            lr=self.cfg.ae_lr,
            batch_size=self.cfg.batch_size,
            seed=self.cfg.model_seed,  # identical init for every method AE
        )

    # -- per-method chain --------------------------------------------------

    def explanations(self, spec: MethodSpec) -> dict[str, attribution.ExplanationSet]:
        train, test = self.datasets()
        paths = {
            split: os.path.join(self.run_dir, "explanations", "%s_%s.npz" % (spec.id, split))
            for split in ("train", "test")
        }
        classifier = self.classifier()

        def build():
            for split, ds in (("train", train), ("test", test)):
                offset = 0 if split == "train" else 1_000_000  # disjoint id spaces
                es = attribution.explain_dataset(
                    classifier.net,
                    ds.images,
                    offset + np.arange(len(ds)),
                    method_id=spec.id,
                    kind=spec.kind,
                    params=spec.params,
                    seed=self.cfg.explain_seed,
                )
                es.split_tag = split
                attribution.save_explanations(paths[split], es)

        self._stage("explain:%s" % spec.id, list(paths.values()), build)
        return {split: attribution.load_explanations(p) for split, p in paths.items()}

    def method_autoencoder(self, spec: MethodSpec):
        model_path = os.path.join(self.run_dir, "models", "ae_%s.npz" % spec.id)
        curve_path = os.path.join(self.run_dir, "curves", "%s.csv" % spec.id)
        train, test = self.datasets()

        def build():
            sets = self.explanations(spec)
            target_train = scoring.normalize_explanations(sets["train"])
            target_test = scoring.normalize_explanations(sets["test"])
            model, curve = models.train_autoencoder(
                train.images,
                target_train.maps.astype(np.float32),
                self._ae_train_config(),
                test_inputs=test.images,
                test_targets=target_test.maps.astype(np.float32),
                role="ae_method:%s" % spec.id,
                k_fraction=self.cfg.k_fraction,
            )
            models.save_model(model_path, model)
            report.write_curve_csv(curve_path, curve)

        self._stage("ae:%s" % spec.id, [model_path, curve_path], build)
        return models.load_model(model_path), report.read_curve_csv(curve_path)

    def score_method(self, spec: MethodSpec) -> tuple[scoring.ScoreCard, list[MetricVector]]:
        card_path = os.path.join(self.run_dir, "scores", "%s.json" % spec.id)
        self.explanations(spec)  # ensure stage ordering in the manifest
        ae_f, curve = self.method_autoencoder(spec)

        def build():
            _, test = self.datasets()
            ta, sc, pc, _ = scoring.distribution_learnability(curve, self.cfg.dl_window)
            recon = ae_f.reconstruct(test.images)
            _, dsc, dfid, _ = scoring.variance_proximity(
                recon,
                labels=test.labels,
                image_ids=np.arange(len(test)),
                encode_fn=self.ae_ref().encode,
                s=self.cfg.s_per_class,
                seed=self.cfg.vp_seed,
                pair_budget=self.cfg.pair_budget,
            )
            card = scoring.ScoreCard.from_parts(spec.id, ta, sc, pc, dsc, dfid)
            with open(card_path, "w") as fh:
                json.dump(asdict(card), fh, indent=1, sort_keys=True)

        self._stage("score:%s" % spec.id, [card_path], build)
        with open(card_path) as fh:
            card = scoring.ScoreCard(**json.load(fh))
        return card, curve

    def run(self) -> RunResult:
        if not self.cfg.methods:
            raise NoMethodsConfigured("configure at least one method to score")
        self.classifier()
        self.ae_ref()
        cards, curves = [], {}
        for spec in self.cfg.methods:
            card, curve = self.score_method(spec)
            cards.append(card)
            curves[spec.id] = curve
        files = report.emit_report(cards, curves, self.run_dir)
        return RunResult(
            run_dir=self.run_dir,
            cards=cards,
            curves=curves,
            manifest=self.manifest,
            report_files=files,
        )


# -- the three experiments ----------------------------------------------------

LIME_SWEEP_DEFAULT = (10, 30, 50, 100, 500)

COMPARISON_METHODS = (
    MethodSpec(id="vanilla", kind="vanilla"),
    MethodSpec(id="guided_backprop", kind="guided_backprop"),
    MethodSpec(id="input_x_gradients", kind="input_x_gradients"),
    MethodSpec(id="integrated_gradients", kind="integrated_gradients", params={"steps": 50}),
    MethodSpec(id="lrp", kind="lrp", params={"eps": 0.01}),
    MethodSpec(id="lime_100", kind="lime", params={"n_samples": 100, "segments": 50}),
    MethodSpec(id="kernel_shap", kind="kernel_shap", params={"n_samples": 100, "segments": 50}),
    MethodSpec(id="random", kind="random"),
)

SMOOTHGRAD_BASES = {
    "vanilla": MethodSpec(id="vanilla", kind="vanilla"),
    "input_x_gradients": MethodSpec(id="input_x_gradients", kind="input_x_gradients"),
    "integrated_gradients": MethodSpec(
        id="integrated_gradients", kind="integrated_gradients", params={"steps": 50}
    ),
}


def lime_method(n_samples: int, segments: int = 50) -> MethodSpec:
    return MethodSpec(
        id="lime_%d" % n_samples, kind="lime", params={"n_samples": n_samples, "segments": segments}
    )


def smoothed(spec: MethodSpec, n: int = 25, sigma_rel: float = 0.15) -> MethodSpec:
    params = dict(spec.params)
    params["smoothgrad"] = {"n": n, "sigma_rel": sigma_rel}
    return MethodSpec(id=spec.id + "_s", kind=spec.kind, params=params)


def run_lime_sweep(cfg: RunConfig, n_samples_list=LIME_SWEEP_DEFAULT) -> RunResult:
    """Score LIME at several perturbation-sample budgets."""
    cfg.methods = [lime_method(n) for n in n_samples_list]
    return Runner(cfg).run()


def run_method_comparison(cfg: RunConfig, methods=COMPARISON_METHODS) -> RunResult:
    """Score the configured method set plus the random baseline."""
    cfg.methods = list(methods)
    return Runner(cfg).run()


def run_smoothgrad_study(
    cfg: RunConfig, bases=("vanilla", "input_x_gradients", "integrated_gradients"),
    n: int = 25, sigma_rel: float = 0.15,
) -> tuple[RunResult, dict[str, dict[str, float]]]:
    """Score each base method and its noise-averaged variant; report deltas."""
    specs = []
    for b in bases:
        base = SMOOTHGRAD_BASES[b]
        specs += [base, smoothed(base, n=n, sigma_rel=sigma_rel)]
    cfg.methods = specs
    result = Runner(cfg).run()
    by_id = {c.method_id: c for c in result.cards}
    deltas = {}
    for b in bases:
        base, smooth = by_id[b], by_id[b + "_s"]
        deltas[b] = {
            "d_dl": smooth.dl - base.dl,
            "d_vp": smooth.vp - base.vp,
            "d_s_em": smooth.s_em - base.s_em,
        }
    with open(os.path.join(result.run_dir, "smoothgrad_deltas.json"), "w") as fh:
        json.dump(deltas, fh, indent=1, sort_keys=True)
    return result, deltas
