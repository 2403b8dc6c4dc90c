"""Stage graph of a validation campaign with hashed, resumable artifacts.

Stages (per model where noted)::

    reference ─┐
    train-prior:m ─┬─ sensitivity:m
                   └─ calibrate:m ── train-posterior:m ── validate:m
                                                 └──────────── compare

Each stage records in ``state.json`` the hash of its inputs (its config
sections, seed, code version and the output hashes of its upstream
stages) and the SHA-256 of every file it wrote.  A stage whose input hash
and files are unchanged is skipped; a stage whose upstream changed is
re-run; asking for a stage whose upstream is missing, stale or edited is
an :class:`UpstreamError`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bsapce import SparseFitError, SurrogateModel, train_surrogate, validate
from .comparison import EvidenceUnderflow, perturb_and_compare
from .config import CampaignConfig, ConfigError, digest
from .error_models import PRESSURE, VELOCITY, ErrorBudget
from .inference import (CALIBRATION, VALIDATION, LikelihoodSpec, ObservationSet,
                        SamplerError, discrepancy_space, posterior_predictive, run_aies,
                        write_predictive_csv)
from .models.channel import ChannelModel, ParameterError
from .models.pore_network import NetworkError, PoreNetworkModel
from .params import MarginalDistribution, ParameterSpace, SampleMatrix, make_rng, sample
from .porescale import GridError, SolverError, extract_reference, reference_with_error, solve_stokes_mac
from .sobol import sensitivity_report

log = logging.getLogger(__name__)

MODES = ("volume", "surface")


class UpstreamError(RuntimeError):
    """A required upstream artifact is missing, stale or was modified."""


class NumericalFailure(RuntimeError):
    """A solver, sampler or forward model failed."""


class LockError(RuntimeError):
    """Another invocation holds the campaign directory."""


def stage_seed(master: int, *key) -> int:
    """Deterministic 32-bit seed for a stage, keyed by strings or ints."""
    ints = [int(hashlib.sha256(str(k).encode()).hexdigest()[:8], 16) if isinstance(k, str) else int(k)
            for k in key]
    return int(np.random.SeedSequence([int(master), *ints]).generate_state(1)[0])


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# forward models
# ---------------------------------------------------------------------------

def forward_model(entry: dict, scenario):
    kind = entry["kind"]
    if kind == "channel-classical":
        return ChannelModel(scenario, "classical")
    if kind == "channel-generalized":
        return ChannelModel(scenario, "generalized")
    if kind == "pore-network":
        return PoreNetworkModel(scenario, entry.get("mode", "volume"))
    raise ConfigError(f"unknown model kind {kind!r}")


_FORWARD_ERRORS = (ParameterError, NetworkError, ValueError, FloatingPointError, np.linalg.LinAlgError)


def evaluate_forward(model, x: np.ndarray, max_failure_fraction: float = 0.0):
    """Batch evaluation with a per-row fallback; returns ``(y, ok_mask)``."""
    x = np.asarray(x, dtype=float)
    try:
        y = np.asarray(model(x), dtype=float)
        ok = np.all(np.isfinite(y), axis=1)
    except _FORWARD_ERRORS:
        y = np.full((x.shape[0], len(model.output_names)), np.nan)
        ok = np.zeros(x.shape[0], dtype=bool)
        for i in range(x.shape[0]):
            try:
                y[i] = model(x[i:i + 1])[0]
                ok[i] = np.all(np.isfinite(y[i]))
            except _FORWARD_ERRORS:
                pass
    fails = int((~ok).sum())
    if fails > max_failure_fraction * x.shape[0]:
        raise NumericalFailure(f"{fails} of {x.shape[0]} forward runs failed "
                               f"(tolerated fraction {max_failure_fraction:g})")
    return y, ok


# ---------------------------------------------------------------------------
# artifact readers
# ---------------------------------------------------------------------------

@dataclass
class Reference:
    observations: dict          # mode -> ObservationSet
    numerical_variance: dict    # mode -> (N,) array

    @classmethod
    def load(cls, path) -> "Reference":
        d = _read_json(Path(path))
        obs = {m: ObservationSet.from_dict(o) for m, o in d["observations"].items()}
        nv = {m: np.asarray(v, dtype=float) for m, v in d["numerical_variance"].items()}
        return cls(obs, nv)


def read_posterior(path) -> tuple[list[str], np.ndarray]:
    """Flat posterior (burned and thinned) from a chain CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][2:-1]
    values = np.array([[float(v) for v in r[2:-1]] for r in rows[1:]])
    return names, values


# ---------------------------------------------------------------------------
# campaign
# ---------------------------------------------------------------------------

class Campaign:
    def __init__(self, cfg: CampaignConfig, output_dir=None, jobs: int = 1):
        self.cfg = cfg
        self.root = Path(output_dir if output_dir is not None else cfg.data["output_dir"])
        self.jobs = max(1, int(jobs))
        self.scenario = cfg.scenario()
        self.ran: list[str] = []
        self.skipped: list[str] = []
        self.timings: dict[str, float] = {}     # wall seconds of stages run here

    # -- paths and state --------------------------------------------------
    def path(self, rel: str) -> Path:
        return self.root / rel

    @property
    def state_path(self) -> Path:
        return self.root / "state.json"

    def load_state(self) -> dict:
        if self.state_path.exists():
            return _read_json(self.state_path)
        return {"format": "ffpmbench.state/1", "stages": {}}

    def _save_state(self, state: dict):
        tmp = self.state_path.with_suffix(".tmp")
        _write_json(tmp, state)
        os.replace(tmp, self.state_path)

    @contextmanager
    def lock(self):
        self.root.mkdir(parents=True, exist_ok=True)
        lock = self.root / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(f"campaign directory {self.root} is in use by another invocation "
                            f"(remove {lock} if no other run is active)") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            lock.unlink(missing_ok=True)

    # -- stage graph --------------------------------------------------------
    def model_ids(self) -> list[str]:
        return [m["id"] for m in self.cfg.models]

    def _stage_spec(self, name: str):
        """(config sections, model entry, upstream stages, runner, command hint)."""
        kind, _, mid = name.partition(":")
        entry = self.cfg.model(mid) if mid else None
        if kind == "reference":
            return ("scenario", "reference"), None, [], self._run_reference, "generate-reference"
        if kind == "train-prior":
            return ("scenario", "surrogate"), entry, [], lambda: self._run_train(mid, "prior"), "train --phase prior"
        if kind == "sensitivity":
            return (), entry, [f"train-prior:{mid}"], lambda: self._run_sensitivity(mid), "sensitivity"
        if kind == "calibrate":
            return (("mcmc", "discrepancy"), entry, ["reference", f"train-prior:{mid}"],
                    lambda: self._run_calibrate(mid), "calibrate")
        if kind == "train-posterior":
            return (("scenario", "surrogate"), entry, [f"calibrate:{mid}"],
                    lambda: self._run_train(mid, "posterior"), "train --phase posterior")
        if kind == "validate":
            return ((), entry, ["reference", f"calibrate:{mid}", f"train-posterior:{mid}"],
                    lambda: self._run_validate(mid), "validate")
        if kind == "compare":
            ups = ["reference"] + [f"{s}:{m}" for m in self.model_ids() for s in ("calibrate", "train-posterior")]
            return ("comparison", "models"), None, ups, self._run_compare, "compare"
        raise ValueError(f"unknown stage {name!r}")

    def seed_for(self, name: str) -> int:
        """Stage seed; per-model stages key on what the model is, not on its id."""
        kind, _, mid = name.partition(":")
        if not mid:
            return stage_seed(self.cfg.seed, kind)
        entry = self.cfg.model(mid)
        return stage_seed(self.cfg.seed, kind, entry["kind"], entry["mode"])

    def input_hash(self, name: str, state: dict) -> str:
        sections, entry, ups, _, _ = self._stage_spec(name)
        rec = state["stages"]
        return digest({
            "stage": name,
            "config": {k: self.cfg.data[k] for k in sections},
            "model": entry,
            "seed": self.seed_for(name),
            "code": __version__,
            "upstream": {u: rec[u]["outputs"] if u in rec else None for u in ups},
        })

    def verify(self, name: str, state: dict):
        """Raise :class:`UpstreamError` unless stage ``name`` is present, current and intact."""
        _, _, ups, _, hint = self._stage_spec(name)
        rec = state["stages"].get(name)
        src = f" --config {self.cfg.source}" if self.cfg.source else ""
        if rec is None:
            raise UpstreamError(f"required stage '{name}' has not been run; run `ffpm {hint}{src}` first")
        for u in ups:
            self.verify(u, state)
        if rec["input_hash"] != self.input_hash(name, state):
            raise UpstreamError(f"stage '{name}' is stale (configuration or upstream artifacts changed); "
                                f"re-run `ffpm {hint}{src}`")
        for rel, h in rec["outputs"].items():
            p = self.path(rel)
            if not p.exists() or file_hash(p) != h:
                raise UpstreamError(f"artifact {p} of stage '{name}' is missing or was modified; "
                                    f"re-run `ffpm {hint}{src}`")

    def run_stage(self, name: str, force: bool = False):
        state = self.load_state()
        _, _, ups, runner, _ = self._stage_spec(name)
        for u in ups:
            self.verify(u, state)
        ih = self.input_hash(name, state)
        rec = state["stages"].get(name)
        if not force and rec is not None and rec["input_hash"] == ih:
            try:
                self.verify(name, state)
                log.info("stage %s is up to date", name)
                self.skipped.append(name)
                return rec
            except UpstreamError:
                pass
        log.info("running stage %s", name)
        t0 = time.perf_counter()
        outputs = runner()
        self.timings[name] = time.perf_counter() - t0
        rec = {
            "input_hash": ih,
            "outputs": {rel: file_hash(self.path(rel)) for rel in sorted(outputs)},
            "config_hash": self.cfg.hash(),
            "code_version": __version__,
            "seed": self.seed_for(name),
        }
        state = self.load_state()
        state["stages"][name] = rec
        self._save_state(state)
        self.ran.append(name)
        return rec

    def stages_for(self, command: str, model: str | None = None, phase: str = "prior") -> list[str]:
        ids = [model] if model else self.model_ids()
        if model:
            self.cfg.model(model)
        if command == "generate-reference":
            return ["reference"]
        if command == "train":
            return [f"train-{phase}:{m}" for m in ids]
        if command in ("sensitivity", "calibrate", "validate"):
            return [f"{command}:{m}" for m in ids]
        if command == "compare":
            return ["compare"]
        if command == "run-all":
            out = ["reference"]
            for stage in ("train-prior", "sensitivity", "calibrate", "train-posterior", "validate"):
                out += [f"{stage}:{m}" for m in self.model_ids()]
            return out + ["compare"]
        raise ValueError(f"unknown command {command!r}")

    def run(self, command: str, model: str | None = None, phase: str = "prior", force: bool = False):
        with self.lock():
            for name in self.stages_for(command, model, phase):
                self.run_stage(name, force)

    def provenance(self, name: str) -> dict:
        return {"config_hash": self.cfg.hash(), "code_version": __version__, "seed": self.seed_for(name),
                "master_seed": self.cfg.seed, "stage": name.partition(":")[0]}

    # -- runners ------------------------------------------------------------
    def _run_reference(self) -> list[str]:
        rc = self.cfg.data["reference"]
        s = self.scenario
        out_dir = self.path("reference")
        out_dir.mkdir(parents=True, exist_ok=True)
        kw = dict(method=rc["solver"], rtol=rc["rtol"], maxiter=rc["maxiter"])
        try:
            fld = solve_stokes_mac(s, rc["v_top"], rc["cells_per_inclusion"], **kw)
            obs = {m: extract_reference(fld, s, m) for m in MODES}
            numvar = {m: np.zeros(len(s.points)) for m in MODES}
            richardson = None
            if rc["refinement"]:
                runs = reference_with_error(s, rc["v_top"], rc["refinement"], rc["p_hat"], MODES, **kw)
                richardson = {"cells_per_inclusion": sorted(set(int(n) for n in rc["refinement"])),
                              "p_hat": rc["p_hat"]}
                for m, run in runs.items():
                    # error of the configured reference level against the extrapolated value
                    numvar[m] = (obs[m].values - run.fit.f_bar) ** 2
                    richardson[m] = {"spacings": list(run.spacings), "level_values": run.level_values.tolist(),
                                     "f_bar": np.asarray(run.fit.f_bar).tolist(),
                                     "e_p": np.asarray(run.fit.e_p).tolist()}
        except (SolverError, GridError) as exc:
            raise NumericalFailure(f"pore-scale reference solve failed: {exc}") from exc
        _write_json(out_dir / "reference.json", {
            "format": "ffpmbench.reference/1",
            "v_top": rc["v_top"],
            "cells_per_inclusion": rc["cells_per_inclusion"],
            "observations": {m: o.to_dict() for m, o in obs.items()},
            "numerical_variance": {m: v.tolist() for m, v in numvar.items()},
            "richardson": richardson,
            "solver": {"method": fld.info.method, "iterations": fld.info.iterations,
                       "residual": fld.info.residual},
            "provenance": self.provenance("reference"),
        })
        fld.to_csv(out_dir / "field.csv")
        for m, o in obs.items():
            o.write_csv(out_dir / f"observations_{m}.csv")
        return ["reference/reference.json", "reference/field.csv",
                *(f"reference/observations_{m}.csv" for m in MODES)]

    def reference(self) -> Reference:
        return Reference.load(self.path("reference/reference.json"))

    def surrogate(self, mid: str, phase: str) -> SurrogateModel:
        return SurrogateModel.load(self.path(f"surrogates/{mid}_{phase}.json"))

    def _run_train(self, mid: str, phase: str) -> list[str]:
        entry = self.cfg.model(mid)
        sc = self.cfg.data["surrogate"]
        model = forward_model(entry, self.scenario)
        name = f"train-{phase}:{mid}"
        seed = self.seed_for(name)
        s_train, s_test = stage_seed(seed, "train"), stage_seed(seed, "test")
        if phase == "prior":
            space = model.space
            x_train = sample(space, sc["n_train"], s_train)
            x_test = sample(space, sc["n_test"], s_test)
        else:
            names, flat = read_posterior(self.path(f"chains/{mid}_posterior.csv"))
            dim = model.space.dim
            theta = flat[:, :dim]
            space = ParameterSpace(tuple(MarginalDistribution.data(m.name, theta[:, j], m.units)
                                         for j, m in enumerate(model.space.marginals)))
            need = sc["n_train"] + sc["n_test"]
            rng = make_rng(seed, 5)
            if theta.shape[0] >= need:
                idx = rng.permutation(theta.shape[0])[:need]
            else:
                warnings.warn(f"posterior of {mid} has {theta.shape[0]} draws for {need} runs; resampling")
                idx = rng.integers(0, theta.shape[0], size=need)
            x_train = SampleMatrix(theta[idx[:sc["n_train"]]], seed=s_train)
            x_test = SampleMatrix(theta[idx[sc["n_train"]:]], seed=s_test)
        tol = sc["max_failure_fraction"]
        y_train, ok_tr = evaluate_forward(model, x_train, tol)
        y_test, ok_te = evaluate_forward(model, x_test, tol)
        x_train = SampleMatrix(np.asarray(x_train)[ok_tr], seed=s_train)
        x_test = SampleMatrix(np.asarray(x_test)[ok_te], seed=s_test)
        try:
            sur = train_surrogate(space, x_train, y_train[ok_tr], sc["degree"], model.output_names, jobs=self.jobs)
        except SparseFitError as exc:
            raise NumericalFailure(f"surrogate fit for {mid} failed: {exc}") from exc
        val = validate(sur, x_test, y_test[ok_te])
        sur.provenance.update(self.provenance(name), kind=entry["kind"], mode=entry["mode"], phase=phase)
        (self.root / "surrogates").mkdir(parents=True, exist_ok=True)
        (self.root / "reports").mkdir(parents=True, exist_ok=True)
        sur.save(self.path(f"surrogates/{mid}_{phase}.json"))
        rep = f"reports/surrogate_{mid}_{phase}.csv"
        with open(self.path(rep), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["output", "mse", "rel_l2", "active_terms"])
            for k, out in enumerate(sur.output_names):
                w.writerow([out, repr(float(val.mse[k])), repr(float(val.rel_l2[k])), len(sur.fits[k].active)])
        return [f"surrogates/{mid}_{phase}.json", rep]

    def _run_sensitivity(self, mid: str) -> list[str]:
        rep = sensitivity_report(self.surrogate(mid, "prior"))
        (self.root / "reports").mkdir(parents=True, exist_ok=True)
        joint, total = f"reports/sobol_{mid}_joint.csv", f"reports/sobol_{mid}_total.csv"
        rep.write_csv(self.path(joint), self.path(total))
        return [joint, total]

    def _observations(self, mid: str, ref: Reference) -> tuple[ObservationSet, np.ndarray]:
        mode = self.cfg.model(mid)["mode"]
        return ref.observations[mode], ref.numerical_variance[mode]

    def _run_calibrate(self, mid: str) -> list[str]:
        mc, dc = self.cfg.data["mcmc"], self.cfg.data["discrepancy"]
        sur = self.surrogate(mid, "prior")
        obs, numvar = self._observations(mid, self.reference())
        cal = obs.mask(group=CALIBRATION)
        obs_cal = obs.subset(group=CALIBRATION)

        def predictor(theta):
            mean, var = sur(theta)
            return mean[:, cal], var[:, cal]
        budget = ErrorBudget(list(obs_cal.kinds), numerical=numvar[cal], mse=sur.mse[cal])
        spec = LikelihoodSpec(predictor, obs_cal, budget, n_model=sur.space.dim)
        prior = sur.space.extend(discrepancy_space(dc["vel_max"], dc["p_max"]).marginals)
        try:
            ens = run_aies(spec, prior, mc["walkers"], self.seed_for(f"calibrate:{mid}"),
                           max_steps=mc["max_steps"], check_every=mc["check_every"], rel_tol=mc["rel_tol"])
        except SamplerError as exc:
            raise NumericalFailure(f"calibration of {mid} failed: {exc}") from exc
        if not ens.converged:
            warnings.warn(f"calibration of {mid} stopped at the step cap before the IAT criterion was met")
        (self.root / "chains").mkdir(parents=True, exist_ok=True)
        (self.root / "reports").mkdir(parents=True, exist_ok=True)
        chain = f"chains/{mid}_posterior.csv"
        ens.write_csv(self.path(chain))
        summ = ens.summary()
        meta = f"chains/{mid}_summary.json"
        _write_json(self.path(meta), {
            "parameters": summ, "acceptance": ens.acceptance, "steps": ens.steps, "walkers": ens.walkers,
            "burn": ens.burn, "thin": ens.thin, "converged": ens.converged,
            "iat": None if ens.iat is None else np.asarray(ens.iat).tolist(),
            "iat_history": [np.asarray(h).tolist() for h in ens.iat_history],
            "provenance": self.provenance(f"calibrate:{mid}"),
        })
        table = f"reports/posterior_{mid}.csv"
        with open(self.path(table), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "mean", "std", "q025", "median", "q975"])
            for p, st in summ.items():
                w.writerow([p, *(repr(st[k]) for k in ("mean", "std", "q025", "median", "q975"))])
        return [chain, meta, table]

    def _run_validate(self, mid: str) -> list[str]:
        sur = self.surrogate(mid, "posterior")
        obs, _ = self._observations(mid, self.reference())
        val = obs.mask(group=VALIDATION)
        _, flat = read_posterior(self.path(f"chains/{mid}_posterior.csv"))
        theta = flat[:, :sur.space.dim]

        def predictor(t):
            mean, var = sur(t)
            return mean[:, val], var[:, val]
        m, sd = posterior_predictive(predictor, theta)
        (self.root / "reports").mkdir(parents=True, exist_ok=True)
        rel = f"reports/predictive_{mid}.csv"
        write_predictive_csv(self.path(rel), obs.subset(group=VALIDATION), {mid: (m, sd)})
        return [rel]

    def _run_compare(self) -> list[str]:
        cc = self.cfg.data["comparison"]
        ref = self.reference()
        ids = self.model_ids()
        preds, variances, rows, sig2 = [], [], [], {VELOCITY: [], PRESSURE: []}
        for mid in ids:
            sur = self.surrogate(mid, "posterior")
            obs, numvar = self._observations(mid, ref)
            val = obs.mask(group=VALIDATION)
            kinds = np.array(obs.kinds)[val]
            _, flat = read_posterior(self.path(f"chains/{mid}_posterior.csv"))
            # common random numbers: models with equal chains get equal draws
            idx = make_rng(self.seed_for("compare"), 3).integers(0, flat.shape[0], size=cc["n_bme"])
            draws = flat[idx]
            mean, _ = sur(draws[:, :sur.space.dim])
            med = np.median(flat[:, -2:], axis=0)
            sig2[VELOCITY].append(flat[:, -2])
            sig2[PRESSURE].append(flat[:, -1])
            disc = np.where(kinds == VELOCITY, med[0], med[1])
            preds.append(mean[:, val])
            variances.append(disc + numvar[val] + sur.mse[val])
            rows.append(obs.values[val])
        kinds = np.array(ref.observations["volume"].kinds)[ref.observations["volume"].mask(group=VALIDATION)]
        noise = {}
        for k in (VELOCITY, PRESSURE):
            given = cc["noise_scale"].get(k)
            noise[k] = float(given) if given is not None else float(np.sqrt(np.median(np.concatenate(sig2[k]))))
        scale = np.where(kinds == VELOCITY, noise[VELOCITY], noise[PRESSURE])
        try:
            rep = perturb_and_compare(preds, np.array(rows), variances, scale, cc["replicates"],
                                      self.seed_for("compare"), names=ids,
                                      priors=cc["model_priors"] or None)
        except EvidenceUnderflow as exc:
            raise NumericalFailure(f"model comparison failed: {exc}") from exc
        (self.root / "reports").mkdir(parents=True, exist_ok=True)
        rep.write_weights_csv(self.path("reports/weights.csv"))
        rep.write_bayes_factor_csv(self.path("reports/bayes_factors.csv"))
        rep.write_bf_histograms(self.path("reports/bf_histograms.csv"))
        with open(self.path("reports/replicate_weights.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", *(f"log_bme_{m}" for m in ids), *(f"weight_{m}" for m in ids)])
            for r in range(rep.replicate_weights.shape[0]):
                w.writerow([r, *(repr(float(v)) for v in rep.replicate_log_bme[r]),
                            *(repr(float(v)) for v in rep.replicate_weights[r])])
        d = rep.to_dict()
        d["noise_scale"] = noise
        d["modes"] = {mid: self.cfg.model(mid)["mode"] for mid in ids}
        d["provenance"] = self.provenance("compare")
        _write_json(self.path("reports/comparison.json"), d)
        return ["reports/weights.csv", "reports/bayes_factors.csv", "reports/bf_histograms.csv",
                "reports/replicate_weights.csv", "reports/comparison.json"]
