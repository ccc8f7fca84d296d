"""Command-line pipeline: gen, profile, discover, train-policy, eval, ablate, plot.

Each subcommand reads its inputs from and writes its outputs to the run
directory <output_dir>/<config hash prefix>/, embedding the full config hash
in every artifact.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import data, tasks
from .config import ConfigError, RunConfig, dumps_config, load_config
from .data import atomic_write_text, content_hash
from .discovery import ConceptSet, ablation, ablation_csv, discover
from .mi import MIProfile, mi_profile
from .plotting import plot_profile
from .policy import PolicyModel, evaluate, loss_trace_csv, report_json, train_bc

log = logging.getLogger("maxmi")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_RUNTIME = 4

ARTIFACTS = {
    "config": "config.ini",
    "dataset": "dataset.txt",
    "profile_csv": "profile.csv",
    "profile_svg": "profile.svg",
    "concepts_json": "concepts.json",
    "concepts_csv": "concepts.csv",
    "weights": "policy.txt",
    "loss_csv": "loss.csv",
    "report": "report.json",
    "ablation_csv": "ablation.csv",
    "ablation_full": "ablation_full.json",
    "ablation_maxmi_only": "ablation_maxmi_only.json",
    "ablation_pd_only": "ablation_pd_only.json",
    "plot": "plot.svg",
}

_HASH_RE = re.compile(r"config_hash[\"'=:\s]+([0-9a-f]{64})")


class MissingArtifact(Exception):
    pass


class ArtifactConflict(Exception):
    pass


def embedded_config_hash(text: str) -> str | None:
    """The config hash written into any artifact, whatever its format."""
    m = _HASH_RE.search(text)
    return m.group(1) if m else None


class Run:
    """Artifact bookkeeping for one configuration."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.hash = cfg.hash
        self.dir = cfg.run_dir

    def path(self, key: str) -> Path:
        return self.dir / ARTIFACTS[key]

    def require(self, *keys: str) -> None:
        missing = [ARTIFACTS[k] for k in keys if not self.path(k).exists()]
        if missing:
            raise MissingArtifact(f"missing artifact(s) in {self.dir}: {', '.join(missing)}; run the upstream step first")

    def read(self, key: str) -> str:
        text = self.path(key).read_text()
        found = embedded_config_hash(text)
        if found is not None and found != self.hash:
            raise ArtifactConflict(f"{self.path(key)} was made by config {found[:12]}, not {self.hash[:12]}")
        return text

    def write(self, key: str, text: str) -> Path:
        """Atomic write; an existing artifact may only be rewritten with identical bytes."""
        path = self.path(key)
        if path.exists() and path.read_text() != text:
            raise ArtifactConflict(f"{path} exists with different content; runs are append-only")
        if not path.exists():
            atomic_write_text(path, text)
        log.info("wrote %s", path)
        return path

    def write_config(self) -> None:
        # the copy in the run directory leaves out where the run directory is
        self.write("config", f"# config_hash={self.hash}\n" + dumps_config(self.cfg, with_output_dir=False))

    def dataset(self) -> tuple[data.Dataset, str]:
        text = self.read("dataset")
        return data.loads_dataset(text), content_hash(text)

    def normalized(self) -> tuple[data.Dataset, data.NormalizedDataset, str]:
        ds, ds_hash = self.dataset()
        return ds, data.normalize(ds, self.cfg.normalize_T), ds_hash


def _svg_with_hash(svg: str, config_hash: str) -> str:
    head, _, rest = svg.partition("\n")
    return f"{head}\n<!-- config_hash={config_hash} -->\n{rest}"


def cmd_gen(run: Run) -> list[Path]:
    cfg = run.cfg
    ds = tasks.generate(cfg.task, cfg.n_demos)
    ds = data.Dataset(ds.trajectories, header={**ds.header, "config_hash": run.hash})
    run.write_config()
    return [run.write("dataset", data.dumps_dataset(ds))]


def cmd_profile(run: Run) -> list[Path]:
    run.require("dataset")
    _, nd, _ = run.normalized()
    d = run.cfg.discovery
    profile = mi_profile(nd, d.delta_t, d.estimator)
    svg = plot_profile(profile, title=f"{run.cfg.task.kind} MI profile", T=nd.T)
    return [
        run.write("profile_csv", profile.to_csv(f"config_hash={run.hash} delta_t={d.delta_t}")),
        run.write("profile_svg", _svg_with_hash(svg, run.hash)),
    ]


def _stamp(cs: ConceptSet, run: Run, ds_hash: str) -> ConceptSet:
    return replace(cs, config_hash=run.hash, dataset_hash=ds_hash)


def cmd_discover(run: Run) -> list[Path]:
    run.require("dataset")
    _, nd, ds_hash = run.normalized()
    cs = _stamp(discover(nd, run.cfg.discovery), run, ds_hash)
    if cs.status != "ok":
        log.warning("discovery finished with status %s", cs.status)
    return [run.write("concepts_json", cs.to_json()), run.write("concepts_csv", cs.to_csv())]


def cmd_train_policy(run: Run) -> list[Path]:
    use_concepts = run.cfg.policy.alpha > 0
    run.require("dataset", *(["concepts_json"] if use_concepts else []))
    ds, ds_hash = run.dataset()
    concepts = None
    if use_concepts:
        concepts = ConceptSet.from_json(run.read("concepts_json"))
        if concepts.dataset_hash and concepts.dataset_hash != ds_hash:
            raise ArtifactConflict("concept set was discovered on a different dataset")
        if concepts.K == 0:
            raise ValueError("concept set is empty; nothing for the key-state heads to predict")
    model, trace = train_bc(ds, concepts, run.cfg.policy)
    return [
        run.write("weights", model.dumps(run.hash)),
        run.write("loss_csv", loss_trace_csv(trace, run.hash)),
    ]


def cmd_eval(run: Run) -> list[Path]:
    run.require("weights")
    model = PolicyModel.loads(run.read("weights"))
    report = evaluate(model, run.cfg.task, run.cfg.eval_episodes, run.cfg.eval_split)
    return [run.write("report", report_json(report, run.hash))]


def cmd_ablate(run: Run) -> list[Path]:
    run.require("dataset")
    _, nd, ds_hash = run.normalized()
    marks = data.stack_marks(nd, run.cfg.task.events)
    rows, sets = ablation(nd, run.cfg.discovery, marks)
    out = []
    for row, cs in zip(rows, sets):
        out.append(run.write(f"ablation_{row.variant}", _stamp(cs, run, ds_hash).to_json()))
    out.append(run.write("ablation_csv", ablation_csv(rows, run.hash)))
    return out


def cmd_plot(run: Run) -> list[Path]:
    run.require("profile_csv")
    profile = MIProfile.from_csv(run.read("profile_csv"))
    concept_means = None
    if run.path("concepts_json").exists():
        concept_means = [float(m) for m in ConceptSet.from_json(run.read("concepts_json")).assignment.means()]
    marks = None
    T = run.cfg.normalize_T
    if run.path("dataset").exists():
        _, nd, _ = run.normalized()
        marks = {label: data.mean_mark(nd, label) for label in run.cfg.task.events}
    svg = plot_profile(profile, concept_means, marks, title=f"{run.cfg.task.kind} key states", T=T)
    return [run.write("plot", _svg_with_hash(svg, run.hash))]


COMMANDS = {
    "gen": cmd_gen,
    "profile": cmd_profile,
    "discover": cmd_discover,
    "train-policy": cmd_train_policy,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults apply when omitted)")
    common.add_argument("--seed", type=_u64, help="global seed")
    common.add_argument("--out", help="output directory; runs go to <out>/<config hash prefix>/")
    common.add_argument("--engine", help="discovery engine: profile_peaks, coordinate_ascent or localizer")
    common.add_argument("--lambda", dest="lam", help="diversity weight (number or 'auto')")
    common.add_argument("--delta-t", dest="delta_t", help="predecessor offset in normalized steps")
    common.add_argument("--alpha", help="weight of the key-state prediction loss")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="maxmi", description="Key-state discovery by predecessor mutual information.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def overrides_from(args: argparse.Namespace) -> dict[str, str]:
    pairs = {
        "run.seed": args.seed,
        "run.output_dir": args.out,
        "discovery.engine": args.engine,
        "discovery.lambda": args.lam,
        "discovery.delta_t": args.delta_t,
        "policy.alpha": args.alpha,
    }
    return {k: str(v) for k, v in pairs.items() if v is not None}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, overrides_from(args))
    except ConfigError as err:
        print(f"maxmi: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(cfg)
    try:
        written = COMMANDS[args.command](run)
    except MissingArtifact as err:
        print(f"maxmi: {err}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as err:  # any failure inside a stage
        log.debug("stage failed", exc_info=True)
        print(f"maxmi: {args.command} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
