"""Command-line entry point.

Subcommands: prep-pfam, prep-grouped, prep-ppi, prep-dms,
prep-hard-negatives, gen-synthetic, train, eval, ablate, few-shot.

Every command writes a manifest with the config hash, input/output hashes,
and seed; identical manifests imply identical outputs. Exit codes: 0 on
success, 2 for usage or input errors, 3 for numeric failures.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import cluster as clu
from . import datasets as ds
from . import evaluation as ev
from . import model as md
from . import profile as pf
from . import sampler as sp
from . import seqio
from . import synth
from .config import ConfigError, RunConfig, load_config
from .manifest import write_manifest

ABLATIONS = ("drop_pfam", "drop_hard_neg", "drop_afdb", "drop_string", "drop_dms", "proportional")

_INPUT_ERRORS = (
    seqio.SeqIOError,
    pf.ProfileError,
    ds.DatasetError,
    sp.SamplerError,
    ev.EvalError,
    ConfigError,
    ValueError,
    OSError,
)


def main() -> None:
    threads = os.environ.get("PROTEMBED_THREADS")
    if threads:
        _limit_threads(int(threads))
    try:
        cli(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(2)
    except click.exceptions.Abort:
        sys.exit(2)
    except md.NumericError as e:
        click.echo(f"numeric failure: {e}", err=True)
        sys.exit(3)
    except _INPUT_ERRORS as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)


def _limit_threads(n: int) -> None:
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


@click.group()
@click.option("--threads", type=int, default=None, help="Pin BLAS thread count.")
def cli(threads):
    if threads:
        _limit_threads(threads)


def _cfg_option(f):
    return click.option(
        "--config", "config_path", type=click.Path(exists=True), default=None,
        help="TOML run config; defaults encode the reference recipe.",
    )(f)


def _read_grouped_input(path: str) -> list[seqio.SequenceRecord]:
    if path.endswith(".jsonl"):
        return seqio.read_records(path)
    records = seqio.parse_fasta(Path(path).read_bytes())
    out = []
    for rec in records:
        desc = rec.meta.get("desc", "")
        group = desc.split()[0] if desc else None
        if group is None:
            raise ds.DatasetError(f"record {rec.id!r} has no group label in its header")
        out.append(seqio.SequenceRecord(rec.id, rec.sequence, group_id=group, meta=rec.meta))
    return out


# -- prep commands ---------------------------------------------------------------


@cli.command("prep-pfam")
@_cfg_option
@click.option("--fasta", required=True, type=click.Path(exists=True))
@click.option("--clans", "clans_path", type=click.Path(exists=True), default=None,
              help="Two-column TSV mapping family to clan.")
@click.option("--min-seq-id", type=float, default=None, help="Identity threshold (default 0.7).")
@click.option("--min-cov", type=float, default=None, help="Coverage threshold (default 0.8).")
@click.option("--out", "out_dir", required=True, type=click.Path())
def prep_pfam(config_path, fasta, clans_path, min_seq_id, min_cov, out_dir):
    """Cluster, decontaminate across groups, and sort family records."""
    cfg = load_config(config_path)
    if min_seq_id is not None:
        cfg.data.pfam_min_seq_id = min_seq_id
    if min_cov is not None:
        cfg.data.pfam_min_cov = min_cov
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = _read_grouped_input(fasta)
    n_input = len(records)

    assignments = clu.greedy_cluster(
        records, cfg.data.pfam_min_seq_id, cfg.data.pfam_min_cov
    )
    records = clu.drop_cross_group(assignments, records)
    n_after_cluster = len(records)

    clan_map = {}
    if clans_path:
        for line in Path(clans_path).read_text().splitlines():
            if line.strip():
                fam, clan = line.split("\t")[:2]
                clan_map[fam] = clan
    records = ds.apply_clan_map(records, clan_map)
    stream = ds.build_grouped_pairs(records, ["clan_id", "group_id"])

    out_records = out / "records.jsonl"
    seqio.write_records(stream, str(out_records))
    write_manifest(
        out / "manifest.json",
        command="prep-pfam",
        cfg_hash=cfg.hash,
        seed=cfg.seed,
        inputs={"fasta": fasta, **({"clans": clans_path} if clans_path else {})},
        outputs={"records": out_records},
        counts={
            "input": n_input,
            "after_cross_group_drop": n_after_cluster,
            "output": len(stream),
        },
    )
    click.echo(f"wrote {len(stream)} records -> {out_records}")


@cli.command("prep-grouped")
@_cfg_option
@click.option("--table", required=True, type=click.Path(exists=True),
              help="JSONL with id, sequence, meta{plddt, fragment, clu_flag, foldseek_rep, afdb50_rep}.")
@click.option("--plddt-min", type=float, default=None, help="Confidence floor (default 70).")
@click.option("--out", "out_dir", required=True, type=click.Path())
def prep_grouped(config_path, table, plddt_min, out_dir):
    """Filter a structural-cluster slice and emit the shuffled, sorted stream."""
    cfg = load_config(config_path)
    if plddt_min is not None:
        cfg.data.plddt_min = plddt_min
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = seqio.read_records(table)
    filtered, report = ds.filter_afdb(records, plddt_min=cfg.data.plddt_min)
    stream = ds.build_grouped_pairs(
        filtered, ["afdb50_rep"], preshuffle_seed=cfg.seed
    )
    out_records = out / "records.jsonl"
    seqio.write_records(stream, str(out_records))
    write_manifest(
        out / "manifest.json",
        command="prep-grouped",
        cfg_hash=cfg.hash,
        seed=cfg.seed,
        inputs={"table": table},
        outputs={"records": out_records},
        counts={
            "input": len(records),
            "dropped_plddt": report.dropped_plddt,
            "dropped_fragment": report.dropped_fragment,
            "dropped_flag": report.dropped_flag,
            "output": len(stream),
        },
    )
    click.echo(f"wrote {len(stream)} records -> {out_records}")


@cli.command("prep-ppi")
@_cfg_option
@click.option("--edges", required=True, type=click.Path(exists=True),
              help="TSV: id1, id2, combined_score.")
@click.option("--fasta", required=True, type=click.Path(exists=True))
@click.option("--exclude-fasta", type=click.Path(exists=True), default=None,
              help="Benchmark test sequences to decontaminate against.")
@click.option("--min-score", type=int, default=None, help="Edge score floor (default 400).")
@click.option("--decontam-min-id", type=float, default=None,
              help="Decontamination identity threshold (default 0.5).")
@click.option("--out", "out_dir", required=True, type=click.Path())
def prep_ppi(config_path, edges, fasta, exclude_fasta, min_score, decontam_min_id, out_dir):
    """Decontaminate, two-stage cluster, and deduplicate interaction pairs."""
    cfg = load_config(config_path)
    if min_score is not None:
        cfg.data.ppi_min_score = min_score
    if decontam_min_id is not None:
        cfg.data.decontam_min_id = decontam_min_id
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = seqio.parse_fasta(Path(fasta).read_bytes())
    removed = 0
    removed_path = None
    if exclude_fasta:
        test = seqio.parse_fasta(Path(exclude_fasta).read_bytes())
        records, removal = clu.decontaminate(
            records, test, cfg.data.decontam_min_id, cfg.data.decontam_min_cov
        )
        removed = removal.count
        removed_path = out / "removed.jsonl"
        with open(removed_path, "w") as f:
            for rid in removal.removed_ids:
                f.write(json.dumps({"id": rid}) + "\n")
    cluster_map = clu.two_stage_cluster(
        records,
        stage1=(cfg.data.stage1_min_id, cfg.data.stage1_min_cov),
        stage2=(cfg.data.stage2_min_id, cfg.data.stage2_min_cov),
    )
    seqs = {r.id: r.sequence for r in records}

    edge_rows = []
    for lineno, line in enumerate(Path(edges).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise ds.DatasetError(f"{edges}:{lineno}: expected 3 columns")
        edge_rows.append(ds.PpiEdge(parts[0], parts[1], int(parts[2])))
    pairs, report = ds.build_ppi_pairs(
        edge_rows,
        cluster_map,
        seqs,
        min_score=cfg.data.ppi_min_score,
        len_range=(cfg.data.len_min, cfg.data.len_max),
        shuffle_seed=cfg.seed,
    )
    out_pairs = out / "pairs.jsonl"
    with open(out_pairs, "w") as f:
        for seq1, seq2 in pairs:
            f.write(json.dumps({"seq1": seq1, "seq2": seq2}) + "\n")
    outputs = {"pairs": out_pairs}
    if removed_path is not None:
        outputs["removed"] = removed_path
    write_manifest(
        out / "manifest.json",
        command="prep-ppi",
        cfg_hash=cfg.hash,
        seed=cfg.seed,
        inputs={"edges": edges, "fasta": fasta,
                **({"exclude": exclude_fasta} if exclude_fasta else {})},
        outputs=outputs,
        counts={
            "input_edges": report.input_edges,
            "decontaminated": removed,
            "dropped_score": report.dropped_score,
            "dropped_missing": report.dropped_missing,
            "dropped_self_cluster": report.dropped_self_cluster,
            "dropped_duplicate": report.dropped_duplicate,
            "dropped_length": report.dropped_length,
            "output": report.kept,
        },
    )
    click.echo(f"wrote {report.kept} pairs -> {out_pairs}")


@cli.command("prep-dms")
@_cfg_option
@click.option("--rows", required=True, type=click.Path(exists=True),
              help="JSONL: assay_id, wild_type, mutant, raw_score | clinical_label, split_hint?")
@click.option("--test-frac", type=float, default=None, help="Held-out fraction (default 0.2).")
@click.option("--min-group", type=int, default=None,
              help="Smallest group that gets split (default 10).")
@click.option("--out", "out_dir", required=True, type=click.Path())
def prep_dms(config_path, rows, test_frac, min_group, out_dir):
    """Normalize assay scores to [0, 1] and drop the held-out fold."""
    cfg = load_config(config_path)
    if test_frac is not None:
        cfg.data.dms_test_frac = test_frac
    if min_group is not None:
        cfg.data.dms_min_group = min_group
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dms_rows = []
    for lineno, line in enumerate(Path(rows).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        try:
            dms_rows.append(
                ds.DmsRow(
                    assay_id=obj["assay_id"],
                    wild_type=obj["wild_type"],
                    mutant=obj["mutant"],
                    raw_score=obj.get("raw_score"),
                    clinical_label=obj.get("clinical_label"),
                    split_hint=obj.get("split_hint"),
                )
            )
        except (KeyError, ValueError) as e:
            raise ds.DatasetError(f"{rows}:{lineno}: {e}") from e
    scored, norm_report = ds.normalize_dms(dms_rows, tuple(cfg.data.dms_drop_prefixes))
    train, split_report = ds.split_dms(
        scored, seed=cfg.seed, test_frac=cfg.data.dms_test_frac,
        min_group=cfg.data.dms_min_group,
    )
    final = ds.shuffle_rows(train, seed=cfg.seed)
    out_scored = out / "scored.jsonl"
    seqio.write_scored(final, str(out_scored))
    write_manifest(
        out / "manifest.json",
        command="prep-dms",
        cfg_hash=cfg.hash,
        seed=cfg.seed,
        inputs={"rows": rows},
        outputs={"scored": out_scored},
        counts={
            "input": norm_report.input_rows,
            "dropped_prefix_assays": len(norm_report.dropped_prefix_assays),
            "skipped_assays": len(norm_report.skipped_assays),
            "normalized": norm_report.kept,
            "dropped_hint": split_report.dropped_hint,
            "dropped_random": split_report.dropped_random,
            "dropped_global": split_report.dropped_global,
            "output": len(final),
        },
    )
    click.echo(f"wrote {len(final)} scored rows -> {out_scored}")


@cli.command("prep-hard-negatives")
@_cfg_option
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--profiles", "profiles_dir", required=True, type=click.Path(exists=True),
              help="Directory of HMMER3 ASCII files named <family_id>.hmm.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def prep_hard_negatives(config_path, records_path, profiles_dir, out_dir):
    """Sample profile-breaking mutants for capped per-family anchors."""
    cfg = load_config(config_path)
    hn = cfg.hard_negatives
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = _read_grouped_input(records_path)
    profiles = {}
    for p in sorted(Path(profiles_dir).glob("*.hmm")):
        profiles[p.stem] = pf.parse_hmm_profile(p.read_bytes())
    hn_cfg = pf.HardNegConfig(
        per_pos_threshold=hn.per_pos_threshold,
        sum_threshold=hn.sum_threshold,
        spacing_min_abs=hn.spacing_min_abs,
        spacing_len_divisor=hn.spacing_len_divisor,
        k_floor=hn.k_floor,
        k_max=hn.k_max,
        proposals_per_k=hn.proposals_per_k,
        family_len_tolerance=hn.family_len_tolerance,
        per_family_cap=hn.per_family_cap,
        len_min=hn.len_min,
        len_max=hn.len_max,
    )
    pairs, report = pf.build_hard_negative_dataset(records, profiles, hn_cfg, base_seed=cfg.seed)
    out_pairs = out / "pairs.jsonl"
    seqio.write_pairs(pairs, str(out_pairs))
    write_manifest(
        out / "manifest.json",
        command="prep-hard-negatives",
        cfg_hash=cfg.hash,
        seed=cfg.seed,
        inputs={"records": records_path},
        outputs={"pairs": out_pairs},
        counts={
            "anchors": report.anchors,
            "with_negative": report.with_negative,
            "fraction_with_negative": report.fraction_with_negative,
            "families_processed": report.families_processed,
            "families_skipped_no_profile": report.families_skipped_no_profile,
            "families_skipped_length": report.families_skipped_length,
        },
    )
    click.echo(
        f"wrote {report.anchors} anchors ({report.fraction_with_negative:.1%} with "
        f"hard negative) -> {out_pairs}"
    )


@cli.command("gen-synthetic")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--groups", default=16, show_default=True)
@click.option("--members", default=8, show_default=True)
@click.option("--dim", default=16, show_default=True)
@click.option("--noise", default=1.5, show_default=True)
@click.option("--holdout", default=0.25, show_default=True)
@click.option("--dms-assays", default=4, show_default=True)
@click.option("--dms-rows", default=30, show_default=True)
@click.option("--seed", default=42, show_default=True)
def gen_synthetic(out_dir, groups, members, dim, noise, holdout, dms_assays, dms_rows, seed):
    """Generate a deterministic synthetic training/evaluation bundle."""
    spec = synth.BundleSpec(
        n_groups=groups,
        members_per_group=members,
        dim=dim,
        noise=noise,
        holdout_frac=holdout,
        dms_assays=dms_assays,
        dms_rows_per_assay=dms_rows,
        seed=seed,
    )
    paths = synth.write_bundle(spec, out_dir)
    write_manifest(
        Path(out_dir) / "manifest.json",
        command="gen-synthetic",
        cfg_hash="",
        seed=seed,
        inputs={},
        outputs={k: p for k, p in paths.items()},
        counts={"groups": groups, "members": members, "dim": dim},
    )
    click.echo(f"bundle written to {out_dir}")


# -- training and evaluation -------------------------------------------------------


def _resolver(embeddings: seqio.EmbeddingSet, sidecar: str | None):
    index = embeddings.row_index()
    seq_index: dict[str, int] = {}
    if sidecar:
        for rec in seqio.parse_fasta(Path(sidecar).read_bytes()):
            if rec.id in index:
                seq_index.setdefault(rec.sequence, index[rec.id])

    def resolve(ref: str) -> int:
        row = index.get(ref)
        if row is None:
            row = seq_index.get(ref)
        if row is None:
            raise ds.DatasetError(f"cannot resolve {ref[:40]!r} to an embedding row")
        return row

    return resolve


def _parse_named(values: tuple[str, ...], what: str) -> dict[str, str]:
    out = {}
    for v in values:
        if "=" not in v:
            raise ds.DatasetError(f"--{what} expects NAME=PATH, got {v!r}")
        name, path = v.split("=", 1)
        if not Path(path).exists():
            raise ds.DatasetError(f"--{what} {name}: no such file {path!r}")
        out[name] = path
    return out


def _load_training_data(embeddings, sidecar, grouped, pairs, scored):
    resolve = _resolver(embeddings, sidecar)
    datasets: list[md.TrainDataset] = []
    specs: list[sp.DatasetSpec] = []

    for name, path in grouped.items():
        records = seqio.read_records(path)
        datasets.append(
            md.TrainDataset(
                name=name,
                kind="mnrl_grouped",
                member_idx=np.array([resolve(r.id) for r in records], dtype=np.int64),
            )
        )
        specs.append(
            sp.DatasetSpec(
                name=name, kind="grouped", size=len(records),
                groups=tuple(r.group_id for r in records),
            )
        )
    for name, path in pairs.items():
        rows = list(seqio.read_pairs(path))
        anchor = np.array([resolve(r.anchor) for r in rows], dtype=np.int64)
        positive = np.array([resolve(r.positive) for r in rows], dtype=np.int64)
        hard = np.array(
            [resolve(r.hard_negative) if r.hard_negative else -1 for r in rows],
            dtype=np.int64,
        )
        datasets.append(
            md.TrainDataset(
                name=name, kind="mnrl_pairs",
                anchor_idx=anchor, positive_idx=positive, hard_negative_idx=hard,
            )
        )
        specs.append(
            sp.DatasetSpec(
                name=name, kind="pairs", size=len(rows),
                groups=tuple(r.group for r in rows),
            )
        )
    for name, path in scored.items():
        rows = list(seqio.read_scored(path))
        datasets.append(
            md.TrainDataset(
                name=name, kind="cosent",
                anchor_idx=np.array([resolve(r.seq1) for r in rows], dtype=np.int64),
                positive_idx=np.array([resolve(r.seq2) for r in rows], dtype=np.int64),
                scores=np.array([r.score for r in rows], dtype=np.float64),
            )
        )
        specs.append(sp.DatasetSpec(name=name, kind="scored", size=len(rows)))
    return datasets, specs


def _dataset_options(f):
    f = click.option("--grouped", multiple=True, help="NAME=records.jsonl (MNRL grouped stream).")(f)
    f = click.option("--pairs", multiple=True, help="NAME=pairs.jsonl (MNRL pre-paired rows).")(f)
    f = click.option("--scored", multiple=True, help="NAME=scored.jsonl (score-ranking rows).")(f)
    return f


def _train_once(cfg: RunConfig, embeddings, datasets, specs, mode=None, skip=()):
    keep = [i for i, s in enumerate(specs) if s.name not in skip]
    sub_specs = [specs[i] for i in keep]
    sub_datasets = [datasets[i] for i in keep]
    plan = sp.plan_training_batches(
        sub_specs,
        batch_size=cfg.sampler.batch_size,
        max_pairs=cfg.sampler.max_pairs,
        mode=mode or cfg.sampler.mode,
        seed=cfg.seed,
    )
    tr = cfg.trainer
    trainer_cfg = md.TrainerConfig(
        effective_batch_size=tr.effective_batch_size,
        micro_batch_size=cfg.sampler.batch_size,
        lr=tr.lr,
        min_lr=tr.min_lr,
        warmup_steps=tr.warmup_steps,
        betas=(tr.beta1, tr.beta2),
        eps=tr.eps,
        weight_decay=tr.weight_decay,
        scale=tr.scale,
        init_scale=tr.init_scale,
        use_bias=tr.use_bias,
        seed=cfg.seed,
    )
    params, log = md.train_adapter(embeddings, sub_datasets, plan, trainer_cfg)
    return params, log, plan, sub_datasets


@cli.command("train")
@_cfg_option
@click.option("--embeddings", "emb_path", required=True, type=click.Path(exists=True))
@click.option("--sidecar-fasta", type=click.Path(exists=True), default=None)
@_dataset_options
@click.option("--sampler", "sampler_mode", type=click.Choice(["round_robin", "proportional"]),
              default=None, help="Override the configured multi-dataset sampler.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def train_cmd(config_path, emb_path, sidecar_fasta, grouped, pairs, scored, sampler_mode, out_dir):
    """Train the adapter over the configured batch plan."""
    cfg = load_config(config_path)
    if sampler_mode is not None:
        cfg.sampler.mode = sampler_mode
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    embeddings = seqio.read_embeddings(emb_path)
    datasets, specs = _load_training_data(
        embeddings, sidecar_fasta,
        _parse_named(grouped, "grouped"), _parse_named(pairs, "pairs"),
        _parse_named(scored, "scored"),
    )
    if not datasets:
        raise ds.DatasetError("no training datasets given")
    params, log, plan, _ = _train_once(cfg, embeddings, datasets, specs)

    ckpt = out / "adapter.padp"
    md.write_adapter(params, str(ckpt))
    log_path = out / "loss_log.jsonl"
    md.write_loss_log(log, str(log_path))
    plan_path = out / "plan.jsonl"
    plan.to_jsonl(str(plan_path))
    inputs = {"embeddings": emb_path}
    for name, p in {**_parse_named(grouped, "grouped"), **_parse_named(pairs, "pairs"),
                    **_parse_named(scored, "scored")}.items():
        inputs[f"dataset_{name}"] = p
    write_manifest(
        out / "manifest.json",
        command="train",
        cfg_hash=cfg.hash,
        seed=cfg.seed,
        inputs=inputs,
        outputs={"adapter": ckpt, "loss_log": log_path, "plan": plan_path},
        counts={"steps": len(plan.steps)},
    )
    click.echo(f"trained {len(plan.steps)} steps -> {ckpt}")


def _load_task(path: str) -> ev.EvalTask:
    obj = json.loads(Path(path).read_text())
    labels = obj.get("labels")
    if labels is None and "labels_file" in obj:
        labels = {}
        base = Path(path).parent
        for line in (base / obj["labels_file"]).read_text().splitlines():
            if line.strip():
                k, v = line.split("\t")[:2]
                labels[k] = v
    if labels is None:
        raise ev.EvalError(f"task {path}: no labels")
    if obj.get("kind") == "regression":
        labels = {k: float(v) for k, v in labels.items()}
    split = obj.get("split_file")
    train_ids = obj.get("train_ids")
    test_ids = obj.get("test_ids")
    if split:
        sobj = json.loads((Path(path).parent / split).read_text())
        train_ids, test_ids = sobj["train"], sobj["test"]
    return ev.EvalTask(
        name=obj["name"],
        kind=obj["kind"],
        metric=obj["metric"],
        labels=labels,
        train_ids=tuple(train_ids) if train_ids else None,
        test_ids=tuple(test_ids) if test_ids else None,
        cv_folds=obj.get("cv_folds", ev.CV_FOLDS),
        recall_k=obj.get("recall_k", 1),
    )


def _apply_adapter(embeddings: seqio.EmbeddingSet, adapter_path: str) -> seqio.EmbeddingSet:
    params = md.read_adapter(adapter_path)
    Z = md.adapter_forward(params, embeddings.matrix.astype(np.float64))
    return seqio.EmbeddingSet(embeddings.ids, Z.astype(np.float32), normalized=True)


@cli.command("eval")
@_cfg_option
@click.option("--baseline", "baseline_path", required=True, type=click.Path(exists=True))
@click.option("--candidate", "candidate_path", type=click.Path(exists=True), default=None)
@click.option("--adapter", "adapter_path", type=click.Path(exists=True), default=None)
@click.option("--task", "task_paths", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def eval_cmd(config_path, baseline_path, candidate_path, adapter_path, task_paths, out_dir):
    """Evaluate baseline vs candidate embeddings on task manifests."""
    cfg = load_config(config_path)
    if (candidate_path is None) == (adapter_path is None):
        raise click.UsageError("give exactly one of --candidate / --adapter")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    baseline = seqio.read_embeddings(baseline_path)
    candidate = (
        seqio.read_embeddings(candidate_path)
        if candidate_path
        else _apply_adapter(baseline, adapter_path)
    )
    base_vals = {}
    cand_vals = {}
    for tp in task_paths:
        task = _load_task(tp)
        base_vals[task.name] = ev.evaluate_task(baseline, task, k=cfg.eval.knn_k)
        cand_vals[task.name] = ev.evaluate_task(candidate, task, k=cfg.eval.knn_k)
    report = ev.delta_report(base_vals, cand_vals, seeds={"run": cfg.seed}, config_hash=cfg.hash)

    report_json = out / "report.json"
    report_json.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    report_txt = out / "report.txt"
    report_txt.write_text(report.to_text() + "\n")
    inputs = {"baseline": baseline_path}
    if candidate_path:
        inputs["candidate"] = candidate_path
    if adapter_path:
        inputs["adapter"] = adapter_path
    for i, tp in enumerate(task_paths):
        inputs[f"task_{i}"] = tp
    write_manifest(
        out / "manifest.json",
        command="eval",
        cfg_hash=cfg.hash,
        seed=cfg.seed,
        inputs=inputs,
        outputs={"report_json": report_json, "report_txt": report_txt},
        counts={"tasks": len(task_paths)},
    )
    click.echo(report.to_text())


@cli.command("ablate")
@_cfg_option
@click.option("--embeddings", "emb_path", required=True, type=click.Path(exists=True))
@click.option("--sidecar-fasta", type=click.Path(exists=True), default=None)
@_dataset_options
@click.option("--task", "task_paths", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--ablation", "ablations", multiple=True, type=click.Choice(ABLATIONS + ("full",)),
              help="Configurations to run; default is full plus all six.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def ablate_cmd(config_path, emb_path, sidecar_fasta, grouped, pairs, scored, task_paths,
               ablations, out_dir):
    """Retrain with one source removed (or proportional sampling) and compare."""
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    embeddings = seqio.read_embeddings(emb_path)
    datasets, specs = _load_training_data(
        embeddings, sidecar_fasta,
        _parse_named(grouped, "grouped"), _parse_named(pairs, "pairs"),
        _parse_named(scored, "scored"),
    )
    tasks = [_load_task(tp) for tp in task_paths]
    base_vals = {t.name: ev.evaluate_task(embeddings, t, k=cfg.eval.knn_k) for t in tasks}

    configs = list(ablations) if ablations else ["full", *ABLATIONS]
    names = {s.name for s in specs}
    summary = {}
    for conf in configs:
        mode = None
        skip: tuple[str, ...] = ()
        if conf == "proportional":
            mode = "proportional"
        elif conf != "full":
            role = conf.removeprefix("drop_")
            if role not in names:
                raise ds.DatasetError(f"ablation {conf}: no dataset named {role!r}")
            skip = (role,)
        params, _, plan, _ = _train_once(cfg, embeddings, datasets, specs, mode=mode, skip=skip)
        Z = md.adapter_forward(params, embeddings.matrix.astype(np.float64))
        trained = seqio.EmbeddingSet(embeddings.ids, Z.astype(np.float32), normalized=True)
        vals = {t.name: ev.evaluate_task(trained, t, k=cfg.eval.knn_k) for t in tasks}
        report = ev.delta_report(base_vals, vals, seeds={"run": cfg.seed}, config_hash=cfg.hash)
        summary[conf] = {
            "tasks_improved": report.tasks_improved,
            "n_tasks": len(tasks),
            "mean_delta_pct": report.mean_delta_pct,
        }
        (out / f"report_{conf}.json").write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n"
        )
        plan.to_jsonl(str(out / f"plan_{conf}.jsonl"))

    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    lines = [f"{'configuration':<18} {'improved':>9} {'mean delta%':>12}"]
    for conf in configs:
        s = summary[conf]
        lines.append(
            f"{conf:<18} {s['tasks_improved']}/{s['n_tasks']:>5} {s['mean_delta_pct']:>+11.1f}"
        )
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    write_manifest(
        out / "manifest.json",
        command="ablate",
        cfg_hash=cfg.hash,
        seed=cfg.seed,
        inputs={"embeddings": emb_path},
        outputs={"summary": summary_path},
        counts={"configurations": len(configs)},
    )
    click.echo("\n".join(lines))


@cli.command("few-shot")
@_cfg_option
@click.option("--baseline", "baseline_path", required=True, type=click.Path(exists=True))
@click.option("--candidate", "candidate_path", type=click.Path(exists=True), default=None)
@click.option("--adapter", "adapter_path", type=click.Path(exists=True), default=None)
@click.option("--task", "task_path", required=True, type=click.Path(exists=True))
@click.option("--n", "n_values", multiple=True, type=int)
@click.option("--stratified", is_flag=True, default=False)
@click.option("--out", "out_dir", required=True, type=click.Path())
def few_shot_cmd(config_path, baseline_path, candidate_path, adapter_path, task_path,
                 n_values, stratified, out_dir):
    """Probe metric vs training-set size for baseline and candidate embeddings."""
    cfg = load_config(config_path)
    if (candidate_path is None) == (adapter_path is None):
        raise click.UsageError("give exactly one of --candidate / --adapter")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    baseline = seqio.read_embeddings(baseline_path)
    candidate = (
        seqio.read_embeddings(candidate_path)
        if candidate_path
        else _apply_adapter(baseline, adapter_path)
    )
    task = _load_task(task_path)
    if task.train_ids is None or task.test_ids is None:
        raise ev.EvalError("few-shot needs a task with an explicit split")
    ns = tuple(n_values) if n_values else tuple(cfg.eval.few_shot_ns)

    def split_xy(emb):
        index = emb.row_index()
        tr = np.array([index[i] for i in task.train_ids])
        te = np.array([index[i] for i in task.test_ids])
        m = emb.matrix.astype(np.float64)
        y_tr = np.array([task.labels[i] for i in task.train_ids])
        y_te = np.array([task.labels[i] for i in task.test_ids])
        return m[tr], y_tr, m[te], y_te

    b = split_xy(baseline)
    c = split_xy(candidate)
    base_m = ev.few_shot_metrics(*b, task, n_values=ns, seed=cfg.seed, stratified=stratified)
    cand_m = ev.few_shot_metrics(*c, task, n_values=ns, seed=cfg.seed, stratified=stratified)

    table = {}
    for n in sorted(base_m):
        bv, cv = base_m[n], cand_m[n]
        if bv is None or cv is None:
            table[str(n)] = {"baseline": bv, "trained": cv, "delta_pct": None}
        else:
            table[str(n)] = {
                "baseline": bv,
                "trained": cv,
                "delta_pct": None if bv == 0 else 100.0 * (cv - bv) / bv,
            }
    out_json = out / "few_shot.json"
    out_json.write_text(json.dumps(table, sort_keys=True, indent=1) + "\n")
    write_manifest(
        out / "manifest.json",
        command="few-shot",
        cfg_hash=cfg.hash,
        seed=cfg.seed,
        inputs={"baseline": baseline_path, "task": task_path,
                **({"candidate": candidate_path} if candidate_path else {}),
                **({"adapter": adapter_path} if adapter_path else {})},
        outputs={"table": out_json},
        counts={"n_values": len(ns)},
    )
    for n, row in table.items():
        d = row["delta_pct"]
        click.echo(
            f"N={n}: base={row['baseline']} trained={row['trained']} "
            f"delta={'n/a' if d is None else f'{d:+.1f}%'}"
        )


if __name__ == "__main__":
    main()
