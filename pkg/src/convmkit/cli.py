"""Command-line surface: audit | gradcheck | make-synth | train | eval |
export-features."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .audit import REFERENCE_COUNTS, audit as run_audit, solve_groups as derive_groups
from . import checkpoint as ckpt_mod
from . import ingest as ingest_mod
from . import synth as synth_mod
from . import tdf
from . import tensor as T
from .config import RunConfig, load_config, save_config
from .da import (DAConfig, DADatasets, SolverConfig, evaluate as da_evaluate,
                 train_da, train_supervised, METRIC_COLUMNS)
from .gradcheck import gradcheck, run_default_suite, _t
from .network import (NetworkSpec, attach_da_heads, attach_decoders,
                      build_network, propagate_shapes)


@click.group()
def main():
    """Compact three-branch CNN: parameter audits, gradient checks, synthetic
    two-domain benchmarks, and MMD-based domain-adaptation training."""


def _resolve_spec(name: str, num_classes: int, input_size: int) -> NetworkSpec:
    cfg = RunConfig(network=name, num_classes=num_classes, input_size=input_size)
    return cfg.resolve_spec()


@main.command("audit")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--spec", "spec_name", default="reference",
              help="'reference', 'tiny', or a spec YAML path")
@click.option("--solve-groups", is_flag=True,
              help="also derive the group factor of every conv_m row from its golden count")
@click.option("--golden/--no-golden", "golden", default=None,
              help="diff against the published per-layer counts "
                   "(default: only for the reference spec)")
@click.option("--out", "out_dir", type=click.Path(), default=None)
def cmd_audit(config_path, spec_name, solve_groups, golden, out_dir):
    """Count parameters layer by layer and diff against the golden table."""
    if config_path:
        spec = load_config(config_path).resolve_spec()
    else:
        spec = _resolve_spec(spec_name, 1000, 224)
    if golden is None:
        golden = spec_name == "reference" and not config_path
    reference = REFERENCE_COUNTS if golden else None
    report = run_audit(spec, reference)
    click.echo(report.to_table())
    if solve_groups:
        click.echo("group-factor derivation:")
        by_layer = {e.layer: e for e in report.entries}
        for i in spec.conv_m_indices():
            cfg = spec.layers[i].params["cfg"]
            target = by_layer[i + 1].reference or by_layer[i + 1].computed
            g = derive_groups(cfg, target)
            click.echo(f"  layer {i + 1}: g={g}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "param_report.csv").write_text(report.to_csv())
        click.echo(f"report written to {out / 'param_report.csv'}")
    if not report.passed:
        click.echo("AUDIT FAILED: nonzero diffs", err=True)
        sys.exit(1)
    click.echo(f"audit OK, total {report.total:,}")


@main.command("gradcheck")
@click.option("--op", default=None, help="single op to check (e.g. conv2d)")
@click.option("--dilation", default=1, type=int)
@click.option("--groups", default=1, type=int)
@click.option("--stride", default=1, type=int)
@click.option("--eps", default=1e-4, type=float)
@click.option("--tol", default=1e-4, type=float)
@click.option("--seed", default=1234, type=int)
def cmd_gradcheck(op, dilation, groups, stride, eps, tol, seed):
    """Verify analytic gradients against central finite differences."""
    if op is not None:
        rng = np.random.default_rng(seed)
        if op == "conv2d":
            cin = 2 * groups
            x = _t(rng, 1, cin, 9, 9)
            w = _t(rng, 2 * groups, cin // groups, 3, 3)
            fn = lambda x, w: T.conv2d(x, w, stride=stride, padding=dilation,
                                       dilation=dilation, groups=groups)
            rep = gradcheck(fn, [x, w], eps=eps, tol=tol)
        elif op == "conv2d_transpose":
            cin = 2 * groups
            x = _t(rng, 1, cin, 5, 5)
            w = _t(rng, cin, 2, 3, 3)
            fn = lambda x, w: T.conv2d_transpose_cropped(x, w, stride=stride, groups=groups)
            rep = gradcheck(fn, [x, w], eps=eps, tol=tol)
        else:
            raise click.ClickException(f"no targeted check for op {op!r}")
        click.echo(f"{op}: max relative error {rep.max_rel_error:.3e} (tol {tol:g})")
        sys.exit(0 if rep.passed else 1)
    results = run_default_suite(eps=eps, tol=tol, seed=seed)
    worst = 0.0
    ok = True
    for name, rep in results.items():
        status = "pass" if rep.passed else "FAIL"
        click.echo(f"  {name:<24} max rel err {rep.max_rel_error:.3e}  {status}")
        worst = max(worst, rep.max_rel_error)
        ok = ok and rep.passed
    click.echo(f"worst case: {worst:.3e} (tol {tol:g})")
    sys.exit(0 if ok else 1)


@main.command("make-synth")
@click.option("--classes", default=10, type=int)
@click.option("--per-class", default=200, type=int)
@click.option("--size", default=32, type=int)
@click.option("--shift", default="hue,texture,affine",
              help="comma list of hue/texture/affine, or 'none'")
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_make_synth(classes, per_class, size, shift, seed, out_dir):
    """Generate the two-domain benchmark as TDF images plus manifest."""
    shifts = () if shift == "none" else tuple(s.strip() for s in shift.split(","))
    params = synth_mod.SynthParams(num_classes=classes, per_class=per_class,
                                   size=size, shifts=shifts, seed=seed)
    out = synth_mod.write_dataset(params, out_dir)
    click.echo(f"wrote {2 * classes * per_class} images under {out}")


@main.command("import-images")
@click.option("--root", "root_dir", type=click.Path(exists=True), required=True,
              help="tree laid out as root/<domain>/<class>/<image>")
@click.option("--domains", default="source,target",
              help="comma list of domain directory names")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_import_images(root_dir, domains, out_dir):
    """Convert a directory of PNG/raw images into the TDF dataset layout."""
    doms = tuple(d.strip() for d in domains.split(","))
    out = ingest_mod.import_images(root_dir, out_dir, domains=doms)
    click.echo(f"dataset written under {out}")


def _load_data(cfg: RunConfig):
    if cfg.data_dir:
        (sx, sy), (tx, ty), stats = synth_mod.load_dataset(cfg.data_dir)
    else:
        sx, sy, tx, ty = synth_mod.generate(cfg.synth)
        pooled = np.concatenate([sx, tx])
        stats = {"mean": pooled.mean(axis=(0, 2, 3)).tolist(),
                 "std": pooled.std(axis=(0, 2, 3)).tolist()}
    sx = synth_mod.normalize(sx, stats)
    tx = synth_mod.normalize(tx, stats)
    return DADatasets(source_x=sx, source_y=sy, target_x=tx, target_y=ty), stats


def _build_model(cfg: RunConfig, *, for_da: bool, with_decoders: bool = False):
    rng = np.random.default_rng(cfg.solver.seed)
    spec = cfg.resolve_spec(include_classifier=True)
    net = build_network(spec, rng=rng)
    if for_da:
        attach_da_heads(net, cfg.num_classes, rng=rng)
        if with_decoders:
            attach_decoders(net, rng=rng)
    return net


def _write_metrics(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        w.writerows(history)


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--mode", type=click.Choice(["source_only", "da"]), default=None)
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None)
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def cmd_train(config_path, mode, resume_path, seed, out_dir):
    """Source-only pre-training or DA fine-tuning; writes checkpoint, metrics
    CSV, and a copy of the effective config."""
    cfg = load_config(config_path) if config_path else RunConfig()
    if mode:
        cfg.mode = mode
    if seed is not None:
        cfg.solver.seed = seed
    if out_dir:
        cfg.out_dir = out_dir
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")

    data, stats = _load_data(cfg)
    # decoders are attached after any resume load: checkpoints hold only the
    # test-time predictor, so a source-only one can seed DA fine-tuning
    model = _build_model(cfg, for_da=True)
    if resume_path:
        meta = ckpt_mod.read_meta(resume_path)
        if meta["census"] != model.param_census():
            raise click.ClickException(
                f"checkpoint census {meta['census']} != model census "
                f"{model.param_census()}")
        ckpt_mod.load(model, resume_path)

    if cfg.mode == "da":
        attach_decoders(model, rng=np.random.default_rng(cfg.solver.seed + 1))
        history = train_da(model, data, cfg.da, cfg.solver)
    else:
        history = train_supervised(model, data, cfg.da, cfg.solver)
        model.decoders = None
    _write_metrics(out / "metrics.csv", history)
    ckpt_mod.save(model, out / "checkpoint.zip", step=cfg.solver.max_steps,
                  seed=cfg.solver.seed, extra={"mode": cfg.mode, "stats": stats})
    click.echo(f"final loss {history[-1][3]:.4f}; artifacts in {out}")


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--split", type=click.Choice(["source", "target"]), default="target")
def cmd_eval(config_path, ckpt_path, split):
    """Top-1 accuracy of a checkpoint on the labeled source or target split."""
    cfg = load_config(config_path) if config_path else RunConfig()
    meta = ckpt_mod.read_meta(ckpt_path)
    data, _ = _load_data(cfg)
    model = _build_model(cfg, for_da=True)
    model.decoders = None
    ckpt_mod.load(model, ckpt_path)
    assert not any(n.startswith("decoder") for n in model.parameters()), \
        "eval-mode model must not carry decoder parameters"
    x, y = ((data.source_x, data.source_y) if split == "source"
            else (data.target_x, data.target_y))
    acc = da_evaluate(model, x, y, batch_size=cfg.solver.batch_size)
    click.echo(f"{split} top-1 accuracy: {acc:.4f} (step {meta['step']})")


@main.command("export-features")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--images", "images_path", type=click.Path(exists=True), required=True,
              help="a TDF image file or a directory of them")
@click.option("--layer", required=True, help="tap name, e.g. layer8")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_export_features(config_path, ckpt_path, images_path, layer, out_dir):
    """Dump activation maps at a named tap; conv_m taps yield one TDF per
    branch (c3 / dic2 / dec2)."""
    cfg = load_config(config_path) if config_path else RunConfig()
    model = _build_model(cfg, for_da=True)
    model.decoders = None
    ckpt_mod.load(model, ckpt_path)
    p = Path(images_path)
    files = sorted(p.glob("*.tdf")) if p.is_dir() else [p]
    x = np.stack([tdf.read(f) for f in files])
    meta = ckpt_mod.read_meta(ckpt_path)
    if "stats" in meta:
        x = synth_mod.normalize(x, meta["stats"])
    st = model.forward(T.Tensor(x, dtype=model.dtype), training=False)
    names = {model.spec.layer_name(i): i for i in range(len(model.spec.layers))}
    if layer not in names:
        raise click.ClickException(f"unknown layer {layer!r}; have {sorted(names)}")
    i = names[layer]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if i in st.branch_taps:
        for bname, t in st.branch_taps[i].items():
            tdf.write(out / f"{layer}_{bname}.tdf", t.data)
            click.echo(f"wrote {out / f'{layer}_{bname}.tdf'}")
    else:
        tdf.write(out / f"{layer}.tdf", st.layer_outputs[i].data)
        click.echo(f"wrote {out / f'{layer}.tdf'}")


if __name__ == "__main__":
    main()
