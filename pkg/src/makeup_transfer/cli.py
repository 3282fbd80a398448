"""Command-line entry point: ``makeup-transfer <command> ...``.

Exit codes: 0 ok, 2 input/validation error, 3 numeric failure, 4 internal
error. Failures print one line ``error[<category>]: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import parsing as P
from .convnet import default_template, load_network, random_network, save_network
from .errors import InputError, MakeupTransferError, NumericalError
from .fixtures import make_face_pair, make_index_records
from .gradcheck import run_selfcheck, small_network
from .imageio import read_image, write_image, write_mask
from .losses import TransferConfig
from .optimizer import SWEEP_PARAMS, lightness_sweep, run_transfer, write_trace
from .recommend import knn_query, load_index, normalize_concat
from .warp import read_landmarks, write_landmarks

log = logging.getLogger("makeup_transfer")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4
MANIFEST_FORMAT = "makeup-transfer-run/1"
INPUT_FLAGS = ("before", "reference", "before_labels", "reference_labels",
               "before_landmarks", "reference_landmarks")


class ArgumentError(InputError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


# ---------------------------------------------------------------------------
# shared helpers

def _add_inputs(p):
    p.add_argument("--before", help="before-makeup face PNG")
    p.add_argument("--reference", help="reference (made-up) face PNG")
    p.add_argument("--before-labels", help="before-face labelmap PNG")
    p.add_argument("--reference-labels", help="reference labelmap PNG")
    p.add_argument("--before-landmarks", help="before-face landmark JSON")
    p.add_argument("--reference-landmarks", help="reference landmark JSON")
    p.add_argument("--network", help="network file; default is a random network from --seed")


def _add_config(p):
    d = TransferConfig()
    p.add_argument("--lambda-e", type=float, default=d.lambda_e, help="eye-shadow weight")
    p.add_argument("--lambda-f", type=float, default=d.lambda_f, help="foundation weight")
    p.add_argument("--lambda-l", type=float, default=d.lambda_l, help="lip-gloss weight")
    p.add_argument("--lambda-s", type=float, default=d.lambda_s, help="structure weight")
    p.add_argument("--tv-beta", type=float, default=d.tv_beta)
    p.add_argument("--tv-weight", type=float, default=d.tv_weight)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--momentum", type=float, default=d.momentum)
    p.add_argument("--iters", type=int, default=d.iterations)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--style-layers", default=",".join(d.style_layers))
    p.add_argument("--content-layer", default=d.content_layer)


def _config_from_args(args):
    return TransferConfig(
        lambda_s=args.lambda_s, lambda_e=args.lambda_e, lambda_l=args.lambda_l, lambda_f=args.lambda_f,
        tv_weight=args.tv_weight, tv_beta=args.tv_beta,
        style_layers=tuple(s for s in args.style_layers.split(",") if s),
        content_layer=args.content_layer, iterations=args.iters, lr=args.lr,
        momentum=args.momentum, seed=args.seed)


def _require_file(path, flag):
    if path is None:
        raise ArgumentError(f"missing required flag --{flag.replace('_', '-')}")
    if not Path(path).is_file():
        raise InputError(f"input file not found: {path}")
    return str(Path(path).resolve())


def _load_inputs(paths):
    before = read_image(paths["before"])
    reference = read_image(paths["reference"])
    labels = (P.read_labelmap(paths["before_labels"]), P.read_labelmap(paths["reference_labels"]))
    lms = (read_landmarks(paths["before_landmarks"]), read_landmarks(paths["reference_landmarks"]))
    return before, reference, labels, lms


def _network(path, seed):
    if path:
        return load_network(_require_file(path, "network"))
    return random_network(default_template(), seed)


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands

def cmd_transfer(args):
    if args.replay:
        manifest = json.loads(Path(args.replay).read_text())
        if manifest.get("format") != MANIFEST_FORMAT:
            raise InputError(f"{args.replay}: not a run manifest")
        config = TransferConfig(**manifest["config"])
        paths = {k: _require_file(v, k) for k, v in manifest["inputs"].items()}
        network = manifest["network"]
    else:
        config = _config_from_args(args)
        paths = {k: _require_file(getattr(args, k), k) for k in INPUT_FLAGS}
        network = str(Path(args.network).resolve()) if args.network else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = _network(network, config.seed)
    before, reference, labels, lms = _load_inputs(paths)
    result = run_transfer(before, reference, labels, lms, net, config)
    outputs = {"image": f"{args.name}.png", "trace": f"{args.name}_trace.tsv"}
    write_image(result.image, out_dir / outputs["image"])
    write_trace(result.trace, out_dir / outputs["trace"])
    manifest = {
        "format": MANIFEST_FORMAT, "version": __version__, "command": "transfer",
        "config": config.to_dict(), "inputs": paths, "network": network, "seed": config.seed,
        "iterations": config.iterations, "final_losses": result.trace[-1], "outputs": outputs,
    }
    (out_dir / f"{args.name}_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {out_dir / outputs['image']} (final loss {result.trace[-1]['loss']:.6g})")
    return EXIT_OK


def _parse_values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ArgumentError(f"--values must be comma-separated numbers, got {text!r}") from None


def cmd_sweep(args):
    config = _config_from_args(args)
    values = _parse_values(args.values)
    paths = {k: _require_file(getattr(args, k), k) for k in INPUT_FLAGS}
    net = _network(args.network, config.seed)
    before, reference, labels, lms = _load_inputs(paths)
    points = lightness_sweep(before, reference, labels, lms, net, config, args.param, values)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["value\timage\tterm\tfinal_loss"]
    for pt in points:
        name = f"{args.param}_{pt.value:g}.png"
        write_image(pt.image, out_dir / name)
        lines.append(f"{pt.value:g}\t{name}\t{_fmt(pt.term)}\t{_fmt(pt.trace[-1]['loss'])}")
    (out_dir / "summary.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _query_vector(args, index):
    if args.query_id is not None:
        if args.query_id not in index.ids:
            raise InputError(f"query id {args.query_id!r} not in index")
        return index.vectors[index.ids.index(args.query_id)]
    if args.query is not None:
        rec = json.loads(Path(_require_file(args.query, "query")).read_text())
        if "embedding" in rec:
            return np.asarray(rec["embedding"], dtype=np.float64)
        if "fc6" in rec and "fc7" in rec:
            return normalize_concat(rec["fc6"], rec["fc7"])
        raise InputError(f"{args.query}: record needs 'embedding' or 'fc6' + 'fc7'")
    raise ArgumentError("give --query-id or --query")


def cmd_recommend(args):
    index = load_index(_require_file(args.index, "index"))
    if not 1 <= args.k <= len(index):
        raise ArgumentError(f"-k must lie in 1..{len(index)} for this index, got {args.k}")
    for rank, (id_, dist) in enumerate(knn_query(index, _query_vector(args, index), args.k), start=1):
        print(f"{rank}\t{id_}\t{_fmt(dist)}")
    return EXIT_OK


def _load_conf(path):
    try:
        conf = np.load(_require_file(path, "conf"))
    except ValueError as exc:
        raise InputError(f"{path}: not a .npy array ({exc})") from None
    if conf.ndim != 3:
        raise InputError(f"{path}: confidence map must be (K, H, W)")
    return conf.astype(np.float64)


def cmd_parse(args):
    if args.tool == "symmetrize":
        out = P.symmetrize_confidence(_load_conf(args.conf), swap_lateral=not args.no_swap)
        np.save(args.output, out)
        if args.labels_output:
            P.write_labelmap(P.argmax_labels(out), args.labels_output)
    elif args.tool == "eval-loss":
        conf = _load_conf(args.conf)
        truth = P.read_labelmap(_require_file(args.labels, "labels"))
        if args.unweighted:
            weights = np.ones(conf.shape[0])
        elif args.weights:
            weights = np.array(_parse_values(args.weights))
        else:
            weights = P.default_label_weights()
        res = P.weighted_cross_entropy(conf, truth, weights, from_logits=args.from_logits)
        print(f"loss\t{_fmt(res.loss)}\nclamped\t{res.clamped}")
    elif args.tool == "to-mask":
        labels = P.read_labelmap(_require_file(args.labels, "labels"))
        ids = [int(v) for v in _parse_values(args.ids)]
        write_mask(P.labels_to_mask(labels, ids), args.output)
    elif args.tool == "argmax":
        P.write_labelmap(P.argmax_labels(_load_conf(args.conf)), args.output)
    return EXIT_OK


def cmd_selfcheck(args):
    net = load_network(_require_file(args.network, "network")) if args.network else None
    results = run_selfcheck(net, seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}\t{r.name}\t{r.error:.3e}")
    if not all(r.passed for r in results):
        raise NumericalError("gradient self-check failed")
    return EXIT_OK


def cmd_make_fixture(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pair = make_face_pair(args.size, args.seed)
    write_image(pair.before, out / "before.png")
    write_image(pair.reference, out / "reference.png")
    P.write_labelmap(pair.before_labels, out / "before_labels.png")
    P.write_labelmap(pair.reference_labels, out / "reference_labels.png")
    write_landmarks(pair.before_landmarks, out / "before_landmarks.json")
    write_landmarks(pair.reference_landmarks, out / "reference_landmarks.json")
    with open(out / "index.jsonl", "w") as fh:
        for rec in make_index_records(seed=args.seed):
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote fixture pair ({args.size}x{args.size}) to {out}")
    return EXIT_OK


def cmd_init_network(args):
    net = small_network(args.seed) if args.template == "small" else random_network(default_template(), args.seed)
    save_network(net, args.output)
    print(f"wrote {args.template} network to {args.output}")
    return EXIT_OK


def build_parser():
    parser = Parser(prog="makeup-transfer", description="Localized makeup transfer by pixel optimization.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("transfer", help="transfer makeup from a reference face")
    _add_inputs(p)
    _add_config(p)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--name", default="result", help="output file stem")
    p.add_argument("--replay", help="rerun from a manifest written by an earlier run")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("sweep", help="grade makeup lightness by sweeping one cosmetic weight")
    _add_inputs(p)
    _add_config(p)
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated ascending weights")
    p.add_argument("--out-dir", default="sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("recommend", help="rank reference faces by embedding distance")
    p.add_argument("--index", required=True)
    p.add_argument("--query-id")
    p.add_argument("--query", help="JSON file with 'embedding' or 'fc6'/'fc7'")
    p.add_argument("-k", type=int, default=5)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("parse", help="face-parsing utilities")
    p.add_argument("tool", choices=("symmetrize", "eval-loss", "to-mask", "argmax"))
    p.add_argument("--conf", help="confidence map .npy of shape (K, H, W)")
    p.add_argument("--labels", help="labelmap PNG")
    p.add_argument("--output")
    p.add_argument("--labels-output", help="symmetrize: also write the argmax labelmap")
    p.add_argument("--no-swap", action="store_true", help="symmetrize: keep lateral classes unswapped")
    p.add_argument("--weights", help="eval-loss: 11 comma-separated label weights")
    p.add_argument("--unweighted", action="store_true")
    p.add_argument("--from-logits", action="store_true")
    p.add_argument("--ids", help="to-mask: comma-separated label ids")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("selfcheck", help="finite-difference gradient checks")
    p.add_argument("--network")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("make-fixture", help="write a synthetic before/reference face pair")
    p.add_argument("--out-dir", default="fixtures")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_fixture)

    p = sub.add_parser("init-network", help="write a randomly initialized network file")
    p.add_argument("--output", required=True)
    p.add_argument("--template", choices=("default", "small"), default="default")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init_network)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "parse":
            need = {"symmetrize": ("conf", "output"), "eval-loss": ("conf", "labels"),
                    "to-mask": ("labels", "ids", "output"), "argmax": ("conf", "output")}[args.tool]
            for flag in need:
                if getattr(args, flag) is None:
                    raise ArgumentError(f"parse {args.tool} needs --{flag}")
        return args.func(args)
    except InputError as exc:
        code = EXIT_INPUT
        message = f"error[input]: {exc}"
    except NumericalError as exc:
        code = EXIT_NUMERIC
        message = f"error[numeric]: {exc}"
    except MakeupTransferError as exc:
        code = EXIT_INTERNAL
        message = f"error[internal]: {exc}"
    except OSError as exc:
        code = EXIT_INPUT
        message = f"error[input]: {exc}"
    except Exception as exc:  # noqa: BLE001
        code = EXIT_INTERNAL
        message = f"error[internal]: {type(exc).__name__}: {exc}"
    print(message.replace("\n", " "), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
