"""Command-line surface for the full pipeline.

Subcommands cover dimension estimation, model fitting, interpolation,
analogy (token-wise or cluster-routed), model inspection and eigenvector
grid export. stdout carries machine-readable JSON where a command declares
it; diagnostics go to stderr. Exit codes: 0 success, 1 user error,
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .embedding_io import (FormatError, TokenEmbeddingSet, load_model,
                           read_embeddings, save_model, write_embeddings)
from .intrinsic_dim import estimate_dim
from .metrics import export_eigvec_grids, uniformity
from .pathops import analogy, connect, decode_along_path, image_path
from .spectral import SpectralEmbedding, rbf_affinity, top_k_eigs
from .trainer import TrainConfig, decode, encode, fit, write_loss_csv

log = logging.getLogger("moodspace")


class UserError(Exception):
    """Invalid invocation or invalid input data; maps to exit code 1."""


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _read_set(path) -> TokenEmbeddingSet:
    try:
        return read_embeddings(path)
    except FileNotFoundError as exc:
        raise UserError(f"no such file: {path}") from exc
    except (FormatError, ValueError) as exc:
        raise UserError(f"cannot read {path}: {exc}") from exc


def _load_model(path):
    try:
        return load_model(path)
    except FileNotFoundError as exc:
        raise UserError(f"no such file: {path}") from exc
    except (FormatError, ValueError) as exc:
        raise UserError(f"cannot load model {path}: {exc}") from exc


def cmd_estimate_dim(args) -> int:
    emb = _read_set(args.emb)
    points = emb.flat_tokens().astype(np.float64)
    try:
        est = estimate_dim(points, args.kmin, args.kmax)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    _emit({"g_hat": est.g_hat, "g_rounded": est.g_rounded,
           "k_min": est.k_range[0], "k_max": est.k_range[1]})
    return 0


def cmd_fit(args) -> int:
    v_set = _read_set(args.v)
    w_set = _read_set(args.w)
    cfg = TrainConfig(steps=args.steps, lr=args.lr, k=args.k, fps_count=args.fps,
                      lambda1=args.lambda1, lambda2=args.lambda2,
                      lambda3=args.lambda3, lambda4=args.lambda4,
                      g=args.g, seed=args.seed, kappa=args.kappa,
                      bandwidth=args.h,
                      include_class_tokens=not args.no_class_tokens,
                      log_every=args.log_every)
    try:
        model = fit(v_set, w_set, cfg)
    except (ValueError, FloatingPointError) as exc:
        raise UserError(f"training failed: {exc}") from exc
    save_model(model, args.out)
    csv_path = args.loss_csv if args.loss_csv else args.out + ".loss.csv"
    write_loss_csv(model, csv_path)
    log.info("model written to %s, loss history to %s", args.out, csv_path)
    return 0


def _image_codes(model, emb: TokenEmbeddingSet, index: int):
    if not 0 <= index < emb.n_images:
        raise UserError(f"image index {index} out of range for {emb.n_images} images")
    tokens = emb.image_tokens(index).astype(np.float64)
    return tokens, encode(model, tokens)


def cmd_interp(args) -> int:
    model = _load_model(args.model)
    emb = _read_set(args.v)
    if args.steps < 2:
        raise UserError("need at least 2 interpolation steps")
    src_tokens, m_src = _image_codes(model, emb, args.src_image)
    _, m_dst = _image_codes(model, emb, args.dst_image)
    t_samples = np.linspace(0.0, 1.0, args.steps)
    anchors = decode(model, m_src)
    frames = np.empty((args.steps, emb.tokens_per_image, model.output_dim_w),
                      dtype=np.float32)
    for tok in range(emb.tokens_per_image):
        if args.mode == "literal":
            path = connect(model, anchors[tok], m_src[tok], m_dst[tok], t_samples)
        else:
            path = decode_along_path(model, m_src[tok], m_dst[tok], t_samples)
        frames[:, tok, :] = path.w_path.astype(np.float32)
    out = TokenEmbeddingSet(data=frames, space_tag="W",
                            grid_h=emb.grid_h, grid_w=emb.grid_w,
                            has_class_token=emb.has_class_token,
                            source_tag=f"interp mode={args.mode} images=({args.src_image},"
                                       f"{args.dst_image}) model={args.model}")
    write_embeddings(out, args.out)
    log.info("wrote %d frames to %s", args.steps, args.out)
    return 0


def cmd_analogy(args) -> int:
    model = _load_model(args.model)
    emb = _read_set(args.v)
    for name, idx in (("a1", args.a1), ("a2", args.a2), ("b1", args.b1)):
        if not 0 <= idx < emb.n_images:
            raise UserError(f"--{name} index {idx} out of range for {emb.n_images} images")
    t_samples = np.array([0.0, 1.0])
    if args.image_path:
        if args.H > emb.tokens_per_image:
            raise UserError(f"--H {args.H} exceeds tokens per image {emb.tokens_per_image}")
        tokens = [emb.image_tokens(i).astype(np.float64) for i in (args.a1, args.a2, args.b1)]
        try:
            result = image_path(model, tokens[0], tokens[1], tokens[2],
                                t_samples, h=args.H, seed=args.seed)
        except ValueError as exc:
            raise UserError(str(exc)) from exc
        final = np.stack([p.w_path[-1] for p in result.paths])
    else:
        b1_tokens, m_b1 = _image_codes(model, emb, args.b1)
        _, m_a1 = _image_codes(model, emb, args.a1)
        _, m_a2 = _image_codes(model, emb, args.a2)
        anchors = decode(model, m_b1)
        final = np.empty((emb.tokens_per_image, model.output_dim_w))
        for tok in range(emb.tokens_per_image):
            path = analogy(model, anchors[tok], m_a1[tok], m_a2[tok], t_samples)
            final[tok] = path.w_path[-1]
    out = TokenEmbeddingSet(data=final[None, :, :].astype(np.float32), space_tag="W",
                            grid_h=emb.grid_h, grid_w=emb.grid_w,
                            has_class_token=emb.has_class_token,
                            source_tag=f"analogy a1={args.a1} a2={args.a2} b1={args.b1} "
                                       f"image_path={args.image_path} model={args.model}")
    write_embeddings(out, args.out)
    return 0


def cmd_inspect(args) -> int:
    model = _load_model(args.model)
    payload = {
        "g": model.g,
        "input_dim_v": model.input_dim_v,
        "output_dim_w": model.output_dim_w,
        "hyperparams": model.hyperparams,
        "final_losses": dict(zip(("step", "spec", "curv", "rep", "recon", "var", "total"),
                                 [float(x) for x in model.loss_history[-1]]))
        if len(model.loss_history) else None,
        "uniformity": None,
    }
    if args.emb:
        emb = _read_set(args.emb)
        codes = encode(model, emb.flat_tokens().astype(np.float64))
        payload["uniformity"] = uniformity(codes).as_dict()
    _emit(payload)
    return 0


def cmd_eigvecs(args) -> int:
    emb = _read_set(args.emb)
    if emb.grid_h * emb.grid_w < 1:
        raise UserError("embedding set carries no spatial grid to visualize")
    tokens = emb.flat_tokens().astype(np.float64)
    if args.k > tokens.shape[0]:
        raise UserError(f"--k {args.k} exceeds token count {tokens.shape[0]}")
    try:
        aff = rbf_affinity(tokens, kappa=args.kappa)
        spec = top_k_eigs(aff.sym_normalized(), args.k)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    if emb.has_class_token:
        # class tokens join the affinity but are not part of the spatial grid
        keep = np.ones(tokens.shape[0], dtype=bool)
        keep[emb.tokens_per_image - 1::emb.tokens_per_image] = False
        spec = SpectralEmbedding(vectors=spec.vectors[keep], values=spec.values,
                                 eigengap_at_cut=spec.eigengap_at_cut)
    files = export_eigvec_grids(spec, emb.n_images, emb.grid_h, emb.grid_w, args.out)
    log.info("wrote %d files to %s", len(files), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    # allow_abbrev keeps the root parser from eating the subcommands' short
    # option names (--v would otherwise prefix-match --version/--verbose)
    parser = argparse.ArgumentParser(prog="moodspace", allow_abbrev=False,
                                     description="Learn and use compact affinity-preserving "
                                                 "token embedding spaces.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate-dim", help="MLE intrinsic dimension of an embedding file")
    p.add_argument("--emb", required=True)
    p.add_argument("--kmin", type=int, default=10)
    p.add_argument("--kmax", type=int, default=20)
    p.set_defaults(func=cmd_estimate_dim)

    p = sub.add_parser("fit", help="train a model from aligned V/W embedding files")
    p.add_argument("--v", required=True)
    p.add_argument("--w", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--fps", type=int, default=512)
    p.add_argument("--g", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda1", type=float, default=1e-5)
    p.add_argument("--lambda2", type=float, default=1e-5)
    p.add_argument("--lambda3", type=float, default=1.0)
    p.add_argument("--lambda4", type=float, default=1e-5)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--h", type=float, default=None,
                   help="fixed kernel bandwidth (default: median heuristic)")
    p.add_argument("--no-class-tokens", action="store_true",
                   help="exclude class tokens from training")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("interp", help="interpolate between two images of a set")
    p.add_argument("--model", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--src-image", type=int, required=True)
    p.add_argument("--dst-image", type=int, required=True)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--mode", choices=("literal", "decode-along-path"), default="literal")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("analogy", help="complete A1:A2 :: B1:? in embedding space")
    p.add_argument("--model", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--a1", type=int, required=True)
    p.add_argument("--a2", type=int, required=True)
    p.add_argument("--b1", type=int, required=True)
    p.add_argument("--image-path", action="store_true",
                   help="route tokens through cluster correspondence")
    p.add_argument("--H", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analogy)

    p = sub.add_parser("inspect", help="dump model provenance and diagnostics as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--emb", default=None,
                   help="embedding file to project and measure uniformity on")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("eigvecs", help="export eigenvector grids as PGM/CSV")
    p.add_argument("--emb", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eigvecs)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.getLogger().setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 1
    except Exception as exc:  # anything unexpected is an internal error
        log.error("internal error: %s", exc, exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
