"""Single executable exposing every experiment as a subcommand.

Machine-readable outputs only (CSV / JSON / JSONL); plotting is left to
external tools.  Exit codes: 0 success, 1 usage error, 2 failed assertion
(--check turns each command's acceptance conditions into the exit status).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__, attack, experiments, guard, model, output, spectral

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ASSERT = 2


class UsageError(ValueError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _load_model(args) -> model.SelectiveSsm:
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        if "weights" in doc:
            return model.SelectiveSsm.from_json(json.dumps(doc))
        cfg = model.SelectiveSsmConfig(**{**doc, "seed": args.seed})
    else:
        cfg = model.SelectiveSsmConfig(seed=args.seed)
    return model.init_ssm(cfg)


def _stamp(args, extra: dict | None = None) -> dict:
    cfg = {"command": args.cmd, "seed": args.seed}
    cfg.update(extra or {})
    return output.make_stamp(args.seed, cfg)


def _floats(text: str) -> list[float]:
    vals = [v for v in text.split(",") if v.strip()]
    if not vals:
        raise UsageError("empty grid")
    return [float(v) for v in vals]


def _ints(text: str) -> list[int]:
    return [int(v) for v in _floats(text)]


def _random_prompts(ssm, n, length, seed) -> list[list[int]]:
    rng = np.random.default_rng(seed)
    return [rng.integers(0, ssm.config.vocab_size, size=length).tolist()
            for _ in range(n)]


# --- subcommand bodies ------------------------------------------------------


def cmd_validate_spectral(args) -> int:
    if args.n_matrices < 1:
        raise UsageError("--n-matrices must be >= 1")
    ssm = _load_model(args)
    ops = model.sample_operators(ssm, args.n_matrices, seed=args.seed,
                                 delta_low=args.delta_low,
                                 delta_high=args.delta_high)
    from .linalg import eig_radius_exact, power_method
    est, exact = [], []
    for op in ops:
        est.append(power_method(op.abar_matrix(), args.k,
                                ssm.probe_seed(op.layer)).rho_hat)
        exact.append(eig_radius_exact(op.abar_matrix()).rho_hat)
    est, exact = np.array(est), np.array(exact)
    mae = float(np.mean(np.abs(est - exact)))
    corr = float(np.corrcoef(est, exact)[0, 1])
    report = {"n_matrices": args.n_matrices, "k": args.k, "mae": mae,
              "pearson_r": corr, "delta_low": args.delta_low,
              "delta_high": args.delta_high}
    output.write_json(f"{args.out}/validate_spectral.json", report,
                      _stamp(args, report))
    print(f"validate-spectral: n={args.n_matrices} k={args.k} "
          f"mae={mae:.3e} r={corr:.8f}")
    return EXIT_OK if mae < 1e-5 else EXIT_ASSERT


def cmd_horizon(args) -> int:
    grid = _floats(args.rho_grid)
    rows = []
    values = {}
    for rho in grid:
        if rho >= 1.0:
            rows.append((rho, "", "bound undefined"))
            continue
        hb = spectral.horizon_bound(spectral.HorizonInputs(
            rho=rho, kappa=args.kappa, h0_norm=args.h0_norm,
            epsilon=args.epsilon, lambda_max_wc=args.lambda_max))
        status = "vacuous" if hb.vacuous else "ok"
        values[rho] = hb.value
        rows.append((rho, hb.value, status))
    output.write_csv(f"{args.out}/horizon.csv", ["rho", "h_eff", "status"],
                     rows, _stamp(args, {"rho_grid": grid}))
    print(f"horizon: {len(rows)} rows -> {args.out}/horizon.csv")
    if args.check:
        ordered = sorted(values.items())
        increasing = all(values[a] < values[b]
                         for (a, _), (b, _) in zip(ordered, ordered[1:]))
        return EXIT_OK if increasing else EXIT_ASSERT
    return EXIT_OK


def cmd_attack(args) -> int:
    ssm = _load_model(args)
    prompts = _random_prompts(ssm, args.prompts, args.prompt_len, args.seed)
    cfg = attack.AttackConfig(alpha=args.alpha, steps=args.steps,
                              lam=args.lam, seed=args.seed, mode=args.mode)
    results = [attack.pgd_attack(ssm, p, cfg, benign_corpus=prompts)
               for p in prompts]
    body = {"results": [r.to_dict() for r in results]}
    output.write_json(f"{args.out}/attack.json", body,
                      _stamp(args, {"mode": args.mode, "steps": args.steps}))
    drops = [r.delta_rho_mean for r in results]
    strict = sum(1 for d in drops if d > 0)
    print(f"attack: {len(results)} prompts mode={args.mode} "
          f"mean_drop={np.mean(drops):.4f} strict_decrease={strict}/{len(results)}")
    if args.check and args.mode == "spectral_only":
        return EXIT_OK if strict >= 0.9 * len(results) else EXIT_ASSERT
    return EXIT_OK


def cmd_pareto(args) -> int:
    ssm = _load_model(args)
    prompts = _random_prompts(ssm, args.prompts, args.prompt_len, args.seed)
    cfg = attack.AttackConfig(alpha=args.alpha, steps=args.steps,
                              seed=args.seed, mode=args.mode)
    rows = attack.pareto_sweep(ssm, prompts, _floats(args.lambdas), cfg)
    output.write_csv(f"{args.out}/pareto.csv",
                     ["lambda", "delta_rho_mean", "lexical_auc"],
                     [(r.lam, r.delta_rho_mean, r.lexical_auc) for r in rows],
                     _stamp(args, {"mode": args.mode, "lambdas": args.lambdas}))
    print("pareto: " + "; ".join(
        f"lam={r.lam:g} drop={r.delta_rho_mean:.4f} auc={r.lexical_auc:.3f}"
        for r in rows))
    if args.check:
        for r in rows:
            if r.lexical_auc <= 0.60 and r.delta_rho_mean > 0.10:
                return EXIT_ASSERT
            if args.mode == "random_baseline" and r.delta_rho_mean >= 0.05:
                return EXIT_ASSERT
    return EXIT_OK


def cmd_clamp(args) -> int:
    ssm = _load_model(args)
    rng = np.random.default_rng(args.seed)
    tokens = rng.integers(0, ssm.config.vocab_size, size=args.length)
    protocol = experiments.ClampProtocol(mode=args.mode,
                                         rho_target=args.rho_target,
                                         layer=args.layer)
    _, trace = experiments.run_with_clamp(ssm, tokens, protocol)
    output.write_jsonl(f"{args.out}/clamp_trace.jsonl",
                       trace.to_jsonl_lines(),
                       _stamp(args, {"mode": args.mode,
                                     "rho_target": args.rho_target}))
    grid = trace.rho_exact_grid()
    targeted = (slice(None) if args.mode == "all_layer" else
                (slice(None), args.layer))
    worst = float(np.max(grid[targeted]))
    print(f"clamp: mode={args.mode} target={args.rho_target} "
          f"max_targeted_rho={worst:.6f}")
    if args.check:
        return EXIT_OK if worst <= args.rho_target + 1e-12 else EXIT_ASSERT
    return EXIT_OK


def cmd_phase(args) -> int:
    ssm = _load_model(args)
    grid = experiments.phase_transition_grid(
        ssm, _floats(args.rho_levels), _ints(args.distances),
        epsilon=args.epsilon, seed=args.seed)
    rows = [(r["rho"], r["distance"], r["retention"], r["recoverable"])
            for r in grid.rows()]
    output.write_csv(f"{args.out}/phase.csv",
                     ["rho", "distance", "retention", "recoverable"],
                     rows, _stamp(args, {"epsilon": args.epsilon}))
    rec = grid.recoverable
    print(f"phase: {rec.sum()}/{rec.size} recoverable cells "
          f"-> {args.out}/phase.csv")
    if args.check:
        mono_rho = np.all(np.diff(rec.astype(int), axis=0) >= 0)
        mono_dist = np.all(np.diff(rec.astype(int), axis=1) <= 0)
        return EXIT_OK if (mono_rho and mono_dist) else EXIT_ASSERT
    return EXIT_OK


def cmd_gen_data(args) -> int:
    ssm = _load_model(args)
    items = experiments.gen_labeled_traces(
        ssm, args.benign, args.adversarial, source=args.source,
        length=args.length, clamp_target=args.clamp_target, seed=args.seed)
    output.write_jsonl(f"{args.out}/labeled_traces.jsonl",
                       [it.to_json_line() for it in items],
                       _stamp(args, {"benign": args.benign,
                                     "adversarial": args.adversarial,
                                     "source": args.source}))
    print(f"gen-data: {len(items)} traces "
          f"({args.benign} benign, {args.adversarial} adversarial)")
    if args.check:
        return EXIT_OK if len(items) == args.benign + args.adversarial \
            else EXIT_ASSERT
    return EXIT_OK


def _load_labeled(path) -> list[experiments.LabeledTrace]:
    _, records = output.read_jsonl(path)
    return [experiments.LabeledTrace.from_json_line(json.dumps(r))
            for r in records]


def cmd_train_guard(args) -> int:
    items = _load_labeled(args.data)
    feats = [spectral.extract_features(it.trace, include_gaps=args.gaps)
             for it in items]
    labels = [it.label for it in items]
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(items))
    cut = int(round(len(items) * (1.0 - args.holdout)))
    train_idx, test_idx = order[:cut], order[cut:]
    clf = guard.train_classifier([feats[i] for i in train_idx],
                                 [labels[i] for i in train_idx],
                                 epochs=args.epochs,
                                 learning_rate=args.lr, l2=args.l2,
                                 seed=args.seed)
    output.write_json(f"{args.out}/guard_model.json", json.loads(clf.to_json()),
                      _stamp(args, {"epochs": args.epochs, "l2": args.l2}))
    scores = [guard.classify(clf, feats[i])[0] for i in test_idx]
    metrics = guard.compute_metrics(scores, [labels[i] for i in test_idx],
                                    clf.tau)
    output.write_json(f"{args.out}/train_metrics.json", metrics.to_dict(),
                      _stamp(args, {"holdout": args.holdout}))
    print(f"train-guard: holdout auc={metrics.auc:.4f} f1={metrics.f1:.4f}")
    if args.check:
        return EXIT_OK if metrics.auc > 0.95 else EXIT_ASSERT
    return EXIT_OK


def cmd_eval_guard(args) -> int:
    if args.ablate:
        if not args.data:
            raise UsageError("--ablate needs --data")
        items = _load_labeled(args.data)
        cfg = guard.GuardConfig()
        rows = guard.ablate_threshold([(it.trace, it.label) for it in items],
                                      _floats(args.ablate), cfg)
        output.write_csv(f"{args.out}/ablation.csv",
                         ["rho_min", "precision", "recall", "f1", "fpr"],
                         [(r["rho_min"], r["precision"], r["recall"],
                           r["f1"], r["fpr"]) for r in rows],
                         _stamp(args, {"ablate": args.ablate}))
        print("eval-guard ablation: " + "; ".join(
            f"rho_min={r['rho_min']:g} f1={r['f1']:.3f} fpr={r['fpr']:.3f}"
            for r in rows))
        if args.check:
            default_rows = [r for r in rows if abs(r["rho_min"] - 0.30) < 1e-12]
            if default_rows and not (default_rows[0]["f1"] == 1.0
                                     and default_rows[0]["fpr"] == 0.0):
                return EXIT_ASSERT
        return EXIT_OK
    if args.counts:
        tn, fp, fn, tp = _ints(args.counts)
        metrics = guard.DetectionMetrics.from_counts(tp=tp, fp=fp, tn=tn, fn=fn)
    elif args.data and args.model:
        items = _load_labeled(args.data)
        with open(args.model) as fh:
            clf = guard.LogisticModel.from_json(fh.read())
        gaps = clf.layout.endswith("gaps")
        scores, labels = [], []
        for it in items:
            feats = spectral.extract_features(it.trace, include_gaps=gaps)
            scores.append(guard.classify(clf, feats)[0])
            labels.append(it.label)
        metrics = guard.compute_metrics(scores, labels, clf.tau)
    else:
        raise UsageError("eval-guard needs --counts or (--data and --model)")
    output.write_json(f"{args.out}/eval_metrics.json", metrics.to_dict(),
                      _stamp(args, {"counts": args.counts or ""}))
    print(f"eval-guard: precision {metrics.precision:.4f}, "
          f"recall {metrics.recall:.4f}, F1 {metrics.f1:.3f}, "
          f"FPR {metrics.fpr:.3f}")
    return EXIT_OK


def cmd_monitor(args) -> int:
    _, records = output.read_jsonl(args.trace)
    recs = [model.StepRecord.from_dict(r) for r in records]
    trace = model.SpectralTrace.from_records(recs)
    cfg = guard.GuardConfig(rho_min=args.rho_min, window=args.window,
                            power_iters=args.power_iters)
    lines = []
    buffer: list = []
    blocked = False
    for t, rho in enumerate(trace.min_rho_hat_per_token()):
        verdict = guard.monitor_step(buffer, float(rho), cfg, t=t)
        if verdict.blocked:
            lines.append({"stream_id": args.stream_id, "t": t,
                          "window_min_rho": verdict.window_min_rho,
                          "decision": "block"})
            blocked = True
            break
    output.write_jsonl(f"{args.out}/alerts.jsonl", lines,
                       _stamp(args, {"rho_min": args.rho_min}))
    print(f"monitor: {'block at ' + str(lines[0]['t']) if blocked else 'pass'} "
          f"({len(lines)} alert lines)")
    if args.check:
        return EXIT_ASSERT if blocked else EXIT_OK
    return EXIT_OK


# --- wiring -----------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="ssmguard",
                    description="spectral-safety experiments for selective "
                                "state-space recurrences")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="model config or weights JSON")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")
        p.add_argument("--check", action="store_true",
                       help="exit 2 when the command's acceptance "
                            "assertions fail")

    p = sub.add_parser("validate-spectral",
                       help="power method vs exact eigen-radius")
    common(p)
    p.add_argument("--n-matrices", type=int, default=1000)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--delta-low", type=float, default=2.0)
    p.add_argument("--delta-high", type=float, default=10.0)
    p.set_defaults(func=cmd_validate_spectral)

    p = sub.add_parser("horizon", help="memory-horizon bound over a rho grid")
    common(p)
    p.add_argument("--rho-grid", default="0.99,0.98")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--h0-norm", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--lambda-max", type=float, default=1.0)
    p.set_defaults(func=cmd_horizon)

    p = sub.add_parser("attack", help="gradient spectral-collapse attack")
    common(p)
    p.add_argument("--prompts", type=int, default=20)
    p.add_argument("--prompt-len", type=int, default=20)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--mode", default="spectral_only",
                   choices=["spectral_only", "joint_loss", "random_baseline"])
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("pareto", help="stealth-damage frontier sweep")
    common(p)
    p.add_argument("--lambdas", default="0,0.25,0.5,0.75,1.0")
    p.add_argument("--prompts", type=int, default=8)
    p.add_argument("--prompt-len", type=int, default=30)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--mode", default="joint_loss",
                   choices=["spectral_only", "joint_loss", "random_baseline"])
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("clamp", help="causal clamp intervention run")
    common(p)
    p.add_argument("--mode", default="all_layer",
                   choices=["all_layer", "single_layer"])
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--rho-target", type=float, default=0.2)
    p.add_argument("--length", type=int, default=100)
    p.set_defaults(func=cmd_clamp)

    p = sub.add_parser("phase", help="retention phase-transition grid")
    common(p)
    p.add_argument("--rho-levels", default="0.3,0.7,0.85,0.9,0.95,0.99")
    p.add_argument("--distances", default="10,50,100,200,500,1000")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("gen-data", help="labeled benign/adversarial traces")
    common(p)
    p.add_argument("--benign", type=int, default=250)
    p.add_argument("--adversarial", type=int, default=250)
    p.add_argument("--source", default="clamp", choices=["clamp", "attack"])
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--clamp-target", type=float, default=0.2)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-guard", help="fit the feature classifier")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--holdout", type=float, default=0.3)
    p.add_argument("--gaps", action="store_true",
                   help="include per-layer mean spectral gaps")
    p.set_defaults(func=cmd_train_guard)

    p = sub.add_parser("eval-guard", help="detection metrics")
    common(p)
    p.add_argument("--counts", default=None,
                   help="tn,fp,fn,tp confusion counts")
    p.add_argument("--data", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--ablate", default=None,
                   help="rho_min grid for the threshold-only ablation table")
    p.set_defaults(func=cmd_eval_guard)

    p = sub.add_parser("monitor", help="run the window monitor on a trace file")
    common(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--rho-min", type=float, default=0.30)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--power-iters", type=int, default=3)
    p.add_argument("--stream-id", default="stream0")
    p.set_defaults(func=cmd_monitor)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
