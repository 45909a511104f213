# Command-line entry point: koopid simulate|identify|predict|evaluate
import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from .constants import (
    DEFAULT_SOLVER,
    DUFFING_STEPS,
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_USAGE,
    FORCING_AMPLITUDE,
    METHOD_EDMD,
    METHOD_FBEDMD_AS,
    METHODS,
    MONOMIAL_DEGREE,
    RBF_ALPHA,
    RBF_COUNT,
    RBF_DELTA,
    RHO_BAR,
    SNR_GRID,
    TEST_EPISODES,
    TRAIN_EPISODES,
)
from .dataset import (
    FORCING_KINDS,
    DuffingParams,
    Episode,
    EpisodeSet,
    ForcingSpec,
    episode_paths,
    generate_duffing,
    load_episode_set,
    noise_std_for_snr,
    noisy_copies,
    save_episode_set,
)
from .errors import InvalidInputError, KoopidError
from .lifting import fit_lifting_spec
from .matlib import spectral_radius
from .model_io import load_model, save_model, spot_check, verify_spot_check
from .pipeline import identify
from .rollout import (
    eigenvalue_table,
    pool_summaries,
    predict_episode,
    prediction_errors,
    prediction_frame,
    relative_model_error,
    snr_sweep,
    summaries_frame,
)
from .stability import StabilityConfig
from .utils import (
    atomic_write_text,
    hash_config,
    hash_files,
    load_config_file,
    setup_logging,
)

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

SPOT_CHECK_STEPS = 50
ROLE_CHOICES = ("train", "test", "all")

# Paths each command needs before it can run
_REQUIRED = {
    "simulate": ("out",),
    "identify": ("data", "out"),
    "predict": ("model", "data", "out"),
    "evaluate": ("model", "data", "out"),
}


def _split(value, cast) -> Tuple:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(cast(v) for v in value)


@dataclass(frozen=True)
class RunConfig:
    """
    Parameters of one CLI invocation, merged from ``--config`` and flags.
    """

    command: str
    data: Optional[str] = None
    out: Optional[str] = None
    model: Optional[str] = None
    reference: Optional[str] = None
    episode: Optional[str] = None
    role: str = "test"
    method: str = METHOD_FBEDMD_AS
    episodes: int = TRAIN_EPISODES + TEST_EPISODES
    test_episodes: int = TEST_EPISODES
    steps: int = DUFFING_STEPS
    forcing: str = "random"
    amplitude: float = FORCING_AMPLITUDE
    rbf_count: int = RBF_COUNT
    alpha: float = RBF_ALPHA
    delta: float = RBF_DELTA
    monomial_degree: int = MONOMIAL_DEGREE
    rho_bar: float = RHO_BAR
    epsilon: Optional[float] = None
    margin: Optional[float] = None
    solver: str = DEFAULT_SOLVER
    dump_sdp: Optional[str] = None
    noise_std: Optional[float] = None
    target_snr_db: Optional[float] = None
    seed_data: int = 0
    seed_lifting: int = 0
    seed_noise: int = 0
    relift: bool = True
    sweep: bool = False
    methods: Tuple[str, ...] = (METHOD_EDMD, METHOD_FBEDMD_AS)
    snr_grid: Tuple[float, ...] = SNR_GRID
    seeds: int = 10

    def __post_init__(self):
        object.__setattr__(self, "methods", _split(self.methods, str))
        object.__setattr__(self, "snr_grid", _split(self.snr_grid, float))
        missing = [k for k in _REQUIRED.get(self.command, ()) if not getattr(self, k)]
        if missing:
            flags = ", ".join(f"--{k.replace('_', '-')}" for k in missing)
            raise InvalidInputError(f"{self.command} requires {flags}")
        unknown = [m for m in (self.method,) + self.methods if m not in METHODS]
        if unknown:
            raise InvalidInputError(f"Unknown method(s) {unknown}; expected {METHODS}")
        if self.noise_std is not None and self.target_snr_db is not None:
            raise InvalidInputError("Give either a noise std or a target SNR, not both")
        if self.noise_std is not None and not self.noise_std >= 0:
            raise InvalidInputError(f"noise std must be >= 0, got {self.noise_std}")
        if self.episodes < 1 or self.test_episodes < 0 or self.steps < 2:
            raise InvalidInputError(
                "Need at least one episode, two steps and a non-negative test count"
            )
        if self.role not in ROLE_CHOICES:
            raise InvalidInputError(f"role must be one of {ROLE_CHOICES}")
        if self.sweep and (not self.snr_grid or self.seeds < 1):
            raise InvalidInputError("Sweep needs a nonempty SNR grid and >= 1 seed")

    @classmethod
    def from_namespace(cls, args: argparse.Namespace) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in vars(args).items() if k in names})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def stability_config(self) -> StabilityConfig:
        return StabilityConfig(
            rho_bar=self.rho_bar,
            epsilon=self.epsilon,
            margin=self.margin,
            solver=self.solver,
            dump_path=self.dump_sdp,
        )

    def noise_std_for(self, episodes: List[Episode]) -> float:
        """Noise std requested by ``--noise-std`` or ``--target-snr-db``, else 0."""
        if self.noise_std is not None:
            return float(self.noise_std)
        if self.target_snr_db is not None:
            return noise_std_for_snr(episodes, self.target_snr_db)
        return 0.0


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, sort_keys=True))


def _emit_error(e: BaseException) -> None:
    print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)


def _write_csv(path: Path, frame: pd.DataFrame) -> None:
    atomic_write_text(path, frame.to_csv(index=False, na_rep="", lineterminator="\n"))
    log.info(f"Wrote {len(frame)} rows to {path}")


def _select(data: EpisodeSet, role: str) -> List[Episode]:
    if role == "all":
        return list(data.episodes)
    selected = data.with_role(role)
    if not selected:
        present = sorted(set(data.roles.values()))
        raise InvalidInputError(
            f"No {role!r} episodes in the data set (roles present: {present}); "
            f"pass --role all or --episode to choose explicitly"
        )
    return selected


def _load_checked_model(path: str):
    model, meta = load_model(path)
    if meta.get("spot_check") and not verify_spot_check(model, meta):
        log.warning(f"Model {path} does not reproduce its stored spot check")
    return model, meta


def cmd_simulate(cfg: RunConfig) -> int:
    episodes = generate_duffing(
        DuffingParams(),
        ForcingSpec(kind=cfg.forcing, amplitude=cfg.amplitude),
        T=cfg.steps,
        count=cfg.episodes,
        seed=cfg.seed_data,
    )
    n_test = min(cfg.test_episodes, max(cfg.episodes - 1, 0))
    first_test = len(episodes) - n_test
    roles = {
        e.id: "test" if i >= first_test else "train" for i, e in enumerate(episodes)
    }
    std = cfg.noise_std_for(episodes)
    if std > 0:
        episodes = noisy_copies(episodes, std, cfg.seed_noise)
    written = save_episode_set(cfg.out, episodes, roles)
    _emit(
        {
            "episodes": len(episodes),
            "train": len(episodes) - n_test,
            "test": n_test,
            "steps": cfg.steps,
            "dt": episodes[0].dt,
            "noise_std": std,
            "files": len(written),
            "out": str(cfg.out),
        }
    )
    return EXIT_OK


def cmd_identify(cfg: RunConfig) -> int:
    data = load_episode_set(cfg.data)
    train = _select(data, "train")
    std = cfg.noise_std_for(train)
    if std > 0:
        train = noisy_copies(train, std, cfg.seed_noise)
    spec = fit_lifting_spec(
        [e.states for e in train],
        train[0].input_dim,
        rbf_count=cfg.rbf_count,
        seed=cfg.seed_lifting,
        alpha=cfg.alpha,
        delta=cfg.delta,
        monomial_degree=cfg.monomial_degree,
    )
    result = identify(train, spec, cfg.method, cfg.stability_config())
    first = train[0]
    steps = min(SPOT_CHECK_STEPS, first.steps)
    spot = spot_check(result.model, first.states[:, 0], first.inputs[:, :steps])
    provenance = {
        "dataset_sha256": hash_files(episode_paths(cfg.data)),
        "config_sha256": hash_config(cfg.to_dict()),
        "seeds": {
            "data": cfg.seed_data,
            "lifting": cfg.seed_lifting,
            "noise": cfg.seed_noise,
        },
        "noise_std": std,
        "train_episodes": [e.id for e in train],
    }
    save_model(
        cfg.out,
        result.model,
        solution=result.solution,
        report=result.report,
        provenance=provenance,
        spot=spot,
    )
    summary = {
        "method": result.model.method,
        "p_theta": result.model.p_theta,
        "p_upsilon": result.model.p_upsilon,
        "q": result.q,
        "spectral_radius": spectral_radius(result.model.A),
        "model": str(cfg.out),
    }
    if result.solution is not None:
        summary["solve_time"] = result.solution.solve_time
        summary["margins"] = result.solution.margins
        summary["status"] = result.solution.status
    _emit(summary)
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    model, _ = _load_checked_model(cfg.model)
    data = load_episode_set(cfg.data)
    reference = data.get(cfg.episode) if cfg.episode else _select(data, "test")[0]
    pred = predict_episode(model, reference, relift=cfg.relift)
    _write_csv(Path(cfg.out), prediction_frame(pred, reference))
    summary = prediction_errors(pred, reference)
    _emit(
        {
            "episode": reference.id,
            "status": pred.status,
            "samples": int(pred.states.shape[1]),
            "rms": summary.rms,
            "mean": summary.mean,
            "out": str(cfg.out),
        }
    )
    return EXIT_OK


def _evaluate_sweep(cfg: RunConfig, spec, data: EpisodeSet, out: Path) -> int:
    clean = _select(data, "train")
    seeds = range(cfg.seed_noise, cfg.seed_noise + cfg.seeds)
    frame = snr_sweep(
        clean, spec, cfg.methods, cfg.snr_grid, seeds, cfg.stability_config()
    )
    _write_csv(out / "sweep.csv", frame)
    _emit(
        {
            "rows": len(frame),
            "failed": int((frame["status"] != "ok").sum()),
            "out": str(out / "sweep.csv"),
        }
    )
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    model, _ = _load_checked_model(cfg.model)
    data = load_episode_set(cfg.data)
    out = Path(cfg.out)
    if cfg.sweep:
        return _evaluate_sweep(cfg, model.spec, data, out)

    summaries = [
        prediction_errors(predict_episode(model, e, relift=cfg.relift), e)
        for e in _select(data, cfg.role)
    ]
    model_error = None
    if cfg.reference:
        ref, _ = load_model(cfg.reference)
        model_error = relative_model_error(model, ref).full
    pooled = pool_summaries(summaries, model_error=model_error)
    _write_csv(out / "metrics.csv", summaries_frame(pooled))
    _write_csv(out / "eigenvalues.csv", eigenvalue_table(model))
    _emit(
        {
            "episodes": len(summaries),
            "rms": pooled.rms,
            "mean": pooled.mean,
            "diverged": pooled.diverged,
            "spectral_radius": spectral_radius(model.A),
            "model_error": _finite_or_none(model_error),
            "out": str(out),
        }
    )
    return EXIT_OK


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or math.isnan(value):
        return None
    return value


COMMANDS = {
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def _add_noise_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--noise-std", type=float, help="Measurement noise std")
    group.add_argument("--target-snr-db", type=float, help="Noise level as SNR (dB)")
    p.add_argument("--seed-noise", type=int, default=0, help="Noise seed")


def _add_stability_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho-bar", type=float, default=RHO_BAR)
    p.add_argument("--epsilon", type=float, help="P floor (auto when omitted)")
    p.add_argument("--margin", type=float, help="Strict-LMI margin (auto)")
    p.add_argument("--solver", default=DEFAULT_SOLVER, help="cvxpy solver name")
    p.add_argument("--dump-sdp", help="Write the conic program to this file")


Parsers = Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]


def build_parser() -> Parsers:
    """
    Build the top-level parser.

    :return: Parser and the subparser of each command.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON, YAML or TOML file with flag values")
    common.add_argument("--log-level", default="INFO", help="Logging level")

    parser = argparse.ArgumentParser(
        prog="koopid",
        description="Stable Koopman model identification from noisy data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("simulate", parents=[common], help="Generate Duffing episodes")
    p.add_argument("--out", help="Output episode directory")
    p.add_argument("--episodes", type=int, default=TRAIN_EPISODES + TEST_EPISODES)
    p.add_argument("--test-episodes", type=int, default=TEST_EPISODES)
    p.add_argument("--steps", type=int, default=DUFFING_STEPS)
    p.add_argument("--forcing", choices=FORCING_KINDS, default="random")
    p.add_argument(
        "--amplitude", type=float, default=FORCING_AMPLITUDE, help="Forcing scale (N)"
    )
    p.add_argument("--seed-data", type=int, default=0)
    _add_noise_flags(p)
    subs["simulate"] = p

    p = sub.add_parser("identify", parents=[common], help="Fit a Koopman model")
    p.add_argument("--data", help="Episode directory")
    p.add_argument("--out", help="Model JSON file")
    p.add_argument("--method", choices=METHODS, default=METHOD_FBEDMD_AS)
    p.add_argument("--rbf-count", type=int, default=RBF_COUNT)
    p.add_argument("--alpha", type=float, default=RBF_ALPHA)
    p.add_argument("--delta", type=float, default=RBF_DELTA)
    p.add_argument(
        "--monomial-degree", type=int, choices=(1, 2), default=MONOMIAL_DEGREE
    )
    p.add_argument("--seed-lifting", type=int, default=0)
    _add_stability_flags(p)
    _add_noise_flags(p)
    subs["identify"] = p

    p = sub.add_parser("predict", parents=[common], help="Multi-step prediction")
    p.add_argument("--model", help="Model JSON file")
    p.add_argument("--data", help="Episode directory")
    p.add_argument("--episode", help="Episode id (first test episode by default)")
    p.add_argument("--out", help="Prediction CSV file")
    p.add_argument("--no-relift", dest="relift", action="store_false")
    subs["predict"] = p

    p = sub.add_parser("evaluate", parents=[common], help="Errors, eigenvalues, sweeps")
    p.add_argument("--model", help="Model JSON file")
    p.add_argument("--data", help="Episode directory")
    p.add_argument("--out", help="Output directory")
    p.add_argument("--role", choices=ROLE_CHOICES, default="test")
    p.add_argument("--reference", help="Reference model for the relative error")
    p.add_argument("--no-relift", dest="relift", action="store_false")
    p.add_argument("--sweep", action="store_true", help="Run an SNR sweep instead")
    p.add_argument("--methods", default=",".join((METHOD_EDMD, METHOD_FBEDMD_AS)))
    p.add_argument("--snr-grid", default=",".join(str(s) for s in SNR_GRID))
    p.add_argument("--seeds", type=int, default=10, help="Noise seeds per SNR level")
    _add_stability_flags(p)
    p.add_argument("--seed-noise", type=int, default=0, help="First noise seed")
    subs["evaluate"] = p
    return parser, subs


def _config_defaults(argv: Sequence[str]) -> Dict[str, Any]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    return {k.replace("-", "_"): v for k, v in load_config_file(known.config).items()}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI.

    :param argv: Arguments without the program name (``sys.argv[1:]`` by default).
    :return: Exit code: 0 success, 1 runtime failure, 2 usage error.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        defaults = _config_defaults(argv)
    except (OSError, ValueError, ImportError) as e:
        _emit_error(e)
        return EXIT_FAILURE
    for p in subs.values():
        p.set_defaults(**defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    setup_logging(args.log_level)
    try:
        cfg = RunConfig.from_namespace(args)
    except InvalidInputError as e:
        subs[args.command].print_usage(sys.stderr)
        print(f"koopid {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[cfg.command](cfg)
    except (KoopidError, OSError) as e:
        log.error(f"{cfg.command} failed: {e}")
        _emit_error(e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
