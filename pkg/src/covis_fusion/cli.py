"""
covis-fusion command line.

    covis-fusion simulate --spec straight_light --frames 20 --seed 1 --out data/
    covis-fusion train    --data data/ --out rmnet.ckpt
    covis-fusion match    --data data/ --checkpoint rmnet.ckpt
    covis-fusion align    --data data/ --checkpoint rmnet.ckpt
    covis-fusion eval     --data data/ --checkpoint rmnet.ckpt --out report/
    covis-fusion bench    --frames 100 --checkpoint rmnet.ckpt

Exit codes: 0 success, 1 pipeline failure, 2 usage or config error, 3 missing or
unreadable dataset or checkpoint.
"""
import argparse
import sys
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from . import __version__
from .covis_net import RmNetParams, infer, load_params, match_scores, prepare_topologies, save_params, threshold_sweep, train
from .pipeline import bench, evaluate_dataset, fuse_pair, generate_pairs, read_dataset, write_dataset
from .scene import CANONICAL_SPECS, SUITES, canonical_spec, derive_seed, suite_spec
from .utils.config import FusionConfig, load_config, load_scenario, parse_assignments
from .utils.errors import CheckpointError, ConfigError, DatasetError, FusionError, InvalidParamError
from .utils.logger import LogLevel, logger
from .utils.types import ScenarioSpec

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3

def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='FILE', help='KEY=value config file (see configs/default.env)')
    common.add_argument('--seed', type=int, help='base random seed (default: 0, or SEED of a scenario file)')
    common.add_argument('--log-level', metavar='LEVEL', help='FATAL, ERROR, WARN, INFO, DEBUG, TRACE or SILENT')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='override one config key; may be repeated')
    return common

def _scenario_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--spec', choices=sorted(CANONICAL_SPECS), help='canonical scenario name')
    group.add_argument('--suite', choices=SUITES, help='scenario suite')
    group.add_argument('--scenario', metavar='FILE', help='KEY=value scenario file')
    parser.add_argument('--frames', type=int, default=10, metavar='N', help='number of frame pairs (default: 10)')
    parser.add_argument('--miss-rate', type=float, metavar='P', help='camera miss probability per vehicle')

def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog='covis-fusion', description='Radar/camera cooperative view alignment')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common], help='generate a dataset of frame pairs')
    _scenario_args(p)
    p.add_argument('--out', required=True, metavar='DIR', help='dataset directory')

    p = sub.add_parser('train', parents=[common], help='train the matching network')
    p.add_argument('--data', required=True, metavar='DIR', help='training dataset directory')
    p.add_argument('--out', required=True, metavar='FILE', help='checkpoint to write')

    for name, text in (('match', 'score co-visible matching'), ('align', 'align every frame pair'),
                       ('eval', 'full evaluation with report files')):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('--data', required=True, metavar='DIR', help='dataset directory')
        p.add_argument('--checkpoint', required=True, metavar='FILE', help='trained checkpoint')
        if name == 'eval':
            p.add_argument('--out', required=True, metavar='DIR', help='report directory')

    p = sub.add_parser('bench', parents=[common], help='per-stage latency on generated frames')
    _scenario_args(p)
    p.add_argument('--checkpoint', metavar='FILE', help='trained checkpoint (default: untrained weights)')
    return parser

def _config(args: argparse.Namespace) -> FusionConfig:
    overrides = parse_assignments(args.overrides)
    if getattr(args, 'miss_rate', None) is not None:
        overrides['SIM_MISS_RATE'] = str(args.miss_rate)
    config = load_config(args.config, overrides)
    level = args.log_level or config.pipeline.log_level
    try:
        logger.set_log_level(LogLevel.from_name(level))
    except ValueError as e:
        raise ConfigError(str(e), e)
    return config

def _specs(args: argparse.Namespace) -> List[ScenarioSpec]:
    if args.frames < 1:
        raise InvalidParamError(f"--frames must be >= 1, got {args.frames}")
    if args.suite:
        return [suite_spec(args.suite, args.seed, k) for k in range(args.frames)]
    if args.scenario:
        base = load_scenario(args.scenario)
        base_seed = base.seed if args.seed_from_file else args.seed
    else:
        base = canonical_spec(args.spec or ('straight_heavy' if args.command == 'bench' else 'straight_light'))
        base_seed = args.seed
    return [base.with_seed(derive_seed(base_seed, k)) for k in range(args.frames)]

def _params(path: str, config: FusionConfig) -> RmNetParams:
    # steps and threshold come from the checkpoint header, not the config
    return load_params(path, config.match.hidden_width)

def _print_rows(header: Sequence[str], rows: Sequence[Sequence]) -> None:
    print('\t'.join(header))
    for row in rows:
        print('\t'.join(f'{v:.4f}' if isinstance(v, float) else str(v) for v in row))

def cmd_simulate(args: argparse.Namespace, config: FusionConfig) -> int:
    specs = _specs(args)
    pairs = generate_pairs(specs, config)
    meta = {'seed': args.seed, 'sim': {k: v for k, v in config.to_flat().items() if k.startswith('SIM_')}}
    write_dataset(args.out, pairs, meta)
    print(f"wrote {len(pairs)} frame pairs to {args.out}")
    return EXIT_OK

def cmd_train(args: argparse.Namespace, config: FusionConfig) -> int:
    pairs = read_dataset(args.data)
    result = train(pairs, config.match, args.seed, config.separation)
    save_params(result.params, args.out)
    print(f"trained {config.match.epochs} epochs, final loss {result.loss_trace[-1]:.5f}; saved {args.out}")
    return EXIT_OK

def cmd_match(args: argparse.Namespace, config: FusionConfig) -> int:
    params = _params(args.checkpoint, config)
    topologies = prepare_topologies(read_dataset(args.data), config.separation, args.seed)
    precision, recall, f1 = match_scores([infer(t, params) for t in topologies], topologies)
    print(f"graphs={len(topologies)} precision={precision:.4f} recall={recall:.4f} f1={f1:.4f}")
    _print_rows(('threshold', 'precision', 'recall', 'f1'), threshold_sweep(topologies, params))
    return EXIT_OK

def cmd_align(args: argparse.Namespace, config: FusionConfig) -> int:
    params = _params(args.checkpoint, config)
    rows = []
    for pair in read_dataset(args.data):
        result, _ = fuse_pair(pair, params, config, args.seed)
        t, truth = result.transform, pair.truth_transform
        estimate = (t.yaw, t.tx, t.ty) if t is not None else ('-', '-', '-')
        rows.append((pair.frame_id, result.reason.value if result.reason else 'OK', *estimate,
                     truth.yaw, truth.tx, truth.ty))
    _print_rows(('frame_id', 'status', 'yaw', 'tx', 'ty', 'truth_yaw', 'truth_tx', 'truth_ty'), rows)
    return EXIT_OK

def cmd_eval(args: argparse.Namespace, config: FusionConfig) -> int:
    params = _params(args.checkpoint, config)
    report = evaluate_dataset(args.data, params, config, args.out, args.seed)
    _print_rows(('metric', 'value'), list(report.summary().items()))
    return EXIT_OK

def cmd_bench(args: argparse.Namespace, config: FusionConfig) -> int:
    if args.checkpoint:
        params = _params(args.checkpoint, config)
    else:
        logger.warn("No checkpoint given; benchmarking with untrained weights")
        params = RmNetParams.initialize(args.seed, config.match.hidden_width, config.match.steps,
                                        config.match.threshold)
    pairs = generate_pairs(_specs(args), config)
    _print_rows(('stage', 'mean_ms', 'p95_ms'), bench(pairs, params, config, args.seed))
    return EXIT_OK

COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'match': cmd_match,
    'align': cmd_align,
    'eval': cmd_eval,
    'bench': cmd_bench,
}

def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    args.seed_from_file = args.seed is None
    if args.seed is None:
        args.seed = 0

    try:
        config = _config(args)
        return COMMANDS[args.command](args, config)
    except (ConfigError, InvalidParamError) as e:
        print(f"covis-fusion {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, DatasetError) as e:
        print(f"covis-fusion {args.command}: {e}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except FusionError as e:
        logger.error(f"{args.command} failed", e)
        print(f"covis-fusion {args.command}: {e}", file=sys.stderr)
        return EXIT_FAILURE

if __name__ == '__main__':
    sys.exit(main())
