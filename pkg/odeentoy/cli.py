"""
Command line entry point: `odeentoy <subcommand> [flags]`.

Every artifact-producing subcommand writes a run manifest next to its output (`<out>.manifest.json`,
or `manifest.json` inside dataset directories) recording the version, parameters, seed, paths and, where
relevant, the matrix checksum.
"""
import argparse
import logging
import os
import sys
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numba

from odeentoy import __version__, errors
from odeentoy.datasets import (
    ANSWERS_FILE,
    MANIFEST_FILE,
    TEST_FILE,
    TRAIN_FILE,
    DatasetParams,
    build_test_board,
    generate_dataset,
    load_dataset,
    sample_eval_ids,
    write_dataset,
)
from odeentoy.files import atomic_open, read_json, write_json
from odeentoy.matrix import (
    SemanticMatrix,
    band_report,
    build_matrix,
    equivalence_classes,
    export_weights_csv,
    load_matrix,
    save_matrix,
    weight_stats,
)
from odeentoy.metrics import score
from odeentoy.records import AnswerRecord, PredictionRecord, TestGame, read_records, write_records
from odeentoy.rules import enumerate_rules, parse_rule, read_rules_file, rule_index, write_rules_file
from odeentoy.seeds import make_rng, new_root_seed
from odeentoy.sit import SUBTASKS, questionnaire, render_plain_text
from odeentoy.solvers import (
    SOLVE_MODES,
    SolveParams,
    budget_curve,
    make_source,
    solve_dataset,
)
from odeentoy.world import WorldConfig, render_structure, structure_from_id

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
THREADS_ENV = 'ODEEN_THREADS'

HANDLED_ERRORS = (
    errors.ValidationError,
    errors.WorldError,
    errors.RuleParseError,
    errors.RecordError,
    errors.MatrixError,
    errors.ContractError,
    errors.DatasetError,
    errors.SolverError,
    errors.MetricsError,
    errors.SitError,
    errors.CliError,
    OSError,
)


def _default_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise errors.CliError(f'{THREADS_ENV} must be an integer, got {value!r}') from None
    if threads < 1:
        raise errors.CliError(f'{THREADS_ENV} must be positive, got {threads}')
    return threads


def _common(threads: int) -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--config', help='TOML file whose keys mirror the flags')
    parent.add_argument('--seed', type=int, help='64-bit root seed, drawn and recorded when omitted')
    parent.add_argument('--threads', type=int, default=threads, help=f'worker threads (default ${THREADS_ENV} or 1)')
    parent.add_argument('--rules', help='rules file, the full enumeration when omitted')
    verbosity = parent.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')
    return parent


def build_parser(threads: int = 1) -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog='odeentoy', description='Odeen explanatory-learning toolkit')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)
    common = _common(threads)
    commands = {}

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        commands[name] = sub.add_parser(name, parents=[common], help=help_text)
        return commands[name]

    p = command('enumerate-rules', 'write the canonical rule file')
    p.add_argument('--out')

    p = command('build-matrix', 'tag the universe with every rule')
    p.add_argument('--out')

    p = command('stats', 'weight statistics and equivalence classes of a matrix')
    p.add_argument('--matrix')
    p.add_argument('--csv', help='write raw rule and structure weights to this CSV file')
    p.add_argument('--out', help='write the statistics as JSON')
    p.add_argument('--band-low', type=int, default=10_000)
    p.add_argument('--band-high', type=int, default=14_000)

    p = command('gen-dataset', 'generate training and test games')
    p.add_argument('--matrix')
    p.add_argument('--out', help='output directory')
    p.add_argument('--n', type=int, default=1438, help='training rules')
    p.add_argument('--m', type=int, default=1000, help='observations per training rule')
    p.add_argument('--s', type=int, default=1132, help='test games')
    p.add_argument('--k', type=int, default=32, help='board size')
    p.add_argument('--l', type=int, default=1176, help='evaluation structures per test game')
    p.add_argument('--heldout-quota', type=int, default=72)

    p = command('gen-board', 'build one representative board for a rule')
    p.add_argument('--matrix')
    p.add_argument('--rule')
    p.add_argument('--k', type=int, default=32)
    p.add_argument('--l', type=int, default=1176)
    p.add_argument('--out', help='JSON output, stdout when omitted')

    p = command('solve', 'solve the test games of a dataset')
    p.add_argument('--matrix')
    p.add_argument('--dataset', help='dataset directory')
    p.add_argument('--mode', choices=SOLVE_MODES, default='exhaustive')
    p.add_argument('--budget', type=int, default=300)
    p.add_argument('--strict', action='store_true')
    p.add_argument('--command', dest='external_command', help='external conjecture process command line')
    p.add_argument('--timeout', type=float, default=60.0)
    p.add_argument('--out', help='prediction JSON-lines file')

    p = command('score', 'score predictions against private answers')
    p.add_argument('--pred')
    p.add_argument('--answers')
    p.add_argument('--matrix')
    p.add_argument('--test', help='public test file, next to the answers when omitted')
    p.add_argument('--out', help='write the report as JSON')

    p = command('budget-curve', 'fraction of games whose rule class is drawn within each budget')
    p.add_argument('--matrix')
    p.add_argument('--dataset')
    p.add_argument('--mode', choices=('sample', 'external'), default='sample')
    p.add_argument('--budgets', default='1,10,100,300,1000')
    p.add_argument('--command', dest='external_command')
    p.add_argument('--timeout', type=float, default=60.0)
    p.add_argument('--out')

    p = command('sit-gen', 'generate a symbol interpretation questionnaire')
    p.add_argument('--n', type=int, default=100, help='questions')
    p.add_argument('--subtask', action='append', choices=(*SUBTASKS, 'all'))
    p.add_argument('--out')
    p.add_argument('--text', help='also write the plain-text rendering here')

    return parser, commands


REQUIRED = {
    'enumerate-rules': ('out',),
    'build-matrix': ('out',),
    'stats': ('matrix',),
    'gen-dataset': ('matrix', 'out'),
    'gen-board': ('matrix', 'rule'),
    'solve': ('matrix', 'dataset', 'out'),
    'score': ('pred', 'answers', 'matrix'),
    'budget-curve': ('matrix', 'dataset'),
    'sit-gen': ('out',),
}


def _apply_config(argv: list[str], parser: argparse.ArgumentParser, commands: dict) -> argparse.Namespace:
    """
    Parse argv, using a `--config` TOML file as defaults: top-level keys and the keys of the
    `[<subcommand>]` table, dashes or underscores. Flags given explicitly win.

    Raises:
        CliError: On an unreadable config, an unknown key in the subcommand table, or a missing
        required flag.
    """
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config, 'rb') as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise errors.CliError(f'Invalid config file {args.config}: {e}') from None

        subparser = commands[args.command]
        known = {action.dest for action in subparser._actions} - {'config', 'help'}

        def dest_of(key: str) -> str:
            dest = key.replace('-', '_')
            return 'external_command' if dest == 'command' else dest

        # top-level keys apply where the subcommand has the flag
        defaults = {
            dest_of(k): v for k, v in data.items() if not isinstance(v, dict) and dest_of(k) in known
        }
        for key, value in data.get(args.command, {}).items():
            if dest_of(key) not in known:
                raise errors.CliError(f'Unknown config key {key!r} for {args.command}')
            defaults[dest_of(key)] = value
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)

    missing = [f'--{name}' for name in REQUIRED[args.command] if getattr(args, name) is None]
    if missing:
        raise errors.CliError(f'{args.command} requires {", ".join(missing)}')
    return args


def _configure_logging(args: argparse.Namespace):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def _configure_threads(threads: int):
    if threads < 1:
        raise errors.CliError(f'--threads must be positive, got {threads}')
    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def _seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        args.seed = new_root_seed()
        logger.info('No seed given, using %d', args.seed)
    if not 0 <= args.seed < 2 ** 64:
        raise errors.CliError(f'Seed {args.seed} out of the 64-bit range')
    return args.seed


def _rules(args: argparse.Namespace, config: WorldConfig):
    if args.rules:
        return read_rules_file(args.rules, config)
    return enumerate_rules(config)


def _matrix(path: str, rules) -> SemanticMatrix:
    m = load_matrix(path)
    if m.n_rules != len(rules):
        raise errors.CliError(f'Matrix {path} has {m.n_rules} rows but {len(rules)} rules are loaded')
    return m


INPUT_ARGS = ('config', 'rules', 'matrix', 'dataset', 'pred', 'answers', 'test')


def _manifest(args: argparse.Namespace, started: float, outputs: list[str], **extra) -> dict:
    params = {k: v for k, v in vars(args).items() if k not in ('verbose', 'quiet')}
    inputs = [getattr(args, name) for name in INPUT_ARGS if getattr(args, name, None)]
    return {
        'tool': 'odeentoy',
        'version': __version__,
        'command': args.command,
        'params': params,
        'seed': args.seed,
        'outputs': outputs,
        'inputs': inputs,
        **extra,
        'duration_s': round(time.monotonic() - started, 3),
    }


def _write_manifest(out: str, manifest: dict):
    write_json(f'{out}.manifest.json', manifest)


def cmd_enumerate_rules(args, config, started):
    rules = enumerate_rules(config)
    write_rules_file(args.out, rules)
    _write_manifest(args.out, _manifest(args, started, [args.out], n_rules=len(rules), world=config.as_dict()))
    print(f'{len(rules)} rules written to {args.out}')


def cmd_build_matrix(args, config, started):
    rules = _rules(args, config)
    m = build_matrix(rules, config, threads=args.threads)
    save_matrix(m, args.out)
    _write_manifest(args.out, _manifest(args, started, [args.out], matrix_checksum=m.checksum, world=config.as_dict()))
    print(f'{m.n_rules} x {m.n_structures} matrix written to {args.out} (checksum {m.checksum:016x})')


def cmd_stats(args, config, started):
    m = load_matrix(args.matrix)
    stats = weight_stats(m)
    partition = equivalence_classes(m)
    report = {
        'n_rules': m.n_rules,
        'n_structures': m.n_structures,
        'n_classes': partition.n_classes,
        'matrix_checksum': m.checksum,
        'weights': stats.dump_dict(),
        'band': band_report(stats, low=args.band_low, high=args.band_high),
    }
    if args.csv:
        export_weights_csv(stats, args.csv)
    if args.out:
        write_json(args.out, report)
    outputs = [path for path in (args.out, args.csv) if path]
    if outputs:
        _write_manifest(outputs[0], _manifest(args, started, outputs, matrix_checksum=m.checksum))
    band = report['band']
    print(f'{m.n_rules} rules, {partition.n_classes} equivalence classes, {m.n_structures} structures')
    print(
        f'structure weights in [{band["measured_min"]}, {band["measured_max"]}], '
        f'reference band [{args.band_low}, {args.band_high}], within band: {band["within_band"]}'
    )


def cmd_gen_dataset(args, config, started):
    rules = _rules(args, config)
    m = _matrix(args.matrix, rules)
    params = DatasetParams(
        n=args.n,
        m=args.m,
        s=args.s,
        k=args.k,
        eval_size=args.l,
        seed=_seed(args),
        heldout_quota=args.heldout_quota,
        threads=args.threads,
    )
    dataset = generate_dataset(params, rules, m, equivalence_classes(m), config)
    outputs = [os.path.join(args.out, name) for name in (TRAIN_FILE, TEST_FILE, ANSWERS_FILE, MANIFEST_FILE)]
    run = _manifest(args, started, outputs)
    dataset.manifest.update(
        command=args.command,
        cli_params=run['params'],
        inputs=run['inputs'],
        outputs=outputs,
        duration_s=run['duration_s'],
    )
    write_dataset(dataset, args.out, config)
    print(f'{len(dataset.training)} training and {len(dataset.tests)} test games written to {args.out}')


def cmd_gen_board(args, config, started):
    rules = _rules(args, config)
    m = _matrix(args.matrix, rules)
    partition = equivalence_classes(m)
    seed = _seed(args)
    rule_id = rule_index(rules).get(str(parse_rule(args.rule, config)))
    if rule_id is None:
        raise errors.CliError(f'Rule {args.rule!r} is not among the loaded rules')
    board = build_test_board(rule_id, make_rng(seed, 'test', 'board', 0), m, partition, config, k=args.k)
    eval_ids = sample_eval_ids(rule_id, [i for i, _ in board], args.l, make_rng(seed, 'test', 'eval', 0), m, partition)
    game = TestGame(game=0, board=board, eval_ids=eval_ids)
    answer = AnswerRecord(game=0, rule=str(rules[rule_id]), tags=tuple(int(t) for t in m.row_bits(rule_id, eval_ids)))
    data = {**game.dump_dict(config=config), 'rule': answer.rule, 'tags': answer.dump_dict()['tags'], 'seed': seed}
    if args.out:
        write_json(args.out, data)
        _write_manifest(args.out, _manifest(args, started, [args.out], matrix_checksum=m.checksum))
    else:
        for struct_id, tag in board:
            print(f'{tag} {render_structure(structure_from_id(struct_id, config))}')


def _check_dataset_matrix(dataset_manifest: dict, m: SemanticMatrix):
    expected = dataset_manifest.get('matrix_checksum')
    if expected is not None and expected != m.checksum:
        raise errors.MetricsError(
            f'Matrix checksum {m.checksum:016x} does not match the dataset checksum {expected:016x}'
        )


def cmd_solve(args, config, started):
    rules = _rules(args, config)
    m = _matrix(args.matrix, rules)
    dataset = load_dataset(args.dataset, config, answers=False)
    _check_dataset_matrix(dataset.manifest, m)
    params = SolveParams(
        mode=args.mode,
        budget=args.budget,
        strict=args.strict,
        seed=_seed(args),
        threads=args.threads,
        command=args.external_command,
        timeout=args.timeout,
    )
    outcomes = solve_dataset(dataset.tests, params, m, equivalence_classes(m), rules, config)
    predictions = [
        outcome.prediction(test.game, len(test.eval_ids))
        for test, outcome in zip(dataset.tests, outcomes, strict=True)
    ]
    write_records(args.out, predictions, config=config)
    cost = {
        'cg_calls': sum(o.cost.cg_calls for o in outcomes),
        'j_evals': sum(o.cost.j_evals for o in outcomes),
        'rule_j_evals': sum(o.cost.rule_cost()['j_evals'] for o in outcomes),
    }
    _write_manifest(args.out, _manifest(
        args,
        started,
        [args.out],
        matrix_checksum=m.checksum,
        unknown=sum(o.unknown for o in outcomes),
        parse_failures=sum(o.parse_failures for o in outcomes),
        timeouts=sum(o.timed_out for o in outcomes),
        cost=cost,
    ))
    print(f'{len(predictions)} predictions written to {args.out}, {sum(o.unknown for o in outcomes)} unknown')


def cmd_score(args, config, started):
    rules = _rules(args, config)
    m = _matrix(args.matrix, rules)
    directory = os.path.dirname(os.path.abspath(args.answers))
    args.test = args.test or os.path.join(directory, TEST_FILE)
    manifest_path = os.path.join(directory, MANIFEST_FILE)
    expected = read_json(manifest_path).get('matrix_checksum') if os.path.exists(manifest_path) else None

    answers = list(read_records(args.answers, AnswerRecord, config=config))
    tests = list(read_records(args.test, TestGame, config=config))
    preds = list(read_records(args.pred, PredictionRecord, config=config))
    report = score(preds, answers, tests, m, equivalence_classes(m), rules, config, expected, threads=args.threads)
    if args.out:
        write_json(args.out, report.dump_dict())
        _write_manifest(args.out, _manifest(
            args, started, [args.out], matrix_checksum=m.checksum,
            t_acc=report.t_acc, nrs=report.nrs, r_acc=report.r_acc,
        ))
    print(f't_acc={report.t_acc:.4f} nrs={report.nrs:.4f} r_acc={report.r_acc:.4f} games={len(report.games)}')


def cmd_budget_curve(args, config, started):
    rules = _rules(args, config)
    m = _matrix(args.matrix, rules)
    dataset = load_dataset(args.dataset, config)
    _check_dataset_matrix(dataset.manifest, m)
    if not dataset.answers:
        raise errors.CliError(f'No {ANSWERS_FILE} in {args.dataset}')
    try:
        budgets = [int(b) for b in str(args.budgets).split(',') if b.strip()]
    except ValueError:
        raise errors.CliError(f'Invalid budgets {args.budgets!r}') from None
    params = SolveParams(
        mode=args.mode,
        budget=max(budgets, default=1),
        seed=_seed(args),
        command=args.external_command,
        timeout=args.timeout,
    )
    source = make_source(params, rules, config)
    curve = budget_curve(
        dataset.tests, dataset.answers, source, budgets, equivalence_classes(m), rules, config, params.seed
    )
    if args.out:
        write_json(args.out, {'curve': curve})
        _write_manifest(args.out, _manifest(args, started, [args.out], matrix_checksum=m.checksum))
    for point in curve:
        print(f'{point["budget"]}\t{point["fraction"]:.4f}')


def cmd_sit_gen(args, config, started):
    subtasks = SUBTASKS if not args.subtask or 'all' in args.subtask else tuple(dict.fromkeys(args.subtask))
    records = questionnaire(args.n, _seed(args), subtasks)
    write_records(args.out, records)
    outputs = [args.out]
    if args.text:
        with atomic_open(args.text, 'w', newline='\n') as f:
            f.write('\n\n'.join(render_plain_text(r) for r in records) + '\n')
        outputs.append(args.text)
    _write_manifest(args.out, _manifest(args, started, outputs))
    print(f'{len(records)} questions written to {args.out}')


COMMANDS = {
    'enumerate-rules': cmd_enumerate_rules,
    'build-matrix': cmd_build_matrix,
    'stats': cmd_stats,
    'gen-dataset': cmd_gen_dataset,
    'gen-board': cmd_gen_board,
    'solve': cmd_solve,
    'score': cmd_score,
    'budget-curve': cmd_budget_curve,
    'sit-gen': cmd_sit_gen,
}


def main(argv: list[str] = None) -> int:
    """
    Run a subcommand; returns the exit status (0 on success, 1 on errors, 2 on usage errors).
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser, commands = build_parser(_default_threads())
        args = _apply_config(argv, parser, commands)
        _configure_logging(args)
        _configure_threads(args.threads)
        config = WorldConfig()
        COMMANDS[args.command](args, config, time.monotonic())
    except HANDLED_ERRORS as e:
        print(f'error: {e}', file=sys.stderr)
        return 1
    return 0
