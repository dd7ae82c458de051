"""
Command line entry point: atgcn <subcommand> [flags].

Every subcommand writes its tables and plots into --out together with a
run_manifest.json. Exit status is 0 on success, 1 for usage errors, 2 for
bad input data and 3 for numeric or training failures.
"""
from collections import OrderedDict
import argparse
import json
import logging
import os
import shutil
import sys

from atgcn import checkpoint
from atgcn.cycles import (CYCLE_LENGTH, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_MA_WINDOW, DEFAULT_SG_POLYORDER,
                          DEFAULT_SG_WINDOW, CycleConfig, cycle_manifest_paths, extract_cycles, prepare_sequence,
                          read_cycle_manifest, whole_sequence_sample, write_cycles)
from atgcn.errors import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, AtgcnError, UsageError
from atgcn.evaluation import Recipe, cross_validate
from atgcn.model import (BACKBONE_BLOCKS, CLASSIFICATION, TASKS, ablation_rows, attach_head, build_backbone,
                         import_external_weights, parameter_count, truncate)
from atgcn.monitor import Monitor
from atgcn.reports import plot_distance, plot_losses, write_table
from atgcn.run_manifest import write_run_manifest
from atgcn.settings import (NO_DEBUG_MSGS, PROFILES, VERBOSE, default_profile_name, feature_controls,
                            profile_settings, worker_count)
from atgcn.skeleton import OPENPOSE_LAYOUT, parse_sequence, read_manifest
from atgcn.st_graph import (DEFAULT_RADIUS_TOLERANCE, build_partitioned_adjacency, graph_from_cycles,
                            gravity_radii, radii_from_positions)
from atgcn.synth_gait import REST_POSE, GaitParams, generate_dataset
from atgcn.training import TrainConfig, finetune, predict, score, split_by_video, truncation_search
from atgcn.utils import ensure_dir

log = logging.getLogger('main')

DEFAULT_VAL_FRACTION = 0.2
CHECKPOINT_NAME = 'model.ckpt'

TRAINING_KEYS = ('lr', 'batch_size', 'epochs', 'folds', 'repeats', 'level')


class ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _levels(text):
    """
    '1-4' or '1,3,5'
    """
    try:
        if '-' in text:
            first, last = text.split('-', 1)
            return list(range(int(first), int(last) + 1))
        return [int(level) for level in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError("levels look like '1-4' or '1,3,5', got '%s'" % text)


def _severity_mix(text):
    """
    '0:10,1:5,2:5,3:5'
    """
    try:
        return OrderedDict((int(severity), int(count))
                           for severity, count in (item.split(':') for item in text.split(',')))
    except ValueError:
        raise argparse.ArgumentTypeError("severity mix looks like '0:10,1:5', got '%s'" % text)


def _add_cycle_flags(parser):
    parser.add_argument('--sg-window', type=int, default=DEFAULT_SG_WINDOW, help='Savitzky-Golay window, odd.')
    parser.add_argument('--sg-polyorder', type=int, default=DEFAULT_SG_POLYORDER,
                        help='Savitzky-Golay polynomial order.')
    parser.add_argument('--ma-window', type=int, default=DEFAULT_MA_WINDOW, help='Moving average window.')
    parser.add_argument('--min-separation', type=float, default=None,
                        help='Minimum frames between peaks, default 0.25 * fps.')
    parser.add_argument('--min-prominence', type=float, default=None,
                        help='Minimum peak prominence, default 5%% of the signal range.')
    parser.add_argument('--confidence-threshold', type=float, default=DEFAULT_CONFIDENCE_THRESHOLD,
                        help='Keypoints below this confidence are interpolated.')
    parser.add_argument('--length', type=int, default=CYCLE_LENGTH, help='Frames per resampled cycle.')


def _add_training_flags(parser, level=True):
    parser.add_argument('--cycles', required=True, help='Cycle manifest written by the cycles subcommand.')
    parser.add_argument('--val-cycles', default=None, help='Validation cycle manifest, else a video level split.')
    parser.add_argument('--val-fraction', type=float, default=DEFAULT_VAL_FRACTION,
                        help='Share of videos held out for validation when --val-cycles is absent.')
    parser.add_argument('--task', choices=TASKS, default=CLASSIFICATION)
    parser.add_argument('--lr', type=float, default=None)
    parser.add_argument('--epochs', type=int, default=None)
    parser.add_argument('--batch-size', type=int, default=None)
    parser.add_argument('--weights', default=None, help='Converted pre-trained backbone weights (.npz).')
    if level:
        parser.add_argument('--level', type=int, default=None, help='Number of blocks kept.')


def build_parser():
    parser = ArgumentParser(prog='atgcn', description='Ataxic gait detection with truncated ST-GCN models.')
    parser.add_argument('--profile', choices=list(PROFILES), default=None,
                        help='Hyperparameter profile, default $ATGCN_PROFILE or desk.')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--verbose', action='store_true', default=False, help='Turn on verbose mode.')
    parser.add_argument('--quiet', action='store_true', default=False, help='No debug messages.')
    parser.add_argument('--workers', type=int, default=None, help='Worker greenlets, default $ATGCN_WORKERS or 1.')
    parser.add_argument('--dry-run', action='store_true', default=False,
                        help='Print the resolved configuration and stop.')
    subparsers = parser.add_subparsers(dest='subcommand', metavar='subcommand')
    subparsers.required = True

    ingest = subparsers.add_parser('ingest', help='Validate keypoint files listed in a dataset manifest.')
    ingest.add_argument('--manifest', required=True)
    ingest.add_argument('--out', required=True)
    ingest.add_argument('--confidence-threshold', type=float, default=DEFAULT_CONFIDENCE_THRESHOLD)
    ingest.set_defaults(handler=ingest_command)

    cycles = subparsers.add_parser('cycles', help='Split every sequence of a dataset into gait cycles.')
    cycles.add_argument('--manifest', required=True)
    cycles.add_argument('--out', required=True)
    cycles.add_argument('--whole-video', action='store_true', default=False,
                        help='One resampled sample per video instead of gait cycles.')
    _add_cycle_flags(cycles)
    cycles.set_defaults(handler=cycles_command)

    plot = subparsers.add_parser('plot', help='Ankle distance signal and detected peaks of one sequence.')
    plot.add_argument('--sequence', required=True)
    plot.add_argument('--out', required=True)
    _add_cycle_flags(plot)
    plot.set_defaults(handler=plot_command)

    graph = subparsers.add_parser('graph', help='Dump the partitioned skeleton graph.')
    graph.add_argument('--out', required=True)
    graph.add_argument('--cycles', default=None, help='Cycle manifest for the gravity radii, else the rest pose.')
    graph.add_argument('--tolerance', type=float, default=DEFAULT_RADIUS_TOLERANCE)
    graph.add_argument('--param-table', action='store_true', default=False,
                       help='Also write parameter counts per truncation level.')
    graph.set_defaults(handler=graph_command)

    synth = subparsers.add_parser('synth', help='Generate synthetic walkers and their manifest.')
    synth.add_argument('--out', required=True)
    synth.add_argument('--n-per-class', type=int, default=10)
    synth.add_argument('--severity-mix', type=_severity_mix, default=None)
    synth.add_argument('--cadence', type=float, default=1.0, help='Gait cycles per second.')
    synth.add_argument('--step-width', type=float, default=0.12)
    synth.add_argument('--sway', type=float, default=0.01)
    synth.add_argument('--variability', type=float, default=0.0)
    synth.add_argument('--noise', type=float, default=0.0)
    synth.add_argument('--stride-amplitude', type=float, default=0.08)
    synth.add_argument('--duration', type=float, default=6.0)
    synth.add_argument('--fps', type=float, default=30.0)
    synth.set_defaults(handler=synth_command)

    train = subparsers.add_parser('train', help='Fine-tune one truncation level.')
    train.add_argument('--out', required=True)
    _add_training_flags(train)
    train.set_defaults(handler=train_command)

    search = subparsers.add_parser('search', help='Fine-tune and score every truncation level.')
    search.add_argument('--out', required=True)
    search.add_argument('--levels', type=_levels, default=None, help="e.g. '1-4', default all blocks.")
    _add_training_flags(search, level=False)
    search.set_defaults(handler=search_command)

    evaluate = subparsers.add_parser('eval', help='Repeated stratified cross-validation over videos.')
    evaluate.add_argument('--out', required=True)
    evaluate.add_argument('--cycles', required=True)
    evaluate.add_argument('--task', choices=TASKS, default=CLASSIFICATION)
    evaluate.add_argument('--level', type=int, default=None)
    evaluate.add_argument('--folds', type=int, default=None)
    evaluate.add_argument('--repeats', type=int, default=None)
    evaluate.add_argument('--lr', type=float, default=None)
    evaluate.add_argument('--epochs', type=int, default=None)
    evaluate.add_argument('--batch-size', type=int, default=None)
    evaluate.set_defaults(handler=eval_command)

    predict_parser = subparsers.add_parser('predict', help='Apply a checkpoint to a cycle manifest.')
    predict_parser.add_argument('--checkpoint', required=True)
    predict_parser.add_argument('--cycles', required=True)
    predict_parser.add_argument('--out', required=True)
    predict_parser.add_argument('--float32', action='store_true', default=False,
                                help='Run inference in 32-bit floats.')
    predict_parser.set_defaults(handler=predict_command)
    return parser


def resolved_config(args):
    """
    Profile values overridden by explicit flags, plus every other flag.
    """
    name = args.profile or default_profile_name()
    config = OrderedDict([('profile', name)])
    config.update(profile_settings(name))
    for key, value in sorted(vars(args).items()):
        if key in ('handler', 'profile') or (key in TRAINING_KEYS and value is None):
            continue
        config[key] = value
    if config.get('workers') is None:
        config['workers'] = worker_count()
    return config


def _train_config(config):
    return TrainConfig(lr=config['lr'], batch_size=config['batch_size'], epochs=config['epochs'],
                       seed=config['seed'], task=config['task'])


def _cycle_config(args):
    return CycleConfig(args.sg_window, args.sg_polyorder, args.ma_window, args.min_separation, args.min_prominence,
                       args.confidence_threshold, args.length)


def ingest_command(args, config, monitor):
    rows = read_manifest(args.manifest)
    summaries = []
    for row in rows:
        seq = row.load()
        prepare_sequence(seq, CycleConfig(confidence_threshold=args.confidence_threshold))
        summaries.append(OrderedDict([
            ('video_id', seq.video_id or row.video_id),
            ('subject_id', seq.subject_id),
            ('label', seq.label),
            ('severity', seq.severity),
            ('frames', seq.frame_count),
            ('fps', seq.fps),
            ('low_confidence', int((seq.keypoints[:, :, 2] < args.confidence_threshold).sum())),
        ]))
        monitor.debug('ingested %s: %d frames' % (row.path, seq.frame_count))
    table = write_table('sequences.csv', _columns(summaries[0] if summaries else []), summaries, args.out, monitor)
    return [args.manifest] + [row.path for row in rows], [table]


def _columns(row):
    return OrderedDict((key, key) for key in row)


def cycles_command(args, config, monitor):
    cycle_config = _cycle_config(args)
    rows = read_manifest(args.manifest)
    all_cycles, counts = [], []
    for row in rows:
        seq = row.load()
        if args.whole_video:
            found, peaks = [whole_sequence_sample(prepare_sequence(seq, cycle_config), cycle_config.length)], []
        else:
            found, trace = extract_cycles(seq, cycle_config, monitor)
            peaks = trace.peaks
        all_cycles.extend(found)
        counts.append(OrderedDict([('video_id', seq.video_id), ('frames', seq.frame_count),
                                   ('peaks', len(peaks)), ('cycles', len(found))]))
    manifest = write_cycles(all_cycles, args.out)
    summary = write_table('cycle_counts.csv', _columns(counts[0]) if counts else OrderedDict(), counts, args.out,
                          monitor)
    monitor.debug('%d cycles from %d videos' % (len(all_cycles), len(rows)))
    artifacts = [manifest, summary] + [os.path.join(args.out, name) for name in sorted(os.listdir(args.out))
                                       if name.endswith('.jsonl')]
    return [args.manifest] + [row.path for row in rows], artifacts


def plot_command(args, config, monitor):
    seq = parse_sequence(args.sequence)
    _, trace = extract_cycles(seq, _cycle_config(args), monitor)
    peaks = set(trace.peaks)
    rows = [OrderedDict([('frame', int(frame)), ('raw', float(raw)), ('smoothed', float(smoothed)),
                         ('peak', int(index in peaks))])
            for index, (frame, raw, smoothed) in enumerate(zip(seq.frame_indices, trace.raw.values,
                                                               trace.smoothed.values))]
    table = write_table('distance.csv', _columns(rows[0]), rows, args.out, monitor)
    svg = plot_distance(trace, os.path.join(ensure_dir(args.out), 'distance.svg'), seq.video_id)
    return [args.sequence], [table, svg]


def graph_command(args, config, monitor):
    layout = OPENPOSE_LAYOUT
    inputs = []
    if args.cycles:
        radii = gravity_radii(read_cycle_manifest(args.cycles))
        inputs += _cycle_inputs(args.cycles)
    else:
        radii = radii_from_positions(REST_POSE[None])
    graph = build_partitioned_adjacency(layout, radii, args.tolerance)
    names = layout.joint_names
    adjacency = [OrderedDict([('subset', k), ('i', i), ('j', j), ('weight', weight)])
                 for k, i, j, weight in graph.rows()]
    labels = [OrderedDict([('i', i), ('j', j), ('joint_i', names[i]), ('joint_j', names[j]), ('label', label)])
              for (i, j), label in sorted(graph.partition_labels.items())]
    radius_rows = [OrderedDict([('joint', joint), ('name', names[joint]), ('radius', float(radii[joint]))])
                   for joint in range(layout.joint_count)]
    artifacts = [write_table('adjacency.csv', _columns(adjacency[0]), adjacency, args.out, monitor),
                 write_table('partition_labels.csv', _columns(labels[0]), labels, args.out, monitor),
                 write_table('radii.csv', _columns(radius_rows[0]), radius_rows, args.out, monitor)]
    if args.param_table:
        rows = ablation_rows(graph, levels=range(1, BACKBONE_BLOCKS + 1), seed=args.seed)
        artifacts.append(write_table('parameter_counts.csv', _columns(rows[0]), rows, args.out, monitor))
    return inputs, artifacts


def synth_command(args, config, monitor):
    base = GaitParams(cadence=args.cadence, step_width=args.step_width, sway_amplitude=args.sway,
                      step_variability=args.variability, noise_sigma=args.noise, duration=args.duration,
                      fps=args.fps, stride_amplitude=args.stride_amplitude)
    manifest = generate_dataset(args.out, args.n_per_class, args.severity_mix, args.seed, base)
    rows = read_manifest(manifest)
    monitor.debug('generated %d walkers in %s' % (len(rows), args.out))
    return [], [manifest] + [row.path for row in rows]


def _cycle_inputs(manifest):
    return [manifest] + cycle_manifest_paths(manifest)


def _training_data(args, config):
    cycles = read_cycle_manifest(args.cycles)
    inputs = _cycle_inputs(args.cycles)
    if args.val_cycles:
        inputs += _cycle_inputs(args.val_cycles)
        return cycles, read_cycle_manifest(args.val_cycles), inputs
    train, val = split_by_video(cycles, args.val_fraction, config['seed'])
    return train, val, inputs


def _backbone(args, train, seed, inputs):
    backbone = build_backbone(graph_from_cycles(OPENPOSE_LAYOUT, train), seed)
    if args.weights:
        import_external_weights(backbone, args.weights)
        inputs.append(args.weights)
    return backbone


def train_command(args, config, monitor):
    train, val, inputs = _training_data(args, config)
    train_config = _train_config(config)
    backbone = _backbone(args, train, config['seed'], inputs)
    model = attach_head(truncate(backbone, config['level']), train_config.task, train_config.seed)
    model, history = finetune(model, train, train_config, monitor)
    level_score = score(model, val, train_config.task)
    monitor.debug('level %d: validation score %.4f' % (model.level, level_score))
    ensure_dir(args.out)
    losses = [OrderedDict([('epoch', epoch), ('loss', loss)]) for epoch, loss in enumerate(history.epoch_losses, 1)]
    scores = [OrderedDict([('level', model.level), ('task', train_config.task), ('score', level_score),
                           ('steps', history.steps), ('parameter_count', parameter_count(model))])]
    artifacts = [checkpoint.save(model, os.path.join(args.out, CHECKPOINT_NAME), train_config.seed, history.counters()),
                 write_table('loss_history.csv', _columns(losses[0]), losses, args.out, monitor),
                 write_table('score.csv', _columns(scores[0]), scores, args.out, monitor),
                 plot_losses(history.epoch_losses, os.path.join(args.out, 'loss_history.svg'),
                             'level %d' % model.level)]
    return inputs, artifacts


def search_command(args, config, monitor):
    train, val, inputs = _training_data(args, config)
    train_config = _train_config(config)
    backbone = _backbone(args, train, config['seed'], inputs)
    result = truncation_search(backbone, train, val, train_config, monitor, args.levels, config['workers'])
    ensure_dir(args.out)
    rows, artifacts = [], []
    for level, level_score in result.scores.items():
        model, history = result.models[level], result.histories[level]
        rows.append(OrderedDict([('level', level), ('score', level_score), ('parameter_count', parameter_count(model)),
                                 ('best', int(level == result.best_level))]))
        artifacts.append(checkpoint.save(model, os.path.join(args.out, 'level_%02d.ckpt' % level),
                                         train_config.seed, history.counters()))
    best = os.path.join(args.out, CHECKPOINT_NAME)
    shutil.copyfile(os.path.join(args.out, 'level_%02d.ckpt' % result.best_level), best)
    artifacts += [best, write_table('search_scores.csv', _columns(rows[0]), rows, args.out, monitor)]
    return inputs, artifacts


def eval_command(args, config, monitor):
    cycles = read_cycle_manifest(args.cycles)
    recipe = Recipe(config['level'], _train_config(config), OPENPOSE_LAYOUT)
    report, cells = cross_validate(cycles, recipe, monitor, config['folds'], config['repeats'], config['seed'],
                                   config['workers'])
    metrics = list(report.rows())
    cell_rows = []
    for cell in cells:
        row = OrderedDict([('repeat', cell.repeat), ('fold', cell.fold), ('train_videos', len(cell.train_videos)),
                           ('eval_videos', len(cell.eval_videos))])
        row.update(cell.metrics)
        cell_rows.append(row)
    artifacts = [write_table('metrics.csv', _columns(metrics[0]), metrics, args.out, monitor),
                 write_table('cells.csv', _columns(cell_rows[0]), cell_rows, args.out, monitor)]
    return _cycle_inputs(args.cycles), artifacts


def predict_command(args, config, monitor):
    model = checkpoint.load(args.checkpoint)
    if args.float32:
        model = model.for_inference()
    prediction = predict(model, read_cycle_manifest(args.cycles), monitor)
    cycle_rows = [row._asdict() for row in prediction.cycles]
    video_rows = [row._asdict() for row in prediction.videos]
    artifacts = [write_table('cycle_predictions.csv', _columns(cycle_rows[0]) if cycle_rows else OrderedDict(),
                             cycle_rows, args.out, monitor),
                 write_table('video_predictions.csv', _columns(video_rows[0]) if video_rows else OrderedDict(),
                             video_rows, args.out, monitor)]
    return [args.checkpoint] + _cycle_inputs(args.cycles), artifacts


def run(argv=None):
    """
    @return: process exit status
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    args, monitor = None, None
    try:
        args = build_parser().parse_args(argv)
        config = resolved_config(args)
        if args.dry_run:
            sys.stdout.write(json.dumps(config, indent=2) + '\n')
            return EXIT_OK
        controls = feature_controls()
        monitor = Monitor(log, no_debug_msgs=args.quiet or controls[NO_DEBUG_MSGS],
                          verbose_debug_mode=args.verbose or controls[VERBOSE])
        monitor.debug('atgcn %s started' % args.subcommand)
        inputs, artifacts = args.handler(args, config, monitor)
        write_run_manifest(ensure_dir(args.out), argv, args.subcommand, config, config['seed'], inputs, artifacts)
        monitor.debug('atgcn %s finished' % args.subcommand)
        return EXIT_OK
    except AtgcnError as e:
        where = 'atgcn %s' % args.subcommand if args is not None else 'atgcn'
        sys.stderr.write('%s: %s: %s\n' % (where, type(e).__name__, e))
        return e.exit_code
    except (IOError, OSError) as e:
        sys.stderr.write('atgcn %s: %s: %s\n' % (args.subcommand, type(e).__name__, e))
        return EXIT_DATA
    except SystemExit as e:
        return e.code
    except Exception as e:
        log.exception(e)
        return EXIT_NUMERIC
    finally:
        if monitor is not None:
            monitor.flush()
