# -*- coding: utf-8 -*-
"""
Command-line interface::

    ehrcontrast generate --config exp.ini --out cohort.jsonl
    ehrcontrast run --config exp.ini --jobs 4 --out results/
    ehrcontrast importance --config exp.ini --checkpoint results/checkpoints/<cell>/fold0.json
    ehrcontrast embed --config exp.ini --checkpoint results/checkpoints/<cell>/fold0.json

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""
from __future__ import absolute_import
import argparse
import logging
import os
import sys

from ehrcontrast.cohort import save_cohort
from ehrcontrast.config import dump_config, load_config
from ehrcontrast.exceptions import ConfigError, EhrContrastError, UnsupportedModelError
from ehrcontrast.experiment import (
    export_embeddings,
    heldout_sequences,
    prepare_cohort,
    run_experiment,
    write_outputs,
)
from ehrcontrast.interpret import aggregate_heatmap, write_heatmap_csv, write_ranking_csv
from ehrcontrast.models import load_checkpoint
from ehrcontrast.schema import DEFAULT_FEATURE_NAMES, load_feature_schema, save_feature_schema
from ehrcontrast.synthgen import generate_cohort
from ehrcontrast.training import TrainedModel
from ehrcontrast.utils import ensure_dir


logger = logging.getLogger('ehrcontrast')

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def _common(p):
    p.add_argument('--config',
                   help='path to an experiment config (INI)',
                   type=str)
    p.add_argument('--seed',
                   help='base random seed (overrides the config)',
                   type=int)
    p.add_argument('--loglevel',
                   help='logging level',
                   type=str,
                   default='INFO')


def build_parser():
    cmdline = argparse.ArgumentParser(
        prog='ehrcontrast',
        description='contrastive vs cross-entropy training of EHR sequence encoders',
    )
    sub = cmdline.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('generate', help='generate a synthetic cohort (JSONL)')
    _common(p)
    p.add_argument('--out', help='cohort file to write', type=str, default='cohort.jsonl')
    p.add_argument('--schema', help='also write the feature schema (JSON) here', type=str)

    p = sub.add_parser('run', help='run the cross-validation experiment')
    _common(p)
    p.add_argument('--jobs', help='folds to run in parallel', type=int)
    p.add_argument('--out', help='output directory (overrides output.dir)', type=str)
    p.add_argument('--dry-run', help='print the resolved config and exit',
                   action='store_true')

    for name, help_text in (('importance', 'feature importance heatmap of a RETAIN checkpoint'),
                            ('embed', 'export held-out embeddings of a checkpoint')):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument('--checkpoint', help='checkpoint written by "run"',
                       type=str, required=True)
        p.add_argument('--out', help='output directory (importance) or CSV file (embed)',
                       type=str)
    return cmdline


def _load_config(args, **overrides):
    if args.config is not None and not os.path.exists(args.config):
        raise UsageError("config file %s doesn't exist" % args.config)
    overrides = {key: value for key, value in overrides.items() if value is not None}
    try:
        config = load_config(args.config, overrides)
    except ConfigError as e:
        raise UsageError(str(e))
    if config.cohort_path and not os.path.exists(config.cohort_path):
        raise UsageError("cohort file %s doesn't exist" % config.cohort_path)
    return config


def cmd_generate(args):
    config = _load_config(args, **{'generator.seed': args.seed})
    cohort = generate_cohort(config.generator)
    save_cohort(cohort, args.out)
    if args.schema:
        save_feature_schema(args.schema)
    logger.info("wrote %d patients to %s", len(cohort), args.out)


def cmd_run(args):
    config = _load_config(args, **{
        'experiment.seed': args.seed,
        'experiment.jobs': args.jobs,
        'output.dir': args.out,
    })
    if args.dry_run:
        sys.stdout.write(dump_config(config))
        return
    report = run_experiment(config, verbose=True)
    write_outputs(report, config, config.out_dir)
    logger.info("wrote results of %d cells to %s", len(report.cells), config.out_dir)


def _checkpoint(args):
    if not os.path.exists(args.checkpoint):
        raise UsageError("checkpoint %s doesn't exist" % args.checkpoint)
    meta, _ = load_checkpoint(args.checkpoint)
    return meta, TrainedModel.load(args.checkpoint)


def cmd_importance(args):
    config = _load_config(args)
    meta, model = _checkpoint(args)
    if model.encoder.kind != 'retain':
        raise UnsupportedModelError(
            "importance needs a RETAIN checkpoint, %s is %s" % (args.checkpoint, model.encoder.kind)
        )
    if args.seed is not None:
        meta['seed'] = args.seed
    sequences = heldout_sequences(config, meta, prepare_cohort(config))
    feature_names = DEFAULT_FEATURE_NAMES
    if config.schema_path:
        feature_names = load_feature_schema(config.schema_path)
    matrices = model.explain(sequences)
    for m in matrices:
        m.feature_names = feature_names
    heatmap = aggregate_heatmap(matrices)
    out_dir = ensure_dir(args.out or '.')
    write_heatmap_csv(heatmap, os.path.join(out_dir, 'heatmap.csv'))
    write_ranking_csv(heatmap, os.path.join(out_dir, 'ranking.csv'))
    logger.info("top features: %s", ", ".join(
        feature_names[i] for i in heatmap.top(5)))


def cmd_embed(args):
    config = _load_config(args)
    meta, model = _checkpoint(args)
    if args.seed is not None:
        meta['seed'] = args.seed
    sequences = heldout_sequences(config, meta, prepare_cohort(config))
    out = args.out or 'embeddings.csv'
    export_embeddings(model, sequences, out)
    logger.info("wrote %d embeddings to %s", len(sequences), out)


COMMANDS = {
    'generate': cmd_generate,
    'run': cmd_run,
    'importance': cmd_importance,
    'embed': cmd_embed,
}


def main(argv=None):
    cmdline = build_parser()
    try:
        args = cmdline.parse_args(argv)
    except SystemExit as e:
        return e.code

    logging.basicConfig(level=getattr(logging, args.loglevel.upper()),
                        format=('%(asctime)s [%(levelname)s] '
                                '%(pathname)s:%(lineno)d %(message)s'))
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        sys.stderr.write("usage error: %s\n" % e)
        return USAGE_ERROR
    except (EhrContrastError, OSError) as e:
        sys.stderr.write("error: %s: %s\n" % (type(e).__name__, e))
        return RUNTIME_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
