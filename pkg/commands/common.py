import click
from flask import current_app

from config import load_config
from utils.errors import ConfigValidationError, PipelineError
from utils.pipeline import run_pipeline
from utils.store import get_store

RUN_OPTIONS = (
    click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                 help='JSON run configuration (defaults when omitted)'),
    click.option('--out', 'out_dir', type=click.Path(file_okay=False),
                 help='Run directory for artifacts and the manifest'),
    click.option('--seed', type=click.IntRange(min=0), help='Master RNG seed'),
    click.option('--stage-override', 'overrides', multiple=True, metavar='KEY=VALUE',
                 help='Override a config field by dotted path, e.g. model.delta=0.9'),
)


def run_options(f):
    """--config, --out, --seed and --stage-override shared by every stage command"""
    for option in reversed(RUN_OPTIONS):
        f = option(f)
    return f


def run_stages(stages, config_path, out_dir, seed, overrides):
    """Load the configuration, run `stages` and map pipeline errors to exit codes"""
    overrides = list(overrides)
    if seed is not None:
        overrides.append(f'seed={seed}')
    try:
        cfg = load_config(config_path or current_app.config.get('RUN_CONFIG'), overrides)
        store = get_store(out_dir or cfg.output_dir or current_app.config['OUTPUT_DIR'])
        results = run_pipeline(cfg, stages, store)
    except ConfigValidationError as e:
        for error in e.errors:
            click.echo(f'config error: {error}', err=True)
        raise SystemExit(e.exit_code)
    except PipelineError as e:
        click.echo(f'error: {e}', err=True)
        raise SystemExit(e.exit_code)
    for stage in results:
        click.echo(f'{stage}: done ({store.root / stage})')
    return results
