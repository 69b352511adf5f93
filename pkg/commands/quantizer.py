import click

from . import quantizer_bp
from .common import run_options, run_stages


@quantizer_bp.cli.command('train-quantizer')
@run_options
def train_quantizer(config_path, out_dir, seed, overrides):
    """Train the density codebook on filter densities along simulated paths"""
    results = run_stages(['train-quantizer'], config_path, out_dir, seed, overrides)
    result = results['train-quantizer']
    click.echo(f'{result.quantizer.size} rows, {len(result.dead)} dead, '
               f'trailing distortion {result.distortion_sup[len(result.distortion_sup) // 2:].mean():.4g}')


@quantizer_bp.cli.command('prune')
@run_options
def prune(config_path, out_dir, seed, overrides):
    """Drop codebook rows within the relative L1 threshold of another row"""
    results = run_stages(['prune'], config_path, out_dir, seed, overrides)
    result = results['prune']
    click.echo(f'{len(result.kept)} rows kept, {len(result.removals)} removed')
