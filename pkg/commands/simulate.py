import click

from . import simulate_bp
from .common import run_options, run_stages


@simulate_bp.cli.command('simulate')
@run_options
def simulate(config_path, out_dir, seed, overrides):
    """Roll the solved policy out on simulated price paths"""
    results = run_stages(['simulate'], config_path, out_dir, seed, overrides)
    summary = results['simulate']
    click.echo(f"{summary['paths']} paths, {summary['collapsed_paths']} collapsed")
    if 'median_first_two_consumption' in summary:
        click.echo(f"median consumption over the first two periods: "
                   f"{summary['median_first_two_consumption']:.4g}")
