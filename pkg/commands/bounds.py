import click

from . import bounds_bp
from .common import run_options, run_stages


@bounds_bp.cli.command('bounds')
@run_options
def bounds(config_path, out_dir, seed, overrides):
    """Evaluate the approximation error bound and its constants"""
    results = run_stages(['bounds'], config_path, out_dir, seed, overrides)
    report = results['bounds']
    click.echo(f"C = {report['C']:.4g}, total bound = {report['total']:.4g}")
