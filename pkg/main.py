import click
from pydantic import ValidationError

from app import configure_logging, default_workers
from cli_io import build_config, run


def common_options(func):
    options = [
        click.option('--config', 'config_file', type=click.Path(exists=True, dir_okay=False),
                     help='Flat key=value file mirroring the flags.'),
        click.option('--rtol', type=float, help='Relative integrator tolerance.'),
        click.option('--atol', type=float, help='Absolute integrator tolerance.'),
        click.option('--cert-tol', 'cert_tol', type=float, help='Certificate tolerance (relative).'),
        click.option('--workers', type=int, help='Worker processes for scans and sweeps.'),
        click.option('--out-dir', 'out_dir', type=click.Path(file_okay=False), help='Output directory.'),
        click.option('--cache-dir', 'cache_dir', type=click.Path(file_okay=False),
                     help='Profile cache for ground-state runs (default: NLS_CACHE_DIR); other commands recompute.'),
        click.option('--quiet', is_flag=True, help='Errors only, no progress bars.'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def equation_options(func):
    options = [
        click.option('--N', 'N', type=int, help='Dimension.'),
        click.option('--q', type=float, help='Subcritical exponent.'),
        click.option('--lambda', 'lam', type=float, help='Frequency.'),
        click.option('--crit/--no-crit', default=None, help='Critical term on or off.'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def t_grid_options(func):
    options = [
        click.option('--t-min', 't_min', type=float),
        click.option('--t-max', 't_max', type=float),
        click.option('--points', type=int, help='Number of log-spaced couplings.'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _execute(command, kwargs):
    ctx = click.get_current_context()
    config_file = kwargs.pop('config_file', None)
    if kwargs.get('workers') is None:
        kwargs['workers'] = default_workers()
    try:
        config = build_config(command, config_file, kwargs)
    except ValidationError as e:
        click.echo(f"invalid configuration:\n{e}", err=True)
        ctx.exit(2)
    configure_logging(quiet=config.quiet)
    status, _, lines = run(config)
    for line in lines:
        click.echo(line)
    ctx.exit(status)


@click.group()
def cli():
    """Radial ground states, normalized solutions and confinement runs."""


@cli.command('ground-state')
@equation_options
@click.option('--t', type=float, help='Coupling of the q-term.')
@click.option('--d-low', 'd_low', type=float, help='Lower end of a shooting bracket.')
@click.option('--d-high', 'd_high', type=float, help='Upper end of a shooting bracket.')
@click.option('--d-max', 'd_max', type=float)
@click.option('--n-scan', 'n_scan', type=int)
@common_options
def ground_state(**kwargs):
    """Least-energy positive radial solution at one coupling."""
    _execute('ground-state', kwargs)


@cli.command()
@equation_options
@click.option('--t', type=float, help='Coupling of the q-term.')
@click.option('--d-min', 'd_min', type=float)
@click.option('--d-max', 'd_max', type=float)
@click.option('--n-scan', 'n_scan', type=int)
@common_options
def scan(**kwargs):
    """Every positive radial solution on a log scan of heights."""
    _execute('scan', kwargs)


@cli.command()
@equation_options
@t_grid_options
@click.option('--n-scan', 'n_scan', type=int)
@click.option('--near-threshold/--no-near-threshold', 'near_threshold', default=None,
              help='Refine t_star and sample the q-norm just above it.')
@common_options
def sweep(**kwargs):
    """m(t) over a coupling grid, the threshold bracket and exponent fits."""
    _execute('sweep', kwargs)


@cli.command()
@equation_options
@click.option('--a', type=float, help='Mass target (norm a, mass a^2).')
@click.option('--mu', type=float, help='Coupling of the normalized problem.')
@t_grid_options
@click.option('--n-scan', 'n_scan', type=int)
@common_options
def reduce(**kwargs):
    """Normalized solutions through the mu_t curve."""
    _execute('reduce', kwargs)


@cli.command()
@click.option('--p', type=float, help='Exponent of the confined problem.')
@t_grid_options
@click.option('--n-s', 'n_s', type=int, help='Radial mesh nodes.')
@click.option('--n-z', 'n_z', type=int, help='Axial mesh nodes (odd).')
@click.option('--extent', type=float, help='Box half-width for t >= 1.')
@click.option('--flow-tol', 'flow_tol', type=float, help='Euler-Lagrange residual target.')
@click.option('--analysis', type=click.Choice(['multiplier', 'mass', 'uniqueness', 'refinement']),
              help='Multiplier law (default), small-t mass law, warm/cold agreement or mesh halving.')
@common_options
def confine(**kwargs):
    """Partially confined ground states and their scaling laws."""
    _execute('confine', kwargs)


@cli.command()
@common_options
def verify(**kwargs):
    """Built-in certificate suite."""
    _execute('verify', kwargs)


if __name__ == '__main__':
    cli()
