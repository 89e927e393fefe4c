"""
Monte Carlo simulation command
"""

import logging
import os
from dataclasses import replace

import click
import pandas as pd

from wasscause.models.store import ResultStore
from wasscause.services.simulation import load_sim_config, run_mc
from wasscause.utils.error_handlers import handle_errors
from wasscause.utils.errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'configs')


def bundled_configs():
    """Names of the configs shipped with the package"""
    if not os.path.isdir(CONFIG_DIR):
        return []
    return sorted(name[:-4] for name in os.listdir(CONFIG_DIR) if name.endswith('.cfg'))


def resolve_config_path(name_or_path: str) -> str:
    """A file path, or the name of a bundled config with or without .cfg"""
    if os.path.isfile(name_or_path):
        return name_or_path
    stem = name_or_path[:-4] if name_or_path.endswith('.cfg') else name_or_path
    bundled = os.path.join(CONFIG_DIR, f"{stem}.cfg")
    if os.path.isfile(bundled):
        return bundled
    raise ConfigError('config', f"{name_or_path} is neither a file nor a bundled config "
                                f"({', '.join(bundled_configs()) or 'none'})")


def register_simulate_commands(cli, app):

    @cli.command('simulate')
    @click.option('--config', 'config_name', required=True, help='Config file or bundled config name')
    @click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory')
    @click.option('--workers', type=int, default=None, help='Worker processes (default from config)')
    @click.option('--replicates', type=int, default=None, help='Replicate count (default from config)')
    @handle_errors(app)
    def simulate_command(config_name, out_dir, workers, replicates):
        """Run a Monte Carlo study and write the result table"""
        path = resolve_config_path(config_name)
        config = load_sim_config(path)
        if workers is not None:
            if workers < 1:
                raise ConfigError('workers', 'must be at least 1')
            config = replace(config, workers=workers)
        if replicates is not None:
            if replicates < 1:
                raise ConfigError('replicates', 'must be at least 1')
            config = replace(config, replicates=replicates)

        result = run_mc(config)

        stem = os.path.splitext(os.path.basename(path))[0]
        os.makedirs(out_dir, exist_ok=True)
        store = ResultStore(os.path.join(out_dir, f"{stem}.json"))
        store.write_json(store.out_path, result.to_dict())
        store.write_csv(store.companion_path('csv'), pd.DataFrame(result.table_rows()))

        failures = sum(cell.failures for cell in result.cells)
        click.echo(f"{stem}: {config.replicates} replicates, {len(result.cells)} cells, {failures} failed fits")
        click.echo(f"Wrote {store.out_path}")

    return cli
