"""
Command registration
"""

import click

from wasscause import __version__


def build_cli(app):
    """Build the wasscause command group bound to a configured application"""

    @click.group(name='wasscause')
    @click.version_option(__version__, prog_name='wasscause')
    def cli():
        """Causal effect maps for distribution-valued outcomes"""

    from .estimate import register_estimate_commands
    from .simulate import register_simulate_commands

    register_estimate_commands(cli, app)
    register_simulate_commands(cli, app)
    return cli


__all__ = ['build_cli']
