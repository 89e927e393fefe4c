"""
Error handlers for the command line
"""

import functools
import logging
import sys
import traceback

import click

from wasscause.utils.errors import (
    ConfigError, DataError, NotFound, NumericalError, SchemaError, UsageError, WassCauseError
)

logger = logging.getLogger(__name__)


def register_error_handlers(app):
    """Register error handlers for the application"""

    def usage_error(error):
        logger.warning(f"Usage error: {error}")
        return 2, f"Usage error: {error}"

    def config_error(error):
        logger.warning(f"Invalid config field {error.field}: {error.message}")
        return 2, f"Config error: {error}"

    def schema_error(error):
        logger.warning(f"Schema error in column {error.column}: {error}")
        return 3, f"Data error: {error}"

    def not_found_error(error):
        logger.warning(f"Not found: {error}")
        return 3, f"Not found: {error}"

    def data_error(error):
        logger.warning(f"Data error: {error}")
        return 3, f"Data error: {error}"

    def numerical_error(error):
        logger.error(f"Numerical failure ({type(error).__name__}): {error}")
        if app.debug:
            logger.error(f"Traceback: {traceback.format_exc()}")
        return 4, f"Numerical failure: {error}"

    def handle_exception(error):
        """Catch all unhandled exceptions"""
        logger.error(f"Unhandled Exception: {error}")
        logger.error(f"Traceback: {traceback.format_exc()}")
        # Never expose internal details
        return 1, 'Internal error, see the log for details'

    # Most specific first
    app.error_handlers = {
        UsageError: usage_error,
        ConfigError: config_error,
        SchemaError: schema_error,
        NotFound: not_found_error,
        DataError: data_error,
        NumericalError: numerical_error,
        WassCauseError: handle_exception,
        Exception: handle_exception,
    }


def dispatch_error(app, error: Exception):
    """Return (exit code, message) for an exception using the registered handlers"""
    for error_class, handler in app.error_handlers.items():
        if isinstance(error, error_class):
            return handler(error)
    return 1, str(error)


def handle_errors(app):
    """Decorator turning library exceptions into exit codes"""
    def decorator(command):
        @functools.wraps(command)
        def wrapper(*args, **kwargs):
            try:
                return command(*args, **kwargs)
            except (click.exceptions.Exit, click.ClickException, click.exceptions.Abort):
                raise
            except Exception as error:
                code, message = dispatch_error(app, error)
                click.echo(message, err=True)
                sys.exit(code)
        return wrapper
    return decorator
