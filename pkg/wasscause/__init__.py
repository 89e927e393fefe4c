"""
wasscause - causal effect maps for distribution-valued outcomes in Wasserstein space
"""

import logging
import os
from logging.handlers import RotatingFileHandler

from dotenv import load_dotenv

__version__ = '1.0.0'


class Application:
    """Configured application context shared by the CLI commands"""

    def __init__(self, name: str = 'wasscause'):
        self.name = name
        self.config = {}
        self.logger = logging.getLogger(name)
        self.cli = None
        self.error_handlers = {}

    @property
    def debug(self) -> bool:
        return bool(self.config.get('DEBUG', False))

    @property
    def testing(self) -> bool:
        return bool(self.config.get('TESTING', False))

    def config_from_object(self, obj):
        """Copy the uppercase attributes of a config class"""
        for key in dir(obj):
            if key.isupper():
                self.config[key] = getattr(obj, key)


def create_app(config_name=None):
    """Application factory pattern"""

    # Load environment variables
    load_dotenv()

    app = Application()

    # Configuration
    if config_name is None:
        config_name = os.environ.get('WASSCAUSE_ENV', 'development')

    from wasscause.config import config
    config_class = config.get(config_name, config['default'])
    app.config_from_object(config_class)
    config_class.init_app(app)

    # Setup logging
    _setup_logging(app)

    # Register commands
    _register_commands(app)

    # Register error handlers
    _register_error_handlers(app)

    return app


def _register_commands(app):
    """Register command line commands"""
    from wasscause.commands import build_cli
    app.cli = build_cli(app)


def _register_error_handlers(app):
    """Register error handlers"""
    from wasscause.utils.error_handlers import register_error_handlers
    register_error_handlers(app)


def _setup_logging(app):
    """Setup application logging"""
    level = getattr(logging, str(app.config.get('LOG_LEVEL', 'INFO')).upper(), logging.INFO)
    app.logger.setLevel(logging.DEBUG if app.debug else level)

    if app.logger.handlers:
        return

    if app.debug:
        stream_handler = logging.StreamHandler()
        stream_handler.setFormatter(logging.Formatter('%(levelname)s %(name)s: %(message)s'))
        stream_handler.setLevel(logging.DEBUG)
        app.logger.addHandler(stream_handler)
    elif not app.testing:
        log_dir = app.config['LOG_DIR']
        # Create logs directory
        if not os.path.exists(log_dir):
            os.makedirs(log_dir, exist_ok=True)

        # Setup file handler with rotation
        file_handler = RotatingFileHandler(
            os.path.join(log_dir, app.config['LOG_FILE']),
            maxBytes=app.config['LOG_MAX_BYTES'],
            backupCount=app.config['LOG_BACKUP_COUNT']
        )
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'
        ))
        file_handler.setLevel(level)
        app.logger.addHandler(file_handler)
        app.logger.info('wasscause startup')
