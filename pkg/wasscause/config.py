"""
Application configuration classes
"""

import os


def _float_list(raw: str):
    return [float(item) for item in raw.split(',') if item.strip()]


class Config:
    """Base configuration"""
    DEBUG = False
    TESTING = False

    # Discretization
    GRID_SIZE = int(os.environ.get('WASSCAUSE_GRID_SIZE', '201'))

    # Nuisance models
    CLIP_EPSILON = float(os.environ.get('WASSCAUSE_CLIP_EPSILON', '0.01'))
    CV_FOLDS = int(os.environ.get('WASSCAUSE_CV_FOLDS', '5'))
    RIDGE_CANDIDATES = _float_list(os.environ.get('WASSCAUSE_RIDGE_CANDIDATES', '0,0.01,0.1,1,10,100'))
    SPLINE_KNOTS = int(os.environ.get('WASSCAUSE_SPLINE_KNOTS', '10'))
    SPLINE_DEGREE = 3
    NEWTON_MAX_ITER = 100
    NEWTON_TOL = 1e-8
    SEPARATION_NORM = 1e6

    # Inference
    ALPHA = float(os.environ.get('WASSCAUSE_ALPHA', '0.05'))
    RESAMPLES = int(os.environ.get('WASSCAUSE_RESAMPLES', '1000'))
    SEED = int(os.environ.get('WASSCAUSE_SEED', '0'))

    # Monte Carlo
    MC_WORKERS = int(os.environ.get('WASSCAUSE_MC_WORKERS', str(os.cpu_count() or 1)))

    # Logging
    LOG_DIR = os.environ.get('WASSCAUSE_LOG_DIR', 'logs')
    LOG_FILE = os.environ.get('WASSCAUSE_LOG_FILE', 'wasscause.log')
    LOG_LEVEL = os.environ.get('WASSCAUSE_LOG_LEVEL', 'INFO')
    LOG_MAX_BYTES = 10240000
    LOG_BACKUP_COUNT = 10

    @staticmethod
    def init_app(app):
        """Initialize app-specific configuration"""
        pass


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    DEBUG = False
    MC_WORKERS = 1
    RESAMPLES = 200


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}
