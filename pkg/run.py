"""
Main application runner for wasscause
"""

from wasscause import create_app

# Create the configured application
app = create_app()

if __name__ == '__main__':
    app.cli()
