"""
Entry point for python -m wasscause
"""

from wasscause import create_app


def main():
    app = create_app()
    app.cli(prog_name='wasscause')


if __name__ == '__main__':
    main()
