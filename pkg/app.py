import logging

from flask import Flask
from flask.cli import FlaskGroup

from config import Config
from commands import quantizer_bp, solver_bp, simulate_bp, bounds_bp, report_bp


def create_app(config_class=Config):
    app = Flask(__name__)
    app.config.from_object(config_class)

    logging.basicConfig(level=app.config['LOG_LEVEL'],
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    app.logger.setLevel(app.config['LOG_LEVEL'])

    # Register command blueprints
    app.register_blueprint(quantizer_bp)
    app.register_blueprint(solver_bp)
    app.register_blueprint(simulate_bp)
    app.register_blueprint(bounds_bp)
    app.register_blueprint(report_bp)
    return app


app = create_app()

cli = FlaskGroup(create_app=lambda: app, add_default_commands=False,
                 help='Quantized belief-state consumption/investment pipeline')

if __name__ == '__main__':
    cli()
