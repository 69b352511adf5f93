from flask import Blueprint

# cli_group=None puts the commands at the top level of the app's CLI
quantizer_bp = Blueprint('quantizer', __name__, cli_group=None)
solver_bp = Blueprint('solver', __name__, cli_group=None)
simulate_bp = Blueprint('simulate', __name__, cli_group=None)
bounds_bp = Blueprint('bounds', __name__, cli_group=None)
report_bp = Blueprint('report', __name__, cli_group=None)

# Import commands to register them
from . import quantizer
from . import solver
from . import simulate
from . import bounds
from . import report
