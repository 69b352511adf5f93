from .market import ModelParams, ShockDensity, Utilities
from .density import FactorGrid, GriddedDensity, Kernels
from .quantizer import QuantizationSet, ReturnNodeSet, TrainingSchedule
from .dp import StateGrids, ValueTable, PolicyTable
from .bounds import BoundReport, LipschitzEstimates

__all__ = ['ModelParams', 'ShockDensity', 'Utilities', 'FactorGrid', 'GriddedDensity',
           'Kernels', 'QuantizationSet', 'ReturnNodeSet', 'TrainingSchedule',
           'StateGrids', 'ValueTable', 'PolicyTable', 'BoundReport', 'LipschitzEstimates']
