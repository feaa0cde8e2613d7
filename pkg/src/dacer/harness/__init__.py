from .evaluation import EvalReport, aggregate, evaluate, final_metric
from .exporters import LandscapeGrid, export_q_landscape, sample_trajectories

__all__ = ["EvalReport", "LandscapeGrid", "aggregate", "evaluate", "export_q_landscape",
           "final_metric", "sample_trajectories"]
