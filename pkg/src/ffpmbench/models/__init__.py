"""Desk-scale forward models of the coupled free-flow/porous-medium benchmark."""

from .channel import ChannelModel, solve_channel_classical, solve_channel_generalized
from .scenario import ExtractionPoint, Scenario, ScenarioError

__all__ = ["ChannelModel", "ExtractionPoint", "Scenario", "ScenarioError",
           "solve_channel_classical", "solve_channel_generalized"]
