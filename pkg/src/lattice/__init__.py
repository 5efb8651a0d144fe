"""Curriculum-trained digital-twin intrusion detection for water-plant style CPS data."""

from .timeseries import Episode, Label, Schema, load_csv, load_schema, write_csv
from .dtm import TimedAutomaton, learn_offline, update_online, predict_next, ground_truth, label_episode
from .difficulty import MeasurerConfig, score_episode
from .curriculum import build_curriculum, assign_batch_numbers, new_scheduler, next_batch, report_loss, is_finished, is_done
from .detector import TrainConfig, DetectorModel, train, detect
from .synth import PlantConfig, AttackScript, simulate, inject_attacks

__version__ = "0.1.0"
