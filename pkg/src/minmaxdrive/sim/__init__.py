"""Driving simulator, scripted policies and the synthetic scenario corpus."""
from .core import (
    DT, GAMMA, LIDAR_RANGE, MAX_ACCEL, MAX_SPEED, MAX_STEER, N_LIDAR, OBS_DIM, OFFROAD_METERS,
    SPEED_REWARD, SUCCESS_FRACTION, WHEELBASE, Action, Agent, EgoState, Episode, PolicyError,
    Scenario, Terminal, Trajectory, build_observation, check_termination, compute_reward,
    initial_state, rollout_episode, route_pose, step_bicycle, step_reward,
)
from .corpus import TEMPLATES, load_corpus, make_synthetic_scenarios, save_corpus, scenario_from_dict, scenario_to_dict
from .policies import BrakePolicy, ConstantPolicy, NoisyPolicy, ReplayPolicy
