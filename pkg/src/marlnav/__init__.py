"""Offline multi-agent RL toolkit for language-conditioned robot navigation."""

from .corpus import (COMMAND_TEMPLATES, DEFAULT_K, LOCATIONS, CorpusSplit,
                     HoldoutRule, TaskSpec, generate_corpus, goal_coordinates,
                     load_corpus, save_corpus, split_corpus)
from .data import (ACTION_VECTORS, N_ACTIONS, STOP_ACTION, AgentState,
                   ArenaConfig, BatchSampler, MultiAgentBatch, TransitionLog,
                   collect_random, collision, load_log, permutation_count,
                   reward, sample_batch, save_log, terminated)
from .embeddings import (DecoderHParams, EmbeddingStore, GoalDecoder,
                         SyntheticEmbedder, eval_decoder, fetch_remote,
                         load_embeddings, save_embeddings, synth_embed,
                         train_decoder)
from .objectives import (ObjectiveConfig, expected_sarsa_value, next_value,
                         parse_objective, td_loss)
from .policy import (PolicyInference, TeamObservation, act_decentralized,
                     act_team, boltzmann_action, encode, init_policy_params,
                     q_values)
from .sim import (EpisodeMetrics, EvalReport, KinematicEnv, ModelHParams,
                  TransitionModel, evaluate, evaluate_sequential, rollout,
                  sim_step, train_transition_model)
from .train import (RunConfig, TrainResult, format_sweep_table, return_bound,
                    subsample, sweep, train)

__version__ = "0.1.0"
