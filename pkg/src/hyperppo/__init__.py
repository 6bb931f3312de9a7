"""Multi-architecture on-policy RL: one hypernetwork, 2800 MLP policies."""

from .archspace import (ArchDistribution, ArchSpec, SPACE_SIZE, arch_index,
                        enumerate_space, param_count, parse_arch,
                        sample_arch, sample_archs, sampling_prob, spec_at)
from .envs import ArchPolicy, EnvInstance, TrajectoryBatch, env_dims, make_env, vec_rollout
from .hypernet import ArchGraph, HyperNet, encode_arch
from .numcore import AdamState, CompGraph, adam_step, backward, forward, grad_check
from .policy import (GeneratedWeights, StdStore, gaussian_entropy, get_std,
                     log_prob, log_prob_from_log_std, policy_forward,
                     sample_action)
from .ppo import (MixedArchitectureError, PpoConfig, SampleBatch,
                  clipped_surrogate, compute_gae, hyperppo_loss,
                  importance_ratio, normalize_advantages, value_loss)
from .trainer import (Checkpoint, CheckpointError, DirectMlp, RunningNorm,
                      TrainConfig, Trainer, TrainingAborted, TrainResult,
                      eval_episodes, load_checkpoint, load_model, parse_config,
                      save_checkpoint, train, train_baseline)
from .evalsuite import (CompareReport, ExportError, ExportedPolicy, RewardRow,
                        RewardTable, SelectionRow, average_reward,
                        compare_small, export_policy, load_exported_policy,
                        reward_distribution, select, selection_report, sweep,
                        table_from_json, table_to_csv, table_to_json)

__version__ = "0.1.0"
