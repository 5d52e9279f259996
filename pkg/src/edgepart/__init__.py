"""Hierarchical DNN partitioning over heterogeneous edge clusters, with a simulator."""
from .cluster import Cluster, EdgeNode, NodeStatus, Processor, ProcessorKind, default_cluster
from .cost import BlockAssignment, DataSplit, LayerCosts, Mode, PartitionPlan, RateContext, Target
from .dnn import DnnModel, Layer, LayerKind, TensorShape, bundled_models, load_model_spec
from .errors import EdgePartError
from .harness import Strategy, plan_strategy, run_mix_suite, run_scenario
from .partitioner import (HierPlan, best_data_partition, brute_force_partition, dp_model_partition,
                          hierarchical_partition, select_mode)
from .simnet import InferenceRequest, Simulator

__version__ = "0.1.0"
