"""Desk-scale federated LoRA fine-tuning simulator for binary text
classification, built on a minimal reverse-mode autodiff engine."""

from .autodiff import Graph, Tensor, grad_check
from .data import ClientShard, PartitionSpec, Record, load_corpus, partition_clients, split_train_eval, synth_corpus
from .federation import FedConfig, GlobalState, RoundReport, comm_cost, fedavg, run_centralized, run_federated
from .lora import AdaptedModel, LoraConfig, attach_adapters, extract_trainable, load_trainable, merge_adapters, trainable_param_count
from .metrics import ConfusionMatrix, accuracy, confusion, f1_binary
from .model import EncoderModel, ModelConfig, Vocab, build_vocab, forward, init_model, tokenize

__version__ = "0.1.0"
