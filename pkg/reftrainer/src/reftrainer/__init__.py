"""Reference external trainer for the mixture controller's wire protocol."""

from .model import Adam, RefConfig, RefTrainer, cross_entropy, cross_entropy_and_grad, softmax
from .server import PROTOCOL_VERSION, serve

__version__ = "0.1.0"
