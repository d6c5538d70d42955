"""Feature-map extraction from pretrained CNNs into hdff feature packs."""

from .dataset import ImageFolder
from .errors import CheckpointError, DatasetError, ExtractorError, HookResolutionError
from .extract import extract, load_checkpoint
from .hooks import HookSpec, list_hooks
from .models import TinyConvNet, save_demo_checkpoint

__version__ = "0.1.0"
