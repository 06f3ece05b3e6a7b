"""Region-conditioned caption generation."""
from .data import CaptionPair, generate_synthetic_dataset, template_caption
from .decode import Caption, beam_search, greedy_decode
from .model import CaptionConfig, CaptionModel, EncodedRegions, attention, decode_step
from .regions import RegionSet, build_regions
from .train import load_model, save_model, teacher_forced_accuracy, train_ce
from .vocab import Vocabulary, default_vocabulary
