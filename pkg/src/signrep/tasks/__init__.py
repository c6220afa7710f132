"""Task heads over frozen gloss-level representations."""

from .s2t import S2T_DEFAULTS, SignTranslator, beam_search, s2t_train, translate
from .slr import SLR_DEFAULTS, SignClassifier, slr_classify, train_slr
from .t2s import (T2S_DEFAULTS, TextToSign, load_text_embeddings,
                  segment_targets, t2s_generate, t2s_loss, t2s_train)
from .vocab import BOS, EOS, PAD, UNK, Vocabulary
from .windows import WindowSpec, extract_reprs, segment_frames, window_count, window_offsets

__all__ = [
    "S2T_DEFAULTS", "SignTranslator", "beam_search", "s2t_train", "translate",
    "SLR_DEFAULTS", "SignClassifier", "slr_classify", "train_slr",
    "T2S_DEFAULTS", "TextToSign", "load_text_embeddings", "segment_targets",
    "t2s_generate", "t2s_loss", "t2s_train",
    "BOS", "EOS", "PAD", "UNK", "Vocabulary",
    "WindowSpec", "extract_reprs", "segment_frames", "window_count",
    "window_offsets",
]
