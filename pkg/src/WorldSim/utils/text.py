import logging
from typing import List, Sequence

from .default_data import CAPTION_VOCABULARY, PAD_WORD

WORD_TO_ID = {word: index for index, word in enumerate(CAPTION_VOCABULARY)}
PAD_ID = WORD_TO_ID[PAD_WORD]

logger = logging.getLogger(__name__)


def tokenize_caption(caption: str, num_slots: int) -> List[int]:
    """
    Split a caption on whitespace and map it to exactly `num_slots` word ids.

    Captions longer than the slot count are truncated, shorter ones are padded with
    the pad id.

    Args:
        caption (str): The caption. Every word must be in the caption vocabulary.
        num_slots (int): The number of text slots per time step.

    Returns:
        List[int]: The word ids.
    """
    if num_slots < 0:
        raise ValueError(f"num_slots must be non-negative, got {num_slots}")
    ids = []
    for word in caption.split():
        if word not in WORD_TO_ID:
            raise KeyError(
                f"Word '{word}' is not in the caption vocabulary {CAPTION_VOCABULARY}"
            )
        ids.append(WORD_TO_ID[word])
    if len(ids) > num_slots:
        logger.debug(
            "Caption '%s' has %s words, keeping the first %s", caption, len(ids), num_slots
        )
        ids = ids[:num_slots]
    return ids + [PAD_ID] * (num_slots - len(ids))


def detokenize_caption(ids: Sequence[int]) -> str:
    """Map word ids back to a caption, dropping padding."""
    words = []
    for index in ids:
        if not 0 <= index < len(CAPTION_VOCABULARY):
            raise ValueError(f"Word id {index} is outside the caption vocabulary")
        if index != PAD_ID:
            words.append(CAPTION_VOCABULARY[index])
    return " ".join(words)
