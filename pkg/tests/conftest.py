import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ideolab.embedding import TokenEmbeddingSet

DATA_DIR = Path(__file__).parent / "data"


def make_embedding(item_id: str, rows) -> TokenEmbeddingSet:
    """TokenEmbeddingSet from raw rows, rows normalized if needed."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    sentence = rows.mean(axis=0)
    norm = np.linalg.norm(sentence)
    sentence = rows[0] if norm < 1e-12 else sentence / norm
    return TokenEmbeddingSet(
        item_id=item_id, dim=rows.shape[1], token_vectors=rows, sentence_vector=sentence
    )


@pytest.fixture
def basis():
    """First three standard basis vectors in R^4."""
    eye = np.eye(4)
    return eye[0], eye[1], eye[2]
