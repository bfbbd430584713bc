from .corpus import read_corpus, read_image, write_corpus, write_image
from .encoding import EncodedInput, encode_document, resize_nearest, split_patches
from .generator import TAGS, GeneratorStyle, generate_corpus, generate_document, word_color
from .imagetok import codebook_levels, tokenize_image
from .records import SPECIAL_TOKENS, DocumentRecord, Tokenizer, Vocabulary

__all__ = [
    "DocumentRecord",
    "EncodedInput",
    "GeneratorStyle",
    "SPECIAL_TOKENS",
    "TAGS",
    "Tokenizer",
    "Vocabulary",
    "codebook_levels",
    "encode_document",
    "generate_corpus",
    "generate_document",
    "read_corpus",
    "read_image",
    "resize_nearest",
    "split_patches",
    "tokenize_image",
    "word_color",
    "write_corpus",
    "write_image",
]
