"""Single point of contact with chat-VLM and embedding backends."""

from emocue.gateway.backends import HTTPBackend, MockBackend, MockRule
from emocue.gateway.cache import ResponseCache
from emocue.gateway.client import (
    ChatRequest,
    ChatResponse,
    Embedding,
    Gateway,
    ImageRef,
    Transcript,
    cache_key,
    file_digest,
    load_image,
)
from emocue.gateway.templates import InstructionTemplate, default_templates, load_templates, render

__all__ = [
    "ChatRequest",
    "ChatResponse",
    "Embedding",
    "Gateway",
    "HTTPBackend",
    "ImageRef",
    "InstructionTemplate",
    "MockBackend",
    "MockRule",
    "ResponseCache",
    "Transcript",
    "cache_key",
    "default_templates",
    "file_digest",
    "load_image",
    "load_templates",
    "render",
]
