import logging
from pathlib import Path
from typing import Optional

from django.conf import settings

from apps.core.exceptions import ClientError
from apps.llm.cassette import RecordingModelClient, ReplayModelClient
from apps.llm.client import ModelClient
from apps.llm.scripted import ScriptedModelClient

logger = logging.getLogger(__name__)

CLIENT_MODES = ('scripted', 'live', 'record', 'replay')


def build_client(mode: Optional[str] = None, fixtures: Optional[str] = None,
                 cassette: Optional[str] = None, strict: Optional[bool] = None) -> ModelClient:
    """Configure a model client for one of the four modes."""
    config = settings.MODEL_CLIENT_CONFIG
    mode = mode or config['mode']
    fixtures = fixtures if fixtures is not None else config['fixtures_dir']
    cassette = cassette if cassette is not None else config['cassette']
    strict = config['strict'] if strict is None else strict

    if mode not in CLIENT_MODES:
        raise ClientError(f"unknown client mode {mode!r}, expected one of {', '.join(CLIENT_MODES)}")

    if mode == 'scripted':
        if fixtures:
            if not Path(fixtures).exists():
                raise ClientError(f"fixtures not found: {fixtures}")
            return ScriptedModelClient.from_path(fixtures, strict=strict)
        return ScriptedModelClient(strict=strict)

    if mode == 'replay':
        if not cassette or not Path(cassette).exists():
            raise ClientError(f"replay mode needs an existing cassette, got {cassette!r}")
        return ReplayModelClient(cassette)

    # Offline modes never import the OpenAI SDK
    from apps.llm.openai_client import OpenAIModelClient

    if mode == 'live':
        return OpenAIModelClient()

    if not cassette:
        raise ClientError("record mode needs --cassette")
    logger.info(f"Recording model traffic to {cassette}")
    return RecordingModelClient(OpenAIModelClient(), cassette)
