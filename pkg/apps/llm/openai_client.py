import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple

import openai
from django.conf import settings

from apps.core.exceptions import ClientError, ClientTransportError
from apps.llm.client import (
    CallKind, ClientRequest, ClientResponse, ModelClient, Usage, estimate_usage,
)

logger = logging.getLogger(__name__)

PROMPTS_DIR = Path(__file__).resolve().parent / 'prompts'

# Kinds whose answer is free text rather than a JSON object
TEXT_KINDS = {CallKind.GRADE, CallKind.ANSWER}

TRANSIENT_ERRORS = (
    openai.APIConnectionError,
    openai.APITimeoutError,
    openai.RateLimitError,
    openai.InternalServerError,
)


class _TemplateValues(dict):
    def __missing__(self, key):
        return ''


def load_prompt(call_kind: CallKind) -> Tuple[str, str]:
    """Templates are '<system>\\n---\\n<user>' text files named after the call kind."""
    raw = (PROMPTS_DIR / f"{call_kind.value}.txt").read_text(encoding='utf-8')
    system, _, user = raw.partition('\n---\n')
    return system.strip(), user.strip()


def render_prompt(call_kind: CallKind, payload: Dict[str, Any]) -> Tuple[str, str]:
    system, user = load_prompt(call_kind)
    values = _TemplateValues({
        key: value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)
        for key, value in payload.items()
    })
    return system.format_map(values), user.format_map(values)


class OpenAIModelClient(ModelClient):
    """Live adapter mapping the call-kind contract onto the OpenAI API."""

    def __init__(self, api_key: str = None, config: Dict[str, Any] = None):
        self.config = config or settings.OPENAI_CONFIG
        self.client = openai.OpenAI(
            api_key=api_key or settings.OPENAI_API_KEY,
            timeout=self.config.get('timeout', 60),
            max_retries=0,
        )
        logger.info(f"OpenAIModelClient initialized with model: {self.config['model']}")

    def call(self, request: ClientRequest) -> ClientResponse:
        if request.call_kind == CallKind.EMBED_TEXT:
            return self._embed(request)
        return self._complete(request)

    def _complete(self, request: ClientRequest) -> ClientResponse:
        system, user = render_prompt(request.call_kind, request.payload)
        kwargs = {
            'model': self.config['model'],
            'messages': [
                {'role': 'system', 'content': system},
                {'role': 'user', 'content': user},
            ],
            'temperature': self.config.get('temperature', 0),
            'max_tokens': self.config.get('max_tokens', 2048),
        }
        if request.call_kind not in TEXT_KINDS:
            kwargs['response_format'] = {'type': 'json_object'}

        try:
            response = self.client.chat.completions.create(**kwargs)
        except TRANSIENT_ERRORS as e:
            raise ClientTransportError(f"{request.call_kind.value}: {e}") from e
        except openai.APIError as e:
            logger.error(f"OpenAI API error: {str(e)}")
            raise ClientError(f"{request.call_kind.value}: {e}") from e

        content = response.choices[0].message.content or ''
        output: Any = content
        if request.call_kind not in TEXT_KINDS:
            try:
                output = json.loads(content)
            except json.JSONDecodeError:
                logger.warning(f"Non-JSON {request.call_kind.value} response, keeping raw text")

        if response.usage is None:
            usage = estimate_usage(request, output)
        else:
            usage = Usage(
                prompt_tokens=response.usage.prompt_tokens,
                completion_tokens=response.usage.completion_tokens,
                image_count=len(request.payload.get('images') or []),
            )
        return ClientResponse(output=output, usage=usage)

    def _embed(self, request: ClientRequest) -> ClientResponse:
        try:
            response = self.client.embeddings.create(
                model=self.config['embedding_model'],
                input=request.payload['text'],
                dimensions=int(request.payload['dim']),
            )
        except TRANSIENT_ERRORS as e:
            raise ClientTransportError(f"embed_text: {e}") from e
        except openai.APIError as e:
            raise ClientError(f"embed_text: {e}") from e

        usage = Usage(prompt_tokens=response.usage.prompt_tokens) if response.usage else Usage(estimated=True)
        return ClientResponse(output={'vector': list(response.data[0].embedding)}, usage=usage)
