from typing import Optional
import openai
from openai import OpenAI
from src.config import settings
from src.core.analyst import AnalystClient
from src.core.errors import AnalystError, AnalystTransportError
from src.models.mitigation import NodeSummary
from src.utils.retry import api_retry
from src.utils.tokens import TokenBudget

class OpenAIAnalyst(AnalystClient):
    """Analyst backed by any OpenAI-compatible chat completions endpoint."""

    name = "openai"

    def __init__(self, model: Optional[str] = None, base_url: Optional[str] = None,
                 api_key: Optional[str] = None, temperature: Optional[float] = None):
        api_key = api_key or settings.ANALYST_API_KEY
        if not api_key:
            raise AnalystError("ANALYST_API_KEY is not set; use the heuristic analyst offline")
        self.model = model or settings.ANALYST_MODEL
        self.temperature = settings.ANALYST_TEMPERATURE if temperature is None else temperature
        self.client = OpenAI(
            api_key=api_key,
            base_url=base_url or settings.ANALYST_BASE_URL,
            timeout=settings.ANALYST_TIMEOUT,
        )
        self.budget = TokenBudget(model_name=self.model, max_tokens=settings.ANALYST_MAX_PROMPT_TOKENS)

    @api_retry()
    def _call_llm(self, system_prompt: str, user_prompt: str) -> str:
        response = self.client.chat.completions.create(
            model=self.model,
            messages=[
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
            temperature=self.temperature,
        )
        return response.choices[0].message.content or ""

    def complete(self, summary: NodeSummary, system_prompt: str, user_prompt: str) -> str:
        user_prompt = self.budget.fit(system_prompt, user_prompt)
        try:
            return self._call_llm(system_prompt, user_prompt)
        except openai.OpenAIError as e:
            raise AnalystTransportError(f"Analyst request for {summary.node} failed: {e}") from e
