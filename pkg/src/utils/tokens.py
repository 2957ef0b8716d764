import tiktoken
from src.utils.logger import logger

class TokenBudget:
    def __init__(self, model_name: str = "gpt-4o", max_tokens: int = 6000):
        self.max_tokens = max_tokens
        try:
            self.encoding = tiktoken.encoding_for_model(model_name)
        except KeyError:
            self.encoding = tiktoken.get_encoding("cl100k_base")

    def count_tokens(self, text: str) -> int:
        return len(self.encoding.encode(text))

    def fit(self, system_prompt: str, user_prompt: str) -> str:
        """Trim the user prompt line by line from the end until both fit."""
        budget = self.max_tokens - self.count_tokens(system_prompt)
        if self.count_tokens(user_prompt) <= budget:
            return user_prompt
        lines = user_prompt.splitlines()
        while lines and self.count_tokens("\n".join(lines)) > budget:
            lines.pop()
        logger.warning(f"Analyst prompt truncated to {len(lines)} lines to fit {self.max_tokens} tokens")
        return "\n".join(lines)
