from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional

class Settings(BaseSettings):
    # Remote analyst (OpenAI-compatible endpoint)
    ANALYST_API_KEY: Optional[str] = None
    ANALYST_BASE_URL: str = "https://api.openai.com/v1"
    ANALYST_MODEL: str = "gpt-4o"
    ANALYST_TEMPERATURE: float = 0.0
    ANALYST_TIMEOUT: float = 60.0
    ANALYST_PARSE_RETRIES: int = 2
    ANALYST_MAX_PROMPT_TOKENS: int = 6000

    # System Settings
    LOG_LEVEL: str = "INFO"
    MAX_RETRIES: int = 3
    MAX_CONCURRENCY: int = 4

    # Paths
    OUTPUT_DIR: str = "outputs"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore"
    )

settings = Settings()
