"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent scenario / experiment configuration."""


class DomainError(ValueError):
    """Numeric argument outside the physical domain of an operation."""


class ContractError(ValueError):
    """An internal precondition was violated by the caller."""
