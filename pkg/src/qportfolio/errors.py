"""Exception hierarchy shared by every qportfolio module."""


class PortfolioError(Exception):
    """Base class for all library errors."""


class MalformedData(PortfolioError, ValueError):
    pass


class InsufficientHistory(PortfolioError, ValueError):
    pass


class DomainError(PortfolioError, ValueError):
    pass


class DegenerateMarket(PortfolioError, ValueError):
    pass


class EmptyUniverse(PortfolioError, ValueError):
    pass


class NotRepairable(PortfolioError, ValueError):
    pass


class EmptyPortfolio(PortfolioError, ValueError):
    pass


class DegeneratePortfolio(PortfolioError, ValueError):
    pass


class UnsupportedSize(PortfolioError, ValueError):
    pass


class ParamOutOfRange(PortfolioError, ValueError):
    pass


class InvalidPhaseOrder(PortfolioError, RuntimeError):
    pass


class DimensionError(PortfolioError, ValueError):
    pass


class DegenerateTransform(PortfolioError, ValueError):
    pass


class BudgetRequired(PortfolioError, ValueError):
    pass


class BudgetExceeded(PortfolioError, ValueError):
    pass


class InsufficientPool(PortfolioError, ValueError):
    pass


class InsufficientStars(PortfolioError, ValueError):
    pass


class IoError(PortfolioError, OSError):
    pass
