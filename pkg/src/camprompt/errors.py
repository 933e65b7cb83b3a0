"""Exception taxonomy shared across the package."""


class CamPromptError(Exception):
    """Base class for all package errors."""


class ContractViolation(CamPromptError, ValueError):
    """An operation was called with arguments outside its contract."""


class IngestionError(CamPromptError):
    """Dataset layout or mask content is invalid."""


class CapabilityError(CamPromptError):
    """A required backend/model capability is unavailable."""


class NoActivation(CamPromptError):
    """A class activation map is identically zero; no prompt can be selected."""


class EmptyProposal(CamPromptError):
    """The segmentation backend returned zero masks for a prompt."""


class EmptyEvaluation(CamPromptError):
    """No evaluation records were available to aggregate."""
