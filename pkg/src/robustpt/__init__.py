"""Robust online post-training toolkit for Gaussian policies.

Modules:

* ``numkit``     -- reverse-mode tape, spectral norms, labeled random streams
* ``policy``     -- diagonal-Gaussian MLP policy, checkpoints, Lipschitz estimates
* ``envs``       -- synthetic goal-reaching environments and perturbation injectors
* ``rewards``    -- dense reward composer
* ``rollout``    -- rollout groups and leave-one-out advantages
* ``objective``  -- clipped PPO + Jacobian and smoothness penalties
* ``trainer``    -- outer loop, evaluation, curriculum noise scheduling
* ``bounds``     -- explicit return-gap bounds and Monte Carlo certification
* ``cli``        -- ``robustpt`` command line
"""

from .errors import ConfigError, ContractError, DomainError, NumericalAbort, RobustPTError, ShapeError

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "DomainError", "NumericalAbort", "RobustPTError", "ShapeError", "__version__"]
