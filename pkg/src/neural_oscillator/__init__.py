"""Neural oscillators: second-order ODE surrogates for causal operators,
trained by backpropagation through a fixed-step integrator."""

__version__ = "0.1.0"

from .signals import Signal, time_grid  # noqa: E402
from .nets import InitSpec, MlpParams, init_mlp, mlp_forward  # noqa: E402
from .oscillator import OscillatorModel, oscillator_forward, oscillator_loss_and_grad  # noqa: E402
from .training import TrainConfig, train  # noqa: E402

__all__ = ["Signal", "time_grid", "InitSpec", "MlpParams", "init_mlp", "mlp_forward",
           "OscillatorModel", "oscillator_forward", "oscillator_loss_and_grad", "TrainConfig", "train",
           "__version__"]
