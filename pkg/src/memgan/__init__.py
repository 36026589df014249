"""memgan: desk-scale simulator of a memristor-crossbar GAN accelerator.

Subpackages map onto the simulator's components: quantized crossbars
(crossbar), layer-to-crossbar mapping (mapper), the GAN datapath (gan),
the LUT-based error unit (diff_block), the schedule simulator
(pipeline), analytic area/energy models (cost_model), and the
experiment drivers behind the CLI (experiments, cli).
"""

__version__ = "0.1.0"

from .crossbar import Crossbar, DeviceConfig, QuantSpec  # noqa: F401
from .gan import GanModel, build_gan  # noqa: F401
from .kernels import active_backend  # noqa: F401
