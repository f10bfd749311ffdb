"""Room-scale mmWave gesture perception in numpy.

Modules, roughly in pipeline order:

- ``radar``: FMCW configuration, derived resolutions, IF-signal synthesis
- ``dsp``: range-Doppler maps, beamforming, 5D point extraction
- ``scene``: synthetic gestures at room placements, dataset I/O
- ``spectro``: multi-domain time spectrograms
- ``align``: viewpoint reprojection, DBSCAN denoising, centering
- ``enhance``: micro cycle-consistent sparse->dense translator
- ``recognize``: channel-attention CNN, training, evaluation metrics
- ``pipeline``: instance -> network input, cross-position protocol
- ``wire`` / ``service`` / ``cli``: UDP predictions and the command line
"""

from .radar import RadarConfig, derive_resolutions, synth_if_cube, PointTarget
from .dsp import PointCloud5D, range_doppler_map, extract_points
from .scene import DEFAULT_POSITIONS, Placement, simulate_instance
from .spectro import build_set, occupancy
from .align import align_instance, reproject, dbscan
from .recognize import BackboneNet, train_classifier, consistency_metrics
from .wire import PredictionMessage, encode_message, decode_message

__version__ = "0.1.0"
