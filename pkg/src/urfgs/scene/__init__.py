from .checkpoint import (Checkpoint, CheckpointError, CheckpointVersionError, load_checkpoint,
                         save_checkpoint)
from .dataset import (ChannelSample, DatasetError, SceneDataset, ViewRecord, load_dataset,
                      save_dataset)
from .metrics import compute_metrics, psnr, ssim
from .synthetic import (BUILTIN, DescriptorError, Rect, SceneDescriptor, box, builtin,
                        gaussians_from_surfaces, generate_synthetic, image_source_paths,
                        oracle_power, oracle_spectrum)
