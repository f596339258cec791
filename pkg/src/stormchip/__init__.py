"""stormchip: CPU-only building-damage annotation from satellite image chips.

A small numpy-based framework covering the whole workflow: geo-referenced
raster strips are cropped into labeled building chips, cleaned and split
into datasets, fed to a from-scratch convolutional network trained with
RMSprop or Adam, and evaluated with ROC/AUC reports and batch damage
annotations.
"""

from .augment import AugmentConfig, augment_batch, random_affine
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, write_annotations
from .gradcheck import run_check, run_suite
from .metrics import (EvalReport, UndefinedAUCError, accuracy_at, auc_pairwise_oracle, evaluate,
                      misclassification_export, roc_auc)
from .net import (LayerSpec, Network, activation_apply, backward, bce_loss, build_damage_cnn,
                  build_lr_head, build_vgg16_like, dead_filter_report, export_activation_maps,
                  extract_features, forward, maxpool2x2, predict_probs)
from .ops import ShapeError, conv2d_naive, im2col, matmul, resize_bilinear, tensor_new
from .optim import (EpochStats, OptimizerConfig, OptimizerState, TrainConfig, adam_step, fit,
                    init_optimizer_state, initialize_network, rmsprop_step, write_history_csv,
                    xavier_init)
from .pipeline import (BuildingRecord, ChipRecord, DataError, GeoTransform, QualityThresholds,
                       SplitSpec, SplitSizingError, WindowError, build_manifest, crop_window,
                       dedup_and_filter, load_raster, lonlat_to_pixel, make_splits,
                       pixel_to_lonlat, quality_metrics, read_manifest, rows_for_split,
                       write_manifest)

__version__ = "0.1.0"
