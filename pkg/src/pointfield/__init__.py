"""Point-cloud conditioned neural radiance fields.

A variational PointNet-style encoder maps a colored cloud to a latent code,
a hypernetwork turns the code into the full weight vector of a small
radiance-field MLP, and an occupancy-grid volume renderer trains and
fine-tunes the stack for reconstruction, completion, up-sampling and
hole-filling.
"""

__version__ = "0.1.0"

from .dataset import (AnalyticShape, Box, Scene, SceneFormatError, Sphere,
                      UnionShape, hemisphere_cameras, load_scene,
                      make_desk_scene, make_scene, save_scene)
from .encoder import (DualEncoder, EncoderConfig, GaussianLatent,
                      PointNetEncoder, encode, encode_cloud, encode_pair,
                      prepare_points, reparameterize)
from .field import (FeatureVolume, VoxelFeatureExtractor, as_field_fn,
                    eval_field, positional_encode, trilinear_sample)
from .finetune import (FinetuneConfig, FinetuneResult, finetune_completion,
                       finetune_latent, infer_zero_view, interpolate_latents,
                       sample_completion, stitch_parts)
from .geometry import (Camera, ColoredPointCloud, DegenerateCloudError,
                       EmptyPartError, PlyParseError, Ray, RayBundle,
                       SimilarityTransform, SplitPlane, load_cloud_ply,
                       normalize, random_split_plane, rays_for_camera,
                       save_cloud_ply, split_by_plane, subsample)
from .hypernet import (ConfigurationError, FieldArchitecture, FieldWeights,
                       HyperNetwork, HypernetConfig, generate_weights,
                       weight_count)
from .mesher import (EmptyMeshError, TriangleMesh, boundary_edge_count,
                     color_vertices, extract_mesh, icosphere_cameras,
                     resample_cloud, save_mesh_ply)
from .metrics import (MetricReport, chamfer, chamfer_brute, chamfer_normalized,
                      mmd, psnr, ssim)
from .renderer import (OccupancyGrid, RenderConfig, RenderedView, composite,
                       march_ray, reference_render, render_image, render_rays,
                       render_view, update_occupancy)
from .training import (Checkpoint, CheckpointKindError, TrainConfig,
                       TrainingDiverged, color_loss, kl_loss, load_checkpoint,
                       save_checkpoint, train_completion, train_generation)
