"""Variable scene graphs: per-object change prediction and change-aware planning.

A scene graph holds the objects of one scan of an environment; pairing two
scans of the same environment yields per-object change labels (position,
state, instance). A small message-passing network predicts those changes as
probabilities, turning the scene graph into a variable scene graph, and a
planner uses the probabilities to find changed objects with less travel.
"""

from .core_graph import (
    ObjectNode,
    SceneGraph,
    SemanticEdge,
    Taxonomy,
    load_scene_graph,
    load_taxonomy,
    map_taxonomy,
    relative_position,
    save_scene_graph,
    save_taxonomy,
    scene_graph_from_dict,
    scene_graph_to_dict,
    scene_graph_to_json,
    taxonomy_from_dict,
    taxonomy_to_dict,
)
from .dataset import (
    ClassPropensity,
    DatasetBundle,
    GeneratedDataset,
    GeneratorConfig,
    IngestReport,
    LabelConfig,
    LabelStats,
    Sample,
    TransitionLog,
    VariabilityLabel,
    augment_pairs,
    compute_labels,
    default_taxonomy,
    generate_dataset,
    generate_environment,
    generator_config_from_dict,
    generator_config_to_dict,
    importance_sample,
    ingest_3rscan_layout,
    label_matrices,
    label_statistics,
    labels_from_log,
    load_dataset,
    make_samples,
    write_dataset,
)
from .embedding import (
    EdgeConfig,
    EmbeddedGraph,
    PcaModel,
    build_edges,
    embed,
    encode_binary,
    encode_nodes,
    fit_pca,
    inverse_transform_pca,
    pairwise_distance_percentile,
    resolve_tau,
    transform_pca,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    EvaluationError,
    GeneratorError,
    GraphError,
    MappingError,
    ObjectLookupError,
    PairingError,
    ParseError,
    TaxonomyError,
    TrainingError,
    UsageError,
    VsgError,
)
from .model import (
    DeltaVsgModel,
    MlpBaseline,
    ModelConfig,
    MpConv,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .planner import (
    Episode,
    EpisodeResult,
    OracleScorer,
    held_karp,
    heuristic_tsp,
    make_episodes,
    nearest_neighbor,
    route_length,
    run_benchmark,
    run_coverage,
    run_vsg_planner,
    solve_tsp,
    two_opt,
    write_benchmark_csv,
)
from .training import (
    EvalReport,
    LossConfig,
    Metrics,
    TrainConfig,
    TrainingReport,
    class_weights_from_samples,
    evaluate,
    evaluate_probabilities,
    focal_loss,
    threshold_sweep,
    train,
    write_eval_csv,
    write_sweep_csv,
)

__version__ = "0.1.0"
