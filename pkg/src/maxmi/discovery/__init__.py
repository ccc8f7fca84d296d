from .concepts import ConceptSet, DiscoveryConfig, IndexAssignment, build_concept_set
from .engines import (
    discover_coordinate_ascent,
    discover_profile_peaks,
    initial_assignment,
    profile_local_maxima,
    resolve_lambda,
    select_peaks,
)
from .localizer import LocalizerModel, discover_localizer, localizer_forward, train_localizer
from .objective import (
    concept_scores,
    default_lambda,
    diversity_penalty,
    grid_indices,
    maxmi_objective,
    nms,
    soft_argmax,
    total_loss,
)
from .runner import AblationRow, ablation, ablation_csv, discover, event_error
