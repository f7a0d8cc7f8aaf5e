"""Cold-boot memory forensics toolkit: decay simulation, key-material
scanning, and AES/RSA key reconstruction under asymmetric bit decay."""

from .errors import InconsistentStateError, InvalidInputError
from .memimg import (
    DECAY_RNG_ALGORITHM,
    Annotation,
    DecayModel,
    FlipStats,
    GroundSpec,
    MemoryImage,
    SidecarMeta,
    apply_decay,
    estimate_delta0,
    flip_stats,
    load_sidecar,
    save_sidecar,
)
from .aeskit import (
    Aes128Key,
    AesKeySchedule,
    RelationKind,
    ScheduleRelation,
    compatibility,
    encrypt_block,
    expand_key,
    relations,
    schedule_log_likelihood,
    verify_schedule,
)
from .scanner import (
    FindingKind,
    KeyFinding,
    default_aes_threshold,
    findings_to_jsonl,
    resolve_threads,
    scan_aes,
    scan_brute_force,
    scan_entropy,
    scan_rsa_der,
)
from .aesrec import (
    RankedKey,
    ReconstructionBudget,
    ReconstructionResult,
    guess_order,
    reconstruct_brute_force,
    reconstruct_tree,
)
from .rsarec import (
    BitField,
    MlCandidate,
    RsaCandidate,
    RsaObservedPrivate,
    RsaPublicKey,
    generate_balanced_factors,
    kunihiro_feasible,
    lift,
    load_observed,
    observe_bits,
    perfect_frontier_widths,
    reconstruct_pq_ml,
    reconstruct_pq_perfect,
    save_observed,
)
from .shieldstore import ShieldedKey, attack_search_space, shield, unshield

__version__ = "0.1.0"
