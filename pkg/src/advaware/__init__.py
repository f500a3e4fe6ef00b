"""Adversarial-aware image classification with a classical secondary verifier.

A small neural classifier makes the primary prediction; a random forest
(or k-NN) over raw pixels verifies it by checking whether the prediction
lands in the verifier's top-k classes. Mismatches flag likely adversarial
inputs. The package also ships the four gradient attacks used to stress
the system, the decision-cost machinery that picks the optimal k per
application, and the evaluation metrics around it all.
"""

from .adaptive import (
    CostProfile,
    DecisionCounts,
    KSweepEntry,
    OptimalKResult,
    builtin_profiles,
    count_decisions,
    counts_at_k,
    objective,
    optimal_k,
    profile_by_name,
)
from .attacks import (
    AdversarialExample,
    AttackConfig,
    attack_success,
    cw_l2,
    deepfool,
    default_config,
    fgsm,
    pgd,
    run_attack,
)
from .data import (
    Dataset,
    DatasetError,
    Image,
    flatten,
    load_cifar_binary,
    load_idx,
    subsample,
    unflatten,
    write_idx,
)
from .metrics import (
    attack_success_ratio,
    emit_report,
    roc_auc,
    roc_auc_sweep,
    system_accuracy,
)
from .neuralnet import DenseLayer, NeuralNet, accuracy, train
from .pipeline import (
    CategorizedSets,
    DecisionKind,
    SetOrigin,
    Verdict,
    adv_aware,
    categorize,
    decision_of,
    detection_score,
    detection_scores,
)
from .secondary import (
    DecisionTree,
    ForestConfig,
    KnnVerifier,
    RandomForest,
    fit_forest,
    knn_top_k,
)
from .synthetic import make_digits

__version__ = "0.1.0"
