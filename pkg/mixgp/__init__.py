###########################################
#
# mixgp - mixed likelihood Gaussian process
#   latent variable models
#
#    MIT License
#
#   numpy/scipy for the numerics, pandas for
#   tables, Jinja2 for the reports
#
###########################################
from .config import _version_, _author_, _license_

from .autodiff import (
    # reverse-mode differentiation
    Tape,
    Node,
    adjoint,
    stable_cholesky,
    jittered_cholesky,
)
from .kernel import (
    # ARD RBF kernel
    KernelParams,
    kernel_eval,
    kernel_matrix,
    gram,
    ard_relevances,
)
from .likelihoods import (
    # observation models
    LikelihoodSpec,
    ChannelMap,
    build_channel_map,
    log_prob,
    log_density,
    sample_observation,
)
from .variational import (
    # q(X) q(U)
    VariationalX,
    VariationalU,
    sample_X,
    sample_U,
    kl_q_p_X,
    kl_q_p_U,
)
from .elbo import (
    ElboEstimate,
    conditional_F,
    mc_expected_loglik,
    elbo,
)
from .trainer import (
    # parameters, optimizer and checkpoints
    ModelState,
    TrainState,
    RMSProp,
    init_model,
    rmsprop_step,
    train,
    save_checkpoint,
    load_checkpoint,
)
from .data import (
    # datasets
    ColumnSpec,
    DatasetSchema,
    ObservationMatrix,
    Holdout,
    parse_schema,
    load_schema,
    load_csv,
    parse_frame,
    write_csv,
    standardize,
    make_holdout,
    generate_synthetic,
    to_all_gaussian,
)
from .datasets import (
    # benchmark recipes
    Recipe,
    RECIPES,
    load_raw,
    write_dataset,
)
from .inference import (
    # trained models
    LatentEmbedding,
    export_latents,
    predictive_logprob,
    impute,
    log_perplexity,
)
from .metrics import (
    MetricsReport,
    one_nn_error,
    one_nn_rmse,
    pca_baseline,
    one_hot_encode,
)
from .config import (
    # utility routines
    JSObj,
    RunConfig,
    config_from_file,
    config_hash,
)
from .errors import *
