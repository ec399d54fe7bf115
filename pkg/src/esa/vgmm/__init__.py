from .cavi import (
    CaviConfig,
    CaviError,
    CaviFit,
    GmmPrior,
    GmmVarState,
    cavi_fit,
    e_step,
    elbo,
    embed_state,
    empirical_prior,
    esa_cluster,
    gmm_evaluator,
    m_step,
    predict_labels,
    select_cluster,
    warm_start_fit,
)
from .metrics import ari, contingency, nmi
from .synthetic import gen_setting_a, gen_setting_b
