"""Particle simulation of kernelized gradient flows of the inclusive KL divergence."""

from klflow._backend import BACKEND
from klflow.discrepancy import MetricsRecord, ksd2, mmd2, mmd_witness, moment_error
from klflow.flow import (
    FlowConfig,
    fr_exact_solution,
    jko_step,
    ksd_wgf_step,
    mirror_step,
    mirror_step_stein,
    mmd_wgf_step,
    nw_witness,
    run_flow,
    simulate,
    wfr_ift_step,
    wfr_ksd_step,
)
from klflow.kernel import (
    KernelSpec,
    SteinKernel,
    kernel_eval,
    kernel_grad2,
    stein_kernel_eval,
    stein_kernel_grad2,
)
from klflow.measure import (
    DensityRatioTable,
    DiscreteMeasure,
    Ensemble,
    Target,
    density_ratio,
    ensemble_from_sampler,
    target_moments,
)

__version__ = "0.1.0"
