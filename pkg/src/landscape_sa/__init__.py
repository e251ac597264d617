from .anova_sa import SensitivityProfile, dynamic_sa, fit_saturated_anova, spatial_sa
from .clustering import Partition, SynthesisResult, kmeans, synthesize, ward
from .errors import LandscapeSAError, StageFailure
from .factors import FACTOR_TABLE, FactorSpec
from .gf3design import DesignMatrix, generate_regular_design, verify_strength, word_length_pattern
from .landscape_sim import FactorAssignment, LandscapeConfig, RunOutput, simulate
from .mv_sa import PCModel, pc_sensitivity, pca
from .pipeline import Pipeline, PipelineConfig, run_pipeline
from .tensor_store import Grid, OutcomeTensor, TimeAxis
