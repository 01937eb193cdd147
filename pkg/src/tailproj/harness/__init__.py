"""Simulation studies, bootstrap and the pairwise station pipeline."""
from .bootstrap import (BootstrapResult, DependenceRefit, bootstrap_dependence,
                        block_indices, percentile_bootstrap, resample_rows)
from .pairs import (EARTH_RADIUS_KM, PairRecord, PipelineResult,
                    SpatialLogistic, build_pairs, distance_bin, haversine,
                    pairwise_dependence_pipeline, pipeline_bootstrap,
                    stack_pairs, station_pipeline, synthetic_stations)
from .study import (DummyFactorReport, StudyConfig, StudyResult,
                    dummy_factor_study, mean_rmse, rmse_study)
