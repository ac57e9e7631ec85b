from madmix.report.experiment import ExperimentConfig, ExperimentReport, ResultRecord, run_experiment, timing_probe
