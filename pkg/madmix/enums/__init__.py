from madmix.enums.experiment import Experiment, Method, Metric
