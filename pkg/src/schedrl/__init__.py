"""Deep-RL process scheduling: workload generator, discrete-event simulator,
classical baselines, a NumPy MLP and a Double DQN agent."""

__version__ = "0.1.0"
